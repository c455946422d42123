//! Comparison of an extracted summary with ground truth.
//!
//! Every detected visit is attributed to the truth visit of the same user it
//! overlaps most, and every truth visit to the detected visit it overlaps
//! most. A truth label maps to the POI id most of its detections carry; a
//! truth visit counts as correctly identified when its detection carries that
//! id and the id in turn maps back to the same label. A label seen under
//! several ids is a split, an id covering several labels is a merge.

use std::collections::BTreeMap;
use std::fmt;

use crate::report::TimedRow;

#[derive(Debug, Clone, PartialEq)]
pub struct Score {
    pub truth_visits: usize,
    pub detected_visits: usize,
    /// Truth visits with an overlapping detection.
    pub matched_visits: usize,
    /// Mean absolute start/end error over matched visits, in minutes.
    pub boundary_mean_min: f64,
    pub boundary_max_min: f64,
    /// Share of truth visits whose detection carries the label's POI id.
    pub accuracy: f64,
    pub splits: usize,
    pub merges: usize,
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "truth_visits,{}", self.truth_visits)?;
        writeln!(f, "detected_visits,{}", self.detected_visits)?;
        writeln!(f, "matched_visits,{}", self.matched_visits)?;
        writeln!(f, "boundary_error_mean_min,{:.2}", self.boundary_mean_min)?;
        writeln!(f, "boundary_error_max_min,{:.2}", self.boundary_max_min)?;
        writeln!(f, "poi_identity_accuracy,{:.4}", self.accuracy)?;
        writeln!(f, "splits,{}", self.splits)?;
        write!(f, "merges,{}", self.merges)
    }
}

fn overlap(a: &TimedRow, b: &TimedRow) -> i64 {
    (a.end.min(b.end) - a.start.max(b.start)).max(0)
}

/// Row of `pool` with the largest positive overlap with `row`, same user.
fn best_overlap<'a>(row: &TimedRow, pool: &'a [TimedRow]) -> Option<&'a TimedRow> {
    let mut best: Option<(&TimedRow, i64)> = None;
    for candidate in pool.iter().filter(|c| c.user == row.user) {
        // Instantaneous rows still count when they fall inside the other.
        let o = if candidate.start == candidate.end || row.start == row.end {
            let inside = candidate.start.max(row.start) <= candidate.end.min(row.end);
            if inside {
                1
            } else {
                0
            }
        } else {
            overlap(row, candidate)
        };
        if o > 0 && best.is_none_or(|(_, b)| o > b) {
            best = Some((candidate, o));
        }
    }
    best.map(|(c, _)| c)
}

fn majority<K: Ord + Clone>(counts: &BTreeMap<K, usize>) -> Option<K> {
    // Ties go to the smallest key.
    let mut best: Option<(&K, usize)> = None;
    for (k, &n) in counts {
        if best.is_none_or(|(_, b)| n > b) {
            best = Some((k, n));
        }
    }
    best.map(|(k, _)| k.clone())
}

type LabelKey = (String, String);
type PoiKey = (String, u32);

pub fn score(detected: &[TimedRow], truth: &[TimedRow]) -> Score {
    let label_of = |t: &TimedRow| (t.user.clone(), t.label.clone().unwrap_or_default());
    let poi_of = |d: &TimedRow| (d.user.clone(), d.poi_id.unwrap_or_default());

    let mut ids_per_label: BTreeMap<LabelKey, BTreeMap<PoiKey, usize>> = BTreeMap::new();
    let mut labels_per_id: BTreeMap<PoiKey, BTreeMap<LabelKey, usize>> = BTreeMap::new();
    for d in detected {
        if let Some(t) = best_overlap(d, truth) {
            *ids_per_label
                .entry(label_of(t))
                .or_default()
                .entry(poi_of(d))
                .or_default() += 1;
            *labels_per_id
                .entry(poi_of(d))
                .or_default()
                .entry(label_of(t))
                .or_default() += 1;
        }
    }
    let label_id: BTreeMap<&LabelKey, Option<PoiKey>> = ids_per_label.iter().map(|(l, c)| (l, majority(c))).collect();
    let id_label: BTreeMap<&PoiKey, Option<LabelKey>> = labels_per_id.iter().map(|(p, c)| (p, majority(c))).collect();

    let mut matched = 0;
    let mut correct = 0;
    let mut errors = Vec::new();
    for t in truth {
        let Some(d) = best_overlap(t, detected) else {
            continue;
        };
        matched += 1;
        errors.push((d.start - t.start).abs() as f64 / 60.0);
        errors.push((d.end - t.end).abs() as f64 / 60.0);
        let label = label_of(t);
        let poi = poi_of(d);
        let forward = label_id.get(&label).cloned().flatten();
        let backward = id_label.get(&poi).cloned().flatten();
        if forward.as_ref() == Some(&poi) && backward.as_ref() == Some(&label) {
            correct += 1;
        }
    }

    let boundary_mean_min = if errors.is_empty() {
        0.0
    } else {
        errors.iter().sum::<f64>() / errors.len() as f64
    };
    Score {
        truth_visits: truth.len(),
        detected_visits: detected.len(),
        matched_visits: matched,
        boundary_mean_min,
        boundary_max_min: errors.iter().cloned().fold(0.0, f64::max),
        accuracy: if truth.is_empty() {
            1.0
        } else {
            correct as f64 / truth.len() as f64
        },
        splits: ids_per_label.values().filter(|ids| ids.len() > 1).count(),
        merges: labels_per_id.values().filter(|ls| ls.len() > 1).count(),
    }
}
