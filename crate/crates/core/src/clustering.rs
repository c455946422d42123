//! Density-based clustering of a user's scans, with cosine similarity as the
//! neighbourhood predicate, and segmentation of clusters into visits.
//!
//! This is canonical DBSCAN (Ester et al.). A scan is a core point when at
//! least `min_pts` scans, itself included, reach `epsilon` similarity with it.
//! Seeds are taken in scan-time order and a border point belongs to the first
//! cluster that reaches it, so labels are a pure function of the input.

use std::collections::VecDeque;
use std::fmt;

use thiserror::Error;

use crate::model::{ClusterParams, Fingerprint, ModelError, ScanLog};
use crate::similarity::NormedFingerprint;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClusterError {
    #[error("scan log is empty")]
    EmptyLog,
    #[error("{labels} labels for {scans} scans")]
    LabelLengthMismatch { scans: usize, labels: usize },
    #[error(transparent)]
    InvalidParams(#[from] ModelError),
}

/// Cluster number, starting at 1 in order of discovery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClusterLabel {
    Noise,
    Cluster(ClusterId),
}

impl ClusterLabel {
    pub fn cluster(self) -> Option<ClusterId> {
        match self {
            ClusterLabel::Noise => None,
            ClusterLabel::Cluster(id) => Some(id),
        }
    }

    pub fn is_noise(self) -> bool {
        self == ClusterLabel::Noise
    }
}

/// A maximal run of temporally contiguous scans belonging to one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VisitInterval {
    pub cluster: ClusterId,
    pub start: i64,
    pub end: i64,
    pub scan_count: usize,
    /// Fewer than `min_pts` scans in this run. Kept because short revisits
    /// to an established place are real.
    pub sub_minimal: bool,
}

/// Indices of every fingerprint in `all` with similarity `>= eps` to `point`.
pub fn find_neighbours(point: &Fingerprint, all: &[Fingerprint], eps: f64) -> Vec<usize> {
    let p = NormedFingerprint::new(point);
    all.iter()
        .enumerate()
        .filter(|(_, other)| p.similarity(&NormedFingerprint::new(other)).value() >= eps)
        .map(|(i, _)| i)
        .collect()
}

/// Neighbour lists for every point, computed from one pass over the pairs.
fn neighbourhoods(points: &[Fingerprint], eps: f64) -> Vec<Vec<usize>> {
    let normed: Vec<NormedFingerprint<'_>> = points.iter().map(NormedFingerprint::new).collect();
    let mut hoods: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    for i in 0..normed.len() {
        for j in (i + 1)..normed.len() {
            if normed[i].similarity(&normed[j]).value() >= eps {
                hoods[i].push(j);
                hoods[j].push(i);
            }
        }
    }
    for hood in &mut hoods {
        hood.sort_unstable();
    }
    hoods
}

/// Clusters already-built fingerprints. Exposed separately from [`dbscan`]
/// so callers with their own point sets can reuse it.
pub fn dbscan_fingerprints(points: &[Fingerprint], params: &ClusterParams) -> Vec<ClusterLabel> {
    #[derive(Clone, Copy, PartialEq)]
    enum State {
        Unvisited,
        Noise,
        Member(u32),
    }

    let hoods = neighbourhoods(points, params.epsilon);
    let mut state = vec![State::Unvisited; points.len()];
    let mut next_cluster = 0u32;
    let mut queue = VecDeque::new();

    for seed in 0..points.len() {
        if state[seed] != State::Unvisited {
            continue;
        }
        if hoods[seed].len() < params.min_pts {
            state[seed] = State::Noise;
            continue;
        }
        next_cluster += 1;
        state[seed] = State::Member(next_cluster);
        queue.extend(hoods[seed].iter().copied());
        while let Some(q) = queue.pop_front() {
            match state[q] {
                State::Member(_) => continue,
                // Previously rejected as a seed; reachable now, so a border point.
                State::Noise => {
                    state[q] = State::Member(next_cluster);
                    continue;
                }
                State::Unvisited => {
                    state[q] = State::Member(next_cluster);
                    if hoods[q].len() >= params.min_pts {
                        queue.extend(hoods[q].iter().copied());
                    }
                }
            }
        }
    }

    state
        .into_iter()
        .map(|s| match s {
            State::Member(c) => ClusterLabel::Cluster(ClusterId(c)),
            _ => ClusterLabel::Noise,
        })
        .collect()
}

/// Labels every scan of `log`. Scans without observations are always noise.
pub fn dbscan(log: &ScanLog, params: &ClusterParams) -> Result<Vec<ClusterLabel>, ClusterError> {
    params.validate()?;
    if log.is_empty() {
        return Err(ClusterError::EmptyLog);
    }
    let mut positions = Vec::with_capacity(log.len());
    let mut points = Vec::with_capacity(log.len());
    for (i, scan) in log.scans().iter().enumerate() {
        if let Ok(fp) = Fingerprint::from_scan(scan) {
            positions.push(i);
            points.push(fp);
        }
    }
    let mut labels = vec![ClusterLabel::Noise; log.len()];
    for (pos, label) in positions.into_iter().zip(dbscan_fingerprints(&points, params)) {
        labels[pos] = label;
    }
    Ok(labels)
}

/// Splits each cluster's scans into runs whose successive gaps are at most
/// twice the scan interval. Noise scans and scans of other clusters end a run.
pub fn segment_visits(
    log: &ScanLog,
    labels: &[ClusterLabel],
    params: &ClusterParams,
) -> Result<Vec<VisitInterval>, ClusterError> {
    if labels.len() != log.len() {
        return Err(ClusterError::LabelLengthMismatch {
            scans: log.len(),
            labels: labels.len(),
        });
    }
    let max_gap = 2 * params.scan_interval;
    let mut visits = Vec::new();
    let mut open: Option<VisitInterval> = None;

    let close = |run: VisitInterval, visits: &mut Vec<VisitInterval>| {
        visits.push(VisitInterval {
            sub_minimal: run.scan_count < params.min_pts,
            ..run
        });
    };

    for (scan, label) in log.scans().iter().zip(labels) {
        let t = scan.timestamp();
        match (label.cluster(), open.as_mut()) {
            (None, _) => {
                if let Some(run) = open.take() {
                    close(run, &mut visits);
                }
            }
            (Some(c), Some(run)) if run.cluster == c && t - run.end <= max_gap => {
                run.end = t;
                run.scan_count += 1;
            }
            (Some(c), _) => {
                if let Some(run) = open.take() {
                    close(run, &mut visits);
                }
                open = Some(VisitInterval {
                    cluster: c,
                    start: t,
                    end: t,
                    scan_count: 1,
                    sub_minimal: false,
                });
            }
        }
    }
    if let Some(run) = open {
        close(run, &mut visits);
    }
    Ok(visits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MacAddress, Rssi, ScanResult};
    use crate::oracle;
    use crate::similarity::pairwise_similarities;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mac(b: u16) -> MacAddress {
        let [hi, lo] = b.to_be_bytes();
        MacAddress::from_octets([0x02, 0, 0, 0, hi, lo])
    }

    fn scan(t: i64, aps: &[(u16, i32)]) -> ScanResult {
        ScanResult::new(t, aps.iter().map(|&(m, r)| (mac(m), Rssi::new(r).unwrap())))
    }

    fn log_of(scans: Vec<ScanResult>) -> ScanLog {
        ScanLog::new("u", "d", scans)
    }

    /// A scan taken in "room" `room`: the room's own APs with a little jitter.
    fn room_scan(t: i64, room: u16, rng: &mut ChaCha8Rng) -> ScanResult {
        let aps: Vec<(u16, i32)> = (0..6)
            .map(|k| (room * 10 + k, -45 - 5 * k as i32 + rng.random_range(-2..=2)))
            .collect();
        scan(t, &aps)
    }

    #[test]
    fn neighbours_of_identical_points() {
        let f = Fingerprint::from_means([(mac(1), -50.0), (mac(2), -60.0)]).unwrap();
        let all = vec![f.clone(); 5];
        assert_eq!(find_neighbours(&f, &all, 0.5), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn neighbours_of_disjoint_point() {
        let all: Vec<Fingerprint> = (0..5u16)
            .map(|i| Fingerprint::from_means([(mac(i), -50.0)]).unwrap())
            .collect();
        assert_eq!(find_neighbours(&all[3], &all, 0.5), vec![3]);
    }

    #[test]
    fn neighbours_match_pairwise_filter() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let all: Vec<Fingerprint> = (0..50)
            .map(|i| {
                let s = room_scan(i, rng.random_range(0..4), &mut rng);
                Fingerprint::from_scan(&s).unwrap()
            })
            .collect();
        let pairs = pairwise_similarities(&all).unwrap();
        for p in 0..all.len() {
            let mut expected: Vec<usize> = pairs
                .iter()
                .filter(|(_, _, c)| c.value() >= 0.5)
                .filter_map(|&(i, j, _)| {
                    if i == p {
                        Some(j)
                    } else if j == p {
                        Some(i)
                    } else {
                        None
                    }
                })
                .chain([p])
                .collect();
            expected.sort();
            assert_eq!(find_neighbours(&all[p], &all, 0.5), expected);
        }
    }

    #[test]
    fn single_desk_forms_one_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let log = log_of((0..12).map(|i| room_scan(i * 300, 1, &mut rng)).collect());
        let labels = dbscan(&log, &ClusterParams::default()).unwrap();
        assert!(labels.iter().all(|&l| l == ClusterLabel::Cluster(ClusterId(1))));
    }

    #[test]
    fn below_min_pts_is_all_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let log = log_of((0..3).map(|i| room_scan(i * 300, 1, &mut rng)).collect());
        let labels = dbscan(&log, &ClusterParams::default()).unwrap();
        assert!(labels.iter().all(|l| l.is_noise()));
    }

    #[test]
    fn empty_log_errors() {
        assert_eq!(
            dbscan(&log_of(vec![]), &ClusterParams::default()),
            Err(ClusterError::EmptyLog)
        );
    }

    #[test]
    fn empty_scans_are_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut scans: Vec<ScanResult> = (0..5).map(|i| room_scan(i * 300, 1, &mut rng)).collect();
        scans.push(ScanResult::new(5 * 300, []));
        let labels = dbscan(&log_of(scans), &ClusterParams::default()).unwrap();
        assert_eq!(labels[5], ClusterLabel::Noise);
        assert!(labels[..5].iter().all(|l| !l.is_noise()));
    }

    #[test]
    fn two_rooms_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut scans = Vec::new();
        for i in 0..40 {
            let room = if i < 20 { 1 } else { 2 };
            scans.push(room_scan(i * 300, room, &mut rng));
        }
        let log = log_of(scans);
        let params = ClusterParams::default();
        let labels = dbscan(&log, &params).unwrap();
        let fps: Vec<Fingerprint> = log.scans().iter().map(|s| Fingerprint::from_scan(s).unwrap()).collect();
        let expected = oracle::naive_dbscan(&fps, params.epsilon, params.min_pts);
        assert_eq!(oracle::partition_of(&labels), oracle::partition_of(&expected));
        assert_eq!(oracle::partition_of(&labels).len(), 2);
    }

    #[test]
    fn segment_revisit_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rooms = [1, 1, 1, 1, 2, 2, 2, 2, 1, 1, 1, 1];
        let log = log_of(
            rooms
                .iter()
                .enumerate()
                .map(|(i, &r)| room_scan(i as i64 * 300, r, &mut rng))
                .collect(),
        );
        let c = |n| ClusterLabel::Cluster(ClusterId(n));
        let labels: Vec<ClusterLabel> = rooms.iter().map(|&r| c(r as u32)).collect();
        let visits = segment_visits(&log, &labels, &ClusterParams::default()).unwrap();
        let summary: Vec<(u32, i64, i64, usize)> = visits
            .iter()
            .map(|v| (v.cluster.0, v.start, v.end, v.scan_count))
            .collect();
        assert_eq!(summary, vec![(1, 0, 900, 4), (2, 1200, 2100, 4), (1, 2400, 3300, 4)]);
        assert!(visits.iter().all(|v| !v.sub_minimal));
    }

    #[test]
    fn segment_all_noise_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let log = log_of((0..6).map(|i| room_scan(i * 300, 1, &mut rng)).collect());
        let labels = vec![ClusterLabel::Noise; 6];
        assert!(segment_visits(&log, &labels, &ClusterParams::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn segment_splits_on_gap_and_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let times = [0, 300, 600, 900, 1500, 2400, 2700, 3000];
        let log = log_of(times.iter().map(|&t| room_scan(t, 1, &mut rng)).collect());
        let c1 = ClusterLabel::Cluster(ClusterId(1));
        let mut labels = vec![c1; times.len()];
        // 900 -> 1500 is exactly 2 intervals, still contiguous; 1500 -> 2400 is not.
        let visits = segment_visits(&log, &labels, &ClusterParams::default()).unwrap();
        assert_eq!(visits.len(), 2);
        assert_eq!((visits[0].start, visits[0].end, visits[0].scan_count), (0, 1500, 5));
        assert_eq!((visits[1].start, visits[1].end, visits[1].scan_count), (2400, 3000, 3));
        assert!(visits[1].sub_minimal);

        labels[1] = ClusterLabel::Noise;
        let visits = segment_visits(&log, &labels, &ClusterParams::default()).unwrap();
        assert_eq!(visits.len(), 3);
        assert_eq!(visits[0].scan_count, 1);
    }

    #[test]
    fn segment_length_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let log = log_of((0..3).map(|i| room_scan(i * 300, 1, &mut rng)).collect());
        assert_eq!(
            segment_visits(&log, &[ClusterLabel::Noise], &ClusterParams::default()),
            Err(ClusterError::LabelLengthMismatch { scans: 3, labels: 1 })
        );
    }

    #[test]
    fn twenty_minute_rule() {
        // An isolated room visited for k scans among transit scans that each
        // see their own unique APs.
        for k in 1..=8i64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + k as u64);
            let mut scans = Vec::new();
            let mut t = 0;
            for n in 0..4u16 {
                scans.push(scan(t, &[(500 + n, -60)]));
                t += 300;
            }
            for _ in 0..k {
                scans.push(room_scan(t, 1, &mut rng));
                t += 300;
            }
            for n in 0..4u16 {
                scans.push(scan(t, &[(600 + n, -60)]));
                t += 300;
            }
            let labels = dbscan(&log_of(scans), &ClusterParams::default()).unwrap();
            let clustered = labels.iter().filter(|l| !l.is_noise()).count();
            if k * 300 < 20 * 60 {
                assert_eq!(clustered, 0, "stay of {k} scans must not form a cluster");
            } else {
                assert_eq!(clustered as i64, k);
            }
        }
    }

    fn random_log(seed: u64, n: usize) -> ScanLog {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scans = (0..n)
            .map(|i| {
                let room = rng.random_range(0..5u16);
                let mut s = room_scan(i as i64 * 300, room, &mut rng).to_raw().observations;
                // Occasional APs from a neighbouring room blur the boundaries.
                if rng.random_bool(0.3) {
                    s.push((mac((room + 1) * 10), -85));
                }
                if rng.random_bool(0.2) {
                    s.truncate(rng.random_range(1..=s.len()));
                }
                ScanResult::new(i as i64 * 300, s.into_iter().map(|(m, r)| (m, Rssi::new(r).unwrap())))
            })
            .collect();
        log_of(scans)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn noise_monotone_in_epsilon(seed in any::<u64>(), e1 in 0.3f64..0.8, bump in 0.01f64..0.2) {
            let log = random_log(seed, 60);
            let p1 = ClusterParams { epsilon: e1, ..ClusterParams::default() };
            let p2 = ClusterParams { epsilon: (e1 + bump).min(1.0), ..ClusterParams::default() };
            let l1 = dbscan(&log, &p1).unwrap();
            let l2 = dbscan(&log, &p2).unwrap();
            for (a, b) in l1.iter().zip(&l2) {
                if a.is_noise() {
                    prop_assert!(b.is_noise());
                }
            }
        }

        #[test]
        fn deterministic_and_matches_oracle(seed in any::<u64>(), eps in 0.3f64..0.9, min_pts in 2usize..6) {
            let log = random_log(seed, 80);
            let params = ClusterParams { epsilon: eps, min_pts, ..ClusterParams::default() };
            let a = dbscan(&log, &params).unwrap();
            let b = dbscan(&log, &params).unwrap();
            prop_assert_eq!(&a, &b);
            let fps: Vec<Fingerprint> = log.scans().iter().map(|s| Fingerprint::from_scan(s).unwrap()).collect();
            let expected = oracle::naive_dbscan(&fps, eps, min_pts);
            prop_assert_eq!(oracle::partition_of(&a), oracle::partition_of(&expected));
        }

        #[test]
        fn visits_sorted_and_disjoint(seed in any::<u64>()) {
            let log = random_log(seed, 60);
            let params = ClusterParams::default();
            let labels = dbscan(&log, &params).unwrap();
            let visits = segment_visits(&log, &labels, &params).unwrap();
            for v in &visits {
                prop_assert!(v.start <= v.end);
            }
            for w in visits.windows(2) {
                prop_assert!(w[0].end < w[1].start);
            }
            let covered: usize = visits.iter().map(|v| v.scan_count).sum();
            prop_assert_eq!(covered, labels.iter().filter(|l| !l.is_noise()).count());
        }
    }
}
