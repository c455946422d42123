//! Per-day POI extraction and cross-user community detection over the two
//! stores.

use std::collections::BTreeMap;

use indoor_poi::community::{build_graph, louvain, threshold_sweep, Partition, PoiGraph, SweepRow};
use indoor_poi::ingest::RawStore;
use indoor_poi::registry::{build_fingerprint, ClusterSummary, RegistryOptions, SummaryStore};
use indoor_poi::simgen::DAY;
use indoor_poi::{dbscan, segment_visits, ClusterId, ClusterParams, ScanLog, ScanResult};

use crate::config::PipelineConfig;
use crate::report::{day_start, CommunityRow, TimedRow};
use crate::{CliError, CliResult};

/// Clusters of one log plus how many scans were left as noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DayClusters {
    pub clusters: Vec<ClusterSummary>,
    pub noise: usize,
}

/// DBSCAN, visit segmentation and one fingerprint per cluster, in cluster
/// id order.
pub fn cluster_log(log: &ScanLog, params: &ClusterParams) -> CliResult<DayClusters> {
    if log.is_empty() {
        return Ok(DayClusters {
            clusters: Vec::new(),
            noise: 0,
        });
    }
    let labels = dbscan(log, params).map_err(|e| CliError::domain(e.to_string()))?;
    let visits = segment_visits(log, &labels, params).map_err(|e| CliError::domain(e.to_string()))?;

    let mut members: BTreeMap<ClusterId, Vec<ScanResult>> = BTreeMap::new();
    for (scan, label) in log.scans().iter().zip(&labels) {
        if let Some(id) = label.cluster() {
            members.entry(id).or_default().push(scan.clone());
        }
    }
    let mut clusters = Vec::with_capacity(members.len());
    for (id, scans) in members {
        clusters.push(ClusterSummary {
            fingerprint: build_fingerprint(&scans)?,
            visits: visits.iter().filter(|v| v.cluster == id).copied().collect(),
        });
    }
    Ok(DayClusters {
        clusters,
        noise: labels.iter().filter(|l| l.is_noise()).count(),
    })
}

/// What one `extract` run did.
#[derive(Debug, Clone, PartialEq)]
pub struct DayOutcome {
    pub rows: Vec<TimedRow>,
    pub scans: usize,
    pub noise: usize,
    pub clusters: usize,
    /// The day had already been processed with the same parameters.
    pub already_processed: bool,
}

pub fn open_summary(config: &PipelineConfig) -> CliResult<SummaryStore> {
    std::fs::create_dir_all(&config.store)?;
    let options = RegistryOptions {
        refresh_fingerprints: config.refresh_fingerprints,
    };
    Ok(SummaryStore::open(&config.summary_path(), options)?)
}

pub fn open_raw(config: &PipelineConfig) -> CliResult<RawStore> {
    std::fs::create_dir_all(&config.store)?;
    Ok(RawStore::open(&config.raw_path())?)
}

/// Runs the day `day` (local day index) of `user` through clustering and
/// the POI registry, then reads back the day's summary. Re-running with the
/// same parameters changes nothing; different parameters are refused.
pub fn extract_day(
    raw: &RawStore,
    summary: &mut SummaryStore,
    user: &str,
    day: i64,
    config: &PipelineConfig,
) -> CliResult<DayOutcome> {
    if !raw.has_user(user)? {
        return Err(CliError::domain(format!("unknown user {user:?}")));
    }
    let params = config.cluster_params()?;
    let key = config.params_key();
    let start = day_start(day, config.utc_offset());
    let end = start + DAY;
    let log = raw.load_log(user, start, end)?;

    let (already_processed, noise, clusters) = match summary.processed_day(user, day)? {
        Some(previous) if previous == key => (true, 0, 0),
        Some(previous) => {
            return Err(CliError::domain(format!(
                "{user} day {day} was already extracted with {previous}, refusing {key}"
            )))
        }
        None => {
            let found = cluster_log(&log, &params)?;
            summary.record_day(user, day, &key, &found.clusters, config.match_threshold)?;
            (false, found.noise, found.clusters.len())
        }
    };

    let rows = if summary.has_user(user)? {
        summary
            .daily_summary(user, start, end)?
            .into_iter()
            .map(|r| TimedRow {
                user: user.to_string(),
                poi_id: Some(r.poi_id),
                label: r.label,
                start: r.start,
                end: r.end,
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(DayOutcome {
        rows,
        scans: log.len(),
        noise,
        clusters,
        already_processed,
    })
}

fn overlap(a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0)
}

/// Names each of the user's POI after the ground-truth label its visits
/// overlap most. POI without any overlap keep their label.
pub fn label_from_truth(summary: &mut SummaryStore, user: &str, truth: &[TimedRow]) -> CliResult<usize> {
    let mut labelled = 0;
    for record in summary.records(user)? {
        let mut by_label: BTreeMap<&str, i64> = BTreeMap::new();
        for visit in &record.visits {
            for t in truth.iter().filter(|t| t.user == user) {
                let o = overlap((visit.start, visit.end), (t.start, t.end));
                if o > 0 {
                    *by_label.entry(t.label.as_deref().unwrap_or("")).or_default() += o;
                }
            }
        }
        let best = by_label.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)));
        if let Some((label, _)) = best {
            summary.set_label(user, record.poi_id, label)?;
            labelled += 1;
        }
    }
    Ok(labelled)
}

/// Graph, partition and threshold sweep over every registered POI.
#[derive(Debug, Clone)]
pub struct CommunityOutcome {
    pub sweep: Vec<SweepRow>,
    pub graph: PoiGraph,
    pub partition: Partition,
    pub rows: Vec<CommunityRow>,
}

pub fn detect_communities(summary: &SummaryStore, config: &PipelineConfig) -> CliResult<CommunityOutcome> {
    let records = summary.all_records()?;
    let fps: Vec<_> = records.iter().map(|r| r.fingerprint.clone()).collect();
    let sweep = threshold_sweep(&fps, &config.thresholds)?;
    let graph = build_graph(&fps, config.community_threshold)?;
    let partition = louvain(&graph)?;
    let rows = records
        .iter()
        .zip(&partition.membership)
        .map(|(r, &c)| CommunityRow {
            user: r.user.clone(),
            poi_id: r.poi_id,
            label: r.label.clone().unwrap_or_default(),
            community: c,
        })
        .collect();
    Ok(CommunityOutcome {
        sweep,
        graph,
        partition,
        rows,
    })
}
