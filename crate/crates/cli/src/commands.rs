//! Subcommand implementations. Each returns the text meant for stdout and
//! writes any files itself.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use indoor_poi::ingest::{compress_batch, decode_log, decompress_batch, encode_log};
use indoor_poi::simgen::Scenario;

use crate::config::PipelineConfig;
use crate::pipeline::{detect_communities, extract_day, label_from_truth, open_raw, open_summary};
use crate::report::{self, day_of_date, TimedRow};
use crate::score::{score, Score};
use crate::{CliError, CliResult};

/// Scenarios shipped with the binary, addressable by name.
pub const BUNDLED_SCENARIOS: &[(&str, &str)] = &[
    ("office-day", include_str!("../scenarios/office-day.toml")),
    ("office-3day", include_str!("../scenarios/office-3day.toml")),
    ("mall-11-users", include_str!("../scenarios/mall-11-users.toml")),
];

pub fn bundled_scenario(name: &str) -> Option<&'static str> {
    BUNDLED_SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Scenario text from a bundled name or a file path.
pub fn load_scenario(name_or_path: &str) -> CliResult<Scenario> {
    let text = match bundled_scenario(name_or_path) {
        Some(text) => text.to_string(),
        None => {
            fs::read_to_string(name_or_path).map_err(|e| CliError::input(format!("scenario {name_or_path}: {e}")))?
        }
    };
    Ok(Scenario::from_toml(&text)?)
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// User name implied by a `<user>.scan` or `<user>.scan.gz` file name.
pub fn user_from_path(path: &Path) -> CliResult<(String, bool)> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::input(format!("{}: not a file name", path.display())))?;
    if let Some(user) = name.strip_suffix(".scan.gz") {
        Ok((user.to_string(), true))
    } else if let Some(user) = name.strip_suffix(".scan") {
        Ok((user.to_string(), false))
    } else {
        Err(CliError::input(format!(
            "{}: expected a .scan or .scan.gz file",
            path.display()
        )))
    }
}

pub fn ingest(config: &PipelineConfig, files: &[PathBuf], user: Option<&str>) -> CliResult<String> {
    let mut raw = open_raw(config)?;
    let mut out = String::new();
    for path in files {
        let (stem_user, gzipped) = user_from_path(path)?;
        let user = user.map_or(stem_user, str::to_string);
        let bytes = read_file(path)?;
        let plain = if gzipped { decompress_batch(&bytes) } else { Ok(bytes) };
        let log = plain
            .and_then(|b| decode_log(&b, &user))
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let report = raw.store_raw(&log)?;
        writeln!(
            out,
            "{}: user {user}, {} scans, {} rows added, {} rows skipped",
            path.display(),
            log.len(),
            report.rows_added,
            report.rows_skipped
        )
        .expect("write to string");
    }
    Ok(out)
}

pub fn extract(
    config: &PipelineConfig,
    user: &str,
    date: NaiveDate,
    truth: Option<&Path>,
    out: Option<&Path>,
) -> CliResult<String> {
    let raw = open_raw(config)?;
    let mut summary = open_summary(config)?;
    let day = day_of_date(date);
    let mut outcome = extract_day(&raw, &mut summary, user, day, config)?;

    if let Some(path) = truth {
        let rows = report::read_truth(&read_file(path)?[..], config.utc_offset())?;
        label_from_truth(&mut summary, user, &rows)?;
        outcome.rows = extract_day(&raw, &mut summary, user, day, config)?.rows;
    }

    let mut csv = Vec::new();
    report::write_summary(&outcome.rows, config.utc_offset(), &mut csv)?;
    let status = if outcome.already_processed {
        format!("{user} {date}: already extracted, {} visits", outcome.rows.len())
    } else {
        format!(
            "{user} {date}: {} scans, {} noise, {} clusters, {} visits",
            outcome.scans,
            outcome.noise,
            outcome.clusters,
            outcome.rows.len()
        )
    };
    match out {
        Some(path) => {
            fs::write(path, &csv)?;
            Ok(format!("{status}\n"))
        }
        None => {
            eprintln!("{status}");
            Ok(String::from_utf8(csv).expect("CSV output is UTF-8"))
        }
    }
}

pub fn communities(config: &PipelineConfig, out_dir: &Path, graph_out: Option<&Path>) -> CliResult<String> {
    let summary = open_summary(config)?;
    let outcome = detect_communities(&summary, config)?;
    fs::create_dir_all(out_dir)?;
    report::write_sweep(&outcome.sweep, fs::File::create(out_dir.join("sweep.csv"))?)?;
    report::write_communities(&outcome.rows, fs::File::create(out_dir.join("communities.csv"))?)?;
    if let Some(path) = graph_out {
        outcome.graph.write_edge_list(fs::File::create(path)?)?;
    }
    let mut text = String::new();
    writeln!(
        text,
        "{} POI, {} pairs scored, {} edges at threshold {}, {} communities, modularity {:.4}",
        outcome.graph.node_count(),
        outcome.graph.candidate_pairs(),
        outcome.graph.edges().len(),
        config.community_threshold,
        outcome.partition.community_count(),
        outcome.partition.modularity
    )
    .expect("write to string");
    Ok(text)
}

pub fn simulate(scenario: &str, seed: u64, out_dir: &Path, utc_offset: i64) -> CliResult<String> {
    let scenario = load_scenario(scenario)?;
    let traces = scenario.generate(seed)?;
    fs::create_dir_all(out_dir)?;
    let mut truth = Vec::new();
    let mut text = String::new();
    for trace in &traces {
        let path = out_dir.join(format!("{}.scan.gz", trace.user));
        fs::write(&path, compress_batch(&encode_log(&trace.log)))?;
        writeln!(text, "{}: {} scans", path.display(), trace.log.len()).expect("write to string");
        truth.extend(trace.truth.iter().map(|v| TimedRow {
            user: trace.user.clone(),
            poi_id: None,
            label: Some(v.label.clone()),
            start: v.start,
            end: v.end,
        }));
    }
    let truth_path = out_dir.join("truth.csv");
    report::write_truth(&truth, utc_offset, fs::File::create(&truth_path)?)?;
    writeln!(text, "{}: {} visits", truth_path.display(), truth.len()).expect("write to string");
    Ok(text)
}

pub fn score_files(summaries: &[PathBuf], truth: &Path, utc_offset: i64) -> CliResult<Score> {
    let mut detected = Vec::new();
    for path in summaries {
        detected.extend(report::read_summary(&read_file(path)?[..], utc_offset)?);
    }
    let truth = report::read_truth(&read_file(truth)?[..], utc_offset)?;
    Ok(score(&detected, &truth))
}
