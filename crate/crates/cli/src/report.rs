//! CSV files exchanged between commands.
//!
//! Times are local `HH:mm` within the row's `date`; `24:00` marks the end of
//! the day. Summary rows are `user,date,poi_id,label,start,end`, ground truth
//! rows are `user,date,label,start,end`, sweep rows are
//! `threshold,edges,communities,modularity` and community rows are
//! `user,poi_id,label,community`.

use std::io::{Read, Write};

use chrono::{Days, NaiveDate};
use indoor_poi::community::SweepRow;
use indoor_poi::simgen::{parse_hhmm, DAY};
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

fn epoch() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date")
}

/// Calendar date of a day index counted from 1970-01-01.
pub fn date_of_day(day: i64) -> NaiveDate {
    if day >= 0 {
        epoch() + Days::new(day as u64)
    } else {
        epoch() - Days::new(day.unsigned_abs())
    }
}

pub fn day_of_date(date: NaiveDate) -> i64 {
    (date - epoch()).num_days()
}

pub fn parse_date(text: &str) -> CliResult<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .map_err(|_| CliError::input(format!("bad date {text:?}, expected YYYY-MM-DD")))
}

/// Local day index containing epoch second `t`.
pub fn local_day(t: i64, utc_offset: i64) -> i64 {
    (t + utc_offset).div_euclid(DAY)
}

/// Epoch second of local midnight starting `day`.
pub fn day_start(day: i64, utc_offset: i64) -> i64 {
    day * DAY - utc_offset
}

/// `HH:mm` for `t` relative to local midnight of `day`.
fn clock(t: i64, day: i64, utc_offset: i64) -> String {
    let secs = (t - day_start(day, utc_offset)).clamp(0, DAY);
    format!("{:02}:{:02}", secs / 3600, (secs % 3600) / 60)
}

fn unclock(text: &str, day: i64, utc_offset: i64) -> CliResult<i64> {
    let secs = parse_hhmm(text).map_err(|e| CliError::input(e.to_string()))?;
    Ok(day_start(day, utc_offset) + secs)
}

/// A labelled interval in epoch seconds. `poi_id` is set for summaries only.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedRow {
    pub user: String,
    pub poi_id: Option<u32>,
    pub label: Option<String>,
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryRecord {
    user: String,
    date: String,
    poi_id: u32,
    label: String,
    start: String,
    end: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRecord {
    user: String,
    date: String,
    label: String,
    start: String,
    end: String,
}

fn with_line<T>(r: Result<T, csv::Error>, what: &str) -> CliResult<T> {
    r.map_err(|e| {
        let line = e.position().map_or(0, |p| p.line());
        CliError::input(format!("{what} line {line}: {e}"))
    })
}

pub fn write_summary<W: Write>(rows: &[TimedRow], utc_offset: i64, out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["user", "date", "poi_id", "label", "start", "end"])?;
    }
    for row in rows {
        let day = local_day(row.start, utc_offset);
        w.serialize(SummaryRecord {
            user: row.user.clone(),
            date: date_of_day(day).to_string(),
            poi_id: row.poi_id.unwrap_or_default(),
            label: row.label.clone().unwrap_or_default(),
            start: clock(row.start, day, utc_offset),
            end: clock(row.end, day, utc_offset),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R, utc_offset: i64) -> CliResult<Vec<TimedRow>> {
    let mut out = Vec::new();
    for record in csv::Reader::from_reader(input).deserialize() {
        let r: SummaryRecord = with_line(record, "summary")?;
        let day = day_of_date(parse_date(&r.date)?);
        out.push(TimedRow {
            user: r.user,
            poi_id: Some(r.poi_id),
            label: (!r.label.is_empty()).then_some(r.label),
            start: unclock(&r.start, day, utc_offset)?,
            end: unclock(&r.end, day, utc_offset)?,
        });
    }
    Ok(out)
}

pub fn write_truth<W: Write>(rows: &[TimedRow], utc_offset: i64, out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["user", "date", "label", "start", "end"])?;
    }
    for row in rows {
        let day = local_day(row.start, utc_offset);
        w.serialize(TruthRecord {
            user: row.user.clone(),
            date: date_of_day(day).to_string(),
            label: row.label.clone().unwrap_or_default(),
            start: clock(row.start, day, utc_offset),
            end: clock(row.end, day, utc_offset),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth<R: Read>(input: R, utc_offset: i64) -> CliResult<Vec<TimedRow>> {
    let mut out = Vec::new();
    for record in csv::Reader::from_reader(input).deserialize() {
        let r: TruthRecord = with_line(record, "truth")?;
        let day = day_of_date(parse_date(&r.date)?);
        let start = unclock(&r.start, day, utc_offset)?;
        let end = unclock(&r.end, day, utc_offset)?;
        if end < start {
            return Err(CliError::input(format!(
                "truth row for {} ends before it starts",
                r.label
            )));
        }
        out.push(TimedRow {
            user: r.user,
            poi_id: None,
            label: Some(r.label),
            start,
            end,
        });
    }
    Ok(out)
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "edges", "communities", "modularity"])?;
    for r in rows {
        w.write_record([
            r.threshold.to_string(),
            r.edges.to_string(),
            r.communities.to_string(),
            format!("{:.6}", r.modularity),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One POI and the community it was placed in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunityRow {
    pub user: String,
    pub poi_id: u32,
    pub label: String,
    pub community: usize,
}

pub fn write_communities<W: Write>(rows: &[CommunityRow], out: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["user", "poi_id", "label", "community"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_communities<R: Read>(input: R) -> CliResult<Vec<CommunityRow>> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| with_line(r, "communities"))
        .collect()
}
