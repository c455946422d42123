//! POI fingerprints, revisit matching and the summary store.
//!
//! A cluster's fingerprint is the per-MAC mean of every reading in the
//! cluster. New clusters are matched against the user's registered POI by
//! cosine similarity; a match at or above the threshold reuses the POI id,
//! appends the visits and folds the new readings into the stored fingerprint.
//! POI ids are scoped per user.
//!
//! The summary store is a SQLite file with two tables:
//!
//! ```text
//! poi_properties(user TEXT, poi_id INTEGER, created_at INTEGER,
//!                fingerprint TEXT, label TEXT NULL,
//!                PRIMARY KEY (user, poi_id))
//! poi_visits(visit_id INTEGER PRIMARY KEY, user TEXT, poi_id INTEGER,
//!            start INTEGER, end INTEGER, scan_count INTEGER,
//!            sub_minimal INTEGER,
//!            FOREIGN KEY (user, poi_id) REFERENCES poi_properties)
//! ```
//!
//! `fingerprint` holds [`Fingerprint::to_blob`] text. A third table,
//! `processed_days`, remembers which user-days were already folded in.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rusqlite::{params, Connection, OptionalExtension, Transaction};
use thiserror::Error;

use crate::clustering::VisitInterval;
use crate::model::{Fingerprint, FingerprintEntry, ModelError, ScanResult};
use crate::similarity::{NormedFingerprint, SimilarityScore};

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot build a fingerprint from an empty cluster")]
    EmptyCluster,
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
    #[error("integrity violation: {0}")]
    IntegrityViolation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<rusqlite::Error> for RegistryError {
    fn from(e: rusqlite::Error) -> Self {
        RegistryError::StorageFailure(e.to_string())
    }
}

/// Per-MAC mean RSS over every scan in which the MAC was observed.
pub fn build_fingerprint(cluster_scans: &[ScanResult]) -> Result<Fingerprint, RegistryError> {
    let mut sums: BTreeMap<_, (f64, u32)> = BTreeMap::new();
    for scan in cluster_scans {
        for (mac, rssi) in scan.observations() {
            let slot = sums.entry(*mac).or_insert((0.0, 0));
            slot.0 += rssi.dbm() as f64;
            slot.1 += 1;
        }
    }
    if sums.is_empty() {
        return Err(RegistryError::EmptyCluster);
    }
    let entries = sums
        .into_iter()
        .map(|(mac, (sum, count))| {
            (
                mac,
                FingerprintEntry {
                    mean: sum / count as f64,
                    count,
                },
            )
        })
        .collect();
    Ok(Fingerprint::from_entries(entries)?)
}

/// A visit as persisted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StoredVisit {
    pub visit_id: i64,
    pub poi_id: u32,
    pub start: i64,
    pub end: i64,
    pub scan_count: usize,
    pub sub_minimal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoiRecord {
    pub poi_id: u32,
    pub user: String,
    pub fingerprint: Fingerprint,
    pub created_at: i64,
    pub visits: Vec<StoredVisit>,
    /// Ground-truth label, for evaluation only.
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PoiMatch {
    Existing { poi_id: u32, score: SimilarityScore },
    NewPoi,
}

/// Best-scoring record if it reaches `threshold`; ties go to the lowest id.
pub fn match_poi(fp: &Fingerprint, registry: &[PoiRecord], threshold: f64) -> PoiMatch {
    let probe = NormedFingerprint::new(fp);
    let mut sorted: Vec<&PoiRecord> = registry.iter().collect();
    sorted.sort_by_key(|r| r.poi_id);
    let mut best: Option<(u32, SimilarityScore)> = None;
    for record in sorted {
        let score = probe.similarity(&NormedFingerprint::new(&record.fingerprint));
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((record.poi_id, score));
        }
    }
    match best {
        Some((poi_id, score)) if score.value() >= threshold => PoiMatch::Existing { poi_id, score },
        _ => PoiMatch::NewPoi,
    }
}

/// Result of an upsert.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Upserted {
    pub poi_id: u32,
    pub matched: bool,
}

/// One row of a daily summary, shaped like the paper-style timeline tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub poi_id: u32,
    pub label: Option<String>,
    pub start: i64,
    pub end: i64,
}

/// Where [`SummaryStore::upsert_poi_with_crash`] aborts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrashPoint {
    BeforePoiWrite,
    AfterPoiWrite,
    AfterVisit(usize),
    BeforeCommit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegistryOptions {
    /// Fold revisit readings into the stored fingerprint. When false the
    /// first fingerprint is kept as-is.
    pub refresh_fingerprints: bool,
}

impl Default for RegistryOptions {
    fn default() -> Self {
        RegistryOptions {
            refresh_fingerprints: true,
        }
    }
}

/// A cluster ready to be registered: its fingerprint and visits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSummary {
    pub fingerprint: Fingerprint,
    pub visits: Vec<VisitInterval>,
}

pub struct SummaryStore {
    conn: Connection,
    options: RegistryOptions,
}

impl SummaryStore {
    pub fn open(path: &Path, options: RegistryOptions) -> Result<Self, RegistryError> {
        Self::init(Connection::open(path)?, options)
    }

    pub fn open_in_memory(options: RegistryOptions) -> Result<Self, RegistryError> {
        Self::init(Connection::open_in_memory()?, options)
    }

    fn init(conn: Connection, options: RegistryOptions) -> Result<Self, RegistryError> {
        conn.execute_batch(
            "PRAGMA foreign_keys = ON;
             PRAGMA journal_mode = WAL;
             CREATE TABLE IF NOT EXISTS poi_properties (
                 user        TEXT    NOT NULL,
                 poi_id      INTEGER NOT NULL,
                 created_at  INTEGER NOT NULL,
                 fingerprint TEXT    NOT NULL,
                 label       TEXT,
                 PRIMARY KEY (user, poi_id)
             );
             CREATE TABLE IF NOT EXISTS poi_visits (
                 visit_id    INTEGER PRIMARY KEY AUTOINCREMENT,
                 user        TEXT    NOT NULL,
                 poi_id      INTEGER NOT NULL,
                 start       INTEGER NOT NULL,
                 end         INTEGER NOT NULL,
                 scan_count  INTEGER NOT NULL,
                 sub_minimal INTEGER NOT NULL,
                 FOREIGN KEY (user, poi_id) REFERENCES poi_properties (user, poi_id)
             );
             CREATE INDEX IF NOT EXISTS poi_visits_by_user ON poi_visits (user, start);
             CREATE TABLE IF NOT EXISTS processed_days (
                 user   TEXT    NOT NULL,
                 day    INTEGER NOT NULL,
                 params TEXT    NOT NULL,
                 PRIMARY KEY (user, day)
             );",
        )?;
        Ok(SummaryStore { conn, options })
    }

    pub fn options(&self) -> RegistryOptions {
        self.options
    }

    /// Matches `fp` against the user's POI and either extends the match or
    /// registers a new POI. Atomic.
    pub fn upsert_poi(
        &mut self,
        user: &str,
        fp: &Fingerprint,
        visits: &[VisitInterval],
        threshold: f64,
    ) -> Result<Upserted, RegistryError> {
        self.upsert_poi_with_crash(user, fp, visits, threshold, None)
    }

    /// [`upsert_poi`](Self::upsert_poi) that fails at `crash` without
    /// committing, for atomicity tests.
    #[doc(hidden)]
    pub fn upsert_poi_with_crash(
        &mut self,
        user: &str,
        fp: &Fingerprint,
        visits: &[VisitInterval],
        threshold: f64,
        crash: Option<CrashPoint>,
    ) -> Result<Upserted, RegistryError> {
        let tx = self.conn.transaction()?;
        let result = upsert_in(&tx, self.options, user, fp, visits, threshold, crash)?;
        if crash == Some(CrashPoint::BeforeCommit) {
            return Err(injected());
        }
        tx.commit()?;
        Ok(result)
    }

    /// Registers every cluster of one user-day and marks the day processed,
    /// all in one transaction. Clusters are processed in the given order.
    pub fn record_day(
        &mut self,
        user: &str,
        day: i64,
        params_key: &str,
        clusters: &[ClusterSummary],
        threshold: f64,
    ) -> Result<Vec<Upserted>, RegistryError> {
        let tx = self.conn.transaction()?;
        let mut out = Vec::with_capacity(clusters.len());
        for cluster in clusters {
            out.push(upsert_in(
                &tx,
                self.options,
                user,
                &cluster.fingerprint,
                &cluster.visits,
                threshold,
                None,
            )?);
        }
        tx.execute(
            "INSERT INTO processed_days (user, day, params) VALUES (?1, ?2, ?3)",
            params![user, day, params_key],
        )?;
        tx.commit()?;
        Ok(out)
    }

    /// Parameters a user-day was processed with, if it was.
    pub fn processed_day(&self, user: &str, day: i64) -> Result<Option<String>, RegistryError> {
        Ok(self
            .conn
            .query_row(
                "SELECT params FROM processed_days WHERE user = ?1 AND day = ?2",
                params![user, day],
                |r| r.get(0),
            )
            .optional()?)
    }

    pub fn set_label(&mut self, user: &str, poi_id: u32, label: &str) -> Result<(), RegistryError> {
        let n = self.conn.execute(
            "UPDATE poi_properties SET label = ?3 WHERE user = ?1 AND poi_id = ?2",
            params![user, poi_id, label],
        )?;
        if n == 0 {
            return Err(RegistryError::UnknownUser(user.to_string()));
        }
        Ok(())
    }

    pub fn users(&self) -> Result<Vec<String>, RegistryError> {
        let mut stmt = self
            .conn
            .prepare("SELECT DISTINCT user FROM poi_properties ORDER BY user")?;
        let users = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(users)
    }

    pub fn has_user(&self, user: &str) -> Result<bool, RegistryError> {
        has_user(&self.conn, user)
    }

    /// All POI of `user`, by id, with their visits.
    pub fn records(&self, user: &str) -> Result<Vec<PoiRecord>, RegistryError> {
        load_records(&self.conn, user)
    }

    /// All POI of every user, ordered by `(user, poi_id)`.
    pub fn all_records(&self) -> Result<Vec<PoiRecord>, RegistryError> {
        let mut out = Vec::new();
        for user in self.users()? {
            out.extend(self.records(&user)?);
        }
        Ok(out)
    }

    /// Visits of `user` overlapping `[day_start, day_end)`, ordered by start.
    pub fn daily_summary(&self, user: &str, day_start: i64, day_end: i64) -> Result<Vec<SummaryRow>, RegistryError> {
        if !self.has_user(user)? {
            return Err(RegistryError::UnknownUser(user.to_string()));
        }
        let mut stmt = self.conn.prepare(
            "SELECT v.poi_id, p.label, v.start, v.end
             FROM poi_visits v JOIN poi_properties p ON p.user = v.user AND p.poi_id = v.poi_id
             WHERE v.user = ?1 AND v.end >= ?2 AND v.start < ?3
             ORDER BY v.start, v.visit_id",
        )?;
        let rows = stmt
            .query_map(params![user, day_start, day_end], |r| {
                Ok(SummaryRow {
                    poi_id: r.get(0)?,
                    label: r.get(1)?,
                    start: r.get(2)?,
                    end: r.get(3)?,
                })
            })?
            .collect::<Result<_, _>>()?;
        Ok(rows)
    }

    /// Checks that every visit points at an existing POI and every stored
    /// fingerprint parses.
    pub fn check_integrity(&self) -> Result<(), RegistryError> {
        let orphans: i64 = self.conn.query_row(
            "SELECT COUNT(*) FROM poi_visits v LEFT JOIN poi_properties p
               ON p.user = v.user AND p.poi_id = v.poi_id
             WHERE p.poi_id IS NULL",
            [],
            |r| r.get(0),
        )?;
        if orphans > 0 {
            return Err(RegistryError::IntegrityViolation(format!("{orphans} orphan visits")));
        }
        let fk_problems: i64 = self
            .conn
            .query_row("SELECT COUNT(*) FROM pragma_foreign_key_check", [], |r| r.get(0))?;
        if fk_problems > 0 {
            return Err(RegistryError::IntegrityViolation(format!(
                "{fk_problems} foreign key violations"
            )));
        }
        let mut stmt = self.conn.prepare("SELECT fingerprint FROM poi_properties")?;
        let blobs: Vec<String> = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        for blob in blobs {
            Fingerprint::from_blob(&blob)
                .map_err(|e| RegistryError::IntegrityViolation(format!("bad fingerprint: {e}")))?;
        }
        Ok(())
    }
}

fn injected() -> RegistryError {
    RegistryError::StorageFailure("injected crash".into())
}

fn has_user(conn: &Connection, user: &str) -> Result<bool, RegistryError> {
    Ok(conn
        .query_row("SELECT 1 FROM poi_properties WHERE user = ?1 LIMIT 1", [user], |_| {
            Ok(())
        })
        .optional()?
        .is_some())
}

fn load_records(conn: &Connection, user: &str) -> Result<Vec<PoiRecord>, RegistryError> {
    let mut visits: BTreeMap<u32, Vec<StoredVisit>> = BTreeMap::new();
    {
        let mut stmt = conn.prepare(
            "SELECT visit_id, poi_id, start, end, scan_count, sub_minimal
             FROM poi_visits WHERE user = ?1 ORDER BY start, visit_id",
        )?;
        let rows = stmt.query_map([user], |r| {
            Ok(StoredVisit {
                visit_id: r.get(0)?,
                poi_id: r.get(1)?,
                start: r.get(2)?,
                end: r.get(3)?,
                scan_count: r.get::<_, i64>(4)? as usize,
                sub_minimal: r.get(5)?,
            })
        })?;
        for v in rows {
            let v = v?;
            visits.entry(v.poi_id).or_default().push(v);
        }
    }
    let mut stmt = conn.prepare(
        "SELECT poi_id, created_at, fingerprint, label FROM poi_properties
         WHERE user = ?1 ORDER BY poi_id",
    )?;
    let raw: Vec<(u32, i64, String, Option<String>)> = stmt
        .query_map([user], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?)))?
        .collect::<Result<_, _>>()?;
    raw.into_iter()
        .map(|(poi_id, created_at, blob, label)| {
            Ok(PoiRecord {
                poi_id,
                user: user.to_string(),
                fingerprint: Fingerprint::from_blob(&blob)?,
                created_at,
                visits: visits.remove(&poi_id).unwrap_or_default(),
                label,
            })
        })
        .collect()
}

fn upsert_in(
    tx: &Transaction<'_>,
    options: RegistryOptions,
    user: &str,
    fp: &Fingerprint,
    visits: &[VisitInterval],
    threshold: f64,
    crash: Option<CrashPoint>,
) -> Result<Upserted, RegistryError> {
    let records = load_records(tx, user)?;
    let outcome = match match_poi(fp, &records, threshold) {
        PoiMatch::Existing { poi_id, .. } => {
            if crash == Some(CrashPoint::BeforePoiWrite) {
                return Err(injected());
            }
            if options.refresh_fingerprints {
                let current = &records
                    .iter()
                    .find(|r| r.poi_id == poi_id)
                    .expect("matched record exists")
                    .fingerprint;
                tx.execute(
                    "UPDATE poi_properties SET fingerprint = ?3 WHERE user = ?1 AND poi_id = ?2",
                    params![user, poi_id, current.merge_weighted(fp).to_blob()],
                )?;
            }
            Upserted { poi_id, matched: true }
        }
        PoiMatch::NewPoi => {
            let poi_id = records.iter().map(|r| r.poi_id).max().unwrap_or(0) + 1;
            let created_at = visits.iter().map(|v| v.start).min().unwrap_or(0);
            if crash == Some(CrashPoint::BeforePoiWrite) {
                return Err(injected());
            }
            tx.execute(
                "INSERT INTO poi_properties (user, poi_id, created_at, fingerprint) VALUES (?1, ?2, ?3, ?4)",
                params![user, poi_id, created_at, fp.to_blob()],
            )?;
            Upserted { poi_id, matched: false }
        }
    };
    if crash == Some(CrashPoint::AfterPoiWrite) {
        return Err(injected());
    }
    let mut insert = tx.prepare_cached(
        "INSERT INTO poi_visits (user, poi_id, start, end, scan_count, sub_minimal)
         VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
    )?;
    for (i, v) in visits.iter().enumerate() {
        if crash == Some(CrashPoint::AfterVisit(i)) {
            return Err(injected());
        }
        insert.execute(params![
            user,
            outcome.poi_id,
            v.start,
            v.end,
            v.scan_count as i64,
            v.sub_minimal
        ])?;
    }
    Ok(outcome)
}

/// `HH:mm` of an epoch timestamp shifted by `utc_offset` seconds.
pub fn render_hhmm(t: i64, utc_offset: i64) -> String {
    let secs = (t + utc_offset).rem_euclid(86_400);
    format!("{:02}:{:02}", secs / 3600, (secs % 3600) / 60)
}

/// Writes `poi_id,label,start,end` CSV with `HH:mm` times.
pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], utc_offset: i64, out: W) -> Result<(), RegistryError> {
    let io = |e: csv::Error| RegistryError::StorageFailure(e.to_string());
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["poi_id", "label", "start", "end"]).map_err(io)?;
    for row in rows {
        writer
            .write_record([
                row.poi_id.to_string(),
                row.label.clone().unwrap_or_default(),
                render_hhmm(row.start, utc_offset),
                render_hhmm(row.end, utc_offset),
            ])
            .map_err(io)?;
    }
    writer.flush().map_err(|e| RegistryError::StorageFailure(e.to_string()))
}
