//! Scan-log wire format, gzip batches, upload planning and the raw
//! observation store.
//!
//! # Wire format
//!
//! One scan per line, UTF-8, `\n` terminated, with fields in this order and
//! no whitespace:
//!
//! ```text
//! {"t":1709510400,"dev":"pixel-2","aps":[["02:00:00:00:00:01",-48],["02:00:00:00:00:02",-71]]}
//! ```
//!
//! `t` is UTC epoch seconds, `dev` the device id, and `aps` lists
//! `[mac, rssi]` pairs with canonical lowercase MACs sorted ascending. The
//! user is not on the wire; it is attached when the batch is received.
//! Compressed batches are plain RFC 1952 gzip members, stored as
//! `<user>.scan.gz`.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rusqlite::{params, Connection, OptionalExtension};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{parse_mac, ModelError, Rssi, ScanLog, ScanResult};

/// Default scan cadence in seconds.
pub const DEFAULT_SCAN_INTERVAL: i64 = 300;
/// Default upload period in seconds (6 hours).
pub const DEFAULT_UPLOAD_PERIOD: i64 = 21_600;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: malformed MAC address {mac:?}")]
    MalformedMac { line: usize, mac: String },
    #[error("line {line}: RSS {rssi} dBm outside [-100, 0)")]
    RssiOutOfRange { line: usize, rssi: i64 },
    #[error("corrupt gzip stream: {0}")]
    CorruptStream(String),
    #[error("storage failure: {0}")]
    StorageFailure(String),
}

impl From<rusqlite::Error> for IngestError {
    fn from(e: rusqlite::Error) -> Self {
        IngestError::StorageFailure(e.to_string())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireScan {
    t: i64,
    dev: String,
    aps: Vec<(String, i64)>,
}

/// Serializes a log in the line-delimited wire format.
pub fn encode_log(log: &ScanLog) -> Vec<u8> {
    let mut out = Vec::new();
    for scan in log.scans() {
        let wire = WireScan {
            t: scan.timestamp(),
            dev: log.device().to_string(),
            aps: scan
                .observations()
                .iter()
                .map(|(mac, rssi)| (mac.to_string(), rssi.dbm() as i64))
                .collect(),
        };
        // Serializing plain strings and integers cannot fail.
        serde_json::to_writer(&mut out, &wire).expect("wire scan serializes");
        out.push(b'\n');
    }
    out
}

/// Parses the wire format for `user`. Blank lines are skipped; anything else
/// that is not a well-formed scan line is an error. Timestamps must strictly
/// increase and every line must name the same device.
pub fn decode_log(bytes: &[u8], user: &str) -> Result<ScanLog, IngestError> {
    let text = std::str::from_utf8(bytes).map_err(|e| IngestError::MalformedLine {
        line: 1 + bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count(),
        reason: "invalid UTF-8".into(),
    })?;
    let mut device: Option<String> = None;
    let mut scans = Vec::new();
    let mut last_t: Option<i64> = None;
    for (idx, raw_line) in text.split('\n').enumerate() {
        let line = idx + 1;
        if raw_line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| IngestError::MalformedLine { line, reason };
        let wire: WireScan = serde_json::from_str(raw_line).map_err(|e| malformed(e.to_string()))?;
        match &device {
            None => device = Some(wire.dev.clone()),
            Some(d) if *d != wire.dev => return Err(malformed(format!("device {:?} differs from {:?}", wire.dev, d))),
            Some(_) => {}
        }
        if let Some(prev) = last_t {
            if wire.t <= prev {
                return Err(malformed(format!("timestamp {} not after {}", wire.t, prev)));
            }
        }
        last_t = Some(wire.t);
        let mut observations = Vec::with_capacity(wire.aps.len());
        for (mac_text, rssi) in wire.aps {
            let mac = parse_mac(&mac_text).map_err(|_| IngestError::MalformedMac {
                line,
                mac: mac_text.clone(),
            })?;
            let rssi = i32::try_from(rssi)
                .ok()
                .and_then(|r| Rssi::new(r).ok())
                .ok_or(IngestError::RssiOutOfRange { line, rssi })?;
            observations.push((mac, rssi));
        }
        scans.push(ScanResult::new(wire.t, observations));
    }
    Ok(ScanLog::new(user, device.unwrap_or_default(), scans))
}

/// Wraps `bytes` in a single gzip member. Output is byte-stable (mtime 0).
pub fn compress_batch(bytes: &[u8]) -> Vec<u8> {
    let mut encoder = GzEncoder::new(Vec::new(), Compression::best());
    encoder.write_all(bytes).expect("writing to a Vec cannot fail");
    encoder.finish().expect("writing to a Vec cannot fail")
}

/// Inflates one or more concatenated gzip members.
pub fn decompress_batch(bytes: &[u8]) -> Result<Vec<u8>, IngestError> {
    if bytes.is_empty() {
        return Err(IngestError::CorruptStream("empty input".into()));
    }
    let mut out = Vec::new();
    MultiGzDecoder::new(bytes)
        .read_to_end(&mut out)
        .map_err(|e| IngestError::CorruptStream(e.to_string()))?;
    Ok(out)
}

/// Scans queued for one upload, covering `[span_start, span_end)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawBatch {
    pub device: String,
    pub span_start: i64,
    pub span_end: i64,
    pub scans: Vec<ScanResult>,
}

impl RawBatch {
    /// The batch as wire-format lines.
    pub fn payload(&self, user: &str) -> Vec<u8> {
        encode_log(&ScanLog::new(user, self.device.clone(), self.scans.clone()))
    }

    pub fn to_gzip(&self, user: &str) -> Vec<u8> {
        compress_batch(&self.payload(user))
    }
}

/// Groups a log into upload batches aligned to multiples of `period` seconds
/// since the epoch. Windows without scans produce no batch.
pub fn plan_uploads(log: &ScanLog, period: i64) -> Vec<RawBatch> {
    assert!(period > 0, "upload period must be positive");
    let mut batches: Vec<RawBatch> = Vec::new();
    for scan in log.scans() {
        let window = scan.timestamp().div_euclid(period);
        match batches.last_mut() {
            Some(b) if b.span_start == window * period => b.scans.push(scan.clone()),
            _ => batches.push(RawBatch {
                device: log.device().to_string(),
                span_start: window * period,
                span_end: (window + 1) * period,
                scans: vec![scan.clone()],
            }),
        }
    }
    batches
}

/// Rows added and skipped by one [`RawStore::store_raw`] call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_added: usize,
    pub rows_skipped: usize,
}

/// One observation row of the raw store.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RawRow {
    pub user: String,
    pub t: i64,
    pub mac: String,
    pub rssi: i32,
}

/// Append-only observation table keyed by `(user, t, mac)`, kept in a
/// SQLite file (or in memory for tests).
///
/// Layout: `raw_observations(user TEXT, t INTEGER, mac TEXT, rssi INTEGER,
/// device TEXT, PRIMARY KEY (user, t, mac))`.
pub struct RawStore {
    conn: Connection,
}

impl RawStore {
    pub fn open(path: &Path) -> Result<Self, IngestError> {
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> Result<Self, IngestError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, IngestError> {
        conn.execute_batch(
            "PRAGMA journal_mode = WAL;
             CREATE TABLE IF NOT EXISTS raw_observations (
                 user   TEXT    NOT NULL,
                 t      INTEGER NOT NULL,
                 mac    TEXT    NOT NULL,
                 rssi   INTEGER NOT NULL,
                 device TEXT    NOT NULL,
                 PRIMARY KEY (user, t, mac)
             ) WITHOUT ROWID;",
        )?;
        Ok(RawStore { conn })
    }

    /// Appends every observation of `log`, skipping rows already present.
    pub fn store_raw(&mut self, log: &ScanLog) -> Result<IngestReport, IngestError> {
        self.store_raw_with_crash(log, None)
    }

    /// [`store_raw`](Self::store_raw) that aborts after `crash_after` row
    /// writes without committing, for atomicity tests.
    #[doc(hidden)]
    pub fn store_raw_with_crash(
        &mut self,
        log: &ScanLog,
        crash_after: Option<usize>,
    ) -> Result<IngestReport, IngestError> {
        let tx = self.conn.transaction()?;
        let mut report = IngestReport::default();
        {
            let mut insert = tx.prepare_cached(
                "INSERT OR IGNORE INTO raw_observations (user, t, mac, rssi, device)
                 VALUES (?1, ?2, ?3, ?4, ?5)",
            )?;
            let mut writes = 0;
            for scan in log.scans() {
                for (mac, rssi) in scan.observations() {
                    if crash_after == Some(writes) {
                        return Err(IngestError::StorageFailure("injected crash".into()));
                    }
                    let changed = insert.execute(params![
                        log.user(),
                        scan.timestamp(),
                        mac.to_string(),
                        rssi.dbm(),
                        log.device()
                    ])?;
                    writes += 1;
                    if changed == 0 {
                        report.rows_skipped += 1;
                    } else {
                        report.rows_added += 1;
                    }
                }
            }
        }
        tx.commit()?;
        Ok(report)
    }

    pub fn has_user(&self, user: &str) -> Result<bool, IngestError> {
        Ok(self
            .conn
            .query_row("SELECT 1 FROM raw_observations WHERE user = ?1 LIMIT 1", [user], |_| {
                Ok(())
            })
            .optional()?
            .is_some())
    }

    pub fn users(&self) -> Result<Vec<String>, IngestError> {
        let mut stmt = self
            .conn
            .prepare("SELECT DISTINCT user FROM raw_observations ORDER BY user")?;
        let users = stmt.query_map([], |r| r.get(0))?.collect::<Result<_, _>>()?;
        Ok(users)
    }

    /// Rebuilds the scans of `user` with `start <= t < end`.
    pub fn load_log(&self, user: &str, start: i64, end: i64) -> Result<ScanLog, IngestError> {
        let mut stmt = self.conn.prepare(
            "SELECT t, mac, rssi, device FROM raw_observations
             WHERE user = ?1 AND t >= ?2 AND t < ?3 ORDER BY t, mac",
        )?;
        let mut rows = stmt.query(params![user, start, end])?;
        let mut device = String::new();
        let mut scans: Vec<ScanResult> = Vec::new();
        let mut current: Option<(i64, Vec<_>)> = None;
        while let Some(row) = rows.next()? {
            let t: i64 = row.get(0)?;
            let mac: String = row.get(1)?;
            let rssi: i32 = row.get(2)?;
            if device.is_empty() {
                device = row.get(3)?;
            }
            let corrupt = |e: ModelError| IngestError::StorageFailure(format!("stored row invalid: {e}"));
            let obs = (parse_mac(&mac).map_err(corrupt)?, Rssi::new(rssi).map_err(corrupt)?);
            match current.as_mut() {
                Some((ct, list)) if *ct == t => list.push(obs),
                _ => {
                    if let Some((ct, list)) = current.take() {
                        scans.push(ScanResult::new(ct, list));
                    }
                    current = Some((t, vec![obs]));
                }
            }
        }
        if let Some((ct, list)) = current {
            scans.push(ScanResult::new(ct, list));
        }
        Ok(ScanLog::new(user, device, scans))
    }

    /// Every row, ordered by `(user, t, mac)`.
    pub fn rows(&self) -> Result<Vec<RawRow>, IngestError> {
        let mut stmt = self
            .conn
            .prepare("SELECT user, t, mac, rssi FROM raw_observations ORDER BY user, t, mac")?;
        let rows = stmt
            .query_map([], |r| {
                Ok(RawRow {
                    user: r.get(0)?,
                    t: r.get(1)?,
                    mac: r.get(2)?,
                    rssi: r.get(3)?,
                })
            })?
            .collect::<Result<_, _>>()?;
        Ok(rows)
    }

    pub fn row_count(&self) -> Result<usize, IngestError> {
        let n: i64 = self
            .conn
            .query_row("SELECT COUNT(*) FROM raw_observations", [], |r| r.get(0))?;
        Ok(n as usize)
    }

    /// Writes `user,t,mac,rssi` CSV with a header row.
    pub fn export_csv<W: Write>(&self, out: W) -> Result<(), IngestError> {
        let mut writer = csv::Writer::from_writer(out);
        let io = |e: csv::Error| IngestError::StorageFailure(e.to_string());
        writer.write_record(["user", "t", "mac", "rssi"]).map_err(io)?;
        for row in self.rows()? {
            writer
                .write_record([row.user, row.t.to_string(), row.mac, row.rssi.to_string()])
                .map_err(io)?;
        }
        writer.flush().map_err(|e| IngestError::StorageFailure(e.to_string()))?;
        Ok(())
    }
}
