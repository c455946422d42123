//! Core domain types: MAC addresses, RSS readings, scans, scan logs and
//! fingerprints.
//!
//! Everything here is immutable once constructed. Constructors enforce the
//! invariants, so downstream modules never re-check them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Lowest RSS accepted at ingest, inclusive.
pub const RSSI_MIN_DBM: i32 = -100;
/// Upper bound of accepted RSS, exclusive.
pub const RSSI_MAX_DBM: i32 = 0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("malformed MAC address {0:?}")]
    MalformedMac(String),
    #[error("RSS {0} dBm outside [-100, 0)")]
    RssiOutOfRange(i32),
    #[error("scan at t={0} has no valid observations")]
    EmptyScan(i64),
    #[error("fingerprint has no entries")]
    EmptyFingerprint,
    #[error("malformed fingerprint blob: {0}")]
    MalformedBlob(String),
    #[error("invalid cluster parameters: {0}")]
    InvalidParams(String),
}

/// 48-bit hardware address of an access point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MacAddress([u8; 6]);

impl MacAddress {
    pub const fn from_octets(octets: [u8; 6]) -> Self {
        MacAddress(octets)
    }

    pub fn octets(&self) -> [u8; 6] {
        self.0
    }
}

/// Parses a MAC written with `:` or `-` separators in any case.
pub fn parse_mac(text: &str) -> Result<MacAddress, ModelError> {
    let malformed = || ModelError::MalformedMac(text.to_string());
    let parts: Vec<&str> = text.trim().split([':', '-']).collect();
    if parts.len() != 6 {
        return Err(malformed());
    }
    let mut octets = [0u8; 6];
    for (slot, part) in octets.iter_mut().zip(&parts) {
        if part.len() != 2 || !part.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(malformed());
        }
        *slot = u8::from_str_radix(part, 16).map_err(|_| malformed())?;
    }
    Ok(MacAddress(octets))
}

impl fmt::Display for MacAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let o = self.0;
        write!(
            f,
            "{:02x}:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}",
            o[0], o[1], o[2], o[3], o[4], o[5]
        )
    }
}

impl FromStr for MacAddress {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_mac(s)
    }
}

impl Serialize for MacAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MacAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_mac(&text).map_err(serde::de::Error::custom)
    }
}

/// Received signal strength in whole dBm, always in `[-100, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Rssi(i16);

impl Rssi {
    pub fn new(dbm: i32) -> Result<Self, ModelError> {
        if (RSSI_MIN_DBM..RSSI_MAX_DBM).contains(&dbm) {
            Ok(Rssi(dbm as i16))
        } else {
            Err(ModelError::RssiOutOfRange(dbm))
        }
    }

    pub fn dbm(self) -> i32 {
        self.0 as i32
    }
}

/// A scan as reported by a device, before validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawScan {
    pub timestamp: i64,
    pub observations: Vec<(MacAddress, i32)>,
}

/// One validated Wi-Fi scan. Observations are sorted by MAC with no
/// duplicates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanResult {
    timestamp: i64,
    observations: Vec<(MacAddress, Rssi)>,
}

impl ScanResult {
    /// Builds a scan from typed observations. Duplicate MACs keep the
    /// strongest reading. An empty observation list is allowed here; such a
    /// scan never joins a cluster.
    pub fn new(timestamp: i64, observations: impl IntoIterator<Item = (MacAddress, Rssi)>) -> Self {
        let mut strongest: BTreeMap<MacAddress, Rssi> = BTreeMap::new();
        for (mac, rssi) in observations {
            strongest
                .entry(mac)
                .and_modify(|cur| *cur = (*cur).max(rssi))
                .or_insert(rssi);
        }
        ScanResult {
            timestamp,
            observations: strongest.into_iter().collect(),
        }
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn observations(&self) -> &[(MacAddress, Rssi)] {
        &self.observations
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn to_raw(&self) -> RawScan {
        RawScan {
            timestamp: self.timestamp,
            observations: self.observations.iter().map(|(mac, rssi)| (*mac, rssi.dbm())).collect(),
        }
    }
}

/// Outcome of [`validate_scan`]: the cleaned scan plus what was thrown away.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedScan {
    pub scan: ScanResult,
    pub dropped_out_of_range: usize,
    pub collapsed_duplicates: usize,
}

/// Drops out-of-range RSS entries and collapses duplicate MACs keeping the
/// strongest reading. Fails if nothing survives.
pub fn validate_scan(raw: &RawScan) -> Result<ValidatedScan, ModelError> {
    let mut dropped_out_of_range = 0;
    let mut typed = Vec::with_capacity(raw.observations.len());
    for &(mac, dbm) in &raw.observations {
        match Rssi::new(dbm) {
            Ok(rssi) => typed.push((mac, rssi)),
            Err(_) => dropped_out_of_range += 1,
        }
    }
    let kept = typed.len();
    let scan = ScanResult::new(raw.timestamp, typed);
    if scan.is_empty() {
        return Err(ModelError::EmptyScan(raw.timestamp));
    }
    Ok(ValidatedScan {
        collapsed_duplicates: kept - scan.len(),
        scan,
        dropped_out_of_range,
    })
}

/// Time-ordered scans of one user's device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanLog {
    user: String,
    device: String,
    scans: Vec<ScanResult>,
}

impl ScanLog {
    /// Sorts scans by timestamp and keeps only the first scan seen for any
    /// repeated timestamp.
    pub fn new(user: impl Into<String>, device: impl Into<String>, mut scans: Vec<ScanResult>) -> Self {
        scans.sort_by_key(ScanResult::timestamp);
        scans.dedup_by_key(|s| s.timestamp());
        ScanLog {
            user: user.into(),
            device: device.into(),
            scans,
        }
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn device(&self) -> &str {
        &self.device
    }

    pub fn scans(&self) -> &[ScanResult] {
        &self.scans
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }

    /// Scans with `start <= t < end`, as a new log for the same user/device.
    pub fn window(&self, start: i64, end: i64) -> ScanLog {
        ScanLog {
            user: self.user.clone(),
            device: self.device.clone(),
            scans: self
                .scans
                .iter()
                .filter(|s| (start..end).contains(&s.timestamp()))
                .cloned()
                .collect(),
        }
    }
}

/// Mean RSS of one MAC and the number of readings behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerprintEntry {
    pub mean: f64,
    pub count: u32,
}

/// MAC → mean RSS map characterizing a place. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    entries: BTreeMap<MacAddress, FingerprintEntry>,
}

impl Fingerprint {
    pub fn from_entries(entries: BTreeMap<MacAddress, FingerprintEntry>) -> Result<Self, ModelError> {
        if entries.is_empty() {
            return Err(ModelError::EmptyFingerprint);
        }
        Ok(Fingerprint { entries })
    }

    /// Fingerprint with count 1 per MAC.
    pub fn from_means(means: impl IntoIterator<Item = (MacAddress, f64)>) -> Result<Self, ModelError> {
        Self::from_entries(
            means
                .into_iter()
                .map(|(mac, mean)| (mac, FingerprintEntry { mean, count: 1 }))
                .collect(),
        )
    }

    /// Single-scan fingerprint used as a clustering point.
    pub fn from_scan(scan: &ScanResult) -> Result<Self, ModelError> {
        Self::from_means(scan.observations().iter().map(|(m, r)| (*m, r.dbm() as f64)))
            .map_err(|_| ModelError::EmptyScan(scan.timestamp()))
    }

    pub fn entries(&self) -> &BTreeMap<MacAddress, FingerprintEntry> {
        &self.entries
    }

    pub fn get(&self, mac: &MacAddress) -> Option<f64> {
        self.entries.get(mac).map(|e| e.mean)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MacAddress, f64)> + '_ {
        self.entries.iter().map(|(m, e)| (m, e.mean))
    }

    /// Observation-count-weighted merge of two fingerprints over the union of
    /// their MACs.
    pub fn merge_weighted(&self, other: &Fingerprint) -> Fingerprint {
        let mut entries = self.entries.clone();
        for (mac, incoming) in &other.entries {
            entries
                .entry(*mac)
                .and_modify(|cur| {
                    let total = cur.count + incoming.count;
                    cur.mean = (cur.mean * cur.count as f64 + incoming.mean * incoming.count as f64) / total as f64;
                    cur.count = total;
                })
                .or_insert(*incoming);
        }
        Fingerprint { entries }
    }

    /// Serializes as `;`-joined `mac:mean:count` triples in MAC order.
    pub fn to_blob(&self) -> String {
        self.entries
            .iter()
            .map(|(mac, e)| format!("{mac}:{}:{}", e.mean, e.count))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn from_blob(blob: &str) -> Result<Self, ModelError> {
        let bad = |why: &str| ModelError::MalformedBlob(format!("{why} in {blob:?}"));
        let mut entries = BTreeMap::new();
        for triple in blob.split(';').filter(|t| !t.is_empty()) {
            let mut parts = triple.rsplitn(3, ':');
            let count = parts.next().ok_or_else(|| bad("missing count"))?;
            let mean = parts.next().ok_or_else(|| bad("missing mean"))?;
            let mac = parts.next().ok_or_else(|| bad("missing mac"))?;
            let mac = parse_mac(mac)?;
            let mean: f64 = mean.parse().map_err(|_| bad("bad mean"))?;
            let count: u32 = count.parse().map_err(|_| bad("bad count"))?;
            if !mean.is_finite() || count == 0 {
                return Err(bad("non-finite mean or zero count"));
            }
            if entries.insert(mac, FingerprintEntry { mean, count }).is_some() {
                return Err(bad("duplicate mac"));
            }
        }
        Self::from_entries(entries)
    }
}

/// DBSCAN parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    /// Cosine similarity a neighbour must reach.
    pub epsilon: f64,
    /// Neighbourhood size (including the point itself) that makes a core point.
    pub min_pts: usize,
    /// Expected seconds between consecutive scans.
    pub scan_interval: i64,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams {
            epsilon: 0.5,
            min_pts: 4,
            scan_interval: 300,
        }
    }
}

impl ClusterParams {
    pub fn new(epsilon: f64, min_pts: usize, scan_interval: i64) -> Result<Self, ModelError> {
        let params = ClusterParams {
            epsilon,
            min_pts,
            scan_interval,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(ModelError::InvalidParams(format!(
                "epsilon {} not in (0, 1]",
                self.epsilon
            )));
        }
        if self.min_pts < 2 {
            return Err(ModelError::InvalidParams(format!("min_pts {} below 2", self.min_pts)));
        }
        if self.scan_interval <= 0 {
            return Err(ModelError::InvalidParams(format!(
                "scan_interval {} not positive",
                self.scan_interval
            )));
        }
        Ok(())
    }
}
