//! Synthetic buildings, access points and itineraries with ground truth.
//!
//! RSS follows the log-distance path-loss model
//! `tx_power - 10 * gamma * log10(d / 1 m) + N(0, sigma)`, rounded to whole
//! dBm and clamped to `[-100, -1]`. APs weaker than the visibility floor are
//! missing from a scan, which is what gives neighbouring places partially
//! overlapping fingerprints.
//!
//! # Scenario files
//!
//! Scenarios are TOML. Every place gets `aps` access points on a ring of
//! radius `ap_spread` around it; extra APs can be listed explicitly.
//!
//! ```toml
//! [scenario]
//! name = "office-day"
//! start_date = "2024-03-04"   # calendar date of day 0, UTC
//! days = 1
//! scan_interval = 300         # seconds
//! noise_sigma = 2.0           # dB
//! visibility_floor = -95.0    # dBm
//! transit = "silent"          # or "path": scan while walking between places
//!
//! [ap_defaults]
//! tx_power = -50.0            # dBm at 1 m
//! path_loss_exponent = 2.5
//! ap_spread = 6.0             # m
//!
//! [[place]]
//! label = "Home"
//! x = 0.0
//! y = 0.0
//! radius = 2.0
//! aps = 8
//!
//! [[ap]]
//! mac = "02:aa:00:00:00:01"
//! x = 10.0
//! y = 5.0
//!
//! [[user]]
//! id = "alice"
//! device = "pixel-2"
//! visits = [
//!   { place = "Home", day = 0, arrive = "00:00", depart = "09:23" },
//! ]
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Deserialize;
use thiserror::Error;

use crate::model::{parse_mac, MacAddress, Rssi, ScanLog, ScanResult};

/// Seconds per day.
pub const DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("distance to AP is zero")]
    ZeroDistance,
    #[error("unknown place {0:?}")]
    UnknownPlace(String),
    #[error("duplicate AP MAC {0}")]
    DuplicateMac(MacAddress),
    #[error("itinerary entries overlap or run backwards at {0:?}")]
    BadItinerary(String),
    #[error("scenario: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn lerp(&self, other: &Position, frac: f64) -> Position {
        Position {
            x: self.x + (other.x - self.x) * frac,
            y: self.y + (other.y - self.y) * frac,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccessPoint {
    pub mac: MacAddress,
    pub position: Position,
    /// RSS at the 1 m reference distance.
    pub tx_power: f64,
    pub path_loss_exponent: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Place {
    pub label: String,
    pub position: Position,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    aps: Vec<AccessPoint>,
    places: Vec<Place>,
}

impl Environment {
    pub fn new(aps: Vec<AccessPoint>, places: Vec<Place>) -> Result<Self, SimError> {
        let mut seen = BTreeSet::new();
        for ap in &aps {
            if !seen.insert(ap.mac) {
                return Err(SimError::DuplicateMac(ap.mac));
            }
        }
        Ok(Environment { aps, places })
    }

    pub fn aps(&self) -> &[AccessPoint] {
        &self.aps
    }

    pub fn places(&self) -> &[Place] {
        &self.places
    }

    pub fn place(&self, label: &str) -> Result<&Place, SimError> {
        self.places
            .iter()
            .find(|p| p.label == label)
            .ok_or_else(|| SimError::UnknownPlace(label.to_string()))
    }
}

/// One stay: at `place` during `[arrive, depart)`, epoch seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItineraryEntry {
    pub place: String,
    pub arrive: i64,
    pub depart: i64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Itinerary(Vec<ItineraryEntry>);

impl Itinerary {
    pub fn new(entries: Vec<ItineraryEntry>) -> Result<Self, SimError> {
        let mut prev_depart = i64::MIN;
        for e in &entries {
            if e.arrive >= e.depart || e.arrive < prev_depart {
                return Err(SimError::BadItinerary(e.place.clone()));
            }
            prev_depart = e.depart;
        }
        Ok(Itinerary(entries))
    }

    pub fn entries(&self) -> &[ItineraryEntry] {
        &self.0
    }
}

/// A ground-truth stay, reported as-is from the itinerary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthVisit {
    pub label: String,
    pub start: i64,
    pub end: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitMode {
    /// No scans between stays.
    #[default]
    Silent,
    /// Scans along a straight walk between consecutive places.
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceConfig {
    pub scan_interval: i64,
    pub noise_sigma: f64,
    pub visibility_floor: f64,
    pub transit: TransitMode,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            scan_interval: 300,
            noise_sigma: 2.0,
            visibility_floor: -95.0,
            transit: TransitMode::Silent,
        }
    }
}

/// Modeled RSS before rounding, clamping and visibility.
fn modeled_rss<R: Rng + ?Sized>(
    ap: &AccessPoint,
    position: &Position,
    noise: Option<&Normal<f64>>,
    rng: &mut R,
) -> Result<f64, SimError> {
    let d = ap.position.distance(position);
    if d <= 0.0 {
        return Err(SimError::ZeroDistance);
    }
    let mut rss = ap.tx_power - 10.0 * ap.path_loss_exponent * d.log10();
    if let Some(noise) = noise {
        rss += noise.sample(rng);
    }
    Ok(rss)
}

fn to_rssi(rss: f64) -> Rssi {
    Rssi::new((rss.round() as i32).clamp(-100, -1)).expect("clamped into range")
}

fn normal(sigma: f64) -> Option<Normal<f64>> {
    (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite positive sigma"))
}

/// RSS of `ap` at `position`, with Gaussian noise drawn from `rng`.
pub fn rss_at<R: Rng + ?Sized>(
    ap: &AccessPoint,
    position: &Position,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Rssi, SimError> {
    modeled_rss(ap, position, normal(noise_sigma).as_ref(), rng).map(to_rssi)
}

/// [`rss_at`] with a fresh generator seeded from `seed`.
pub fn rss_at_seeded(ap: &AccessPoint, position: &Position, noise_sigma: f64, seed: u64) -> Result<Rssi, SimError> {
    rss_at(ap, position, noise_sigma, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// One scan with every AP at or above the visibility floor.
fn scan_at<R: Rng + ?Sized>(
    env: &Environment,
    t: i64,
    position: &Position,
    config: &TraceConfig,
    noise: Option<&Normal<f64>>,
    rng: &mut R,
) -> Result<ScanResult, SimError> {
    let mut observations = Vec::new();
    for ap in &env.aps {
        let rss = modeled_rss(ap, position, noise, rng)?;
        let rssi = to_rssi(rss);
        if rssi.dbm() as f64 >= config.visibility_floor {
            observations.push((ap.mac, rssi));
        }
    }
    Ok(ScanResult::new(t, observations))
}

fn spot_in<R: Rng + ?Sized>(place: &Place, rng: &mut R) -> Position {
    // Uniform over the disc.
    let r = place.radius * rng.random::<f64>().sqrt();
    let theta = rng.random::<f64>() * TAU;
    Position {
        x: place.position.x + r * theta.cos(),
        y: place.position.y + r * theta.sin(),
    }
}

/// First multiple of `interval` at or after `t`.
fn align_up(t: i64, interval: i64) -> i64 {
    t.div_euclid(interval) * interval + if t.rem_euclid(interval) == 0 { 0 } else { interval }
}

/// Scans a device would record following `itinerary`, on a fixed clock of
/// multiples of `scan_interval`, plus the ground-truth stays. Each stay is
/// spent at one spot drawn uniformly inside the place.
pub fn generate_trace(
    env: &Environment,
    itinerary: &Itinerary,
    user: &str,
    device: &str,
    config: &TraceConfig,
    seed: u64,
) -> Result<(ScanLog, Vec<TruthVisit>), SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = normal(config.noise_sigma);
    let mut scans = Vec::new();
    let mut truth = Vec::new();
    let mut previous: Option<(Position, i64)> = None;

    for entry in itinerary.entries() {
        let place = env.place(&entry.place)?;
        let spot = spot_in(place, &mut rng);

        if let (TransitMode::Path, Some((from, left))) = (config.transit, previous) {
            let span = (entry.arrive - left) as f64;
            let mut t = align_up(left, config.scan_interval);
            while t < entry.arrive {
                let pos = from.lerp(&spot, (t - left) as f64 / span);
                scans.push(scan_at(env, t, &pos, config, noise.as_ref(), &mut rng)?);
                t += config.scan_interval;
            }
        }

        let mut t = align_up(entry.arrive, config.scan_interval);
        while t < entry.depart {
            scans.push(scan_at(env, t, &spot, config, noise.as_ref(), &mut rng)?);
            t += config.scan_interval;
        }
        truth.push(TruthVisit {
            label: entry.place.clone(),
            start: entry.arrive,
            end: entry.depart,
        });
        previous = Some((spot, entry.depart));
    }
    Ok((ScanLog::new(user, device, scans), truth))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    scenario: ScenarioHeader,
    #[serde(default)]
    ap_defaults: ApDefaults,
    #[serde(default, rename = "place")]
    places: Vec<PlaceSpec>,
    #[serde(default, rename = "ap")]
    aps: Vec<ApSpec>,
    #[serde(default, rename = "user")]
    users: Vec<UserSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioHeader {
    name: String,
    start_date: String,
    #[serde(default = "one")]
    days: i64,
    #[serde(default = "default_interval")]
    scan_interval: i64,
    #[serde(default = "default_sigma")]
    noise_sigma: f64,
    #[serde(default = "default_floor")]
    visibility_floor: f64,
    #[serde(default)]
    transit: TransitMode,
}

fn one() -> i64 {
    1
}
fn default_interval() -> i64 {
    300
}
fn default_sigma() -> f64 {
    2.0
}
fn default_floor() -> f64 {
    -95.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApDefaults {
    #[serde(default = "default_tx")]
    tx_power: f64,
    #[serde(default = "default_gamma")]
    path_loss_exponent: f64,
    #[serde(default = "default_spread")]
    ap_spread: f64,
}

impl Default for ApDefaults {
    fn default() -> Self {
        ApDefaults {
            tx_power: default_tx(),
            path_loss_exponent: default_gamma(),
            ap_spread: default_spread(),
        }
    }
}

fn default_tx() -> f64 {
    -50.0
}
fn default_gamma() -> f64 {
    2.5
}
fn default_spread() -> f64 {
    6.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlaceSpec {
    label: String,
    x: f64,
    y: f64,
    #[serde(default = "default_radius")]
    radius: f64,
    #[serde(default)]
    aps: u16,
    zone: Option<String>,
}

fn default_radius() -> f64 {
    2.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApSpec {
    mac: String,
    x: f64,
    y: f64,
    tx_power: Option<f64>,
    path_loss_exponent: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct UserSpec {
    id: String,
    #[serde(default)]
    device: Option<String>,
    #[serde(default)]
    visits: Vec<VisitSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisitSpec {
    place: String,
    #[serde(default)]
    day: i64,
    arrive: String,
    depart: String,
}

/// A user of a scenario and their itinerary.
#[derive(Debug, Clone, PartialEq)]
pub struct SimUser {
    pub id: String,
    pub device: String,
    pub itinerary: Itinerary,
}

/// A parsed scenario file.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    /// Epoch seconds of 00:00 UTC on day 0.
    pub start: i64,
    pub days: i64,
    pub config: TraceConfig,
    pub environment: Environment,
    pub users: Vec<SimUser>,
    /// Place label → zone label, for places that declare one.
    pub zones: BTreeMap<String, String>,
}

/// Generated output for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTrace {
    pub user: String,
    pub log: ScanLog,
    pub truth: Vec<TruthVisit>,
}

/// Parses `HH:mm`, accepting `24:00` as end of day.
pub fn parse_hhmm(text: &str) -> Result<i64, SimError> {
    let bad = || SimError::Config(format!("bad time {text:?}, expected HH:mm"));
    let (h, m) = text.split_once(':').ok_or_else(bad)?;
    if h.len() != 2 || m.len() != 2 {
        return Err(bad());
    }
    let h: i64 = h.parse().map_err(|_| bad())?;
    let m: i64 = m.parse().map_err(|_| bad())?;
    if m >= 60 || h > 24 || (h == 24 && m != 0) {
        return Err(bad());
    }
    Ok(h * 3600 + m * 60)
}

/// Days since 1970-01-01 for a proleptic Gregorian `YYYY-MM-DD`.
pub fn parse_date(text: &str) -> Result<i64, SimError> {
    let bad = || SimError::Config(format!("bad date {text:?}, expected YYYY-MM-DD"));
    let parts: Vec<&str> = text.split('-').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let y: i64 = parts[0].parse().map_err(|_| bad())?;
    let m: i64 = parts[1].parse().map_err(|_| bad())?;
    let d: i64 = parts[2].parse().map_err(|_| bad())?;
    let leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    let month_len = [31, if leap { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31];
    if !(1..=12).contains(&m) || d < 1 || d > month_len[(m - 1) as usize] {
        return Err(bad());
    }
    // Civil-from-days inverse, counting March as the first month of the year.
    let y = if m <= 2 { y - 1 } else { y };
    let era = y.div_euclid(400);
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    Ok(era * 146_097 + doe - 719_468)
}

/// Locally administered MAC for the `index`-th AP of place `place`.
fn place_ap_mac(place: usize, index: u16) -> MacAddress {
    let [p_hi, p_lo] = (place as u16).to_be_bytes();
    let [i_hi, i_lo] = index.to_be_bytes();
    MacAddress::from_octets([0x02, 0x50, p_hi, p_lo, i_hi, i_lo])
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        let header = &file.scenario;
        if header.scan_interval <= 0 || header.days <= 0 || header.noise_sigma < 0.0 {
            return Err(SimError::Config(
                "scan_interval and days must be positive, noise_sigma non-negative".into(),
            ));
        }
        let start = parse_date(&header.start_date)? * DAY;
        let defaults = &file.ap_defaults;

        let mut aps = Vec::new();
        let mut places = Vec::new();
        let mut zones = BTreeMap::new();
        for (pi, spec) in file.places.iter().enumerate() {
            let centre = Position { x: spec.x, y: spec.y };
            for k in 0..spec.aps {
                let angle = TAU * k as f64 / spec.aps as f64;
                aps.push(AccessPoint {
                    mac: place_ap_mac(pi, k),
                    position: Position {
                        x: centre.x + defaults.ap_spread * angle.cos(),
                        y: centre.y + defaults.ap_spread * angle.sin(),
                    },
                    tx_power: defaults.tx_power,
                    path_loss_exponent: defaults.path_loss_exponent,
                });
            }
            if let Some(zone) = &spec.zone {
                zones.insert(spec.label.clone(), zone.clone());
            }
            places.push(Place {
                label: spec.label.clone(),
                position: centre,
                radius: spec.radius,
            });
        }
        for spec in &file.aps {
            aps.push(AccessPoint {
                mac: parse_mac(&spec.mac).map_err(|e| SimError::Config(e.to_string()))?,
                position: Position { x: spec.x, y: spec.y },
                tx_power: spec.tx_power.unwrap_or(defaults.tx_power),
                path_loss_exponent: spec.path_loss_exponent.unwrap_or(defaults.path_loss_exponent),
            });
        }
        let environment = Environment::new(aps, places)?;

        let mut users = Vec::new();
        for spec in &file.users {
            let mut entries = Vec::new();
            for v in &spec.visits {
                environment.place(&v.place)?;
                if v.day < 0 || v.day >= header.days {
                    return Err(SimError::Config(format!("visit day {} outside scenario", v.day)));
                }
                let base = start + v.day * DAY;
                entries.push(ItineraryEntry {
                    place: v.place.clone(),
                    arrive: base + parse_hhmm(&v.arrive)?,
                    depart: base + parse_hhmm(&v.depart)?,
                });
            }
            users.push(SimUser {
                id: spec.id.clone(),
                device: spec.device.clone().unwrap_or_else(|| format!("{}-phone", spec.id)),
                itinerary: Itinerary::new(entries)?,
            });
        }

        Ok(Scenario {
            name: header.name.clone(),
            start,
            days: header.days,
            config: TraceConfig {
                scan_interval: header.scan_interval,
                noise_sigma: header.noise_sigma,
                visibility_floor: header.visibility_floor,
                transit: header.transit,
            },
            environment,
            users,
            zones,
        })
    }

    /// Traces for every user. User `i` draws from seed `seed + i`.
    pub fn generate(&self, seed: u64) -> Result<Vec<UserTrace>, SimError> {
        self.users
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let (log, truth) = generate_trace(
                    &self.environment,
                    &u.itinerary,
                    &u.id,
                    &u.device,
                    &self.config,
                    seed.wrapping_add(i as u64),
                )?;
                Ok(UserTrace {
                    user: u.id.clone(),
                    log,
                    truth,
                })
            })
            .collect()
    }

    /// Same scenario with a different noise level.
    pub fn with_noise(&self, noise_sigma: f64) -> Scenario {
        let mut s = self.clone();
        s.config.noise_sigma = noise_sigma;
        s
    }
}
