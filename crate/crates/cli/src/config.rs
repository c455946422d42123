//! Pipeline configuration. Sources, highest priority first: command-line
//! flags, the `POI_STORE` environment variable (store path only), a TOML
//! config file, built-in defaults.

use std::path::{Path, PathBuf};

use indoor_poi::ClusterParams;
use serde::Deserialize;

use crate::{CliError, CliResult};

pub const STORE_ENV: &str = "POI_STORE";

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub min_pts: usize,
    /// Seconds between scans.
    pub scan_interval: i64,
    pub match_threshold: f64,
    /// Thresholds for the community sweep.
    pub thresholds: Vec<f64>,
    /// Threshold whose partition is written as the community assignment.
    pub community_threshold: f64,
    /// Directory holding `raw.db` and `summary.db`.
    pub store: PathBuf,
    /// Local time offset for days and `HH:mm` columns.
    pub utc_offset_minutes: i64,
    pub refresh_fingerprints: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            epsilon: 0.5,
            min_pts: 4,
            scan_interval: 300,
            match_threshold: 0.5,
            thresholds: vec![0.2, 0.3, 0.4, 0.5],
            community_threshold: 0.5,
            store: PathBuf::from("poi-store"),
            utc_offset_minutes: 0,
            refresh_fingerprints: true,
        }
    }
}

/// Values given on the command line; `None` leaves the lower layers alone.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub store: Option<PathBuf>,
    pub epsilon: Option<f64>,
    pub min_pts: Option<usize>,
    pub match_threshold: Option<f64>,
    pub thresholds: Option<Vec<f64>>,
    pub community_threshold: Option<f64>,
}

fn in_unit(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(CliError::input(format!("{name} must be in (0, 1], got {v}")))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| CliError::input(format!("config: {e}")))?;
        Ok(config)
    }

    /// Layers file, environment and flags over the defaults, then validates.
    pub fn resolve(file: Option<&Path>, env_store: Option<PathBuf>, flags: &Overrides) -> CliResult<Self> {
        let mut config = match file {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
                Self::from_toml(&text)?
            }
            None => PipelineConfig::default(),
        };
        if let Some(store) = env_store {
            config.store = store;
        }
        if let Some(store) = &flags.store {
            config.store = store.clone();
        }
        if let Some(v) = flags.epsilon {
            config.epsilon = v;
        }
        if let Some(v) = flags.min_pts {
            config.min_pts = v;
        }
        if let Some(v) = flags.match_threshold {
            config.match_threshold = v;
        }
        if let Some(v) = &flags.thresholds {
            config.thresholds = v.clone();
        }
        if let Some(v) = flags.community_threshold {
            config.community_threshold = v;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> CliResult<()> {
        in_unit("epsilon", self.epsilon)?;
        in_unit("match_threshold", self.match_threshold)?;
        in_unit("community_threshold", self.community_threshold)?;
        if self.thresholds.is_empty() {
            return Err(CliError::input("thresholds must not be empty"));
        }
        for &t in &self.thresholds {
            in_unit("threshold", t)?;
        }
        self.cluster_params().map(|_| ())
    }

    pub fn cluster_params(&self) -> CliResult<ClusterParams> {
        ClusterParams::new(self.epsilon, self.min_pts, self.scan_interval).map_err(|e| CliError::input(e.to_string()))
    }

    pub fn utc_offset(&self) -> i64 {
        self.utc_offset_minutes * 60
    }

    /// Identifies the extraction parameters a day was processed with.
    pub fn params_key(&self) -> String {
        format!(
            "epsilon={};min_pts={};scan_interval={};match_threshold={}",
            self.epsilon, self.min_pts, self.scan_interval, self.match_threshold
        )
    }

    pub fn raw_path(&self) -> PathBuf {
        self.store.join("raw.db")
    }

    pub fn summary_path(&self) -> PathBuf {
        self.store.join("summary.db")
    }
}
