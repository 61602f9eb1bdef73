//! Experiment configuration and the flat key-value config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::Objective;
use crate::model;

use super::HarnessError;

/// Everything a reproducible experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Optimization horizon in timesteps (1440 daily, 10080 weekly).
    pub horizon: usize,
    pub objective: Objective,
    /// Fraction of the fleet running the planning agent, in `(0, 1]`.
    pub participation: f64,
    pub repetitions: usize,
    /// Maximum number of plans per agent.
    pub v_max: usize,
    /// Minimum contiguous charging interval, timesteps.
    pub interval_m: usize,
    pub seed: u64,
    pub price_path: Option<PathBuf>,
    pub trips_path: Option<PathBuf>,
    pub catalog_path: Option<PathBuf>,
    /// Redraw the participating subset every repetition instead of fixing
    /// it once per seed.
    pub resample_participants: bool,
    /// Gasoline energy content override, kWh/gallon.
    pub kwh_per_gallon: f64,
    /// Usage-likelihood smoothing width, timesteps.
    pub smoothing_width: usize,
    /// State of charge at the horizon start.
    pub initial_soc: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            horizon: 1440,
            objective: Objective::MinDev,
            participation: 1.0,
            repetitions: 50,
            v_max: 4,
            interval_m: 30,
            seed: 1,
            price_path: None,
            trips_path: None,
            catalog_path: None,
            resample_participants: false,
            kwh_per_gallon: model::KWH_PER_GALLON,
            smoothing_width: model::DEFAULT_SMOOTHING_WIDTH,
            initial_soc: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon == 0 {
            return Err(HarnessError::BadConfig("horizon must be positive".into()));
        }
        if !(self.participation > 0.0 && self.participation <= 1.0) {
            return Err(HarnessError::BadConfig(format!(
                "participation {} outside (0, 1]",
                self.participation
            )));
        }
        if self.repetitions == 0 {
            return Err(HarnessError::BadConfig("repetitions must be >= 1".into()));
        }
        if self.v_max == 0 {
            return Err(HarnessError::BadConfig("v_max must be >= 1".into()));
        }
        if self.interval_m == 0 {
            return Err(HarnessError::BadConfig("interval_m must be >= 1".into()));
        }
        if !(self.kwh_per_gallon.is_finite() && self.kwh_per_gallon > 0.0) {
            return Err(HarnessError::BadConfig(
                "kwh_per_gallon must be positive".into(),
            ));
        }
        if !(self.initial_soc.is_finite() && (0.0..=1.0).contains(&self.initial_soc)) {
            return Err(HarnessError::BadConfig(
                "initial_soc must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Loads a `key = value` config file over the defaults. Unknown keys are
    /// rejected so typos do not silently fall back.
    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| HarnessError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        let mut config = Self::default();
        for (number, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                HarnessError::BadConfig(format!("line {}: expected key = value", number + 1))
            })?;
            config.set(key.trim(), value.trim()).map_err(|message| {
                HarnessError::BadConfig(format!("line {}: {message}", number + 1))
            })?;
        }
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let parse_err = |key: &str, value: &str| format!("cannot parse {key} from {value:?}");
        match key {
            "horizon" => self.horizon = value.parse().map_err(|_| parse_err(key, value))?,
            "objective" => self.objective = value.parse()?,
            "participation" => {
                self.participation = value.parse().map_err(|_| parse_err(key, value))?
            }
            "repetitions" => self.repetitions = value.parse().map_err(|_| parse_err(key, value))?,
            "v_max" => self.v_max = value.parse().map_err(|_| parse_err(key, value))?,
            "interval_m" => self.interval_m = value.parse().map_err(|_| parse_err(key, value))?,
            "seed" => self.seed = value.parse().map_err(|_| parse_err(key, value))?,
            "price_path" => self.price_path = Some(PathBuf::from(value)),
            "trips_path" => self.trips_path = Some(PathBuf::from(value)),
            "catalog_path" => self.catalog_path = Some(PathBuf::from(value)),
            "resample_participants" => {
                self.resample_participants = value.parse().map_err(|_| parse_err(key, value))?
            }
            "kwh_per_gallon" => {
                self.kwh_per_gallon = value.parse().map_err(|_| parse_err(key, value))?
            }
            "smoothing_width" => {
                self.smoothing_width = value.parse().map_err(|_| parse_err(key, value))?
            }
            "initial_soc" => self.initial_soc = value.parse().map_err(|_| parse_err(key, value))?,
            other => return Err(format!("unknown key {other:?}")),
        }
        Ok(())
    }
}
