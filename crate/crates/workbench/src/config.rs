//! Run configuration: one JSON document whose omitted fields take the
//! published defaults, so `{}` is a complete configuration.

use std::path::Path;

use dynmed_core::causal::benchmark::BenchmarkConfig;
use dynmed_core::mediator::MediatorConfig;
use dynmed_core::outcome::OutcomeConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WorkbenchError};

/// Meal-time error-in-variables correction. Only the pass-through is
/// provided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EivMode {
    #[default]
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Preprocessing {
    /// Meals closer than this to the anchor meal are merged into it.
    pub merge_window_minutes: f64,
    pub eiv: EivMode,
    /// Observation horizon of every regime; derived from the data when
    /// absent.
    pub horizon_hours: Option<f64>,
}

impl Default for Preprocessing {
    fn default() -> Self {
        Preprocessing { merge_window_minutes: 30.0, eiv: EivMode::None, horizon_hours: None }
    }
}

/// Effect and simulation grids: `grid_points` equally spaced outcome
/// times per `grid_hours`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub grid_hours: f64,
    pub grid_points: usize,
    pub replicates: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings { grid_hours: 24.0, grid_points: 40, replicates: 200 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub low: f64,
    pub high: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { low: 3.9, high: 5.6 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub outcome: OutcomeConfig,
    pub mediator: MediatorConfig,
    pub preprocessing: Preprocessing,
    pub grid: GridSettings,
    pub thresholds: Thresholds,
    pub benchmark: BenchmarkConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| WorkbenchError::io(path, e))?;
        let config = Self::from_json(&text).map_err(|e| WorkbenchError::format(path, e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.mediator.validate()?;
        self.benchmark.validate()?;
        let p = &self.preprocessing;
        if !(p.merge_window_minutes >= 0.0) || !p.merge_window_minutes.is_finite() {
            return Err(WorkbenchError::Usage("merge_window_minutes must be finite and non-negative".into()));
        }
        if p.horizon_hours.is_some_and(|h| !(h > 0.0) || !h.is_finite()) {
            return Err(WorkbenchError::Usage("horizon_hours must be positive".into()));
        }
        let g = &self.grid;
        if !(g.grid_hours > 0.0) || g.grid_points == 0 || g.replicates == 0 {
            return Err(WorkbenchError::Usage("grid sizes must be positive".into()));
        }
        if !(self.thresholds.low < self.thresholds.high) {
            return Err(WorkbenchError::Usage("thresholds must satisfy low < high".into()));
        }
        Ok(())
    }
}
