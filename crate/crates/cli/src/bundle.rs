//! Self-contained calibrated model files.

use std::path::Path;

use mfband::conformal::{BandPredictor, Calibration, ConformalMode};
use mfband::data::{ComponentGrid, CovariateLayout, Grid};
use mfband::modulate::ModulationSet;
use mfband::regress::FittedRegressor;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub tool: String,
    pub tool_version: String,
    pub train_ids: Vec<String>,
    pub calib_ids: Vec<String>,
    /// Seed the smoothing parameter was drawn from, if any.
    pub tau_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub theoretical_coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format_version: u32,
    pub layout: CovariateLayout,
    pub predictor: BandPredictor,
    pub metadata: Metadata,
}

/// Coverage guaranteed by the calibrated band.
pub fn guaranteed_coverage(calibration: &Calibration, mode: ConformalMode, alpha: f64, l: usize) -> f64 {
    match (calibration, mode) {
        (Calibration::Unbounded, _) => 1.0,
        (_, ConformalMode::Split) => mfband::harness::theoretical_coverage(l, alpha),
        (_, ConformalMode::Smoothed { .. }) => 1.0 - alpha,
    }
}

impl ModelBundle {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Numeric(format!("cannot serialize bundle: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Schema(m) => CliError::Schema(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parses and re-validates a bundle. A different format version is an
    /// error rather than a best-effort read.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| CliError::schema(format!("not a bundle: {e}")))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(CliError::schema(format!(
                    "bundle format version {v} is not supported (this build reads version {FORMAT_VERSION})"
                )))
            }
            None => return Err(CliError::schema("bundle has no format_version")),
        }
        let raw: ModelBundle =
            serde_json::from_value(value).map_err(|e| CliError::schema(format!("malformed bundle: {e}")))?;
        raw.revalidated()
    }

    fn revalidated(self) -> Result<Self> {
        let p = &self.predictor;
        let grid = Grid::new(
            p.grid()
                .components()
                .iter()
                .map(|c| ComponentGrid::with_weights(c.points().to_vec(), c.weights().to_vec()))
                .collect::<mfband::Result<_>>()?,
        )?;
        let model = p.model();
        if model.grid() != &grid {
            return Err(CliError::schema("bundle: model grid differs from band grid"));
        }
        let model = FittedRegressor::from_parts(grid.clone(), model.spec().clone(), model.coefficients().to_vec())?;
        let modulation = ModulationSet::from_values(p.modulation().kind(), p.modulation().values().to_vec())?;
        let predictor = BandPredictor::new(grid, model, modulation, *p.calibration(), p.alpha(), p.mode())?;
        Ok(Self { predictor, ..self })
    }
}
