//! JSON configuration files.

use std::path::Path;

use mfband::conformal::ConformalMode;
use mfband::data::{parity_split, random_split, CovariateLayout, Split};
use mfband::harness::StudyConfig;
use mfband::modulate::ModulationKind;
use mfband::regress::{RegressorSpec, Term};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::schema(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModeConfig {
    #[default]
    Split,
    /// Either a fixed `tau` or a `seed` to draw it from.
    Smoothed {
        #[serde(default)]
        tau: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
    },
}

impl ModeConfig {
    pub fn resolve(&self) -> Result<ConformalMode> {
        match *self {
            ModeConfig::Split => Ok(ConformalMode::Split),
            ModeConfig::Smoothed { tau: Some(tau), seed: None } => Ok(ConformalMode::Smoothed { tau }),
            ModeConfig::Smoothed { tau: None, seed: Some(seed) } => Ok(ConformalMode::Smoothed {
                tau: ChaCha8Rng::seed_from_u64(seed).random(),
            }),
            ModeConfig::Smoothed { .. } => Err(CliError::schema(
                "smoothed mode needs exactly one of 'tau' or 'seed'",
            )),
        }
    }
}

fn yes() -> bool {
    true
}

/// Regressors by covariate name. `terms` lists them per component, `shared`
/// uses the same list in every component; with neither the model is
/// intercept only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorConfig {
    #[serde(default = "yes")]
    pub intercept: bool,
    #[serde(default)]
    pub shared: Vec<String>,
    #[serde(default)]
    pub terms: Option<Vec<Vec<String>>>,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            intercept: true,
            shared: Vec::new(),
            terms: None,
        }
    }
}

impl RegressorConfig {
    pub fn resolve(&self, layout: &CovariateLayout, p: usize) -> Result<RegressorSpec> {
        let names = match &self.terms {
            Some(_) if !self.shared.is_empty() => {
                return Err(CliError::schema("regressor: give either 'terms' or 'shared', not both"))
            }
            Some(t) if t.len() != p => {
                return Err(CliError::schema(format!(
                    "regressor: 'terms' lists {} components, the response has {p}",
                    t.len()
                )))
            }
            Some(t) => t.clone(),
            None => vec![self.shared.clone(); p],
        };
        let terms = names
            .iter()
            .map(|comp| {
                comp.iter()
                    .map(|name| {
                        if let Some(i) = layout.scalar_index(name) {
                            Ok(Term::Scalar(i))
                        } else if let Some(i) = layout.functional_index(name) {
                            Ok(Term::Functional(i))
                        } else {
                            Err(CliError::schema(format!("regressor: unknown covariate '{name}'")))
                        }
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RegressorSpec {
            intercept: self.intercept,
            terms,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitConfig {
    /// `l` curves drawn at random for calibration.
    Random { l: usize, seed: u64 },
    /// Curves labelled 1..n in file order; odd labels train, even labels
    /// calibrate, `force_train` labels train regardless.
    Parity {
        #[serde(default)]
        force_train: Vec<usize>,
    },
    /// Curve ids listed explicitly.
    Explicit { train: Vec<String>, calib: Vec<String> },
}

impl SplitConfig {
    pub fn resolve(&self, ids: &[String]) -> Result<Split> {
        let n = ids.len();
        Ok(match self {
            SplitConfig::Random { l, seed } => random_split(n, *l, *seed)?,
            SplitConfig::Parity { force_train } => parity_split(n, force_train)?,
            SplitConfig::Explicit { train, calib } => {
                let find = |id: &String| {
                    ids.iter()
                        .position(|x| x == id)
                        .ok_or_else(|| CliError::schema(format!("split: unknown curve id '{id}'")))
                };
                Split::new(
                    n,
                    train.iter().map(find).collect::<Result<_>>()?,
                    calib.iter().map(find).collect::<Result<_>>()?,
                )?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub alpha: f64,
    #[serde(default)]
    pub mode: ModeConfig,
    pub modulation: ModulationKind,
    #[serde(default)]
    pub regressor: RegressorConfig,
    pub split: SplitConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyList {
    studies: Vec<StudyConfig>,
}

/// Reads a single study object or `{"studies": [...]}`.
pub fn read_studies(path: &Path) -> Result<Vec<StudyConfig>> {
    let value: serde_json::Value = read_json(path)?;
    let bad = |e: serde_json::Error| CliError::schema(format!("{}: {e}", path.display()));
    if value.get("studies").is_some() {
        Ok(serde_json::from_value::<StudyList>(value).map_err(bad)?.studies)
    } else {
        Ok(vec![serde_json::from_value(value).map_err(bad)?])
    }
}
