//! Modulation functions.
//!
//! A modulation set is `p` strictly positive sampled functions `s_j`, scaled so
//! that `sum_j int s_j = 1`. Bands built from `s` and from `lambda * s`
//! coincide, so the normalization only picks a representative.
//!
//! Families:
//!
//! - `s0`: constant `1 / sum_j |T_j|` (no modulation)
//! - `sigma`: pointwise standard deviation of the training residuals
//! - `sbar`: pointwise max of the training residuals whose sup-norm is within
//!   the trimmed quantile `gamma`
//! - `sbar_c`: the same envelope computed on the calibration residuals. It
//!   depends on the calibration set and therefore does not give valid bands;
//!   it exists to check the efficiency bound against `s0`.

use serde::{Deserialize, Serialize};

use crate::conformal::ConformalMode;
use crate::data::{sup_abs, total_integral, Grid, MFCurve};
use crate::error::{Error, Result};
use crate::order::{smoothed_rank, sorted, split_rank};

/// Relative size of the value substituted where a numerator vanishes.
pub const ZERO_ADJUST: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModulationKind {
    #[serde(rename = "s0")]
    Const,
    #[serde(rename = "sigma")]
    Sigma,
    #[serde(rename = "sbar")]
    Sbar,
    #[serde(rename = "sbar_c")]
    SbarC,
}

impl ModulationKind {
    pub fn label(self) -> &'static str {
        match self {
            ModulationKind::Const => "s0",
            ModulationKind::Sigma => "sigma",
            ModulationKind::Sbar => "sbar",
            ModulationKind::SbarC => "sbar_c",
        }
    }
}

impl std::fmt::Display for ModulationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for ModulationKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "s0" | "const" => Ok(ModulationKind::Const),
            "sigma" => Ok(ModulationKind::Sigma),
            "sbar" => Ok(ModulationKind::Sbar),
            "sbar_c" => Ok(ModulationKind::SbarC),
            _ => Err(format!("unknown modulation '{s}' (expected s0, sigma, sbar, sbar_c)")),
        }
    }
}

/// Level and calibration mode entering the trimmed quantile of `sbar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    pub alpha: f64,
    pub mode: ConformalMode,
}

impl TrimConfig {
    pub fn split(alpha: f64) -> Self {
        Self {
            alpha,
            mode: ConformalMode::Split,
        }
    }

    pub fn smoothed(alpha: f64, tau: f64) -> Self {
        Self {
            alpha,
            mode: ConformalMode::Smoothed { tau },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidLevel(self.alpha));
        }
        self.mode.validate()
    }

    /// 1-based rank of the trimmed quantile among `len` sup-scores.
    fn rank(&self, len: usize) -> i64 {
        match self.mode {
            ConformalMode::Split => split_rank(len, self.alpha),
            ConformalMode::Smoothed { tau } => smoothed_rank(len, self.alpha, tau),
        }
    }
}

/// Strictly positive sampled functions on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSet {
    kind: ModulationKind,
    fns: Vec<Vec<f64>>,
}

impl ModulationSet {
    /// Wraps sampled values without normalizing. Values must be positive and finite.
    pub fn from_values(kind: ModulationKind, fns: Vec<Vec<f64>>) -> Result<Self> {
        if fns.is_empty() {
            return Err(Error::EmptyInput("modulation components"));
        }
        if fns.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::ShapeMismatch(
                "modulation values must be finite and strictly positive".into(),
            ));
        }
        Ok(Self { kind, fns })
    }

    /// Replaces zeros, then rescales to unit total integral.
    pub fn normalized(kind: ModulationKind, numerator: Vec<Vec<f64>>, grid: &Grid) -> Result<Self> {
        grid.check_shape(&numerator)?;
        let adjusted = adjust_zeros(numerator)?;
        let total = total_integral(&adjusted, grid)?;
        let fns = adjusted
            .into_iter()
            .map(|c| c.into_iter().map(|v| v / total).collect())
            .collect();
        Self::from_values(kind, fns)
    }

    pub fn kind(&self) -> ModulationKind {
        self.kind
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.fns
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.fns[j]
    }

    /// `lambda * s`, same kind. The result is no longer normalized.
    pub fn scaled(&self, lambda: f64) -> Result<Self> {
        Self::from_values(
            self.kind,
            self.fns
                .iter()
                .map(|c| c.iter().map(|v| v * lambda).collect())
                .collect(),
        )
    }

    pub fn total_integral(&self, grid: &Grid) -> Result<f64> {
        total_integral(&self.fns, grid)
    }
}

/// Substitutes `ZERO_ADJUST * max` wherever the numerator is zero.
pub fn adjust_zeros(mut values: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let max = values.iter().flatten().fold(0.0_f64, |m, v| m.max(*v));
    if !(max > 0.0) {
        return Err(Error::PathologicalModulation);
    }
    let eps = ZERO_ADJUST * max;
    for v in values.iter_mut().flatten() {
        if *v == 0.0 {
            *v = eps;
        }
    }
    Ok(values)
}

/// `s0_j(t) = 1 / sum_j |T_j|`.
pub fn s_const(grid: &Grid) -> ModulationSet {
    let c = 1.0 / grid.total_length();
    ModulationSet {
        kind: ModulationKind::Const,
        fns: grid.shape().into_iter().map(|g| vec![c; g]).collect(),
    }
}

/// Pointwise sample standard deviation (divisor `m - 1`) of the training
/// residuals, normalized.
pub fn s_sigma(train_residuals: &[MFCurve], grid: &Grid) -> Result<ModulationSet> {
    if train_residuals.len() < 2 {
        return Err(Error::TooFewResiduals {
            needed: 2,
            got: train_residuals.len(),
        });
    }
    for r in train_residuals {
        r.conforms(grid)?;
    }
    let sd = pointwise_sd(train_residuals, grid);
    ModulationSet::normalized(ModulationKind::Sigma, sd, grid)
}

fn pointwise_sd(residuals: &[MFCurve], grid: &Grid) -> Vec<Vec<f64>> {
    let n = residuals.len() as f64;
    grid.shape()
        .into_iter()
        .enumerate()
        .map(|(j, len)| {
            (0..len)
                .map(|g| {
                    // Welford
                    let mut mean = 0.0;
                    let mut m2 = 0.0;
                    for (k, r) in residuals.iter().enumerate() {
                        let x = r.component(j)[g];
                        let d = x - mean;
                        mean += d / (k as f64 + 1.0);
                        m2 += d * (x - mean);
                    }
                    (m2.max(0.0) / (n - 1.0)).sqrt()
                })
                .collect()
        })
        .collect()
}

/// Pointwise envelope of the residuals retained by the trimmed quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    /// `max_{h in H} |r_h(t)|` before any zero adjustment or normalization.
    pub values: Vec<Vec<f64>>,
    /// Positions (into the residual list) of the retained curves `H`.
    pub kept: Vec<usize>,
    /// The quantile `gamma` (or `k`), absent when every curve is kept.
    pub threshold: Option<f64>,
}

impl Envelope {
    fn over(residuals: &[MFCurve], kept: Vec<usize>, threshold: Option<f64>) -> Self {
        let p = residuals[0].p();
        let values = (0..p)
            .map(|j| {
                let len = residuals[0].component(j).len();
                (0..len)
                    .map(|g| {
                        kept.iter()
                            .map(|&h| residuals[h].component(j)[g].abs())
                            .fold(0.0_f64, f64::max)
                    })
                    .collect()
            })
            .collect();
        Self {
            values,
            kept,
            threshold,
        }
    }

    /// `true` when some component varies by more than `tol` over its grid.
    pub fn is_non_constant(&self, tol: f64) -> bool {
        self.values.iter().any(|c| {
            let (lo, hi) = c
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
            hi - lo > tol
        })
    }
}

fn sup_scores(residuals: &[MFCurve]) -> Vec<f64> {
    residuals.iter().map(sup_abs).collect()
}

fn keep_below(scores: &[f64], threshold: f64) -> Vec<usize> {
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Training-side envelope behind `sbar`. `None` when the smoothed rank is not
/// positive, in which case `sbar` falls back to `s0`.
pub fn training_envelope(train_residuals: &[MFCurve], cfg: &TrimConfig) -> Result<Option<Envelope>> {
    cfg.validate()?;
    if train_residuals.is_empty() {
        return Err(Error::EmptyInput("training residuals"));
    }
    let m = train_residuals.len();
    let rank = cfg.rank(m);
    if rank <= 0 {
        return Ok(None);
    }
    if rank as usize > m {
        return Ok(Some(Envelope::over(train_residuals, (0..m).collect(), None)));
    }
    let scores = sup_scores(train_residuals);
    let gamma = sorted(&scores)[rank as usize - 1];
    let kept = keep_below(&scores, gamma);
    Ok(Some(Envelope::over(train_residuals, kept, Some(gamma))))
}

/// Calibration-side envelope behind `sbar_c`; the rank must lie in `1..=l`.
pub fn calibration_envelope(calib_residuals: &[MFCurve], cfg: &TrimConfig) -> Result<Envelope> {
    cfg.validate()?;
    if calib_residuals.is_empty() {
        return Err(Error::EmptyInput("calibration residuals"));
    }
    let l = calib_residuals.len();
    let rank = cfg.rank(l);
    if rank < 1 || rank as usize > l {
        return Err(Error::IndexOutOfRange { index: rank, len: l });
    }
    let scores = sup_scores(calib_residuals);
    let k = sorted(&scores)[rank as usize - 1];
    let kept = keep_below(&scores, k);
    Ok(Envelope::over(calib_residuals, kept, Some(k)))
}

/// Trimmed-envelope modulation from the training residuals.
pub fn s_bar(train_residuals: &[MFCurve], grid: &Grid, cfg: &TrimConfig) -> Result<ModulationSet> {
    for r in train_residuals {
        r.conforms(grid)?;
    }
    match training_envelope(train_residuals, cfg)? {
        Some(env) => ModulationSet::normalized(ModulationKind::Sbar, env.values, grid),
        None => Ok(ModulationSet {
            kind: ModulationKind::Sbar,
            fns: s_const(grid).fns,
        }),
    }
}

/// Trimmed-envelope modulation from the calibration residuals.
pub fn s_bar_c(calib_residuals: &[MFCurve], grid: &Grid, cfg: &TrimConfig) -> Result<ModulationSet> {
    for r in calib_residuals {
        r.conforms(grid)?;
    }
    let env = calibration_envelope(calib_residuals, cfg)?;
    ModulationSet::normalized(ModulationKind::SbarC, env.values, grid)
}

/// Dispatches on `kind`. `sbar_c` reads `calib_residuals`; the others read
/// `train_residuals`.
pub fn build(
    kind: ModulationKind,
    train_residuals: &[MFCurve],
    calib_residuals: &[MFCurve],
    grid: &Grid,
    cfg: &TrimConfig,
) -> Result<ModulationSet> {
    match kind {
        ModulationKind::Const => Ok(s_const(grid)),
        ModulationKind::Sigma => s_sigma(train_residuals, grid),
        ModulationKind::Sbar => s_bar(train_residuals, grid, cfg),
        ModulationKind::SbarC => s_bar_c(calib_residuals, grid, cfg),
    }
}
