//! Split and smoothed split conformal calibration for functional responses.
//!
//! The nonconformity score of a pair `(x, y)` is the sup-norm of the
//! modulated residual, `max_{j,g} |y_j(t_g) - mu_j(x)(t_g)| / s_j(t_g)`. In split
//! mode the band radius is the `ceil((l+1)(1-alpha))`-th smallest calibration
//! score and the band is closed. In smoothed mode a uniform `tau` picks the
//! `ceil(l + tau - (l+1) alpha)`-th smallest score and ties around it decide
//! whether the band is open or closed.
//!
//! Levels below the feasibility bound give an unbounded band, reported as
//! [`Calibration::Unbounded`] rather than as infinite numbers.

use serde::{Deserialize, Serialize};

use crate::data::{total_integral, Covariates, Dataset, Grid, MFCurve, Split};
use crate::error::{Error, Result};
use crate::modulate::{self, ModulationKind, ModulationSet, TrimConfig};
use crate::order::{floor_snap, smoothed_rank, sorted, split_rank};
use crate::regress::{self, FittedRegressor, Regressor, RegressorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ConformalMode {
    Split,
    Smoothed { tau: f64 },
}

impl ConformalMode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ConformalMode::Split => Ok(()),
            ConformalMode::Smoothed { tau } if (0.0..=1.0).contains(&tau) => Ok(()),
            ConformalMode::Smoothed { tau } => Err(Error::InvalidTau(tau)),
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match *self {
            ConformalMode::Split => None,
            ConformalMode::Smoothed { tau } => Some(tau),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Closure {
    Closed,
    Open,
}

impl std::fmt::Display for Closure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Closure::Closed => "closed",
            Closure::Open => "open",
        })
    }
}

/// Calibration nonconformity scores with a sorted copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    values: Vec<f64>,
    sorted: Vec<f64>,
}

impl Scores {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("calibration scores"));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::NonFinite("calibration scores"));
        }
        let sorted = sorted(&values);
        Ok(Self { values, sorted })
    }

    /// Number of calibration scores `l`.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// `rank`-th smallest score, 1-based.
    pub fn order_stat(&self, rank: i64) -> Result<f64> {
        if rank < 1 || rank as usize > self.len() {
            return Err(Error::IndexOutOfRange {
                index: rank,
                len: self.len(),
            });
        }
        Ok(self.sorted[rank as usize - 1])
    }
}

/// Nonconformity score: sup over components and grid points of `|r| / s`.
pub fn score(residual: &MFCurve, s: &ModulationSet) -> Result<f64> {
    if residual.shape() != s.values().iter().map(Vec::len).collect::<Vec<_>>() {
        return Err(Error::ShapeMismatch("residual vs modulation".into()));
    }
    Ok(residual
        .values()
        .iter()
        .zip(s.values())
        .flat_map(|(r, s)| r.iter().zip(s).map(|(r, s)| r.abs() / s))
        .fold(0.0_f64, f64::max))
}

/// Result of calibrating a radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Calibration {
    Bounded { radius: f64, closure: Closure },
    /// Every curve belongs to the band.
    Unbounded,
}

impl Calibration {
    pub fn radius(&self) -> Option<f64> {
        match *self {
            Calibration::Bounded { radius, .. } => Some(radius),
            Calibration::Unbounded => None,
        }
    }

    pub fn closure(&self) -> Option<Closure> {
        match *self {
            Calibration::Bounded { closure, .. } => Some(closure),
            Calibration::Unbounded => None,
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, Calibration::Bounded { .. })
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(alpha))
    }
}

/// Split calibration: closed band of radius `ceil((l+1)(1-alpha))`-th smallest
/// score, unbounded when `alpha < 1/(l+1)`.
pub fn calibrate_split(scores: &Scores, alpha: f64) -> Result<Calibration> {
    check_alpha(alpha)?;
    let l = scores.len();
    let rank = split_rank(l, alpha);
    if rank as usize > l {
        return Ok(Calibration::Unbounded);
    }
    Ok(Calibration::Bounded {
        radius: scores.order_stat(rank)?,
        closure: Closure::Closed,
    })
}

/// Counts of scores equal to the selected order statistic to its right and
/// to its left in sorted order.
pub fn tie_counts(sorted: &[f64], rank: usize) -> (usize, usize) {
    let w = sorted[rank - 1];
    let right = sorted[rank..].iter().take_while(|&&v| v == w).count();
    let left = sorted[..rank - 1].iter().rev().take_while(|&&v| v == w).count();
    (right, left)
}

/// Smoothed calibration for a given `tau`.
pub fn calibrate_smoothed(scores: &Scores, alpha: f64, tau: f64) -> Result<Calibration> {
    check_alpha(alpha)?;
    ConformalMode::Smoothed { tau }.validate()?;
    let l = scores.len();
    let lp1 = l as f64 + 1.0;
    if alpha < tau / lp1 {
        return Ok(Calibration::Unbounded);
    }
    let upper = (l as f64 + tau) / lp1;
    if alpha >= upper {
        return Err(Error::EmptyBand { alpha, upper });
    }
    let rank = smoothed_rank(l, alpha, tau);
    let radius = scores.order_stat(rank)?;
    let (right, left) = tie_counts(scores.sorted(), rank as usize);
    let la = lp1 * alpha;
    let threshold =
        (la - floor_snap(la - tau) as f64 + right as f64) / (right as f64 + left as f64 + 2.0);
    let closure = if tau > threshold {
        Closure::Closed
    } else {
        Closure::Open
    };
    Ok(Calibration::Bounded { radius, closure })
}

pub fn calibrate(scores: &Scores, alpha: f64, mode: ConformalMode) -> Result<Calibration> {
    match mode {
        ConformalMode::Split => calibrate_split(scores, alpha),
        ConformalMode::Smoothed { tau } => calibrate_smoothed(scores, alpha, tau),
    }
}

/// Conformal p-value: share of `I2 ∪ {n+1}` with score at least `new_score`.
pub fn p_value(scores: &Scores, new_score: f64) -> f64 {
    let ge = scores.values().iter().filter(|&&r| r >= new_score).count();
    (ge + 1) as f64 / (scores.len() + 1) as f64
}

/// Smoothed p-value; ties (including the new point itself) are weighted by `tau`.
pub fn p_value_smoothed(scores: &Scores, new_score: f64, tau: f64) -> f64 {
    let gt = scores.values().iter().filter(|&&r| r > new_score).count();
    let eq = scores.values().iter().filter(|&&r| r == new_score).count() + 1;
    (gt as f64 + tau * eq as f64) / (scores.len() + 1) as f64
}

/// Lower and upper curves of a bounded band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: MFCurve,
    pub upper: MFCurve,
    pub closure: Closure,
}

impl Band {
    /// `center -/+ radius_j(t) * s_j(t)`.
    fn around(center: &MFCurve, half_width: &[Vec<f64>], closure: Closure) -> Result<Band> {
        if center.shape() != half_width.iter().map(Vec::len).collect::<Vec<_>>() {
            return Err(Error::ShapeMismatch("prediction vs modulation".into()));
        }
        let lower = MFCurve::new(
            center
                .values()
                .iter()
                .zip(half_width)
                .map(|(c, h)| c.iter().zip(h).map(|(c, h)| c - h).collect())
                .collect(),
        )?;
        let upper = MFCurve::new(
            center
                .values()
                .iter()
                .zip(half_width)
                .map(|(c, h)| c.iter().zip(h).map(|(c, h)| c + h).collect())
                .collect(),
        )?;
        Ok(Band {
            lower,
            upper,
            closure,
        })
    }

    pub fn contains(&self, y: &MFCurve) -> Result<bool> {
        if y.shape() != self.lower.shape() {
            return Err(Error::ShapeMismatch("curve vs band".into()));
        }
        let inside = |lo: f64, v: f64, hi: f64| match self.closure {
            Closure::Closed => lo <= v && v <= hi,
            Closure::Open => lo < v && v < hi,
        };
        Ok(y.values()
            .iter()
            .zip(self.lower.values().iter().zip(self.upper.values()))
            .all(|(y, (lo, hi))| {
                y.iter()
                    .zip(lo.iter().zip(hi))
                    .all(|(v, (lo, hi))| inside(*lo, *v, *hi))
            }))
    }

    /// `sum_j int (upper_j - lower_j)`.
    pub fn area(&self, grid: &Grid) -> Result<f64> {
        let width = self.upper.sub(&self.lower)?;
        total_integral(width.values(), grid)
    }

    /// Clamps both bounds at zero.
    pub fn truncated_at_zero(&self) -> Band {
        Band {
            lower: self.lower.map(|v| v.max(0.0)),
            upper: self.upper.map(|v| v.max(0.0)),
            closure: self.closure,
        }
    }

    /// `true` when `self` lies inside `other` at every grid point.
    pub fn is_within(&self, other: &Band) -> bool {
        let le = |a: &MFCurve, b: &MFCurve| {
            a.values()
                .iter()
                .flatten()
                .zip(b.values().iter().flatten())
                .all(|(x, y)| x <= y)
        };
        le(&other.lower, &self.lower) && le(&self.upper, &other.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PredictionBand {
    Bounded(Band),
    Unbounded,
}

impl PredictionBand {
    pub fn contains(&self, y: &MFCurve) -> Result<bool> {
        match self {
            PredictionBand::Bounded(b) => b.contains(y),
            PredictionBand::Unbounded => Ok(true),
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, PredictionBand::Bounded(_))
    }

    pub fn bounded(&self) -> Option<&Band> {
        match self {
            PredictionBand::Bounded(b) => Some(b),
            PredictionBand::Unbounded => None,
        }
    }

    pub fn truncated_at_zero(&self) -> PredictionBand {
        match self {
            PredictionBand::Bounded(b) => PredictionBand::Bounded(b.truncated_at_zero()),
            PredictionBand::Unbounded => PredictionBand::Unbounded,
        }
    }
}

/// Band `center -/+ radius * s` for a calibrated radius.
pub fn make_band(center: &MFCurve, s: &ModulationSet, calibration: &Calibration) -> Result<PredictionBand> {
    match *calibration {
        Calibration::Bounded { radius, closure } => {
            let hw: Vec<Vec<f64>> = s
                .values()
                .iter()
                .map(|c| c.iter().map(|v| radius * v).collect())
                .collect();
            Ok(PredictionBand::Bounded(Band::around(center, &hw, closure)?))
        }
        Calibration::Unbounded => Ok(PredictionBand::Unbounded),
    }
}

/// Band size `2 * radius`, cross-checked against the quadrature of the band area.
pub fn band_size(calibration: &Calibration, s: &ModulationSet, grid: &Grid) -> Result<f64> {
    let radius = calibration.radius().ok_or(Error::UnboundedBand)?;
    let size = 2.0 * radius;
    let area = 2.0 * radius * s.total_integral(grid)?;
    if (area - size).abs() > 1e-10 * size.max(1.0) {
        return Err(Error::NormalizationMismatch {
            expected: size,
            got: area,
        });
    }
    Ok(size)
}

/// Calibrated band predictor: model, modulation and radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPredictor<R = FittedRegressor> {
    grid: Grid,
    model: R,
    modulation: ModulationSet,
    calibration: Calibration,
    alpha: f64,
    mode: ConformalMode,
}

impl<R: Regressor> BandPredictor<R> {
    pub fn new(
        grid: Grid,
        model: R,
        modulation: ModulationSet,
        calibration: Calibration,
        alpha: f64,
        mode: ConformalMode,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        mode.validate()?;
        grid.check_shape(modulation.values())?;
        if let Calibration::Bounded { radius, closure } = calibration {
            if !(radius.is_finite() && radius >= 0.0) {
                return Err(Error::NonFinite("band radius"));
            }
            if mode == ConformalMode::Split && closure != Closure::Closed {
                return Err(Error::ShapeMismatch("split bands are closed".into()));
            }
        }
        Ok(Self {
            grid,
            model,
            modulation,
            calibration,
            alpha,
            mode,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn model(&self) -> &R {
        &self.model
    }

    pub fn modulation(&self) -> &ModulationSet {
        &self.modulation
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn mode(&self) -> ConformalMode {
        self.mode
    }

    pub fn band(&self, x: &Covariates) -> Result<PredictionBand> {
        let center = self.model.predict(x)?;
        make_band(&center, &self.modulation, &self.calibration)
    }

    /// Band with both bounds clamped at zero, for nonnegative responses.
    pub fn band_truncated(&self, x: &Covariates) -> Result<PredictionBand> {
        Ok(self.band(x)?.truncated_at_zero())
    }

    /// Nonconformity score of a new pair.
    pub fn score(&self, x: &Covariates, y: &MFCurve) -> Result<f64> {
        let r = y.sub(&self.model.predict(x)?)?;
        score(&r, &self.modulation)
    }

    pub fn contains(&self, x: &Covariates, y: &MFCurve) -> Result<bool> {
        self.band(x)?.contains(y)
    }

    /// `Q(s) = 2k`.
    pub fn band_size(&self) -> Result<f64> {
        band_size(&self.calibration, &self.modulation, &self.grid)
    }
}

/// Per-component univariate radii `k_j` (CUB method). `None` when unbounded.
pub fn cub_radii(calib_residuals: &[MFCurve], s: &ModulationSet, alpha: f64) -> Result<Option<Vec<f64>>> {
    check_alpha(alpha)?;
    let l = calib_residuals.len();
    if l == 0 {
        return Err(Error::EmptyInput("calibration residuals"));
    }
    let rank = split_rank(l, alpha);
    if rank as usize > l {
        return Ok(None);
    }
    let p = s.values().len();
    let mut radii = Vec::with_capacity(p);
    for j in 0..p {
        let sj = s.component(j);
        let per: Vec<f64> = calib_residuals
            .iter()
            .map(|r| {
                r.component(j)
                    .iter()
                    .zip(sj)
                    .map(|(r, s)| r.abs() / s)
                    .fold(0.0_f64, f64::max)
            })
            .collect();
        radii.push(sorted(&per)[rank as usize - 1]);
    }
    Ok(Some(radii))
}

/// Pointwise radii `k_j(t)`. `None` when unbounded.
pub fn pointwise_radii(
    calib_residuals: &[MFCurve],
    s: &ModulationSet,
    alpha: f64,
) -> Result<Option<Vec<Vec<f64>>>> {
    check_alpha(alpha)?;
    let l = calib_residuals.len();
    if l == 0 {
        return Err(Error::EmptyInput("calibration residuals"));
    }
    let rank = split_rank(l, alpha);
    if rank as usize > l {
        return Ok(None);
    }
    let mut column = vec![0.0; l];
    let radii = s
        .values()
        .iter()
        .enumerate()
        .map(|(j, sj)| {
            sj.iter()
                .enumerate()
                .map(|(g, s)| {
                    for (d, r) in calib_residuals.iter().enumerate() {
                        column[d] = r.component(j)[g].abs() / s;
                    }
                    column.sort_by(|a, b| a.total_cmp(b));
                    column[rank as usize - 1]
                })
                .collect()
        })
        .collect();
    Ok(Some(radii))
}

/// Concatenation of the `p` univariate simultaneous bands.
pub fn cub_band(
    center: &MFCurve,
    calib_residuals: &[MFCurve],
    s: &ModulationSet,
    alpha: f64,
) -> Result<PredictionBand> {
    match cub_radii(calib_residuals, s, alpha)? {
        None => Ok(PredictionBand::Unbounded),
        Some(k) => {
            let hw: Vec<Vec<f64>> = s
                .values()
                .iter()
                .zip(&k)
                .map(|(c, k)| c.iter().map(|v| k * v).collect())
                .collect();
            Ok(PredictionBand::Bounded(Band::around(center, &hw, Closure::Closed)?))
        }
    }
}

/// Concatenation of pointwise prediction intervals.
pub fn pointwise_band(
    center: &MFCurve,
    calib_residuals: &[MFCurve],
    s: &ModulationSet,
    alpha: f64,
) -> Result<PredictionBand> {
    match pointwise_radii(calib_residuals, s, alpha)? {
        None => Ok(PredictionBand::Unbounded),
        Some(k) => {
            let hw: Vec<Vec<f64>> = s
                .values()
                .iter()
                .zip(&k)
                .map(|(c, k)| c.iter().zip(k).map(|(v, k)| k * v).collect())
                .collect();
            Ok(PredictionBand::Bounded(Band::around(center, &hw, Closure::Closed)?))
        }
    }
}

/// Level, calibration mode and modulation family of a conformal fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    pub alpha: f64,
    pub mode: ConformalMode,
    pub modulation: ModulationKind,
}

impl ConformalConfig {
    pub fn split(alpha: f64, modulation: ModulationKind) -> Self {
        Self {
            alpha,
            mode: ConformalMode::Split,
            modulation,
        }
    }

    pub fn smoothed(alpha: f64, tau: f64, modulation: ModulationKind) -> Self {
        Self {
            alpha,
            mode: ConformalMode::Smoothed { tau },
            modulation,
        }
    }

    pub fn trim(&self) -> TrimConfig {
        TrimConfig {
            alpha: self.alpha,
            mode: self.mode,
        }
    }
}

/// Everything produced by one split: the predictor plus the residuals and
/// scores it was calibrated on.
#[derive(Debug, Clone)]
pub struct SplitFit<R = FittedRegressor> {
    pub predictor: BandPredictor<R>,
    pub train_residuals: Vec<MFCurve>,
    pub calib_residuals: Vec<MFCurve>,
    pub scores: Scores,
}

impl SplitFit<FittedRegressor> {
    /// Fits the concurrent model on `I1`, builds the modulation and calibrates on `I2`.
    pub fn run(data: &Dataset, split: &Split, spec: &RegressorSpec, cfg: &ConformalConfig) -> Result<Self> {
        if split.n() != data.len() {
            return Err(Error::InvalidSplit(format!(
                "split covers {} observations, dataset has {}",
                split.n(),
                data.len()
            )));
        }
        let model = regress::fit(data, split.train(), spec)?;
        Self::with_model(data, split, model, cfg)
    }
}

impl<R: Regressor> SplitFit<R> {
    /// Calibrates an already fitted model. The model must depend on `I1` only.
    pub fn with_model(data: &Dataset, split: &Split, model: R, cfg: &ConformalConfig) -> Result<Self> {
        check_alpha(cfg.alpha)?;
        cfg.mode.validate()?;
        let grid = data.grid();
        let train_residuals = regress::residuals(&model, data, split.train())?;
        let calib_residuals = regress::residuals(&model, data, split.calib())?;
        let modulation = modulate::build(
            cfg.modulation,
            &train_residuals,
            &calib_residuals,
            grid,
            &cfg.trim(),
        )?;
        let scores = Scores::new(
            calib_residuals
                .iter()
                .map(|r| score(r, &modulation))
                .collect::<Result<_>>()?,
        )?;
        let calibration = calibrate(&scores, cfg.alpha, cfg.mode)?;
        let predictor = BandPredictor::new(grid.clone(), model, modulation, calibration, cfg.alpha, cfg.mode)?;
        Ok(Self {
            predictor,
            train_residuals,
            calib_residuals,
            scores,
        })
    }

    /// p-value of a candidate `y` at `x` (split or smoothed, following the mode).
    pub fn p_value(&self, x: &Covariates, y: &MFCurve) -> Result<f64> {
        let r = self.predictor.score(x, y)?;
        Ok(match self.predictor.mode() {
            ConformalMode::Split => p_value(&self.scores, r),
            ConformalMode::Smoothed { tau } => p_value_smoothed(&self.scores, r, tau),
        })
    }

    pub fn cub_band(&self, x: &Covariates) -> Result<PredictionBand> {
        let center = self.predictor.model().predict(x)?;
        cub_band(&center, &self.calib_residuals, self.predictor.modulation(), self.predictor.alpha())
    }

    pub fn pointwise_band(&self, x: &Covariates) -> Result<PredictionBand> {
        let center = self.predictor.model().predict(x)?;
        pointwise_band(&center, &self.calib_residuals, self.predictor.modulation(), self.predictor.alpha())
    }
}
