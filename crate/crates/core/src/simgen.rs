//! Scenario generators for the simulation studies.
//!
//! All curves live on `p = 2` components over `[0, 1]`. Smooth random
//! functions are cubic B-spline expansions with clamped, equally spaced knots.
//! Given a [`ScenarioSpec`] the regression coefficient functions are fixed by
//! `coef_seed`; each call to [`Scenario::generate`] draws fresh errors from the
//! supplied generator.

use nalgebra::Matrix3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::{CovariateLayout, Covariates, Dataset, Grid, MFCurve, Observation};
use crate::error::{Error, Result};
use crate::regress::{RegressorSpec, Term};

/// B-spline basis on `[0, 1]` with clamped, equally spaced knots.
#[derive(Debug, Clone, PartialEq)]
pub struct BSplineBasis {
    order: usize,
    n_basis: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    pub fn new(order: usize, n_basis: usize) -> Result<Self> {
        if order == 0 || n_basis < order {
            return Err(Error::InvalidScenario(format!(
                "B-spline basis needs n_basis >= order >= 1, got order {order}, n_basis {n_basis}"
            )));
        }
        let segments = n_basis - order + 1;
        let mut knots = vec![0.0; order];
        knots.extend((1..segments).map(|i| i as f64 / segments as f64));
        knots.extend(std::iter::repeat_n(1.0, order));
        Ok(Self {
            order,
            n_basis,
            knots,
        })
    }

    pub fn cubic(n_basis: usize) -> Result<Self> {
        Self::new(4, n_basis)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Index `i` of the knot span `[u_i, u_{i+1})` holding `t`; the right end
    /// of the domain belongs to the last nonempty span.
    fn span(&self, t: f64) -> usize {
        let last = self.n_basis - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        let mut i = self.order - 1;
        while t >= self.knots[i + 1] {
            i += 1;
        }
        i
    }

    /// Values of all basis functions at `t` (Cox-de Boor recursion).
    pub fn values(&self, t: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutsideDomain(t));
        }
        let k = self.order;
        let u = &self.knots;
        let i = self.span(t);
        // n[r] holds N_{i-deg+r, deg}(t) for the current degree
        let mut n = vec![0.0; k];
        n[0] = 1.0;
        let mut left = vec![0.0; k];
        let mut right = vec![0.0; k];
        for d in 1..k {
            left[d] = t - u[i + 1 - d];
            right[d] = u[i + d] - t;
            let mut saved = 0.0;
            for r in 0..d {
                let tmp = n[r] / (right[r + 1] + left[d - r]);
                n[r] = saved + right[r + 1] * tmp;
                saved = left[d - r] * tmp;
            }
            n[d] = saved;
        }
        let mut out = vec![0.0; self.n_basis];
        out[i + 1 - k..=i].copy_from_slice(&n);
        Ok(out)
    }

    pub fn eval(&self, coeffs: &[f64], t: f64) -> Result<f64> {
        if coeffs.len() != self.n_basis {
            return Err(Error::ShapeMismatch(format!(
                "{} coefficients for {} basis functions",
                coeffs.len(),
                self.n_basis
            )));
        }
        Ok(self.values(t)?.iter().zip(coeffs).map(|(b, c)| b * c).sum())
    }

    /// Basis values at every point, one row per point.
    pub fn design(&self, points: &[f64]) -> Result<Vec<Vec<f64>>> {
        points.iter().map(|&t| self.values(t)).collect()
    }
}

pub fn eval_bspline(basis: &BSplineBasis, coeffs: &[f64], t: f64) -> Result<f64> {
    basis.eval(coeffs, t)
}

fn expand(design: &[Vec<f64>], coeffs: &[f64]) -> Vec<f64> {
    design
        .iter()
        .map(|row| row.iter().zip(coeffs).map(|(b, c)| b * c).sum())
        .collect()
}

fn default_grid_points() -> usize {
    100
}

fn default_error_scale() -> f64 {
    1.0
}

/// Identifies a simulation scenario and its fixed coefficient functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub study: u8,
    pub scenario: u8,
    /// Sample size; each draw has `n + 1` pairs.
    pub n: usize,
    /// Seed of the once-generated coefficient functions.
    pub coef_seed: u64,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Multiplies every error term; `0` gives noiseless data.
    #[serde(default = "default_error_scale")]
    pub error_scale: f64,
}

impl ScenarioSpec {
    pub fn new(study: u8, scenario: u8, n: usize, coef_seed: u64) -> Self {
        Self {
            study,
            scenario,
            n,
            coef_seed,
            grid_points: default_grid_points(),
            error_scale: default_error_scale(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.study {
            1 => (1..=2).contains(&self.scenario),
            2 | 3 => (1..=3).contains(&self.scenario),
            _ => return Err(Error::InvalidStudy(format!("unknown study {}", self.study))),
        };
        if !ok {
            return Err(Error::InvalidScenario(format!(
                "study {} has no scenario {}",
                self.study, self.scenario
            )));
        }
        if self.n < 2 {
            return Err(Error::InvalidScenario(format!("n must be at least 2, got {}", self.n)));
        }
        if self.grid_points < 2 {
            return Err(Error::InvalidScenario(format!(
                "grid needs at least 2 points, got {}",
                self.grid_points
            )));
        }
        if !self.error_scale.is_finite() {
            return Err(Error::NonFinite("error scale"));
        }
        Ok(())
    }

    /// Covariate set for which the fitted model is correctly specified.
    pub fn default_covariate_set(&self) -> u8 {
        match (self.study, self.scenario) {
            (2, _) => 3,
            (3, 3) => 1,
            _ => 2,
        }
    }

    /// Regression used with covariate set `set` (1, 2 or 3).
    ///
    /// Set 1 is intercept only and set 3 uses `{1, w, w^2}` in both components.
    /// Set 2 is `{1, w}` / `{1, w^2}` per component in studies 1 and 3 and
    /// `{1, w}` in both components in study 2.
    pub fn regressor(&self, set: u8) -> Result<RegressorSpec> {
        let (w, w2) = (Term::Scalar(0), Term::Scalar(1));
        match set {
            1 => Ok(RegressorSpec::intercept_only(2)),
            2 if self.study == 2 => Ok(RegressorSpec::shared(2, vec![w])),
            2 => Ok(RegressorSpec::concurrent(vec![vec![w], vec![w2]])),
            3 => Ok(RegressorSpec::shared(2, vec![w, w2])),
            _ => Err(Error::InvalidScenario(format!("unknown covariate set {set}"))),
        }
    }
}

/// Error structure of a scenario.
#[derive(Debug, Clone)]
enum Noise {
    /// Independent 6-basis expansions; `splice` / `duplicate` pick the second
    /// component's error.
    Spline6 { splice: bool, duplicate: bool },
    /// Correlated trigonometric errors.
    Trig { chol: Matrix3<f64> },
    /// 13-basis expansion with small diagonal covariance.
    Spline13 { sd: Vec<f64> },
}

/// Materialized scenario: grid, fixed systematic parts and error machinery.
#[derive(Debug, Clone)]
pub struct Scenario {
    spec: ScenarioSpec,
    grid: Grid,
    layout: CovariateLayout,
    /// `beta[k]` sampled on the grid.
    beta: [Vec<f64>; 3],
    /// Contamination curve of study 3, scenario 3.
    spike: Option<Vec<f64>>,
    design: Vec<Vec<f64>>,
    noise: Noise,
    exponentiate: bool,
}

impl Scenario {
    pub fn new(spec: ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let grid = Grid::uniform(2, 0.0, 1.0, spec.grid_points)?;
        let points = grid.component(0).points().to_vec();
        let basis6 = BSplineBasis::cubic(6)?;
        let design6 = basis6.design(&points)?;
        let mut coef_rng = ChaCha8Rng::seed_from_u64(spec.coef_seed);
        let beta: [Vec<f64>; 3] = std::array::from_fn(|_| {
            let c: Vec<f64> = (0..6).map(|_| coef_rng.sample(StandardNormal)).collect();
            expand(&design6, &c)
        });
        let (study, scenario) = (spec.study, spec.scenario);
        let (design, noise) = match (study, scenario) {
            (3, 1) => (Vec::new(), Noise::Trig { chol: trig_cholesky() }),
            (3, _) => {
                let mut sd = vec![0.001_f64.sqrt(); 13];
                sd[6] = 3e-3;
                (BSplineBasis::cubic(13)?.design(&points)?, Noise::Spline13 { sd })
            }
            _ => (
                design6,
                Noise::Spline6 {
                    splice: study == 2 && scenario == 2,
                    duplicate: study == 2 && scenario == 3,
                },
            ),
        };
        let spike = if (study, scenario) == (3, 3) {
            let mut c = vec![0.0; 13];
            c[6] = 0.5;
            Some(expand(&BSplineBasis::cubic(13)?.design(&points)?, &c))
        } else {
            None
        };
        Ok(Self {
            spec,
            grid,
            layout: CovariateLayout::new(vec!["w".into(), "w2".into()], Vec::new()),
            beta,
            spike,
            design,
            noise,
            exponentiate: (study, scenario) == (1, 2),
        })
    }

    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn layout(&self) -> &CovariateLayout {
        &self.layout
    }

    /// `beta_k` on the grid (`k` = 0, 1, 2).
    pub fn beta(&self, k: usize) -> &[f64] {
        &self.beta[k]
    }

    /// `w_i = i / (n+1)` for 1-based `i`.
    pub fn w(&self, i: usize) -> f64 {
        i as f64 / (self.spec.n + 1) as f64
    }

    pub fn covariates(&self, i: usize) -> Covariates {
        let w = self.w(i);
        Covariates::scalar(vec![w, w * w])
    }

    /// Whether component `j` (1-based) of observation `i` (1-based) carries the
    /// contamination of study 3, scenario 3.
    pub fn is_contaminated(&self, i: usize, j: usize) -> bool {
        if self.spike.is_none() {
            return false;
        }
        let n = self.spec.n;
        if n < 40 {
            return (i, j) == (1, 1);
        }
        i >= j && (i - j).is_multiple_of(40) && (i - j) / 40 < n / 40
    }

    /// Contaminated `(i, j)` pairs, 1-based.
    pub fn contaminated(&self) -> Vec<(usize, usize)> {
        (1..=self.spec.n + 1)
            .flat_map(|i| (1..=2).map(move |j| (i, j)))
            .filter(|&(i, j)| self.is_contaminated(i, j))
            .collect()
    }

    /// Noise-free part of observation `i` (1-based), before any exponentiation.
    pub fn systematic(&self, i: usize) -> MFCurve {
        let w = self.w(i);
        let [b0, b1, b2] = &self.beta;
        MFCurve::from_fn(&self.grid, |j, g| match (self.spec.study, self.spec.scenario) {
            (3, 3) => {
                if self.is_contaminated(i, j + 1) {
                    self.spike.as_ref().map_or(0.0, |s| s[g])
                } else {
                    0.0
                }
            }
            (2, _) => b0[g] + b1[g] * w + b2[g] * w * w,
            _ if j == 0 => b0[g] + b1[g] * w,
            _ => b0[g] + b2[g] * w * w,
        })
    }

    /// Draws the error curves of one observation.
    pub fn draw_errors<R: Rng + ?Sized>(&self, rng: &mut R) -> MFCurve {
        let len = self.spec.grid_points;
        let points = self.grid.component(0).points();
        let scale = self.spec.error_scale;
        let values = match &self.noise {
            Noise::Spline6 { splice, duplicate } => {
                let e: Vec<Vec<f64>> = (0..2)
                    .map(|_| {
                        let c: Vec<f64> = (0..6).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
                        expand(&self.design, &c)
                    })
                    .collect();
                let second = if *duplicate {
                    e[0].clone()
                } else if *splice {
                    (0..len).map(|g| if points[g] <= 0.5 { e[0][g] } else { e[1][g] }).collect()
                } else {
                    e[1].clone()
                };
                vec![e[0].clone(), second]
            }
            Noise::Trig { chol } => (0..2)
                .map(|_| {
                    let z = nalgebra::Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
                    let b = chol * z;
                    let u: f64 = Uniform::new_inclusive(-0.5, 0.5).expect("valid range").sample(rng);
                    points
                        .iter()
                        .map(|&t| {
                            let a = 10.0 * std::f64::consts::PI * (t + u);
                            scale * (b[0] + b[1] * a.cos() + b[2] * a.sin())
                        })
                        .collect()
                })
                .collect(),
            Noise::Spline13 { sd } => (0..2)
                .map(|_| {
                    let c: Vec<f64> = sd
                        .iter()
                        .map(|s| scale * s * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    expand(&self.design, &c)
                })
                .collect(),
        };
        MFCurve::new(values).expect("generated curves are finite")
    }

    /// Observation `i` (1-based) with freshly drawn errors.
    pub fn draw_observation<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Result<Observation> {
        let mut y = self.systematic(i).zip_with(&self.draw_errors(rng), |a, b| a + b)?;
        if self.exponentiate {
            y = y.map(f64::exp);
        }
        if y.values().iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("generated curve"));
        }
        Ok(Observation::new(self.covariates(i), y))
    }

    /// The `n + 1` pairs of one replication, in index order.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Dataset> {
        let obs = (1..=self.spec.n + 1)
            .map(|i| self.draw_observation(i, rng))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.grid.clone(), self.layout.clone(), obs)
    }
}

fn trig_cholesky() -> Matrix3<f64> {
    let sigma = Matrix3::from_fn(|r, c| if r == c { 1.0 } else { 0.7 });
    sigma.cholesky().expect("positive definite").l()
}

/// Splits off observation `index` (0-based) as the test pair.
pub fn hold_out(data: &Dataset, index: usize) -> Result<(Dataset, Observation)> {
    if index >= data.len() {
        return Err(Error::IndexOutOfRange {
            index: index as i64,
            len: data.len(),
        });
    }
    let mut obs = data.observations().to_vec();
    let test = obs.remove(index);
    Ok((Dataset::new(data.grid().clone(), data.layout().clone(), obs)?, test))
}
