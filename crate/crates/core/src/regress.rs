//! Concurrent pointwise least-squares regression.
//!
//! At every component `j` and grid point `t_g` the model is
//! `y_j(t_g) = x_j(t_g)' beta_j(t_g) + error`, fitted independently by ordinary
//! least squares on the training observations. Scalar covariates give the
//! functional-on-scalar model; functional covariates (sampled on the response
//! grid) give the functional-on-functional one. No smoothing is applied across
//! grid points.
//!
//! The conformal layer only needs something that maps covariates to a predicted
//! curve, see [`Regressor`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, Dataset, Grid, MFCurve};
use crate::error::{Error, Result};

/// Relative singular-value cutoff below which a design is rank deficient.
pub const SINGULAR_TOL: f64 = 1e-10;

/// A single regressor column of a component's design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Term {
    /// Scalar covariate by index in the layout.
    Scalar(usize),
    /// Functional covariate by index in the layout, evaluated at the same
    /// component and grid point as the response.
    Functional(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressorKind {
    InterceptOnly,
    ConcurrentFos,
    ConcurrentFof,
}

/// Which covariates enter each component's regression.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub intercept: bool,
    /// `terms[j]` lists the regressors of component `j`.
    pub terms: Vec<Vec<Term>>,
}

impl RegressorSpec {
    pub fn intercept_only(p: usize) -> Self {
        Self {
            intercept: true,
            terms: vec![Vec::new(); p],
        }
    }

    /// Intercept plus per-component terms.
    pub fn concurrent(terms: Vec<Vec<Term>>) -> Self {
        Self {
            intercept: true,
            terms,
        }
    }

    /// Intercept plus the same terms in every component.
    pub fn shared(p: usize, terms: Vec<Term>) -> Self {
        Self::concurrent(vec![terms; p])
    }

    pub fn p(&self) -> usize {
        self.terms.len()
    }

    pub fn kind(&self) -> RegressorKind {
        let all = self.terms.iter().flatten();
        if all.clone().any(|t| matches!(t, Term::Functional(_))) {
            RegressorKind::ConcurrentFof
        } else if all.clone().next().is_some() {
            RegressorKind::ConcurrentFos
        } else {
            RegressorKind::InterceptOnly
        }
    }

    /// Design dimension `q_j` of component `j`.
    pub fn design_dim(&self, j: usize) -> usize {
        usize::from(self.intercept) + self.terms[j].len()
    }

    fn has_functional(&self, j: usize) -> bool {
        self.terms[j]
            .iter()
            .any(|t| matches!(t, Term::Functional(_)))
    }

    /// Checks the terms against a dataset's layout and grid.
    pub fn validate(&self, data: &Dataset) -> Result<()> {
        if self.p() != data.grid().p() {
            return Err(Error::LayoutMismatch(format!(
                "spec has {} components, data has {}",
                self.p(),
                data.grid().p()
            )));
        }
        let layout = data.layout();
        for (j, terms) in self.terms.iter().enumerate() {
            for t in terms {
                let ok = match *t {
                    Term::Scalar(k) => k < layout.scalar_names.len(),
                    Term::Functional(k) => k < layout.functional_names.len(),
                };
                if !ok {
                    return Err(Error::LayoutMismatch(format!(
                        "component {j}: {t:?} not in covariate layout"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Writes the design row of component `j` at grid index `g` into `row`.
    fn fill_row(&self, j: usize, g: usize, x: &Covariates, row: &mut Vec<f64>) -> Result<()> {
        row.clear();
        if self.intercept {
            row.push(1.0);
        }
        for t in &self.terms[j] {
            let v = match *t {
                Term::Scalar(k) => *x
                    .scalar
                    .get(k)
                    .ok_or_else(|| Error::LayoutMismatch(format!("missing scalar covariate {k}")))?,
                Term::Functional(k) => {
                    let f = x.functional.get(k).ok_or_else(|| {
                        Error::LayoutMismatch(format!("missing functional covariate {k}"))
                    })?;
                    *f.values()
                        .get(j)
                        .and_then(|c| c.get(g))
                        .ok_or_else(|| {
                            Error::LayoutMismatch(format!(
                                "functional covariate {k} does not cover component {j} point {g}"
                            ))
                        })?
                }
            };
            row.push(v);
        }
        Ok(())
    }
}

/// Anything that maps covariates to a predicted curve on a fixed grid.
pub trait Regressor: Send + Sync {
    fn predict(&self, x: &Covariates) -> Result<MFCurve>;
}

/// Pointwise OLS coefficients `beta_j(t_g)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor {
    grid: Grid,
    spec: RegressorSpec,
    /// `coefficients[j][g]` has length `q_j`.
    coefficients: Vec<Vec<Vec<f64>>>,
}

impl FittedRegressor {
    /// Reassembles a fitted model, checking coefficient shapes.
    pub fn from_parts(
        grid: Grid,
        spec: RegressorSpec,
        coefficients: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        if spec.p() != grid.p() || coefficients.len() != grid.p() {
            return Err(Error::ShapeMismatch("coefficient components".into()));
        }
        for (j, cj) in coefficients.iter().enumerate() {
            if cj.len() != grid.component(j).len() {
                return Err(Error::ShapeMismatch(format!("component {j} grid length")));
            }
            let q = spec.design_dim(j);
            if cj.iter().any(|b| b.len() != q || b.iter().any(|v| !v.is_finite())) {
                return Err(Error::ShapeMismatch(format!(
                    "component {j} coefficients must have length {q}"
                )));
            }
        }
        Ok(Self {
            grid,
            spec,
            coefficients,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn coefficients(&self) -> &[Vec<Vec<f64>>] {
        &self.coefficients
    }

    /// Coefficient curve of design column `k` in component `j`.
    pub fn coefficient_curve(&self, j: usize, k: usize) -> Vec<f64> {
        self.coefficients[j].iter().map(|b| b[k]).collect()
    }

    /// Prediction with negative values clamped to zero.
    pub fn predict_truncated(&self, x: &Covariates) -> Result<MFCurve> {
        Ok(self.predict(x)?.map(|v| v.max(0.0)))
    }
}

impl Regressor for FittedRegressor {
    fn predict(&self, x: &Covariates) -> Result<MFCurve> {
        let mut row = Vec::new();
        let mut values = Vec::with_capacity(self.grid.p());
        for (j, cj) in self.coefficients.iter().enumerate() {
            let mut out = Vec::with_capacity(cj.len());
            for (g, beta) in cj.iter().enumerate() {
                self.spec.fill_row(j, g, x, &mut row)?;
                out.push(row.iter().zip(beta).map(|(a, b)| a * b).sum());
            }
            values.push(out);
        }
        MFCurve::new(values)
    }
}

/// Fits the concurrent model on the observations indexed by `train`.
pub fn fit(data: &Dataset, train: &[usize], spec: &RegressorSpec) -> Result<FittedRegressor> {
    spec.validate(data)?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training set"));
    }
    let grid = data.grid();
    let m = train.len();
    let mut coefficients = Vec::with_capacity(grid.p());
    for j in 0..grid.p() {
        let q = spec.design_dim(j);
        let len = grid.component(j).len();
        if m < q {
            return Err(Error::InsufficientData {
                component: j,
                rows: m,
                cols: q,
            });
        }
        if q == 0 {
            coefficients.push(vec![Vec::new(); len]);
            continue;
        }
        let cj = if spec.has_functional(j) {
            fit_per_point(data, train, spec, j)?
        } else {
            fit_shared_design(data, train, spec, j)?
        };
        coefficients.push(cj);
    }
    Ok(FittedRegressor {
        grid: grid.clone(),
        spec: spec.clone(),
        coefficients,
    })
}

/// Scalar-only design: one factorization serves every grid point.
fn fit_shared_design(
    data: &Dataset,
    train: &[usize],
    spec: &RegressorSpec,
    j: usize,
) -> Result<Vec<Vec<f64>>> {
    let m = train.len();
    let q = spec.design_dim(j);
    let len = data.grid().component(j).len();
    let mut row = Vec::with_capacity(q);
    let mut x = DMatrix::<f64>::zeros(m, q);
    let mut y = DMatrix::<f64>::zeros(m, len);
    for (r, &i) in train.iter().enumerate() {
        let obs = data.get(i);
        spec.fill_row(j, 0, &obs.x, &mut row)?;
        for (c, v) in row.iter().enumerate() {
            x[(r, c)] = *v;
        }
        for (g, v) in obs.y.component(j).iter().enumerate() {
            y[(r, g)] = *v;
        }
    }
    let beta = lstsq(x, &y, j, 0)?;
    Ok((0..len)
        .map(|g| beta.column(g).iter().copied().collect())
        .collect())
}

fn fit_per_point(
    data: &Dataset,
    train: &[usize],
    spec: &RegressorSpec,
    j: usize,
) -> Result<Vec<Vec<f64>>> {
    let m = train.len();
    let q = spec.design_dim(j);
    let len = data.grid().component(j).len();
    let mut row = Vec::with_capacity(q);
    let mut out = Vec::with_capacity(len);
    for g in 0..len {
        let mut x = DMatrix::<f64>::zeros(m, q);
        let mut y = DMatrix::<f64>::zeros(m, 1);
        for (r, &i) in train.iter().enumerate() {
            let obs = data.get(i);
            spec.fill_row(j, g, &obs.x, &mut row)?;
            for (c, v) in row.iter().enumerate() {
                x[(r, c)] = *v;
            }
            y[(r, 0)] = obs.y.component(j)[g];
        }
        let beta = lstsq(x, &y, j, g)?;
        out.push(beta.column(0).iter().copied().collect());
    }
    Ok(out)
}

/// Least-squares solve through the SVD, rejecting rank-deficient designs.
fn lstsq(x: DMatrix<f64>, y: &DMatrix<f64>, component: usize, grid_index: usize) -> Result<DMatrix<f64>> {
    let svd = x.svd(true, true);
    let sv = &svd.singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min < SINGULAR_TOL * max {
        return Err(Error::SingularDesign {
            component,
            grid_index,
        });
    }
    svd.solve(y, 0.0)
        .map_err(|_| Error::SingularDesign {
            component,
            grid_index,
        })
}

/// `y_i - mu(x_i)` for every observation in `idx`.
pub fn residuals<R: Regressor + ?Sized>(
    model: &R,
    data: &Dataset,
    idx: &[usize],
) -> Result<Vec<MFCurve>> {
    idx.iter()
        .map(|&i| {
            let o = data.get(i);
            o.y.sub(&model.predict(&o.x)?)
        })
        .collect()
}
