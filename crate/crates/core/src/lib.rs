//! Conformal prediction bands for multivariate functional responses.
//!
//! A response is a vector of `p` curves sampled on a fixed per-component grid.
//! Given any pointwise regression estimator, the split conformal machinery in
//! this crate returns simultaneous bands
//!
//! ```text
//! B_j(t) = [ mu_j(x)(t) - k * s_j(t),  mu_j(x)(t) + k * s_j(t) ]
//! ```
//!
//! that hold for every component and every grid point at once, with
//! finite-sample coverage `1 - floor((l+1) alpha) / (l+1)` (split mode) or
//! exactly `1 - alpha` (smoothed mode). The modulation functions `s_j` shape the
//! band locally; three data-driven families are provided in [`modulate`].
//!
//! Modules:
//!
//! - [`data`]: grids, curves, covariates, datasets and splits
//! - [`regress`]: concurrent pointwise least-squares estimators
//! - [`modulate`]: constant, standard-deviation and trimmed-envelope modulation
//! - [`conformal`]: scores, calibration, bands, p-values, CUB and pointwise bands
//! - [`simgen`]: B-spline bases and the simulation scenarios
//! - [`harness`]: Monte Carlo coverage and efficiency studies
//!
//! ```
//! use mfband::prelude::*;
//!
//! let grid = Grid::uniform(2, 0.0, 1.0, 20).unwrap();
//! let layout = CovariateLayout::new(vec![], vec![]);
//! let obs: Vec<Observation> = (0..10)
//!     .map(|i| {
//!         let c = i as f64 / 10.0;
//!         Observation::new(Covariates::none(), MFCurve::constant(&grid, c))
//!     })
//!     .collect();
//! let data = Dataset::new(grid.clone(), layout, obs).unwrap();
//! let split = Split::new(10, (0..5).collect(), (5..10).collect()).unwrap();
//! let cfg = ConformalConfig::split(0.2, ModulationKind::Const);
//! let fit = SplitFit::run(&data, &split, &RegressorSpec::intercept_only(2), &cfg).unwrap();
//! let band = fit.predictor.band(&Covariates::none()).unwrap();
//! assert!(band.is_bounded());
//! ```

pub mod conformal;
pub mod data;
pub mod error;
pub mod harness;
pub mod modulate;
mod order;
pub mod regress;
pub mod simgen;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::conformal::{
        BandPredictor, Calibration, Closure, ConformalConfig, ConformalMode, PredictionBand,
        Scores, SplitFit,
    };
    pub use crate::data::{
        parity_split, random_split, CovariateLayout, Covariates, Dataset, Grid, ComponentGrid,
        MFCurve, Observation, Split,
    };
    pub use crate::error::{Error, Result};
    pub use crate::harness::{run_study, Method, ModeKind, StudyConfig, StudyReport};
    pub use crate::modulate::{ModulationKind, ModulationSet, TrimConfig};
    pub use crate::regress::{FittedRegressor, Regressor, RegressorSpec, Term};
    pub use crate::simgen::{Scenario, ScenarioSpec};
}
