use std::path::{Path, PathBuf};

use mfband::conformal::{Calibration, ConformalConfig, ConformalMode, PredictionBand, SplitFit};
use mfband::data::{Covariates, Dataset, Grid, MFCurve, Observation};
use mfband::harness::{run_study, StudyReport};
use mfband::regress::Regressor;
use mfband::simgen::{Scenario, ScenarioSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bundle::{guaranteed_coverage, Metadata, ModelBundle, FORMAT_VERSION};
use crate::config::{read_json, read_studies, CalibrateConfig, ModeConfig, SplitConfig};
use crate::error::{CliError, Result};
use crate::io::{fmt_real, read_curves, write_curves, write_scalar_covariates, CovariateTable};

/// Environment variable giving the default worker count of `study`.
pub const THREADS_ENV: &str = "MFBAND_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrateSummary {
    pub radius: f64,
    pub m: usize,
    pub l: usize,
    pub alpha: f64,
    pub tau: Option<f64>,
    pub theoretical_coverage: f64,
}

impl std::fmt::Display for CalibrateSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "k = {}", self.radius)?;
        writeln!(f, "m = {}", self.m)?;
        writeln!(f, "l = {}", self.l)?;
        if let Some(tau) = self.tau {
            writeln!(f, "tau = {tau}")?;
        }
        write!(f, "theoretical coverage = {}", self.theoretical_coverage)
    }
}

/// Fits, modulates and calibrates on the curves and covariates on disk.
pub fn calibrate(curves: &Path, covariates: &[PathBuf], config: &Path) -> Result<(ModelBundle, CalibrateSummary)> {
    let cfg: CalibrateConfig = read_json(config)?;
    let table = read_curves(curves)?;
    let cov = CovariateTable::read(covariates, &table.grid)?;
    let obs = table
        .ids
        .iter()
        .zip(table.curves)
        .map(|(id, y)| Ok(Observation::new(cov.get(id)?, y)))
        .collect::<Result<Vec<_>>>()?;
    let layout = cov.layout().clone();
    let data = Dataset::new(table.grid.clone(), layout.clone(), obs)?;
    let split = cfg.split.resolve(&table.ids)?;
    let spec = cfg.regressor.resolve(&layout, table.grid.p())?;
    let mode = cfg.mode.resolve()?;
    let conformal = ConformalConfig {
        alpha: cfg.alpha,
        mode,
        modulation: cfg.modulation,
    };
    let fit = SplitFit::run(&data, &split, &spec, &conformal)?;
    let l = split.l();
    let calibration = *fit.predictor.calibration();
    let radius = match calibration {
        Calibration::Bounded { radius, .. } => radius,
        Calibration::Unbounded => {
            let bound = mode.tau().unwrap_or(1.0) / (l + 1) as f64;
            return Err(CliError::Numeric(format!(
                "alpha = {} is below the feasibility bound {bound} for l = {l}: the band would be unbounded",
                cfg.alpha
            )));
        }
    };
    let theoretical_coverage = guaranteed_coverage(&calibration, mode, cfg.alpha, l);
    let pick = |idx: &[usize]| idx.iter().map(|&i| table.ids[i].clone()).collect();
    let metadata = Metadata {
        tool: "mfband".into(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        train_ids: pick(split.train()),
        calib_ids: pick(split.calib()),
        tau_seed: match cfg.mode {
            ModeConfig::Smoothed { seed, .. } => seed,
            ModeConfig::Split => None,
        },
        split_seed: match cfg.split {
            SplitConfig::Random { seed, .. } => Some(seed),
            _ => None,
        },
        theoretical_coverage,
    };
    let summary = CalibrateSummary {
        radius,
        m: split.m(),
        l,
        alpha: cfg.alpha,
        tau: mode.tau(),
        theoretical_coverage,
    };
    let bundle = ModelBundle {
        format_version: FORMAT_VERSION,
        layout,
        predictor: fit.predictor,
        metadata,
    };
    Ok((bundle, summary))
}

/// Prediction and band for one set of new covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct BandCurve {
    pub id: String,
    pub fit: MFCurve,
    pub band: PredictionBand,
}

/// Bands for every curve id in the covariate files, or a single band named
/// `new` when the model takes no covariates.
pub fn band(bundle: &ModelBundle, covariates: &[PathBuf], truncate_at_zero: bool) -> Result<Vec<BandCurve>> {
    let p = &bundle.predictor;
    let (ids, table) = if covariates.is_empty() {
        if bundle.layout != Default::default() {
            return Err(CliError::schema("the model needs covariates: pass --covariates"));
        }
        (vec!["new".to_string()], CovariateTable::empty())
    } else {
        let table = CovariateTable::read(covariates, p.grid())?;
        if table.layout() != &bundle.layout {
            return Err(CliError::schema(format!(
                "covariate layout mismatch: model expects scalar {:?} and functional {:?}, files give scalar {:?} and functional {:?}",
                bundle.layout.scalar_names,
                bundle.layout.functional_names,
                table.layout().scalar_names,
                table.layout().functional_names
            )));
        }
        (table.ids().unwrap_or_default().to_vec(), table)
    };
    ids.into_iter()
        .map(|id| {
            let x = if covariates.is_empty() { Covariates::none() } else { table.get(&id)? };
            let (fit, band) = if truncate_at_zero {
                (p.model().predict_truncated(&x)?, p.band_truncated(&x)?)
            } else {
                (p.model().predict(&x)?, p.band(&x)?)
            };
            Ok(BandCurve { id, fit, band })
        })
        .collect()
}

pub fn write_band(path: &Path, grid: &Grid, bands: &[BandCurve]) -> Result<()> {
    let err = |e: csv::Error| CliError::schema(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["curve_id", "component", "t", "fit", "lower", "upper", "closure"])
        .map_err(err)?;
    for b in bands {
        for (j, c) in grid.components().iter().enumerate() {
            for (g, t) in c.points().iter().enumerate() {
                let (lo, hi, closure) = match &b.band {
                    PredictionBand::Bounded(band) => (
                        band.lower.component(j)[g],
                        band.upper.component(j)[g],
                        band.closure.to_string(),
                    ),
                    PredictionBand::Unbounded => (f64::NEG_INFINITY, f64::INFINITY, "unbounded".into()),
                };
                w.write_record([
                    b.id.clone(),
                    (j + 1).to_string(),
                    fmt_real(*t),
                    fmt_real(b.fit.component(j)[g]),
                    fmt_real(lo),
                    fmt_real(hi),
                    closure,
                ])
                .map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Runs every study in the file. `threads` overrides the per-study setting.
pub fn study(config: &Path, threads: Option<usize>) -> Result<Vec<StudyReport>> {
    read_studies(config)?
        .into_iter()
        .map(|mut cfg| {
            if threads.is_some() {
                cfg.threads = threads;
            }
            Ok(run_study(&cfg)?)
        })
        .collect()
}

/// Worker count from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(CliError::Numeric(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(None),
    }
}

#[derive(Serialize)]
struct ReportFile<'a> {
    reports: &'a [StudyReport],
}

pub fn report_json(reports: &[StudyReport]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&ReportFile { reports })
        .map_err(|e| CliError::Numeric(format!("cannot serialize report: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub const TABLE_HEADER: [&str; 18] = [
    "study",
    "scenario",
    "n",
    "covariate_set",
    "modulation",
    "method",
    "mode",
    "alpha",
    "l",
    "replications",
    "failures",
    "coverage",
    "ci_lower",
    "ci_upper",
    "theoretical_coverage",
    "size_q1",
    "size_median",
    "size_q3",
];

pub fn write_table(path: &Path, reports: &[StudyReport]) -> Result<()> {
    let err = |e: csv::Error| CliError::schema(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(TABLE_HEADER).map_err(err)?;
    for r in reports {
        w.write_record([
            r.study.to_string(),
            r.scenario.to_string(),
            r.n.to_string(),
            r.covariate_set.to_string(),
            r.modulation.to_string(),
            r.method.to_string(),
            r.mode.to_string(),
            fmt_real(r.alpha),
            r.l.to_string(),
            r.replications.to_string(),
            r.failures.to_string(),
            fmt_real(r.coverage),
            fmt_real(r.ci_lower),
            fmt_real(r.ci_upper),
            r.theoretical_coverage.map(fmt_real).unwrap_or_default(),
            fmt_real(r.size_q1),
            fmt_real(r.size_median),
            fmt_real(r.size_q3),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes one simulated sample (`n + 1` curves) as `curves.csv` and
/// `covariates.csv` in `dir`.
pub fn generate(spec: ScenarioSpec, seed: u64, dir: &Path) -> Result<()> {
    let scenario = Scenario::new(spec)?;
    let data = scenario.generate(&mut ChaCha8Rng::seed_from_u64(seed))?;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let ids: Vec<String> = (1..=data.len()).map(|i| i.to_string()).collect();
    let curves: Vec<MFCurve> = data.observations().iter().map(|o| o.y.clone()).collect();
    write_curves(&dir.join("curves.csv"), data.grid(), &ids, &curves)?;
    let rows: Vec<Vec<f64>> = data.observations().iter().map(|o| o.x.scalar.clone()).collect();
    write_scalar_covariates(&dir.join("covariates.csv"), &data.layout().scalar_names, &ids, &rows)
}

/// Mode label for messages.
pub fn mode_label(mode: ConformalMode) -> &'static str {
    match mode {
        ConformalMode::Split => "split",
        ConformalMode::Smoothed { .. } => "smoothed",
    }
}
