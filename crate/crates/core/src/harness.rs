//! Monte Carlo replication of the simulation studies.
//!
//! Replication `r` seeds a ChaCha8 generator with the master seed and selects
//! stream `r`, so every replication owns an independent random sequence and
//! results do not depend on how work is spread over threads. Each replication
//! draws `n + 1` pairs, holds out one at random as the test pair, splits the rest
//! into training and calibration sets, builds the band and records whether the
//! test response falls inside it together with the band size.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalConfig, ConformalMode, SplitFit};
use crate::data::random_split_with;
use crate::error::{Error, Result};
use crate::modulate::ModulationKind;
use crate::order::floor_snap;
use crate::regress::RegressorSpec;
use crate::simgen::{hold_out, Scenario, ScenarioSpec};

/// Multivariate band or concatenation of per-component bands.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Mpb,
    Cub,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Mpb => "mpb",
            Method::Cub => "cub",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    #[default]
    Split,
    /// A fresh `tau ~ U[0, 1)` per replication.
    Smoothed,
}

impl std::fmt::Display for ModeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModeKind::Split => "split",
            ModeKind::Smoothed => "smoothed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub scenario: ScenarioSpec,
    /// Defaults to the correctly specified set of the scenario.
    #[serde(default)]
    pub covariate_set: Option<u8>,
    pub modulation: ModulationKind,
    #[serde(default)]
    pub mode: ModeKind,
    #[serde(default)]
    pub method: Method,
    pub alpha: f64,
    /// Calibration set size.
    pub l: usize,
    pub replications: usize,
    pub master_seed: u64,
    /// Worker threads; `None` uses the rayon default.
    #[serde(default)]
    pub threads: Option<usize>,
    /// Count failed replications instead of aborting.
    #[serde(default)]
    pub skip_failures: bool,
    #[serde(default)]
    pub keep_records: bool,
}

impl StudyConfig {
    pub fn new(scenario: ScenarioSpec, modulation: ModulationKind, alpha: f64, l: usize, replications: usize, master_seed: u64) -> Self {
        Self {
            scenario,
            covariate_set: None,
            modulation,
            mode: ModeKind::Split,
            method: Method::Mpb,
            alpha,
            l,
            replications,
            master_seed,
            threads: None,
            skip_failures: false,
            keep_records: false,
        }
    }

    pub fn covariate_set(&self) -> u8 {
        self.covariate_set
            .unwrap_or_else(|| self.scenario.default_covariate_set())
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        let n = self.scenario.n;
        if self.l == 0 || self.l + 1 > n {
            return Err(Error::InvalidSplit(format!(
                "calibration size l={} must be in 1..={}",
                self.l,
                n - 1
            )));
        }
        if self.replications == 0 {
            return Err(Error::EmptyInput("replications"));
        }
        let lp1 = (self.l + 1) as f64;
        if !(self.alpha >= 1.0 / lp1 && self.alpha < self.l as f64 / lp1) {
            return Err(Error::InvalidLevel(self.alpha));
        }
        if self.method == Method::Cub && self.mode == ModeKind::Smoothed {
            return Err(Error::InvalidStudy("the CUB method is split-only".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidStudy("threads must be positive".into()));
        }
        self.scenario.regressor(self.covariate_set())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    /// 0-based position of the held-out pair among the `n + 1` generated.
    pub test_index: usize,
    pub tau: Option<f64>,
    pub covered: bool,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: u8,
    pub scenario: u8,
    pub n: usize,
    pub covariate_set: u8,
    pub modulation: ModulationKind,
    pub method: Method,
    pub mode: ModeKind,
    pub alpha: f64,
    pub l: usize,
    pub replications: usize,
    pub failures: usize,
    pub coverage: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Guaranteed coverage of the multivariate band; `None` for CUB.
    pub theoretical_coverage: Option<f64>,
    pub size_q1: f64,
    pub size_median: f64,
    pub size_q3: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<ReplicationRecord>>,
}

/// `1 - floor((l+1) alpha) / (l+1)`.
pub fn theoretical_coverage(l: usize, alpha: f64) -> f64 {
    let lp1 = (l + 1) as f64;
    1.0 - floor_snap(lp1 * alpha) as f64 / lp1
}

/// Empirical coverage with the normal-approximation 95% interval
/// `p ± 1.96 sqrt(p (1-p) / N)`.
pub fn coverage_ci(hits: usize, total: usize) -> Result<(f64, f64, f64)> {
    if total == 0 {
        return Err(Error::EmptyInput("replications"));
    }
    if hits > total {
        return Err(Error::IndexOutOfRange {
            index: hits as i64,
            len: total,
        });
    }
    let p = hits as f64 / total as f64;
    let half = 1.96 * (p * (1.0 - p) / total as f64).sqrt();
    Ok((p, p - half, p + half))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// First quartile, median and third quartile, interpolating linearly between
/// order statistics.
pub fn size_quartiles(sizes: &[f64]) -> Result<(f64, f64, f64)> {
    if sizes.is_empty() {
        return Err(Error::EmptyInput("sizes"));
    }
    if sizes.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("sizes"));
    }
    let s = crate::order::sorted(sizes);
    Ok((
        quantile_sorted(&s, 0.25),
        quantile_sorted(&s, 0.5),
        quantile_sorted(&s, 0.75),
    ))
}

/// Generator of replication `index`.
pub fn replication_rng(master_seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index as u64);
    rng
}

fn replicate(cfg: &StudyConfig, scenario: &Scenario, spec: &RegressorSpec, index: usize) -> Result<ReplicationRecord> {
    let mut rng = replication_rng(cfg.master_seed, index);
    let n = cfg.scenario.n;
    let data = scenario.generate(&mut rng)?;
    let test_index = rng.random_range(0..=n);
    let (data, test) = hold_out(&data, test_index)?;
    let split = random_split_with(n, cfg.l, &mut rng)?;
    let (mode, tau) = match cfg.mode {
        ModeKind::Split => (ConformalMode::Split, None),
        ModeKind::Smoothed => {
            let tau: f64 = rng.random();
            (ConformalMode::Smoothed { tau }, Some(tau))
        }
    };
    let conformal = ConformalConfig {
        alpha: cfg.alpha,
        mode,
        modulation: cfg.modulation,
    };
    let fit = SplitFit::run(&data, &split, spec, &conformal)?;
    let (covered, size) = match cfg.method {
        Method::Mpb => (
            fit.predictor.contains(&test.x, &test.y)?,
            fit.predictor.band_size()?,
        ),
        Method::Cub => {
            let band = fit.cub_band(&test.x)?;
            let size = band.bounded().ok_or(Error::UnboundedBand)?.area(data.grid())?;
            (band.contains(&test.y)?, size)
        }
    };
    Ok(ReplicationRecord {
        index,
        test_index,
        tau,
        covered,
        size,
    })
}

/// Runs all replications of a study.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let scenario = Scenario::new(cfg.scenario)?;
    let spec = cfg.scenario.regressor(cfg.covariate_set())?;
    let work = || -> Vec<Result<ReplicationRecord>> {
        (0..cfg.replications)
            .into_par_iter()
            .map(|r| replicate(cfg, &scenario, &spec, r))
            .collect()
    };
    let results = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidStudy(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut records = Vec::with_capacity(results.len());
    let mut failures = 0;
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) if cfg.skip_failures => {
                let _ = e;
                failures += 1;
            }
            Err(e) => {
                return Err(Error::Replication {
                    index,
                    source: Box::new(e),
                })
            }
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("successful replications"));
    }
    let hits = records.iter().filter(|r| r.covered).count();
    let (coverage, ci_lower, ci_upper) = coverage_ci(hits, records.len())?;
    let sizes: Vec<f64> = records.iter().map(|r| r.size).collect();
    let (size_q1, size_median, size_q3) = size_quartiles(&sizes)?;
    let theoretical_coverage = match (cfg.method, cfg.mode) {
        (Method::Cub, _) => None,
        (Method::Mpb, ModeKind::Split) => Some(theoretical_coverage(cfg.l, cfg.alpha)),
        (Method::Mpb, ModeKind::Smoothed) => Some(1.0 - cfg.alpha),
    };
    Ok(StudyReport {
        study: cfg.scenario.study,
        scenario: cfg.scenario.scenario,
        n: cfg.scenario.n,
        covariate_set: cfg.covariate_set(),
        modulation: cfg.modulation,
        method: cfg.method,
        mode: cfg.mode,
        alpha: cfg.alpha,
        l: cfg.l,
        replications: cfg.replications,
        failures,
        coverage,
        ci_lower,
        ci_upper,
        theoretical_coverage,
        size_q1,
        size_median,
        size_q3,
        records: cfg.keep_records.then_some(records),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round3(x: f64) -> f64 {
        (x * 1000.0).round() / 1000.0
    }

    #[test]
    fn coverage_ci_examples() {
        assert_eq!(coverage_ci(10, 10).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(coverage_ci(0, 10).unwrap(), (0.0, 0.0, 0.0));
        assert!(coverage_ci(0, 0).is_err());
        assert!(coverage_ci(11, 10).is_err());
        let (p, lo, hi) = coverage_ci(4470, 5000).unwrap();
        assert_eq!(round3(p), 0.894);
        assert_eq!((round3(lo), round3(hi)), (0.885, 0.903));
        // the tabulated interval [0.886, 0.903] is reproduced by 4471 and 4472 hits
        for hits in [4471, 4472] {
            let (p, lo, hi) = coverage_ci(hits, 5000).unwrap();
            assert_eq!((round3(p), round3(lo), round3(hi)), (0.894, 0.886, 0.903));
        }
    }

    #[test]
    fn coverage_ci_matches_formula() {
        for (hits, total) in [(1, 3), (900, 1000), (1810, 2000)] {
            let (p, lo, hi) = coverage_ci(hits, total).unwrap();
            let se = (p * (1.0 - p) / total as f64).sqrt();
            assert!((hi - lo - 2.0 * 1.96 * se).abs() < 1e-15);
            assert!(((lo + hi) / 2.0 - p).abs() < 1e-15);
        }
    }

    #[test]
    fn quartile_examples() {
        assert_eq!(size_quartiles(&[1.0, 2.0, 3.0]).unwrap(), (1.5, 2.0, 2.5));
        assert_eq!(size_quartiles(&[4.2; 7]).unwrap(), (4.2, 4.2, 4.2));
        assert_eq!(size_quartiles(&[5.0]).unwrap(), (5.0, 5.0, 5.0));
        assert!(size_quartiles(&[]).is_err());
    }

    #[test]
    fn quartiles_match_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for len in 1..40 {
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
            let mut s = v.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let oracle = |q: f64| {
                let pos = q * (len - 1) as f64;
                let i = pos as usize;
                if i + 1 >= len {
                    s[len - 1]
                } else {
                    s[i] * (1.0 - (pos - i as f64)) + s[i + 1] * (pos - i as f64)
                }
            };
            let (a, b, c) = size_quartiles(&v).unwrap();
            assert!((a - oracle(0.25)).abs() < 1e-12);
            assert!((b - oracle(0.5)).abs() < 1e-12);
            assert!((c - oracle(0.75)).abs() < 1e-12);
            assert!(a <= b && b <= c);
        }
    }

    #[test]
    fn theoretical_coverage_examples() {
        assert_eq!(theoretical_coverage(9, 0.10), 0.9);
        assert_eq!(theoretical_coverage(99, 0.10), 0.9);
        assert_eq!(theoretical_coverage(999, 0.10), 0.9);
        assert!((theoretical_coverage(10, 0.10) - 10.0 / 11.0).abs() < 1e-15);
        assert_eq!(theoretical_coverage(19, 0.25), 0.75);
    }

    fn small(n: usize, l: usize, reps: usize) -> StudyConfig {
        StudyConfig::new(ScenarioSpec::new(1, 1, n, 1), ModulationKind::Sigma, 0.10, l, reps, 2024)
    }

    #[test]
    fn noiseless_single_replication() {
        let mut cfg = small(20, 9, 1);
        cfg.scenario.error_scale = 0.0;
        cfg.modulation = ModulationKind::Const;
        cfg.keep_records = true;
        let rep = run_study(&cfg).unwrap();
        assert!(rep.coverage == 0.0 || rep.coverage == 1.0);
        let rec = &rep.records.as_ref().unwrap()[0];
        assert_eq!(rep.size_median, rec.size);
        assert!(rec.size >= 0.0 && rec.size < 1e-9);
        assert_eq!(rep.theoretical_coverage, Some(0.9));
    }

    #[test]
    fn thread_count_does_not_change_report() {
        let mut cfg = small(20, 9, 60);
        cfg.keep_records = true;
        cfg.threads = Some(1);
        let one = run_study(&cfg).unwrap();
        cfg.threads = Some(4);
        let four = run_study(&cfg).unwrap();
        assert_eq!(one, four);
        cfg.mode = ModeKind::Smoothed;
        cfg.l = 10;
        cfg.threads = Some(1);
        let a = run_study(&cfg).unwrap();
        cfg.threads = Some(3);
        assert_eq!(a, run_study(&cfg).unwrap());
        assert!(a.records.unwrap().iter().all(|r| r.tau.is_some()));
    }

    #[test]
    fn invalid_configs() {
        assert!(run_study(&small(20, 20, 10)).is_err());
        assert!(run_study(&small(20, 9, 0)).is_err());
        let mut cfg = small(20, 9, 10);
        cfg.alpha = 0.05;
        assert!(matches!(run_study(&cfg), Err(Error::InvalidLevel(_))));
        let mut cfg = small(20, 9, 10);
        cfg.method = Method::Cub;
        cfg.mode = ModeKind::Smoothed;
        assert!(run_study(&cfg).is_err());
        let mut cfg = small(20, 9, 10);
        cfg.covariate_set = Some(7);
        assert!(run_study(&cfg).is_err());
    }

    #[test]
    fn failures_carry_the_replication_index() {
        // m = 2 training curves cannot fit three coefficients
        let mut cfg = small(5, 3, 4);
        cfg.alpha = 0.25;
        cfg.covariate_set = Some(3);
        match run_study(&cfg) {
            Err(Error::Replication { index, .. }) => assert_eq!(index, 0),
            other => panic!("expected a replication error, got {other:?}"),
        }
        cfg.skip_failures = true;
        assert!(matches!(run_study(&cfg), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn replication_streams_differ() {
        let a: u64 = replication_rng(1, 0).random();
        let b: u64 = replication_rng(1, 1).random();
        let c: u64 = replication_rng(1, 0).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
