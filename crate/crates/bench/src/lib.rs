//! Fixtures shared by the benchmarks.

use mfband::data::{random_split, Dataset, Split};
use mfband::regress::RegressorSpec;
use mfband::simgen::{Scenario, ScenarioSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub scenario: Scenario,
    pub data: Dataset,
    pub split: Split,
    pub spec: RegressorSpec,
}

/// One simulated sample of `n` curves with about half held for calibration.
pub fn fixture(study: u8, scenario: u8, n: usize, seed: u64) -> Fixture {
    let scenario = Scenario::new(ScenarioSpec::new(study, scenario, n - 1, seed)).unwrap();
    let data = scenario.generate(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let split = random_split(n, n / 2 - 1, seed).unwrap();
    let spec = scenario.spec().regressor(scenario.spec().default_covariate_set()).unwrap();
    Fixture { scenario, data, split, spec }
}
