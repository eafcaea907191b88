//! Discretized multivariate functional data.
//!
//! Every curve in a [`Dataset`] is sampled on the same [`Grid`]: one strictly
//! increasing set of points per component, each with a positive quadrature
//! weight. Suprema over a domain become maxima over grid points and integrals
//! become weighted sums.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sampling points and quadrature weights for one component domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentGrid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl ComponentGrid {
    /// Grid on the given points with trapezoid weights (endpoints half-weighted).
    pub fn new(points: Vec<f64>) -> Result<Self> {
        check_points(&points)?;
        let g = points.len();
        let mut weights = vec![0.0; g];
        for i in 0..g - 1 {
            let h = points[i + 1] - points[i];
            weights[i] += 0.5 * h;
            weights[i + 1] += 0.5 * h;
        }
        Ok(Self { points, weights })
    }

    /// Grid with caller-supplied quadrature weights.
    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        check_points(&points)?;
        if weights.len() != points.len() {
            return Err(Error::InvalidGrid(format!(
                "{} weights for {} points",
                weights.len(),
                points.len()
            )));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidGrid("weights must be positive".into()));
        }
        Ok(Self { points, weights })
    }

    /// `len` equispaced points on `[a, b]` with trapezoid weights.
    pub fn uniform(a: f64, b: f64, len: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::InvalidGrid(format!("bad interval [{a}, {b}]")));
        }
        if len < 2 {
            return Err(Error::InvalidGrid("need at least 2 points".into()));
        }
        let h = (b - a) / (len - 1) as f64;
        let mut points: Vec<f64> = (0..len).map(|i| a + h * i as f64).collect();
        points[len - 1] = b;
        Self::new(points)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Domain length `|T_j|`, the sum of the weights.
    pub fn length(&self) -> f64 {
        self.weights.iter().sum()
    }
}

fn check_points(points: &[f64]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::InvalidGrid("need at least 2 points".into()));
    }
    if points.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidGrid("non-finite grid point".into()));
    }
    if points.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid("points must be strictly increasing".into()));
    }
    Ok(())
}

/// Per-component grids of a multivariate functional domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    components: Vec<ComponentGrid>,
}

impl Grid {
    pub fn new(components: Vec<ComponentGrid>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidGrid("need at least one component".into()));
        }
        Ok(Self { components })
    }

    /// `p` components, each with `len` equispaced points on `[a, b]`.
    pub fn uniform(p: usize, a: f64, b: f64, len: usize) -> Result<Self> {
        let c = ComponentGrid::uniform(a, b, len)?;
        Self::new(vec![c; p])
    }

    pub fn components(&self) -> &[ComponentGrid] {
        &self.components
    }

    pub fn component(&self, j: usize) -> &ComponentGrid {
        &self.components[j]
    }

    /// Number of components `p`.
    pub fn p(&self) -> usize {
        self.components.len()
    }

    /// `sum_j |T_j|`.
    pub fn total_length(&self) -> f64 {
        self.components.iter().map(ComponentGrid::length).sum()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.components.iter().map(ComponentGrid::len).collect()
    }

    /// Checks that sampled functions have exactly this grid's shape.
    pub fn check_shape(&self, values: &[Vec<f64>]) -> Result<()> {
        if values.len() != self.p() {
            return Err(Error::ShapeMismatch(format!(
                "{} components, grid has {}",
                values.len(),
                self.p()
            )));
        }
        for (j, (v, c)) in values.iter().zip(&self.components).enumerate() {
            if v.len() != c.len() {
                return Err(Error::ShapeMismatch(format!(
                    "component {j} has {} values, grid has {}",
                    v.len(),
                    c.len()
                )));
            }
        }
        Ok(())
    }
}

/// One multivariate functional datum: `p` sampled component curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MFCurve {
    values: Vec<Vec<f64>>,
}

impl MFCurve {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("curve components"));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve"));
        }
        Ok(Self { values })
    }

    /// Curve conforming to `grid`.
    pub fn on_grid(grid: &Grid, values: Vec<Vec<f64>>) -> Result<Self> {
        grid.check_shape(&values)?;
        Self::new(values)
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        Self {
            values: grid.shape().into_iter().map(|g| vec![c; g]).collect(),
        }
    }

    pub fn zeros(grid: &Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    /// Builds a curve by evaluating `f(j, g)` at every component and grid index.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = grid
            .shape()
            .into_iter()
            .enumerate()
            .map(|(j, len)| (0..len).map(|g| f(j, g)).collect())
            .collect();
        Self { values }
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn component(&self, j: usize) -> &[f64] {
        &self.values[j]
    }

    pub fn p(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<Vec<f64>> {
        self.values
    }

    pub fn conforms(&self, grid: &Grid) -> Result<()> {
        grid.check_shape(&self.values)
    }

    /// Pointwise `self - other`.
    pub fn sub(&self, other: &MFCurve) -> Result<MFCurve> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn zip_with(&self, other: &MFCurve, f: impl Fn(f64, f64) -> f64) -> Result<MFCurve> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
            .collect();
        Ok(MFCurve { values })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> MFCurve {
        MFCurve {
            values: self
                .values
                .iter()
                .map(|c| c.iter().map(|v| f(*v)).collect())
                .collect(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.values.iter().map(Vec::len).collect()
    }

    /// Max over all components and grid points of `|y_j(t_g)|`.
    pub fn sup_abs(&self) -> f64 {
        sup_abs(self)
    }
}

/// Max over all components and grid points of the absolute value.
pub fn sup_abs(curve: &MFCurve) -> f64 {
    curve
        .values
        .iter()
        .flatten()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// `sum_j sum_g w_{jg} f_j(t_g)`: the discretized `sum_j int_{T_j} f_j`.
pub fn total_integral(fns: &[Vec<f64>], grid: &Grid) -> Result<f64> {
    grid.check_shape(fns)?;
    Ok(fns
        .iter()
        .zip(grid.components())
        .map(|(f, c)| f.iter().zip(c.weights()).map(|(v, w)| v * w).sum::<f64>())
        .sum())
}

/// Names of the scalar and functional covariates carried by each observation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateLayout {
    pub scalar_names: Vec<String>,
    pub functional_names: Vec<String>,
}

impl CovariateLayout {
    pub fn new(scalar_names: Vec<String>, functional_names: Vec<String>) -> Self {
        Self {
            scalar_names,
            functional_names,
        }
    }

    pub fn scalar_index(&self, name: &str) -> Option<usize> {
        self.scalar_names.iter().position(|n| n == name)
    }

    pub fn functional_index(&self, name: &str) -> Option<usize> {
        self.functional_names.iter().position(|n| n == name)
    }

    /// Checks a covariate record against this layout and the grid.
    pub fn check(&self, x: &Covariates, grid: &Grid) -> Result<()> {
        if x.scalar.len() != self.scalar_names.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} scalar covariates, layout has {}",
                x.scalar.len(),
                self.scalar_names.len()
            )));
        }
        if x.functional.len() != self.functional_names.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} functional covariates, layout has {}",
                x.functional.len(),
                self.functional_names.len()
            )));
        }
        if x.scalar.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar covariate"));
        }
        for f in &x.functional {
            f.conforms(grid)
                .map_err(|e| Error::LayoutMismatch(format!("functional covariate: {e}")))?;
        }
        Ok(())
    }
}

/// Covariates of one observation. Functional covariates are sampled on the
/// response grid, one curve per component.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub scalar: Vec<f64>,
    pub functional: Vec<MFCurve>,
}

impl Covariates {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn scalar(values: Vec<f64>) -> Self {
        Self {
            scalar: values,
            functional: Vec::new(),
        }
    }

    pub fn new(scalar: Vec<f64>, functional: Vec<MFCurve>) -> Self {
        Self { scalar, functional }
    }
}

/// A regression pair `(x_i, y_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Covariates,
    pub y: MFCurve,
}

impl Observation {
    pub fn new(x: Covariates, y: MFCurve) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    grid: Grid,
    layout: CovariateLayout,
    obs: Vec<Observation>,
}

impl Dataset {
    pub fn new(grid: Grid, layout: CovariateLayout, obs: Vec<Observation>) -> Result<Self> {
        if obs.len() < 2 {
            return Err(Error::InvalidSplit(format!(
                "dataset needs at least 2 observations, got {}",
                obs.len()
            )));
        }
        for o in &obs {
            o.y.conforms(&grid)?;
            layout.check(&o.x, &grid)?;
        }
        Ok(Self { grid, layout, obs })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn layout(&self) -> &CovariateLayout {
        &self.layout
    }

    pub fn observations(&self) -> &[Observation] {
        &self.obs
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.obs[i]
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Partition of `0..n` into a training set `I1` and a calibration set `I2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    train: Vec<usize>,
    calib: Vec<usize>,
}

impl Split {
    pub fn new(n: usize, mut train: Vec<usize>, mut calib: Vec<usize>) -> Result<Self> {
        if train.is_empty() || calib.is_empty() {
            return Err(Error::InvalidSplit(
                "training and calibration sets must be non-empty".into(),
            ));
        }
        let mut seen = vec![false; n];
        for &i in train.iter().chain(&calib) {
            if i >= n {
                return Err(Error::InvalidSplit(format!("index {i} out of range 0..{n}")));
            }
            if seen[i] {
                return Err(Error::InvalidSplit(format!("index {i} assigned twice")));
            }
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidSplit(format!("index {i} unassigned")));
        }
        train.sort_unstable();
        calib.sort_unstable();
        Ok(Self { train, calib })
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    pub fn calib(&self) -> &[usize] {
        &self.calib
    }

    /// Training set size `m`.
    pub fn m(&self) -> usize {
        self.train.len()
    }

    /// Calibration set size `l`.
    pub fn l(&self) -> usize {
        self.calib.len()
    }

    pub fn n(&self) -> usize {
        self.train.len() + self.calib.len()
    }
}

/// Uniformly random split of `0..n` with `l` calibration indices.
pub fn random_split(n: usize, l: usize, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_split_with(n, l, &mut rng)
}

/// As [`random_split`], drawing from a caller-owned generator.
pub fn random_split_with<R: rand::Rng + ?Sized>(n: usize, l: usize, rng: &mut R) -> Result<Split> {
    if l == 0 || l >= n {
        return Err(Error::InvalidSplit(format!(
            "calibration size {l} must be in 1..={}",
            n.saturating_sub(1)
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let calib = idx[..l].to_vec();
    let train = idx[l..].to_vec();
    Split::new(n, train, calib)
}

/// Deterministic parity split. Observation `i` carries the 1-based label
/// `i + 1`; odd labels go to training, even labels to calibration, and every
/// label in `force_train` is moved to training.
pub fn parity_split(n: usize, force_train: &[usize]) -> Result<Split> {
    if let Some(&bad) = force_train.iter().find(|&&d| d == 0 || d > n) {
        return Err(Error::InvalidSplit(format!("label {bad} outside 1..={n}")));
    }
    let (train, calib): (Vec<usize>, Vec<usize>) = (0..n)
        .partition(|&i| (i + 1) % 2 == 1 || force_train.contains(&(i + 1)));
    Split::new(n, train, calib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit2() -> Grid {
        Grid::uniform(2, 0.0, 1.0, 11).unwrap()
    }

    #[test]
    fn trapezoid_weights_sum_to_length() {
        let c = ComponentGrid::new(vec![0.0, 0.1, 0.5, 2.0]).unwrap();
        assert!((c.length() - 2.0).abs() < 1e-15);
        assert_eq!(c.weights()[0], 0.05);
        let u = ComponentGrid::uniform(-1.0, 3.0, 101).unwrap();
        assert!((u.length() - 4.0).abs() < 1e-13);
    }

    #[test]
    fn grid_rejects_bad_points() {
        assert!(ComponentGrid::new(vec![0.0]).is_err());
        assert!(ComponentGrid::new(vec![0.0, 0.0, 1.0]).is_err());
        assert!(ComponentGrid::new(vec![1.0, 0.5]).is_err());
        assert!(ComponentGrid::with_weights(vec![0.0, 1.0], vec![0.5, 0.0]).is_err());
        assert!(Grid::new(vec![]).is_err());
    }

    #[test]
    fn sup_abs_examples() {
        let c = MFCurve::new(vec![vec![1.0, -3.0], vec![2.0, 0.0]]).unwrap();
        assert_eq!(sup_abs(&c), 3.0);
        assert_eq!(sup_abs(&MFCurve::zeros(&unit2())), 0.0);
    }

    #[test]
    fn sup_abs_matches_exhaustive_scan() {
        let grid = Grid::uniform(2, 0.0, 1.0, 50).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let c = MFCurve::from_fn(&grid, |_, _| rng.random_range(-5.0..5.0));
            let mut best = 0.0_f64;
            for j in 0..2 {
                for g in 0..50 {
                    let a = c.component(j)[g].abs();
                    if a > best {
                        best = a;
                    }
                }
            }
            assert_eq!(c.sup_abs(), best);
        }
    }

    #[test]
    fn total_integral_examples() {
        let grid = unit2();
        let half = MFCurve::constant(&grid, 0.5);
        assert!((total_integral(half.values(), &grid).unwrap() - 1.0).abs() < 1e-14);
        let zero = MFCurve::zeros(&grid);
        assert_eq!(total_integral(zero.values(), &grid).unwrap(), 0.0);
        assert!(total_integral(&[vec![1.0; 3]], &grid).is_err());
    }

    #[test]
    fn total_integral_matches_refined_trapezoid() {
        // f_j(t) = a_j + b_j t is integrated exactly by the trapezoid rule, so
        // the coarse sum must agree with a 10x refined sum of the same lines.
        let coarse = Grid::uniform(2, 0.0, 1.0, 17).unwrap();
        let fine = Grid::uniform(2, 0.0, 1.0, 161).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let ab: Vec<(f64, f64)> = (0..2)
                .map(|_| (rng.random_range(1.0..3.0), rng.random_range(-1.0..1.0)))
                .collect();
            let eval = |g: &Grid| {
                MFCurve::from_fn(g, |j, i| {
                    let t = g.component(j).points()[i];
                    ab[j].0 + ab[j].1 * t
                })
            };
            let a = total_integral(eval(&coarse).values(), &coarse).unwrap();
            let b = total_integral(eval(&fine).values(), &fine).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.abs());
        }
    }

    #[test]
    fn total_integral_matches_panel_trapezoid() {
        let grid = Grid::new(vec![
            ComponentGrid::new(vec![0.0, 0.05, 0.3, 0.31, 0.8, 1.0]).unwrap(),
            ComponentGrid::uniform(0.0, 2.0, 40).unwrap(),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let f = MFCurve::from_fn(&grid, |_, _| rng.random_range(0.0..4.0));
            let mut panels = 0.0;
            for j in 0..2 {
                let t = grid.component(j).points();
                let v = f.component(j);
                for i in 0..t.len() - 1 {
                    panels += 0.5 * (t[i + 1] - t[i]) * (v[i] + v[i + 1]);
                }
            }
            let got = total_integral(f.values(), &grid).unwrap();
            assert!((got - panels).abs() <= 1e-12 * panels.abs());
        }
    }

    #[test]
    fn random_split_basic() {
        let s = random_split(2, 1, 0).unwrap();
        assert_eq!((s.m(), s.l()), (1, 1));
        assert_eq!(random_split(30, 7, 11).unwrap(), random_split(30, 7, 11).unwrap());
        assert!(random_split(5, 0, 1).is_err());
        assert!(random_split(5, 5, 1).is_err());
    }

    #[test]
    fn random_split_is_a_partition() {
        for n in 2..=30 {
            for l in 1..n {
                let s = random_split(n, l, (n * 100 + l) as u64).unwrap();
                let mut all: Vec<usize> = s.train().iter().chain(s.calib()).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
                assert_eq!(s.l(), l);
            }
        }
    }

    #[test]
    fn parity_split_case_study_shape() {
        let s = parity_split(41, &[20]).unwrap();
        assert_eq!((s.m(), s.l()), (22, 19));
        // day d sits at index d - 1
        assert!(s.train().contains(&19));
        for d in (2..=40).step_by(2).filter(|&d| d != 20) {
            assert!(s.calib().contains(&(d - 1)), "day {d}");
        }
        for d in (1..=41).step_by(2) {
            assert!(s.train().contains(&(d - 1)), "day {d}");
        }
        assert!(parity_split(41, &[42]).is_err());
    }

    #[test]
    fn split_validation() {
        assert!(Split::new(3, vec![0, 1], vec![1, 2]).is_err());
        assert!(Split::new(3, vec![0], vec![1]).is_err());
        assert!(Split::new(3, vec![], vec![0, 1, 2]).is_err());
        assert!(Split::new(3, vec![0, 5], vec![1]).is_err());
    }

    #[test]
    fn dataset_checks_shapes() {
        let grid = unit2();
        let layout = CovariateLayout::new(vec!["w".into()], vec![]);
        let ok = Observation::new(Covariates::scalar(vec![1.0]), MFCurve::zeros(&grid));
        let bad_x = Observation::new(Covariates::none(), MFCurve::zeros(&grid));
        assert!(Dataset::new(grid.clone(), layout.clone(), vec![ok.clone(), ok.clone()]).is_ok());
        assert!(Dataset::new(grid.clone(), layout.clone(), vec![ok.clone()]).is_err());
        assert!(matches!(
            Dataset::new(grid, layout, vec![ok, bad_x]),
            Err(Error::LayoutMismatch(_))
        ));
    }

    #[test]
    fn curves_reject_non_finite() {
        assert!(MFCurve::new(vec![vec![1.0, f64::NAN]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn total_integral_is_linear(
                f in proptest::collection::vec(0.0..10.0f64, 22),
                g in proptest::collection::vec(0.0..10.0f64, 22),
                a in 0.0..5.0f64,
                b in 0.0..5.0f64,
            ) {
                let grid = unit2();
                let as_fns = |v: &[f64]| vec![v[..11].to_vec(), v[11..].to_vec()];
                let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
                let lhs = total_integral(&as_fns(&combo), &grid).unwrap();
                let rhs = a * total_integral(&as_fns(&f), &grid).unwrap()
                    + b * total_integral(&as_fns(&g), &grid).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
            }

            #[test]
            fn sup_abs_is_absolutely_homogeneous(
                v in proptest::collection::vec(-10.0..10.0f64, 22),
                lambda in -20.0..20.0f64,
            ) {
                let c = MFCurve::new(vec![v[..11].to_vec(), v[11..].to_vec()]).unwrap();
                let scaled = c.map(|x| lambda * x);
                let lhs = scaled.sup_abs();
                let rhs = lambda.abs() * c.sup_abs();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
            }
        }
    }
}
