//! Order-statistic index arithmetic shared by calibration and modulation.

const SNAP: f64 = 1e-9;

/// Ceiling that treats values within rounding noise of an integer as that
/// integer, so `(l + 1) * (1 - alpha)` lands on the exact rank for decimal
/// levels such as 0.1.
pub(crate) fn ceil_snap(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= SNAP * x.abs().max(1.0) {
        r as i64
    } else {
        x.ceil() as i64
    }
}

pub(crate) fn floor_snap(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= SNAP * x.abs().max(1.0) {
        r as i64
    } else {
        x.floor() as i64
    }
}

/// 1-based rank `ceil((len + 1)(1 - alpha))` used by split calibration.
pub(crate) fn split_rank(len: usize, alpha: f64) -> i64 {
    ceil_snap((len as f64 + 1.0) * (1.0 - alpha))
}

/// 1-based rank `ceil(len + tau - (len + 1) alpha)` used by smoothed calibration.
pub(crate) fn smoothed_rank(len: usize, alpha: f64, tau: f64) -> i64 {
    ceil_snap(len as f64 + tau - (len as f64 + 1.0) * alpha)
}

/// Sorts a copy ascending. Inputs are finite by construction at every call site.
pub(crate) fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_for_decimal_levels() {
        assert_eq!(split_rank(9, 0.10), 9);
        assert_eq!(split_rank(99, 0.10), 90);
        assert_eq!(split_rank(999, 0.10), 900);
        assert_eq!(split_rank(19, 0.25), 15);
        assert_eq!(split_rank(22, 0.25), 18);
        assert_eq!(split_rank(4, 0.5), 3);
        assert_eq!(split_rank(10, 0.10), 10);
        assert_eq!(smoothed_rank(9, 0.10, 0.5), 9);
        assert_eq!(smoothed_rank(9, 0.10, 1.0), 9);
    }

    #[test]
    fn floor_snaps_products() {
        assert_eq!(floor_snap(10.0 * 0.1), 1);
        assert_eq!(floor_snap(11.0 * 0.1), 1);
        assert_eq!(floor_snap(100.0 * 0.1), 10);
        assert_eq!(floor_snap((0.1 + 0.2) * 10.0), 3);
        assert_eq!(floor_snap(0.7), 0);
    }
}
