/// Central-difference step.
pub const FD_STEP: f64 = 1e-3;

/// Relative errors are taken against `max(|analytic|, |numeric|, floor)`.
/// Without a floor, coordinates whose true gradient is near zero would be
/// judged on the O(h²) truncation term alone.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-2;

/// Largest fraction of coordinates that may straddle a kink before the
/// check reports failure.
pub const MAX_SKIPPED_FRACTION: f64 = 0.05;

/// A scalar function evaluation plus the branch taken at every
/// piecewise-linear unit (relu, softshrink, |·|).
///
/// When the branch pattern at `x + h` differs from the one at `x - h` the
/// perturbation crossed a non-differentiable point and the central
/// difference for that coordinate is meaningless, so it is skipped.
#[derive(Debug, Clone, Default)]
pub struct Probe {
    pub value: f64,
    pub branches: Vec<i8>,
}

impl Probe {
    pub fn smooth(value: f64) -> Self {
        Probe { value, branches: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `f` around `params`.
pub fn finite_difference_check(
    mut f: impl FnMut(&[f64]) -> Probe,
    params: &[f64],
    analytic: &[f64],
    tolerance: f64,
) -> GradCheckReport {
    assert_eq!(params.len(), analytic.len(), "one analytic derivative per parameter");
    let mut x = params.to_vec();
    let mut worst = 0.0f64;
    let mut worst_index = None;
    let mut checked = 0;
    let mut skipped = 0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let plus = f(&x);
        x[i] = orig - FD_STEP;
        let minus = f(&x);
        x[i] = orig;
        if plus.branches != minus.branches {
            skipped += 1;
            continue;
        }
        checked += 1;
        let numeric = (plus.value - minus.value) / (2.0 * FD_STEP);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if !(rel <= worst) {
            worst = rel;
            worst_index = Some(i);
        }
    }
    let total = x.len().max(1) as f64;
    let passed = worst <= tolerance && (skipped as f64) / total <= MAX_SKIPPED_FRACTION;
    GradCheckReport {
        max_relative_error: worst,
        worst_index,
        checked,
        skipped,
        tolerance,
        passed,
    }
}
