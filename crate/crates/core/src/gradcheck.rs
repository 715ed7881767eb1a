//! Central finite-difference verification of analytic gradients.

/// One evaluation of a scalar function at a point.
#[derive(Debug, Clone)]
pub struct Probe {
    pub value: f64,
    /// Analytic gradient per input, same layout as the inputs.
    pub gradients: Vec<Vec<f64>>,
    /// Piecewise-linear branch fingerprint; see `Tape::regime`. Use 0 for smooth functions.
    pub regime: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Input coordinate (input index, entry) where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose ±h perturbation crossed a ReLU or L1 kink.
    pub skipped_at_kinks: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < self.tolerance && self.checked > 0
    }
}

/// Relative error with a floor on the denominator so exact zeros compare sanely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares `probe`'s analytic gradients against central differences of its
/// value at every input entry (or every `stride`-th entry when `stride > 1`).
pub fn finite_diff_check<F>(inputs: &[Vec<f64>], h: f64, tol: f64, mut probe: F) -> GradCheckReport
where
    F: FnMut(&[Vec<f64>]) -> Probe,
{
    finite_diff_check_strided(inputs, h, tol, 1, &mut probe)
}

pub fn finite_diff_check_strided<F>(
    inputs: &[Vec<f64>],
    h: f64,
    tol: f64,
    stride: usize,
    probe: &mut F,
) -> GradCheckReport
where
    F: FnMut(&[Vec<f64>]) -> Probe,
{
    let base = probe(inputs);
    assert_eq!(base.gradients.len(), inputs.len(), "one gradient per input");
    let mut point: Vec<Vec<f64>> = inputs.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
        skipped_at_kinks: 0,
        tolerance: tol,
    };
    for (i, input) in inputs.iter().enumerate() {
        for j in (0..input.len()).step_by(stride.max(1)) {
            let orig = input[j];
            point[i][j] = orig + h;
            let plus = probe(&point);
            point[i][j] = orig - h;
            let minus = probe(&point);
            point[i][j] = orig;
            if plus.regime != base.regime || minus.regime != base.regime {
                report.skipped_at_kinks += 1;
                continue;
            }
            let numeric = (plus.value - minus.value) / (2.0 * h);
            let err = relative_error(base.gradients[i][j], numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((i, j));
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_has_exact_gradient() {
        let x = vec![vec![0.3, -1.2, 4.0, 0.0]];
        let report = finite_diff_check(&x, 1e-5, 1e-6, |p| Probe {
            value: p[0].iter().map(|v| 3.0 * v).sum(),
            gradients: vec![vec![3.0; p[0].len()]],
            regime: 0,
        });
        assert!(report.passed(), "{report:?}");
        assert!(report.max_relative_error < 1e-8);
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = vec![vec![1.0, 2.0]];
        let report = finite_diff_check(&x, 1e-5, 1e-3, |p| Probe {
            value: p[0].iter().map(|v| v * v).sum(),
            gradients: vec![p[0].iter().map(|v| 3.0 * v).collect()],
            regime: 0,
        });
        assert!(!report.passed());
    }
}
