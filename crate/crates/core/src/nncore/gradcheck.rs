//! Central finite-difference gradient checking.

use serde::Serialize;

use super::tensor::Tensor;

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-3;

/// Denominator floor of the relative error. Gradient entries smaller than
/// this are compared on an absolute scale, since the O(h²) truncation error
/// of the stencil does not shrink with the gradient.
pub const ABS_FLOOR: f64 = 1e-3;

/// A scalar function with a claimed analytic gradient.
pub trait Differentiable {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    /// Activation pattern of any piecewise-linear units at `x`. When the
    /// pattern differs between `x - h` and `x + h` the coordinate straddles
    /// a kink and is skipped.
    fn pattern(&self, _x: &[f64]) -> Option<Vec<bool>> {
        None
    }
}

/// Adapter for closure pairs.
pub struct FnPair<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Differentiable for FnPair<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest error.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because the stencil crossed a kink.
    pub skipped: usize,
    pub failures: Vec<usize>,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
    (analytic - numeric).abs() / denom
}

pub fn grad_check(f: &impl Differentiable, point: &Tensor, tol: f64) -> GradCheckReport {
    grad_check_with_step(f, point.data(), tol, FD_STEP)
}

pub fn grad_check_with_step(
    f: &impl Differentiable,
    point: &[f64],
    tol: f64,
    step: f64,
) -> GradCheckReport {
    assert!(tol > 0.0 && step > 0.0);
    let analytic = f.gradient(point);
    assert_eq!(analytic.len(), point.len(), "gradient length");
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
        failures: Vec::new(),
        passed: true,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f.value(&x);
        let pp = f.pattern(&x);
        x[i] = orig - step;
        let fm = f.value(&x);
        let pm = f.pattern(&x);
        x[i] = orig;
        if pp != pm {
            report.skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if err > report.max_rel_error || !err.is_finite() {
            report.max_rel_error = if err.is_finite() { err } else { f64::INFINITY };
            report.worst_index = Some(i);
        }
        if err.is_nan() || err > tol {
            report.failures.push(i);
        }
    }
    report.passed = report.failures.is_empty() && report.checked > 0;
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm() {
        let f = FnPair {
            value: |x: &[f64]| 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
            gradient: |x: &[f64]| x.to_vec(),
        };
        let p = Tensor::vector(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let r = grad_check(&f, &p, 1e-10);
        assert!(r.passed, "{r:?}");
        // quadratic: central differences are exact up to rounding
        assert!(r.max_rel_error < 1e-10);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let f = FnPair {
            value: |x: &[f64]| x.iter().map(|v| v.sin()).sum::<f64>(),
            gradient: |x: &[f64]| {
                let mut g: Vec<f64> = x.iter().map(|v| v.cos()).collect();
                g[1] *= 1.01;
                g
            },
        };
        let p = Tensor::vector(vec![0.2, 0.4, 0.6]).unwrap();
        let r = grad_check(&f, &p, 1e-4);
        assert!(!r.passed);
        assert_eq!(r.failures, vec![1]);
    }

    #[test]
    fn kink_crossings_are_skipped() {
        struct Abs;
        impl Differentiable for Abs {
            fn value(&self, x: &[f64]) -> f64 {
                x.iter().map(|v| v.abs()).sum()
            }
            fn gradient(&self, x: &[f64]) -> Vec<f64> {
                x.iter().map(|v| if *v > 0.0 { 1.0 } else { -1.0 }).collect()
            }
            fn pattern(&self, x: &[f64]) -> Option<Vec<bool>> {
                Some(x.iter().map(|v| *v > 0.0).collect())
            }
        }
        let r = grad_check_with_step(&Abs, &[1e-4, 2.0], 1e-6, 1e-3);
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
        assert!(r.passed);
    }
}
