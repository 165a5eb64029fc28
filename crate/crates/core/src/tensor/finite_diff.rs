use super::Tensor;
use crate::error::{Error, Result};

/// Central differences `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate.
pub fn finite_diff<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::contract("finite_diff", format!("step must be positive, got {}", h)));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric("finite_diff", format!("non-finite value at coordinate {}", i)));
        }
        out.push((up - down) / (2.0 * h));
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Outcome of comparing an analytic gradient with a numeric one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_abs_err: f64,
    /// Worst relative error among coordinates that fail the absolute floor.
    pub max_rel_err: f64,
    pub passed: bool,
}

/// A coordinate passes if `|a − n| ≤ abs_tol` or `|a − n| / max(|a|, |n|) ≤ rel_tol`.
pub fn compare_gradients(analytic: &Tensor, numeric: &Tensor, rel_tol: f64, abs_tol: f64) -> Result<GradCheck> {
    if analytic.shape() != numeric.shape() {
        return Err(Error::shape(
            "compare_gradients",
            format!("{:?} vs {:?}", analytic.shape(), numeric.shape()),
        ));
    }
    let mut report = GradCheck { max_abs_err: 0.0, max_rel_err: 0.0, passed: true };
    for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
        let err = (a - n).abs();
        report.max_abs_err = report.max_abs_err.max(err);
        if err <= abs_tol {
            continue;
        }
        let rel = err / a.abs().max(n.abs());
        report.max_rel_err = report.max_rel_err.max(rel);
        if rel > rel_tol {
            report.passed = false;
        }
    }
    Ok(report)
}
