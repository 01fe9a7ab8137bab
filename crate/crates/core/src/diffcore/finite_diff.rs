use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::learner::ParamVector;

/// Central-difference gradient of `f` at `at`, one coordinate at a time.
pub fn finite_diff<F>(mut f: F, at: &ParamVector, eps: f64) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let mut probe = at.clone();
    let grad = central_differences(
        |x| {
            probe.data_mut().copy_from_slice(x);
            f(&probe)
        },
        at.data(),
        eps,
    )?;
    Ok(at.with_data(grad))
}

/// [`finite_diff`] over a plain tensor.
pub fn finite_diff_tensor<F>(mut f: F, at: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    let mut probe = at.clone();
    let grad = central_differences(
        |x| {
            probe.data_mut().copy_from_slice(x);
            f(&probe)
        },
        at.data(),
        eps,
    )?;
    Tensor::new(at.shape().to_vec(), grad)
}

fn central_differences<F>(mut f: F, at: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!("finite difference step must be positive, got {eps}")));
    }
    let mut x = at.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let orig = x[j];
        x[j] = orig + eps;
        let plus = f(&x)?;
        x[j] = orig - eps;
        let minus = f(&x)?;
        x[j] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { op: "finite_diff" });
        }
        out.push((plus - minus) / (2.0 * eps));
    }
    Ok(out)
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
