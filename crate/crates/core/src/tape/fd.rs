//! Central finite differences, the reference every hand-written backward
//! rule is checked against.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Jacobian of `f` at `x` by central differences.
///
/// Entry `(i, j)` is `(f(x + h e_j)_i - f(x - h e_j)_i) / 2h`; the result has
/// shape `[numel(f(x)), numel(x)]`.
pub fn finite_difference_jacobian<F>(mut f: F, x: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    if !(h > 0.0) {
        return Err(Error::contract(format!(
            "finite difference step {h} must be positive"
        )));
    }
    let n = x.numel();
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut probe = x.clone();
    let mut m = None;
    for j in 0..n {
        let orig = x.data()[j];
        probe.data_mut()[j] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[j] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[j] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "function output near coordinate {j} of point {:?}",
                x.data()
            )));
        }
        if plus.numel() != minus.numel() || m.is_some_and(|m| m != plus.numel()) {
            return Err(Error::shape("function output size changed between probes"));
        }
        m = Some(plus.numel());
        cols.push(
            plus.data()
                .iter()
                .zip(minus.data())
                .map(|(p, q)| (p - q) / (2.0 * h))
                .collect(),
        );
    }
    let m = match m {
        Some(m) => m,
        None => f(x)?.numel(),
    };
    let mut data = vec![0.0; m * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * n + j] = *v;
        }
    }
    Tensor::new(data, vec![m, n])
}

/// `u^T J` for a Jacobian of shape `[m, n]`.
pub fn vjp(jacobian: &Tensor, u: &[f64]) -> Vec<f64> {
    let (m, n) = (jacobian.shape()[0], jacobian.shape()[1]);
    let mut out = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            out[j] += u[i] * jacobian.data()[i * n + j];
        }
    }
    out
}

/// `u^T J` of `f` at `x` by central differences, shaped like `x`.
pub fn fd_vjp<F>(f: F, x: &Tensor, u: &Tensor, h: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let j = finite_difference_jacobian(f, x, h)?;
    if j.shape()[0] != u.numel() {
        return Err(Error::shape(format!(
            "cotangent has {} entries, output has {}",
            u.numel(),
            j.shape()[0]
        )));
    }
    Tensor::new(vjp(&j, u.data()), x.shape().to_vec())
}

/// `|a - b|_inf / max(1, |b|_inf)`.
pub fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
    diff / b.max_abs().max(1.0)
}
