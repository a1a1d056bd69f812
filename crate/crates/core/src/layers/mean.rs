//! Poincare midpoint and the iterative Frechet mean it replaces.

use crate::error::{Error, Result};
use crate::gyro::{raw, BallTensor, Curvature};
use crate::tape::{NodeId, Op, Tape};
use crate::tensor::{norm_sq, Tensor};

fn groups(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(format!("mean over axis -2 of {shape:?}")));
    }
    let n = shape[shape.len() - 1];
    let count = shape[shape.len() - 2];
    if count == 0 {
        return Err(Error::contract("mean of an empty batch"));
    }
    let g = shape[..shape.len() - 2].iter().product();
    Ok((g, count, n))
}

fn reduced_shape(shape: &[usize]) -> Vec<usize> {
    let mut s = shape[..shape.len() - 2].to_vec();
    s.push(shape[shape.len() - 1]);
    s
}

/// `sum lambda_i x_i / sum (lambda_i - 1)` per group, before halving.
fn doubled_midpoint(x: &Tensor, c: Curvature) -> Result<(Tensor, Vec<f64>)> {
    let (g, count, n) = groups(x.shape())?;
    let cv = c.get();
    let mut out = vec![0.0; g * n];
    let mut denoms = Vec::with_capacity(g);
    for gi in 0..g {
        let acc = &mut out[gi * n..(gi + 1) * n];
        let mut denom = 0.0;
        for i in 0..count {
            let row = x.row(gi * count + i);
            let lam = 2.0 / (1.0 - cv * norm_sq(row));
            denom += lam - 1.0;
            for (a, xi) in acc.iter_mut().zip(row) {
                *a += lam * xi;
            }
        }
        acc.iter_mut().for_each(|a| *a /= denom);
        denoms.push(denom);
    }
    Ok((Tensor::from_parts(out, vec![g, n]), denoms))
}

/// Midpoint over axis -2: `[..., N, n] -> [..., n]`.
pub(crate) fn midpoint_raw(x: &Tensor, c: Curvature) -> Result<Tensor> {
    let (m, _) = doubled_midpoint(x, c)?;
    let mu = raw::project(&raw::mobius_scalar_mul(0.5, &m, c), c);
    mu.reshape(&reduced_shape(x.shape()))
}

#[derive(Debug)]
struct MidpointOp {
    x: Tensor,
    c: Curvature,
}

impl Op for MidpointOp {
    fn name(&self) -> &'static str {
        "poincare_midpoint"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (g, count, n) = groups(self.x.shape())?;
        let cv = self.c.get();
        let (m, denoms) = doubled_midpoint(&self.x, self.c)?;
        let gmu = grad.reshape(&[g, n])?;
        let gm = raw::mobius_scalar_mul_backward(&gmu, 0.5, &m, self.c)?;
        let mut gx = vec![0.0; self.x.numel()];
        for gi in 0..g {
            let t = denoms[gi];
            let gm_row = gm.row(gi);
            // m = S / T
            let g_s: Vec<f64> = gm_row.iter().map(|v| v / t).collect();
            let g_t = -crate::tensor::dot(gm_row, m.row(gi)) / t;
            for i in 0..count {
                let r = gi * count + i;
                let row = self.x.row(r);
                let lam = 2.0 / (1.0 - cv * norm_sq(row));
                let g_lam = crate::tensor::dot(&g_s, row) + g_t;
                let k = g_lam * lam * lam * cv;
                for j in 0..n {
                    gx[r * n + j] = lam * g_s[j] + k * row[j];
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts(gx, self.x.shape().to_vec()))])
    }
    fn saved_bytes(&self) -> usize {
        self.x.bytes()
    }
}

/// Options for the Riemannian gradient descent computing a Frechet mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrechetOptions {
    pub step: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FrechetOptions {
    fn default() -> Self {
        Self {
            step: 0.5,
            tol: 1e-6,
            max_iter: 200,
        }
    }
}

/// Outcome of a Frechet-mean iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct FrechetInfo {
    pub iterations: usize,
    pub converged: bool,
    pub last_step: f64,
}

impl Tape {
    /// Poincare midpoint over axis -2, recorded as one node.
    pub fn poincare_midpoint(&mut self, x: NodeId, c: Curvature) -> Result<NodeId> {
        let xt = self.value(x).clone();
        let out = midpoint_raw(&xt, c)?;
        self.record(Box::new(MidpointOp { x: xt, c }), &[x], out)
    }

    /// Frechet mean of the rows of `x` (`[N, n]`), recording every iteration
    /// so gradients flow through the unrolled descent. Never fails on
    /// non-convergence; the caller inspects the returned info.
    pub fn frechet_mean(
        &mut self,
        x: NodeId,
        c: Curvature,
        opts: FrechetOptions,
    ) -> Result<(NodeId, FrechetInfo)> {
        let shape = self.shape(x).to_vec();
        let (g, count, n) = groups(&shape)?;
        if g != 1 {
            return Err(Error::shape(format!(
                "frechet_mean expects [N, n], got {shape:?}"
            )));
        }
        let first = self.gather_rows(x, vec![Some(0)])?;
        let mut mu = self.reshape(first, &[n])?;
        let mut info = FrechetInfo {
            iterations: 0,
            converged: false,
            last_step: f64::INFINITY,
        };
        while info.iterations < opts.max_iter {
            let mub = self.broadcast_to(mu, &[count, n])?;
            let logs = self.log_at(mub, x, c)?;
            let sum = self.sum_axis(logs, 0, false)?;
            let step = self.scale(sum, opts.step / count as f64)?;
            info.iterations += 1;
            info.last_step = norm_sq(self.value(step).data()).sqrt();
            if info.last_step < opts.tol {
                info.converged = true;
                break;
            }
            mu = self.exp_at(mu, step, c)?;
        }
        Ok((mu, info))
    }
}

/// Poincare midpoint of a batch `[N, n]` (or over axis -2 in general).
pub fn poincare_midpoint(batch: &BallTensor) -> Result<BallTensor> {
    let c = batch.curvature();
    Ok(BallTensor::from_raw(midpoint_raw(batch.coords(), c)?, c))
}

/// Frechet mean of a batch `[N, n]` by Riemannian gradient descent
/// `mu <- exp_mu(eta / N sum_i log_mu(x_i))`, started at the first point.
pub fn frechet_mean(batch: &BallTensor, opts: FrechetOptions) -> Result<(BallTensor, FrechetInfo)> {
    let c = batch.curvature();
    let x = batch.coords();
    let (g, count, n) = groups(x.shape())?;
    if g != 1 {
        return Err(Error::shape(format!(
            "frechet_mean expects [N, n], got {:?}",
            x.shape()
        )));
    }
    let mut mu = Tensor::from_parts(x.row(0).to_vec(), vec![1, n]);
    let mut last_step = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let mut step = vec![0.0; n];
        let mub = Tensor::from_parts(mu.row(0).repeat(count), vec![count, n]);
        let (logs, _) = raw::log_at(&mub, x, c)?;
        for i in 0..count {
            for (s, l) in step.iter_mut().zip(logs.row(i)) {
                *s += l;
            }
        }
        step.iter_mut().for_each(|s| *s *= opts.step / count as f64);
        last_step = norm_sq(&step).sqrt();
        if last_step < opts.tol {
            let info = FrechetInfo {
                iterations: it,
                converged: true,
                last_step,
            };
            return Ok((BallTensor::from_raw(mu.reshape(&[n])?, c), info));
        }
        let st = Tensor::from_parts(step, vec![1, n]);
        mu = raw::project(&raw::exp_at(&mu, &st, c)?, c);
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        last_step,
        last_iterate: mu.reshape(&[n])?,
    })
}

/// `sum_i d(x_i, mu)^2` for a batch `[N, n]` and a point `[n]`.
pub fn sum_sq_distance(batch: &BallTensor, mu: &Tensor) -> Result<f64> {
    let x = batch.coords();
    let n = x.last_dim();
    let count = x.rows();
    let mub = Tensor::from_parts(mu.data().repeat(count), vec![count, n]);
    let (d, _) = raw::distance(&mub, x, batch.curvature())?;
    Ok(d.data().iter().map(|v| v * v).sum())
}
