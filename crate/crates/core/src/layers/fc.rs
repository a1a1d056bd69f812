//! Poincare MLR scores and the fully connected layer built on them.
//!
//! For input `x` in `B_c^m`, weights `Z = [z_1 | ... | z_n]` and offsets `r`:
//!
//! ```text
//! alpha_k = sqrt(c) lambda_x <x, z_k/|z_k|> cosh(2 sqrt(c) r_k) - (lambda_x - 1) sinh(2 sqrt(c) r_k)
//! v_k     = 2/sqrt(c) |z_k| asinh(alpha_k)
//! w_k     = sinh(sqrt(c) v_k) / sqrt(c)
//! y       = w / (1 + sqrt(1 + c|w|^2))
//! ```
//!
//! A column with `|z_k| = 0` scores 0. Its weight gradient is the limit of
//! the `|z_k|`-clamped formula, so zero columns created by identity
//! initialization can still learn.

use crate::error::{Error, Result};
use crate::gyro::raw::{self, ZERO_NORM};
use crate::gyro::{BallTensor, Curvature};
use crate::tape::elementary::{matmul_nt, matmul_raw, matmul_tn, UnaryKind};
use crate::tape::{bytes_of, Mode, NodeId, Op, Tape};
use crate::tensor::{dot, norm_sq, Tensor};

use super::FcParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum FcOutput {
    Scores,
    Ball,
}

struct Columns {
    norm: Vec<f64>,
    /// Unit columns, row-major `[m, n]`; zero columns stay zero.
    unit: Vec<f64>,
    cosh: Vec<f64>,
    sinh: Vec<f64>,
}

fn columns(z: &Tensor, r: &Tensor, c: Curvature) -> Columns {
    let (m, n) = (z.shape()[0], z.shape()[1]);
    let zd = z.data();
    let mut norm = vec![0.0; n];
    for i in 0..m {
        for k in 0..n {
            norm[k] += zd[i * n + k] * zd[i * n + k];
        }
    }
    norm.iter_mut().for_each(|v| *v = v.sqrt());
    let mut unit = vec![0.0; m * n];
    for i in 0..m {
        for k in 0..n {
            if norm[k] >= ZERO_NORM {
                unit[i * n + k] = zd[i * n + k] / norm[k];
            }
        }
    }
    let two_sc = 2.0 * c.sqrt();
    let cosh = r.data().iter().map(|rk| (two_sc * rk).cosh()).collect();
    let sinh = r.data().iter().map(|rk| (two_sc * rk).sinh()).collect();
    Columns {
        norm,
        unit,
        cosh,
        sinh,
    }
}

struct Forward {
    cols: Columns,
    lambda: Vec<f64>,
    /// `<x_i, e_k>`, `[rows, n]`.
    proj: Vec<f64>,
    alpha: Vec<f64>,
    scores: Vec<f64>,
}

fn check_shapes(x: &Tensor, z: &Tensor, r: &Tensor) -> Result<()> {
    if z.ndim() != 2 || r.shape() != [z.shape()[1]] {
        return Err(Error::shape(format!(
            "fc parameters Z {:?}, r {:?}",
            z.shape(),
            r.shape()
        )));
    }
    if x.last_dim() != z.shape()[0] {
        return Err(Error::shape(format!(
            "fc input {:?} for fan-in {}",
            x.shape(),
            z.shape()[0]
        )));
    }
    Ok(())
}

fn forward(x: &Tensor, z: &Tensor, r: &Tensor, c: Curvature) -> Forward {
    let (m, n) = (z.shape()[0], z.shape()[1]);
    let rows = x.rows();
    let (cv, sc) = (c.get(), c.sqrt());
    let cols = columns(z, r, c);
    let lambda: Vec<f64> = (0..rows)
        .map(|i| 2.0 / (1.0 - cv * norm_sq(x.row(i))))
        .collect();
    let proj = matmul_raw(x.data(), &cols.unit, rows, m, n);
    let mut alpha = vec![0.0; rows * n];
    let mut scores = vec![0.0; rows * n];
    for i in 0..rows {
        let lam = lambda[i];
        for k in 0..n {
            let a = sc * lam * proj[i * n + k] * cols.cosh[k] - (lam - 1.0) * cols.sinh[k];
            alpha[i * n + k] = a;
            if cols.norm[k] >= ZERO_NORM {
                scores[i * n + k] = 2.0 / sc * cols.norm[k] * a.asinh();
            }
        }
    }
    Forward {
        cols,
        lambda,
        proj,
        alpha,
        scores,
    }
}

fn shrink(scores: &[f64], n: usize, c: Curvature) -> Vec<f64> {
    let (cv, sc) = (c.get(), c.sqrt());
    let mut y: Vec<f64> = scores.iter().map(|v| (sc * v).sinh() / sc).collect();
    for row in y.chunks_exact_mut(n.max(1)) {
        let s = (1.0 + cv * norm_sq(row)).sqrt();
        row.iter_mut().for_each(|w| *w /= 1.0 + s);
    }
    y
}

fn out_shape(x: &Tensor, n: usize) -> Vec<usize> {
    let mut s = x.shape().to_vec();
    *s.last_mut().unwrap() = n;
    s
}

/// Raw MLR scores `v_k(x)`, shape `[..., n]`.
pub(crate) fn scores_raw(x: &Tensor, z: &Tensor, r: &Tensor, c: Curvature) -> Result<Tensor> {
    check_shapes(x, z, r)?;
    let f = forward(x, z, r, c);
    Ok(Tensor::from_parts(f.scores, out_shape(x, z.shape()[1])))
}

/// Raw FC output, projected onto the ball.
pub(crate) fn fc_raw(x: &Tensor, z: &Tensor, r: &Tensor, c: Curvature) -> Result<Tensor> {
    check_shapes(x, z, r)?;
    let n = z.shape()[1];
    let f = forward(x, z, r, c);
    let y = Tensor::from_parts(shrink(&f.scores, n, c), out_shape(x, n));
    Ok(raw::project(&y, c))
}

/// Gradients with respect to `(x, Z, r)`.
pub(crate) fn backward_raw(
    g: &Tensor,
    x: &Tensor,
    z: &Tensor,
    r: &Tensor,
    c: Curvature,
    output: FcOutput,
) -> Result<(Tensor, Tensor, Tensor)> {
    check_shapes(x, z, r)?;
    let (m, n) = (z.shape()[0], z.shape()[1]);
    let rows = x.rows();
    if g.numel() != rows * n {
        return Err(Error::shape(format!("fc cotangent {:?}", g.shape())));
    }
    let (cv, sc) = (c.get(), c.sqrt());
    let f = forward(x, z, r, c);
    let cols = &f.cols;

    let mut g_v = g.data().to_vec();
    if output == FcOutput::Ball {
        let pre_proj = Tensor::from_parts(shrink(&f.scores, n, c), vec![rows, n]);
        let g_y = raw::project_backward(&Tensor::from_parts(g_v, vec![rows, n]), &pre_proj, c)?;
        g_v = g_y.into_vec();
        for i in 0..rows {
            let w: Vec<f64> = f.scores[i * n..(i + 1) * n]
                .iter()
                .map(|v| (sc * v).sinh() / sc)
                .collect();
            let s = (1.0 + cv * norm_sq(&w)).sqrt();
            let gy = &mut g_v[i * n..(i + 1) * n];
            let wg = dot(&w, gy);
            let k2 = cv * wg / (s * (1.0 + s) * (1.0 + s));
            for k in 0..n {
                let gw = gy[k] / (1.0 + s) - k2 * w[k];
                gy[k] = gw * (sc * f.scores[i * n + k]).cosh();
            }
        }
    }

    // Per-entry coefficient for the unit columns (or raw columns when zero).
    let mut coef = vec![0.0; rows * n];
    let mut g_lambda = vec![0.0; rows];
    let mut g_norm = vec![0.0; n];
    let mut g_r = vec![0.0; n];
    for i in 0..rows {
        let lam = f.lambda[i];
        for k in 0..n {
            let idx = i * n + k;
            let gv = g_v[idx];
            if gv == 0.0 {
                continue;
            }
            let a = f.alpha[idx];
            let root = (1.0 + a * a).sqrt();
            if cols.norm[k] < ZERO_NORM {
                coef[idx] = gv * 2.0 * lam * cols.cosh[k] / root;
                continue;
            }
            let g_alpha = gv * 2.0 / sc * cols.norm[k] / root;
            g_norm[k] += gv * 2.0 / sc * a.asinh();
            g_lambda[i] += g_alpha * (sc * cols.cosh[k] * f.proj[idx] - cols.sinh[k]);
            coef[idx] = g_alpha * sc * lam * cols.cosh[k];
            g_r[k] += g_alpha
                * (2.0 * cv * lam * f.proj[idx] * cols.sinh[k]
                    - 2.0 * sc * (lam - 1.0) * cols.cosh[k]);
        }
    }

    let mut g_x = matmul_nt(&coef, &cols.unit, rows, n, m);
    for i in 0..rows {
        let k = g_lambda[i] * f.lambda[i] * f.lambda[i] * cv;
        for (gx, xv) in g_x[i * m..(i + 1) * m].iter_mut().zip(x.row(i)) {
            *gx += k * xv;
        }
    }

    let g_e = matmul_tn(x.data(), &coef, rows, m, n);
    let mut g_z = vec![0.0; m * n];
    for k in 0..n {
        if cols.norm[k] < ZERO_NORM {
            for i in 0..m {
                g_z[i * n + k] = g_e[i * n + k];
            }
            continue;
        }
        let mut eg = 0.0;
        for i in 0..m {
            eg += cols.unit[i * n + k] * g_e[i * n + k];
        }
        for i in 0..m {
            let e = cols.unit[i * n + k];
            g_z[i * n + k] = (g_e[i * n + k] - e * eg) / cols.norm[k] + g_norm[k] * e;
        }
    }

    Ok((
        Tensor::from_parts(g_x, x.shape().to_vec()),
        Tensor::from_parts(g_z, z.shape().to_vec()),
        Tensor::from_parts(g_r, r.shape().to_vec()),
    ))
}

#[derive(Debug)]
struct FcOp {
    x: Tensor,
    z: Tensor,
    r: Tensor,
    c: Curvature,
    output: FcOutput,
}

impl Op for FcOp {
    fn name(&self) -> &'static str {
        match self.output {
            FcOutput::Scores => "mlr_scores",
            FcOutput::Ball => "poincare_fc",
        }
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (gx, gz, gr) = backward_raw(grad, &self.x, &self.z, &self.r, self.c, self.output)?;
        Ok(vec![Some(gx), Some(gz), Some(gr)])
    }
    fn saved_bytes(&self) -> usize {
        bytes_of(&[&self.x, &self.z, &self.r])
    }
}

impl Tape {
    fn fc_node(
        &mut self,
        x: NodeId,
        z: NodeId,
        r: NodeId,
        c: Curvature,
        output: FcOutput,
    ) -> Result<NodeId> {
        let (xt, zt, rt) = (
            self.value(x).clone(),
            self.value(z).clone(),
            self.value(r).clone(),
        );
        let out = match output {
            FcOutput::Scores => scores_raw(&xt, &zt, &rt, c)?,
            FcOutput::Ball => fc_raw(&xt, &zt, &rt, c)?,
        };
        let op = FcOp {
            x: xt,
            z: zt,
            r: rt,
            c,
            output,
        };
        self.record(Box::new(op), &[x, z, r], out)
    }

    /// MLR scores of `x` (`[rows, m]`) against `Z` (`[m, n]`) and `r` (`[n]`).
    pub fn mlr_scores(&mut self, x: NodeId, z: NodeId, r: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => self.fc_node(x, z, r, c, FcOutput::Scores),
            Mode::Naive => self.naive_scores(x, z, r, c),
        }
    }

    /// Poincare fully connected layer.
    pub fn poincare_fc(&mut self, x: NodeId, z: NodeId, r: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => self.fc_node(x, z, r, c, FcOutput::Ball),
            Mode::Naive => {
                let (cv, sc) = (c.get(), c.sqrt());
                let v = self.naive_scores(x, z, r, c)?;
                let sv = self.scale(v, sc)?;
                let w = self.unary(UnaryKind::Sinh, sv)?;
                let w = self.scale(w, 1.0 / sc)?;
                let ww = self.sq_norm_last(w)?;
                let s = self.scale(ww, cv)?;
                let s = self.add_scalar(s, 1.0)?;
                let s = self.sqrt(s)?;
                let s = self.add_scalar(s, 1.0)?;
                let y = self.div(w, s)?;
                self.project(y, c)
            }
        }
    }

    fn naive_scores(&mut self, x: NodeId, z: NodeId, r: NodeId, c: Curvature) -> Result<NodeId> {
        let sc = c.sqrt();
        let zz = self.unary(UnaryKind::Square, z)?;
        let zn = self.sum_axis(zz, 0, false)?;
        let zn = self.clamp_min(zn, ZERO_NORM * ZERO_NORM)?;
        let zn = self.sqrt(zn)?;
        let e = self.div(z, zn)?;
        let p = self.matmul(x, e)?;
        let lam = self.conformal_factor(x, c)?;
        let r2 = self.scale(r, 2.0 * sc)?;
        let ch = self.unary(UnaryKind::Cosh, r2)?;
        let sh = self.unary(UnaryKind::Sinh, r2)?;
        let lp = self.mul(lam, p)?;
        let t1 = self.mul(lp, ch)?;
        let t1 = self.scale(t1, sc)?;
        let lm1 = self.add_scalar(lam, -1.0)?;
        let t2 = self.mul(lm1, sh)?;
        let alpha = self.sub(t1, t2)?;
        let asinh = self.unary(UnaryKind::Asinh, alpha)?;
        let v = self.mul(zn, asinh)?;
        self.scale(v, 2.0 / sc)
    }
}

/// MLR scores for a batch of points.
pub fn mlr_scores(x: &BallTensor, params: &FcParams) -> Result<Tensor> {
    scores_raw(x.coords(), &params.z, &params.r, x.curvature())
}

/// The Poincare FC layer `F^c(x; Z, r)`.
pub fn fc_forward(x: &BallTensor, params: &FcParams) -> Result<BallTensor> {
    let c = x.curvature();
    Ok(BallTensor::from_raw(
        fc_raw(x.coords(), &params.z, &params.r, c)?,
        c,
    ))
}
