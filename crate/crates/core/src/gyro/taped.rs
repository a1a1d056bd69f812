//! Tape recording of the gyrovector primitives.
//!
//! In [`Mode::Fused`] each primitive is a single node whose backward is the
//! matching hand-derived rule in [`raw`]. In [`Mode::Naive`] the same
//! formula is spelled out in elementary nodes, which is what a generic
//! autodiff engine would record.

use crate::error::Result;
use crate::tape::{bytes_of, Mode, NodeId, Op, Tape};
use crate::tensor::Tensor;

use super::raw::{self, MobiusScalars};
use super::Curvature;

/// Norm floor used by the naive compositions.
const NAIVE_NORM_FLOOR: f64 = 1e-15;

/// Projects a manifold-valued output. The unprojected value is kept only
/// when some row was actually clamped, since backward needs it then.
fn projected(out: Tensor, c: Curvature) -> (Tensor, Option<Tensor>) {
    if raw::all_inside(&out, c) {
        (out, None)
    } else {
        (raw::project(&out, c), Some(out))
    }
}

fn through_projection(grad: &Tensor, pre: &Option<Tensor>, c: Curvature) -> Result<Tensor> {
    match pre {
        Some(p) => raw::project_backward(grad, p, c),
        None => Ok(grad.clone()),
    }
}

fn opt_bytes(t: &Option<Tensor>) -> usize {
    t.as_ref().map_or(0, Tensor::bytes)
}

#[derive(Debug)]
struct MobiusAddOp {
    x: Tensor,
    y: Tensor,
    scalars: Vec<MobiusScalars>,
    c: Curvature,
    pre: Option<Tensor>,
}

impl Op for MobiusAddOp {
    fn name(&self) -> &'static str {
        "mobius_add"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let grad = through_projection(grad, &self.pre, self.c)?;
        let (gx, gy) = raw::mobius_add_backward(&grad, &self.x, &self.y, &self.scalars, self.c)?;
        Ok(vec![Some(gx), Some(gy)])
    }
    fn saved_bytes(&self) -> usize {
        bytes_of(&[&self.x, &self.y])
            + std::mem::size_of_val(self.scalars.as_slice())
            + opt_bytes(&self.pre)
    }
}

#[derive(Debug)]
struct Exp0Op {
    v: Tensor,
    c: Curvature,
    pre: Option<Tensor>,
}

impl Op for Exp0Op {
    fn name(&self) -> &'static str {
        "exp0"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let grad = through_projection(grad, &self.pre, self.c)?;
        Ok(vec![Some(raw::exp0_backward(&grad, &self.v, self.c)?)])
    }
    fn saved_bytes(&self) -> usize {
        self.v.bytes() + opt_bytes(&self.pre)
    }
}

#[derive(Debug)]
struct Log0Op {
    y: Tensor,
    c: Curvature,
}

impl Op for Log0Op {
    fn name(&self) -> &'static str {
        "log0"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(raw::log0_backward(grad, &self.y, self.c)?)])
    }
    fn saved_bytes(&self) -> usize {
        self.y.bytes()
    }
}

#[derive(Debug)]
struct ExpAtOp {
    x: Tensor,
    v: Tensor,
    z: Tensor,
    c: Curvature,
    pre: Option<Tensor>,
}

impl Op for ExpAtOp {
    fn name(&self) -> &'static str {
        "exp_at"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let grad = through_projection(grad, &self.pre, self.c)?;
        let (gx, gv) = raw::exp_at_backward(&grad, &self.x, &self.v, &self.z, self.c)?;
        Ok(vec![Some(gx), Some(gv)])
    }
    fn saved_bytes(&self) -> usize {
        bytes_of(&[&self.x, &self.v, &self.z]) + opt_bytes(&self.pre)
    }
}

#[derive(Debug)]
struct LogAtOp {
    x: Tensor,
    y: Tensor,
    z: Tensor,
    c: Curvature,
}

impl Op for LogAtOp {
    fn name(&self) -> &'static str {
        "log_at"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (gx, gy) = raw::log_at_backward(grad, &self.x, &self.y, &self.z, self.c)?;
        Ok(vec![Some(gx), Some(gy)])
    }
    fn saved_bytes(&self) -> usize {
        bytes_of(&[&self.x, &self.y, &self.z])
    }
}

#[derive(Debug)]
struct ConformalOp {
    x: Tensor,
    c: Curvature,
}

impl Op for ConformalOp {
    fn name(&self) -> &'static str {
        "conformal_factor"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(raw::conformal_factor_backward(
            grad, &self.x, self.c,
        )?)])
    }
    fn saved_bytes(&self) -> usize {
        self.x.bytes()
    }
}

#[derive(Debug)]
struct ProjectOp {
    x: Tensor,
    c: Curvature,
}

impl Op for ProjectOp {
    fn name(&self) -> &'static str {
        "project"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(raw::project_backward(grad, &self.x, self.c)?)])
    }
    fn saved_bytes(&self) -> usize {
        self.x.bytes()
    }
}

#[derive(Debug)]
struct DistanceOp {
    x: Tensor,
    y: Tensor,
    z: Tensor,
    c: Curvature,
}

impl Op for DistanceOp {
    fn name(&self) -> &'static str {
        "distance"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (gx, gy) = raw::distance_backward(grad, &self.x, &self.y, &self.z, self.c)?;
        Ok(vec![Some(gx), Some(gy)])
    }
    fn saved_bytes(&self) -> usize {
        bytes_of(&[&self.x, &self.y, &self.z])
    }
}

#[derive(Debug)]
struct GyrationOp {
    a: Tensor,
    b: Tensor,
    w: Tensor,
    c: Curvature,
}

impl Op for GyrationOp {
    fn name(&self) -> &'static str {
        "gyration"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (ga, gb, gw) = raw::gyration_backward(grad, &self.a, &self.b, &self.w, self.c)?;
        Ok(vec![Some(ga), Some(gb), Some(gw)])
    }
    fn saved_bytes(&self) -> usize {
        bytes_of(&[&self.a, &self.b, &self.w])
    }
}

#[derive(Debug)]
struct TransportOp {
    x: Tensor,
    y: Tensor,
    v: Tensor,
    c: Curvature,
}

impl Op for TransportOp {
    fn name(&self) -> &'static str {
        "parallel_transport"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (gx, gy, gv) =
            raw::parallel_transport_backward(grad, &self.x, &self.y, &self.v, self.c)?;
        Ok(vec![Some(gx), Some(gy), Some(gv)])
    }
    fn saved_bytes(&self) -> usize {
        bytes_of(&[&self.x, &self.y, &self.v])
    }
}

#[derive(Debug)]
struct ScalarMulOp {
    r: f64,
    x: Tensor,
    c: Curvature,
    pre: Option<Tensor>,
}

impl Op for ScalarMulOp {
    fn name(&self) -> &'static str {
        "mobius_scalar_mul"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let grad = through_projection(grad, &self.pre, self.c)?;
        Ok(vec![Some(raw::mobius_scalar_mul_backward(
            &grad, self.r, &self.x, self.c,
        )?)])
    }
    fn saved_bytes(&self) -> usize {
        self.x.bytes() + opt_bytes(&self.pre)
    }
}

impl Tape {
    fn dot_last(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let p = self.mul(a, b)?;
        let axis = self.value(p).ndim() - 1;
        self.sum_axis(p, axis, true)
    }

    pub fn mobius_add(&mut self, x: NodeId, y: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let (xt, yt) = (self.value(x).clone(), self.value(y).clone());
                let (out, scalars) = raw::mobius_add(&xt, &yt, c)?;
                let (out, pre) = projected(out, c);
                let op = MobiusAddOp {
                    x: xt,
                    y: yt,
                    scalars,
                    c,
                    pre,
                };
                self.record(Box::new(op), &[x, y], out)
            }
            Mode::Naive => {
                let cv = c.get();
                let xy = self.dot_last(x, y)?;
                let xx = self.sq_norm_last(x)?;
                let yy = self.sq_norm_last(y)?;
                let two_c_xy = self.scale(xy, 2.0 * cv)?;
                let c_yy = self.scale(yy, cv)?;
                let a = self.add(two_c_xy, c_yy)?;
                let a = self.add_scalar(a, 1.0)?;
                let b = self.scale(xx, -cv)?;
                let b = self.add_scalar(b, 1.0)?;
                let xxyy = self.mul(xx, yy)?;
                let xxyy = self.scale(xxyy, cv * cv)?;
                let d = self.add(two_c_xy, xxyy)?;
                let d = self.add_scalar(d, 1.0)?;
                let ax = self.mul(a, x)?;
                let by = self.mul(b, y)?;
                let num = self.add(ax, by)?;
                let out = self.div(num, d)?;
                self.project(out, c)
            }
        }
    }

    pub fn exp0(&mut self, v: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let vt = self.value(v).clone();
                let (out, pre) = projected(raw::exp0(&vt, c), c);
                self.record(Box::new(Exp0Op { v: vt, c, pre }), &[v], out)
            }
            Mode::Naive => {
                let sc = c.sqrt();
                let n = self.norm_last(v, NAIVE_NORM_FLOOR)?;
                let sn = self.scale(n, sc)?;
                let t = self.tanh(sn)?;
                let k = self.div(t, sn)?;
                let out = self.mul(k, v)?;
                self.project(out, c)
            }
        }
    }

    pub fn log0(&mut self, y: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let yt = self.value(y).clone();
                let out = raw::log0(&yt, c);
                self.record(Box::new(Log0Op { y: yt, c }), &[y], out)
            }
            Mode::Naive => {
                let sc = c.sqrt();
                let n = self.norm_last(y, NAIVE_NORM_FLOOR)?;
                let sn = self.scale(n, sc)?;
                let at = self.artanh(sn)?;
                let k = self.div(at, sn)?;
                self.mul(k, y)
            }
        }
    }

    pub fn conformal_factor(&mut self, x: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let xt = self.value(x).clone();
                let out = raw::conformal_factor(&xt, c);
                self.record(Box::new(ConformalOp { x: xt, c }), &[x], out)
            }
            Mode::Naive => {
                let xx = self.sq_norm_last(x)?;
                let b = self.scale(xx, -c.get())?;
                let b = self.add_scalar(b, 1.0)?;
                let r = self.unary(crate::tape::elementary::UnaryKind::Recip, b)?;
                self.scale(r, 2.0)
            }
        }
    }

    pub fn exp_at(&mut self, x: NodeId, v: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let (xt, vt) = (self.value(x).clone(), self.value(v).clone());
                let z = raw::exp_at_z(&xt, &vt, c)?;
                let (out, _) = raw::mobius_add(&xt, &z, c)?;
                let (out, pre) = projected(out, c);
                let op = ExpAtOp {
                    x: xt,
                    v: vt,
                    z,
                    c,
                    pre,
                };
                self.record(Box::new(op), &[x, v], out)
            }
            Mode::Naive => {
                let sc = c.sqrt();
                let lam = self.conformal_factor(x, c)?;
                let n = self.norm_last(v, NAIVE_NORM_FLOOR)?;
                let sn = self.scale(n, sc)?;
                let arg = self.mul(lam, sn)?;
                let arg = self.scale(arg, 0.5)?;
                let t = self.tanh(arg)?;
                let k = self.div(t, sn)?;
                let z = self.mul(k, v)?;
                self.mobius_add(x, z, c)
            }
        }
    }

    pub fn log_at(&mut self, x: NodeId, y: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let (xt, yt) = (self.value(x).clone(), self.value(y).clone());
                let (out, z) = raw::log_at(&xt, &yt, c)?;
                let op = LogAtOp { x: xt, y: yt, z, c };
                self.record(Box::new(op), &[x, y], out)
            }
            Mode::Naive => {
                let sc = c.sqrt();
                let neg = self.neg(x)?;
                let z = self.mobius_add(neg, y, c)?;
                let n = self.norm_last(z, NAIVE_NORM_FLOOR)?;
                let sn = self.scale(n, sc)?;
                let at = self.artanh(sn)?;
                let lam = self.conformal_factor(x, c)?;
                let denom = self.mul(lam, sn)?;
                let k = self.div(at, denom)?;
                let k = self.scale(k, 2.0)?;
                self.mul(k, z)
            }
        }
    }

    pub fn project(&mut self, x: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let xt = self.value(x).clone();
                let out = raw::project(&xt, c);
                self.record(Box::new(ProjectOp { x: xt, c }), &[x], out)
            }
            Mode::Naive => {
                let rmax = c.max_norm();
                let n = self.norm_last(x, NAIVE_NORM_FLOOR)?;
                let n = self.clamp_min(n, rmax)?;
                let k = self.unary(crate::tape::elementary::UnaryKind::Recip, n)?;
                let k = self.scale(k, rmax)?;
                self.mul(k, x)
            }
        }
    }

    /// Geodesic distance between paired rows; shape `[..., 1]`.
    pub fn distance(&mut self, x: NodeId, y: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let (xt, yt) = (self.value(x).clone(), self.value(y).clone());
                let (out, z) = raw::distance(&xt, &yt, c)?;
                let op = DistanceOp { x: xt, y: yt, z, c };
                self.record(Box::new(op), &[x, y], out)
            }
            Mode::Naive => {
                let sc = c.sqrt();
                let neg = self.neg(x)?;
                let z = self.mobius_add(neg, y, c)?;
                let n = self.norm_last(z, NAIVE_NORM_FLOOR)?;
                let sn = self.scale(n, sc)?;
                let at = self.artanh(sn)?;
                self.scale(at, 2.0 / sc)
            }
        }
    }

    /// `gyr[a, b] w`
    pub fn gyration(&mut self, a: NodeId, b: NodeId, w: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let (at, bt, wt) = (
                    self.value(a).clone(),
                    self.value(b).clone(),
                    self.value(w).clone(),
                );
                let out = raw::gyration(&at, &bt, &wt, c)?;
                let op = GyrationOp {
                    a: at,
                    b: bt,
                    w: wt,
                    c,
                };
                self.record(Box::new(op), &[a, b, w], out)
            }
            Mode::Naive => {
                let cv = c.get();
                let c2 = cv * cv;
                let aw = self.dot_last(a, w)?;
                let bw = self.dot_last(b, w)?;
                let ab = self.dot_last(a, b)?;
                let aa = self.sq_norm_last(a)?;
                let bb = self.sq_norm_last(b)?;
                // A = -c^2 aw bb + c bw + 2 c^2 ab bw
                let t1 = self.mul(aw, bb)?;
                let t1 = self.scale(t1, -c2)?;
                let t2 = self.scale(bw, cv)?;
                let t3 = self.mul(ab, bw)?;
                let t3 = self.scale(t3, 2.0 * c2)?;
                let big_a = self.add(t1, t2)?;
                let big_a = self.add(big_a, t3)?;
                // B = -c^2 bw aa - c aw
                let s1 = self.mul(bw, aa)?;
                let s1 = self.scale(s1, -c2)?;
                let s2 = self.scale(aw, -cv)?;
                let big_b = self.add(s1, s2)?;
                // D = 1 + 2c ab + c^2 aa bb
                let d1 = self.scale(ab, 2.0 * cv)?;
                let d2 = self.mul(aa, bb)?;
                let d2 = self.scale(d2, c2)?;
                let big_d = self.add(d1, d2)?;
                let big_d = self.add_scalar(big_d, 1.0)?;
                let pa = self.mul(big_a, a)?;
                let pb = self.mul(big_b, b)?;
                let num = self.add(pa, pb)?;
                let q = self.div(num, big_d)?;
                let q = self.scale(q, 2.0)?;
                self.add(w, q)
            }
        }
    }

    /// `P_{x->y}(v)`
    pub fn parallel_transport(
        &mut self,
        x: NodeId,
        y: NodeId,
        v: NodeId,
        c: Curvature,
    ) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let (xt, yt, vt) = (
                    self.value(x).clone(),
                    self.value(y).clone(),
                    self.value(v).clone(),
                );
                let out = raw::parallel_transport(&xt, &yt, &vt, c)?;
                let op = TransportOp {
                    x: xt,
                    y: yt,
                    v: vt,
                    c,
                };
                self.record(Box::new(op), &[x, y, v], out)
            }
            Mode::Naive => {
                let neg = self.neg(x)?;
                let g = self.gyration(y, neg, v, c)?;
                let lx = self.conformal_factor(x, c)?;
                let ly = self.conformal_factor(y, c)?;
                let ratio = self.div(lx, ly)?;
                self.mul(ratio, g)
            }
        }
    }

    /// `r (x) x` for a constant `r`.
    pub fn mobius_scalar_mul(&mut self, r: f64, x: NodeId, c: Curvature) -> Result<NodeId> {
        match self.mode() {
            Mode::Fused => {
                let xt = self.value(x).clone();
                let (out, pre) = projected(raw::mobius_scalar_mul(r, &xt, c), c);
                let op = ScalarMulOp { r, x: xt, c, pre };
                self.record(Box::new(op), &[x], out)
            }
            Mode::Naive => {
                let sc = c.sqrt();
                let n = self.norm_last(x, NAIVE_NORM_FLOOR)?;
                let sn = self.scale(n, sc)?;
                let at = self.artanh(sn)?;
                let rat = self.scale(at, r)?;
                let t = self.tanh(rat)?;
                let k = self.div(t, sn)?;
                let out = self.mul(k, x)?;
                self.project(out, c)
            }
        }
    }
}
