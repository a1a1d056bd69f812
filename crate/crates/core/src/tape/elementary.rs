//! Elementary tape operations: broadcasting arithmetic, scalar functions,
//! reductions and indexing.

use crate::error::{Error, Result};
use crate::tensor::{
    broadcast_shapes, broadcast_strides, broadcast_to, for_each_broadcast, reduce_to_shape, Tensor,
};

use super::{NodeId, Op, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
pub struct Binary {
    kind: BinaryKind,
    a_shape: Vec<usize>,
    b_shape: Vec<usize>,
    // Only products and quotients keep their operands.
    a: Option<Tensor>,
    b: Option<Tensor>,
}

impl Op for Binary {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        }
    }

    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let out_shape = grad.shape().to_vec();
        let (ga, gb) = match self.kind {
            BinaryKind::Add => (grad.clone(), grad.clone()),
            BinaryKind::Sub => (grad.clone(), grad.map(|v| -v)),
            BinaryKind::Mul | BinaryKind::Div => {
                let a = broadcast_to(self.a.as_ref().expect("saved"), &out_shape)?;
                let b = broadcast_to(self.b.as_ref().expect("saved"), &out_shape)?;
                if self.kind == BinaryKind::Mul {
                    (
                        grad.zip_map(&b, |g, b| g * b)?,
                        grad.zip_map(&a, |g, a| g * a)?,
                    )
                } else {
                    let ga = grad.zip_map(&b, |g, b| g / b)?;
                    let q = a.zip_map(&b, |a, b| a / (b * b))?;
                    (ga, grad.zip_map(&q, |g, q| -g * q)?)
                }
            }
        };
        Ok(vec![
            Some(reduce_to_shape(&ga, &self.a_shape)),
            Some(reduce_to_shape(&gb, &self.b_shape)),
        ])
    }

    fn saved_bytes(&self) -> usize {
        self.a.as_ref().map_or(0, Tensor::bytes) + self.b.as_ref().map_or(0, Tensor::bytes)
    }
}

#[derive(Debug)]
pub struct Neg;

impl Op for Neg {
    fn name(&self) -> &'static str {
        "neg"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(grad.map(|v| -v))])
    }
    fn saved_bytes(&self) -> usize {
        0
    }
}

#[derive(Debug)]
pub struct Scale(pub f64);

impl Op for Scale {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(grad.scale(self.0))])
    }
    fn saved_bytes(&self) -> usize {
        0
    }
}

#[derive(Debug)]
pub struct AddScalar;

impl Op for AddScalar {
    fn name(&self) -> &'static str {
        "add_scalar"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(grad.clone())])
    }
    fn saved_bytes(&self) -> usize {
        0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Tanh,
    Artanh,
    Sinh,
    Asinh,
    Cosh,
    Sqrt,
    Exp,
    Ln,
    Relu,
    Square,
    Recip,
}

impl UnaryKind {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Tanh => x.tanh(),
            UnaryKind::Artanh => x.atanh(),
            UnaryKind::Sinh => x.sinh(),
            UnaryKind::Asinh => x.asinh(),
            UnaryKind::Cosh => x.cosh(),
            UnaryKind::Sqrt => x.sqrt(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => x.ln(),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::Square => x * x,
            UnaryKind::Recip => 1.0 / x,
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            UnaryKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            UnaryKind::Artanh => 1.0 / (1.0 - x * x),
            UnaryKind::Sinh => x.cosh(),
            UnaryKind::Asinh => 1.0 / (1.0 + x * x).sqrt(),
            UnaryKind::Cosh => x.sinh(),
            UnaryKind::Sqrt => 0.5 / x.sqrt(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Ln => 1.0 / x,
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Square => 2.0 * x,
            UnaryKind::Recip => -1.0 / (x * x),
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryKind::Tanh => "tanh",
            UnaryKind::Artanh => "artanh",
            UnaryKind::Sinh => "sinh",
            UnaryKind::Asinh => "asinh",
            UnaryKind::Cosh => "cosh",
            UnaryKind::Sqrt => "sqrt",
            UnaryKind::Exp => "exp",
            UnaryKind::Ln => "ln",
            UnaryKind::Relu => "relu",
            UnaryKind::Square => "square",
            UnaryKind::Recip => "recip",
        }
    }
}

#[derive(Debug)]
pub struct Unary {
    kind: UnaryKind,
    input: Tensor,
}

impl Op for Unary {
    fn name(&self) -> &'static str {
        self.kind.name()
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let kind = self.kind;
        Ok(vec![Some(
            grad.zip_map(&self.input, |g, x| g * kind.derivative(x))?,
        )])
    }
    fn saved_bytes(&self) -> usize {
        self.input.bytes()
    }
}

/// `max(x, floor)`; gradient only flows where `x > floor`.
#[derive(Debug)]
pub struct ClampMin {
    floor: f64,
    input: Tensor,
}

impl Op for ClampMin {
    fn name(&self) -> &'static str {
        "clamp_min"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let floor = self.floor;
        Ok(vec![Some(grad.zip_map(&self.input, |g, x| {
            if x > floor {
                g
            } else {
                0.0
            }
        })?)])
    }
    fn saved_bytes(&self) -> usize {
        self.input.bytes()
    }
}

#[derive(Debug)]
pub struct SumAxis {
    axis: usize,
    in_shape: Vec<usize>,
}

impl Op for SumAxis {
    fn name(&self) -> &'static str {
        "sum_axis"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let mut kept = self.in_shape.clone();
        kept[self.axis] = 1;
        let g = grad.reshape(&kept)?;
        Ok(vec![Some(broadcast_to(&g, &self.in_shape)?)])
    }
    fn saved_bytes(&self) -> usize {
        0
    }
}

#[derive(Debug)]
pub struct SumAll {
    in_shape: Vec<usize>,
}

impl Op for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(Tensor::full(&self.in_shape, grad.item()?))])
    }
    fn saved_bytes(&self) -> usize {
        0
    }
}

/// `[p, k] x [k, n] -> [p, n]`
#[derive(Debug)]
pub struct MatMul {
    a: Tensor,
    b: Tensor,
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], p: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * n];
    for i in 0..p {
        let row = &mut out[i * n..(i + 1) * n];
        for (l, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[l * n..(l + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a^T b` for `a: [p, k]`, `b: [p, n]`.
pub(crate) fn matmul_tn(a: &[f64], b: &[f64], p: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..p {
        let brow = &b[i * n..(i + 1) * n];
        for (l, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[l * n..(l + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a b^T` for `a: [p, n]`, `b: [k, n]`.
pub(crate) fn matmul_nt(a: &[f64], b: &[f64], p: usize, n: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * k];
    for i in 0..p {
        let arow = &a[i * n..(i + 1) * n];
        for l in 0..k {
            out[i * k + l] = crate::tensor::dot(arow, &b[l * n..(l + 1) * n]);
        }
    }
    out
}

impl Op for MatMul {
    fn name(&self) -> &'static str {
        "matmul"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let (p, k) = (self.a.shape()[0], self.a.shape()[1]);
        let n = self.b.shape()[1];
        let ga = matmul_nt(grad.data(), self.b.data(), p, n, k);
        let gb = matmul_tn(self.a.data(), grad.data(), p, k, n);
        Ok(vec![
            Some(Tensor::from_parts(ga, vec![p, k])),
            Some(Tensor::from_parts(gb, vec![k, n])),
        ])
    }
    fn saved_bytes(&self) -> usize {
        self.a.bytes() + self.b.bytes()
    }
}

#[derive(Debug)]
pub struct Reshape {
    in_shape: Vec<usize>,
}

impl Op for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(grad.reshape(&self.in_shape)?)])
    }
    fn saved_bytes(&self) -> usize {
        0
    }
}

#[derive(Debug)]
pub struct BroadcastTo {
    in_shape: Vec<usize>,
}

impl Op for BroadcastTo {
    fn name(&self) -> &'static str {
        "broadcast"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        Ok(vec![Some(reduce_to_shape(grad, &self.in_shape))])
    }
    fn saved_bytes(&self) -> usize {
        0
    }
}

/// Row gather: output row `i` copies input row `index[i]`, or zeros when
/// the index is `None`.
#[derive(Debug)]
pub struct GatherRows {
    index: Vec<Option<usize>>,
    in_shape: Vec<usize>,
}

impl Op for GatherRows {
    fn name(&self) -> &'static str {
        "gather_rows"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let n = *self.in_shape.last().unwrap_or(&1);
        let mut out = vec![0.0; self.in_shape.iter().product()];
        for (i, src) in self.index.iter().enumerate() {
            if let Some(s) = src {
                for (o, g) in out[s * n..(s + 1) * n].iter_mut().zip(grad.row(i)) {
                    *o += g;
                }
            }
        }
        Ok(vec![Some(Tensor::from_parts(out, self.in_shape.clone()))])
    }
    fn saved_bytes(&self) -> usize {
        self.index.len() * std::mem::size_of::<usize>()
    }
}

#[derive(Debug)]
pub struct ConcatLast {
    widths: Vec<usize>,
    lead: Vec<usize>,
}

impl Op for ConcatLast {
    fn name(&self) -> &'static str {
        "concat"
    }
    fn backward(&self, grad: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let total: usize = self.widths.iter().sum();
        let rows = grad.numel() / total.max(1);
        let mut out = Vec::with_capacity(self.widths.len());
        let mut start = 0;
        for &w in &self.widths {
            let mut data = Vec::with_capacity(rows * w);
            for r in 0..rows {
                data.extend_from_slice(&grad.data()[r * total + start..r * total + start + w]);
            }
            let mut shape = self.lead.clone();
            shape.push(w);
            out.push(Some(Tensor::from_parts(data, shape)));
            start += w;
        }
        Ok(out)
    }
    fn saved_bytes(&self) -> usize {
        0
    }
}

impl Tape {
    fn binary(&mut self, kind: BinaryKind, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        let out_shape = broadcast_shapes(ta.shape(), tb.shape()).ok_or_else(|| {
            Error::shape(format!(
                "cannot broadcast {:?} with {:?}",
                ta.shape(),
                tb.shape()
            ))
        })?;
        let sa = broadcast_strides(ta.shape(), &out_shape);
        let sb = broadcast_strides(tb.shape(), &out_shape);
        let numel = out_shape.iter().product();
        let (da, db) = (ta.data(), tb.data());
        let mut data = vec![0.0; numel];
        let f: fn(f64, f64) -> f64 = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
        };
        if ta.shape() == tb.shape() {
            for (o, (x, y)) in data.iter_mut().zip(da.iter().zip(db)) {
                *o = f(*x, *y);
            }
        } else {
            let a_off = offsets(&out_shape, &sa);
            for_each_broadcast(&out_shape, &sb, |i, ob| data[i] = f(da[a_off[i]], db[ob]));
        }
        let keep = matches!(kind, BinaryKind::Mul | BinaryKind::Div);
        let op = Binary {
            kind,
            a_shape: ta.shape().to_vec(),
            b_shape: tb.shape().to_vec(),
            a: keep.then(|| ta.clone()),
            b: keep.then(|| tb.clone()),
        };
        self.record(Box::new(op), &[a, b], Tensor::from_parts(data, out_shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|v| -v);
        self.record(Box::new(Neg), &[a], out)
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let out = self.value(a).scale(k);
        self.record(Box::new(Scale(k)), &[a], out)
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        let out = self.value(a).map(|v| v + k);
        self.record(Box::new(AddScalar), &[a], out)
    }

    pub fn unary(&mut self, kind: UnaryKind, a: NodeId) -> Result<NodeId> {
        let input = self.value(a).clone();
        let out = input.map(|v| kind.apply(v));
        self.record(Box::new(Unary { kind, input }), &[a], out)
    }

    pub fn clamp_min(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        let input = self.value(a).clone();
        let out = input.map(|v| v.max(floor));
        self.record(Box::new(ClampMin { floor, input }), &[a], out)
    }

    /// Sums over `axis`; with `keepdim` the axis stays with extent 1.
    pub fn sum_axis(&mut self, a: NodeId, axis: usize, keepdim: bool) -> Result<NodeId> {
        let t = self.value(a).clone();
        let shape = t.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape(format!(
                "axis {axis} out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        let src = t.data();
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for (d, s) in data[o * inner..(o + 1) * inner]
                    .iter_mut()
                    .zip(&src[base..base + inner])
                {
                    *d += s;
                }
            }
        }
        let mut out_shape = shape.clone();
        if keepdim {
            out_shape[axis] = 1;
        } else {
            out_shape.remove(axis);
        }
        self.record(
            Box::new(SumAxis {
                axis,
                in_shape: shape,
            }),
            &[a],
            Tensor::from_parts(data, out_shape),
        )
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let t = self.value(a);
        let out = Tensor::scalar(t.sum());
        let op = SumAll {
            in_shape: t.shape().to_vec(),
        };
        self.record(Box::new(op), &[a], out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a).clone(), self.value(b).clone());
        if ta.ndim() != 2 || tb.ndim() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape(format!(
                "matmul of {:?} and {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (p, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = Tensor::from_parts(matmul_raw(ta.data(), tb.data(), p, k, n), vec![p, n]);
        self.record(Box::new(MatMul { a: ta, b: tb }), &[a, b], out)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        let out = t.reshape(shape)?;
        let op = Reshape {
            in_shape: t.shape().to_vec(),
        };
        self.record(Box::new(op), &[a], out)
    }

    pub fn broadcast_to(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(a);
        if t.shape() == shape {
            return Ok(a);
        }
        let out = broadcast_to(t, shape)?;
        let op = BroadcastTo {
            in_shape: t.shape().to_vec(),
        };
        self.record(Box::new(op), &[a], out)
    }

    /// Gathers rows (vectors along the last axis) of `a`; `None` yields a
    /// zero row. The result has shape `[index.len(), last_dim]`.
    pub fn gather_rows(&mut self, a: NodeId, index: Vec<Option<usize>>) -> Result<NodeId> {
        let t = self.value(a);
        let n = t.last_dim();
        let rows = t.rows();
        if let Some(bad) = index.iter().flatten().find(|&&i| i >= rows) {
            return Err(Error::shape(format!(
                "row {bad} out of range ({rows} rows)"
            )));
        }
        let mut data = vec![0.0; index.len() * n];
        for (i, src) in index.iter().enumerate() {
            if let Some(s) = src {
                data[i * n..(i + 1) * n].copy_from_slice(t.row(*s));
            }
        }
        let out = Tensor::from_parts(data, vec![index.len(), n]);
        let op = GatherRows {
            index,
            in_shape: t.shape().to_vec(),
        };
        self.record(Box::new(op), &[a], out)
    }

    /// Concatenates along the last axis; leading shapes must agree.
    pub fn concat_last(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s[..s.len() - 1] != lead[..] {
                return Err(Error::shape(format!(
                    "concat leading shapes {lead:?} vs {s:?}"
                )));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead.clone();
        shape.push(total);
        let op = ConcatLast { widths, lead };
        self.record(Box::new(op), parts, Tensor::from_parts(data, shape))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Tanh, a)
    }
    pub fn artanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Artanh, a)
    }
    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Sqrt, a)
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Exp, a)
    }
    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.unary(UnaryKind::Relu, a)
    }

    /// Sum of squares along the last axis, kept as a unit axis.
    pub fn sq_norm_last(&mut self, a: NodeId) -> Result<NodeId> {
        let sq = self.unary(UnaryKind::Square, a)?;
        let axis = self.value(a).ndim() - 1;
        self.sum_axis(sq, axis, true)
    }

    /// Euclidean norm along the last axis, floored at `floor` so that
    /// downstream divisions stay finite at the zero vector.
    pub fn norm_last(&mut self, a: NodeId, floor: f64) -> Result<NodeId> {
        let sq = self.sq_norm_last(a)?;
        let sq = self.clamp_min(sq, floor * floor)?;
        self.sqrt(sq)
    }
}

fn offsets(out: &[usize], strides: &[usize]) -> Vec<usize> {
    let mut v = vec![0; out.iter().product()];
    for_each_broadcast(out, strides, |i, o| v[i] = o);
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tape::fd::finite_difference_jacobian;

    fn check_grad(x: &Tensor, build: impl Fn(&mut Tape, NodeId) -> NodeId) {
        let mut tape = Tape::new();
        let xi = tape.param(x.clone());
        let out = build(&mut tape, xi);
        let root = tape.sum_all(out).unwrap();
        let g = tape.backward(root).unwrap();
        let f = |v: &Tensor| {
            let mut t = Tape::new();
            let i = t.param(v.clone());
            let o = build(&mut t, i);
            Ok(Tensor::scalar(t.value(o).sum()))
        };
        let jac = finite_difference_jacobian(f, x, 1e-6).unwrap();
        for (a, b) in g.get(xi).unwrap().data().iter().zip(jac.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn broadcast_arithmetic_grads() {
        let x = Tensor::new(vec![0.3, -0.2, 0.5, 0.9, 0.1, -0.4], vec![2, 3]).unwrap();
        check_grad(&x, |t, i| {
            let col = t.sum_axis(i, 1, true).unwrap();
            let q = t.div(i, col).unwrap();
            let row = t.sum_axis(i, 0, false).unwrap();
            let p = t.mul(q, row).unwrap();
            t.sub(p, i).unwrap()
        });
    }

    #[test]
    fn unary_grads() {
        let x = Tensor::vector(vec![0.3, -0.2, 0.5, 0.7]);
        for kind in [
            UnaryKind::Tanh,
            UnaryKind::Artanh,
            UnaryKind::Sinh,
            UnaryKind::Asinh,
            UnaryKind::Cosh,
            UnaryKind::Exp,
            UnaryKind::Square,
            UnaryKind::Relu,
        ] {
            check_grad(&x, |t, i| t.unary(kind, i).unwrap());
        }
        let pos = Tensor::vector(vec![0.3, 1.2, 2.5]);
        for kind in [UnaryKind::Sqrt, UnaryKind::Ln, UnaryKind::Recip] {
            check_grad(&pos, |t, i| t.unary(kind, i).unwrap());
        }
    }

    #[test]
    fn matmul_gather_concat_grads() {
        let x = Tensor::new((0..6).map(|v| v as f64 * 0.1 - 0.2).collect(), vec![3, 2]).unwrap();
        check_grad(&x, |t, i| {
            let w =
                t.constant(Tensor::new(vec![1.0, -2.0, 0.5, 0.3, 0.7, -1.1], vec![2, 3]).unwrap());
            let m = t.matmul(i, w).unwrap();
            let g = t
                .gather_rows(m, vec![Some(2), None, Some(0), Some(2)])
                .unwrap();
            let sq = t.unary(UnaryKind::Square, g).unwrap();
            t.concat_last(&[sq, g]).unwrap()
        });
    }

    #[test]
    fn dag_matches_unrolled_tree() {
        // y = x*x + x*x recorded once with fan-out and once with copies.
        let x = Tensor::vector(vec![0.4, -1.5]);
        let mut dag = Tape::new();
        let a = dag.param(x.clone());
        let sq = dag.mul(a, a).unwrap();
        let s = dag.add(sq, sq).unwrap();
        let r = dag.sum_all(s).unwrap();
        let g1 = dag.backward(r).unwrap();

        let mut tree = Tape::new();
        let b = tree.param(x.clone());
        let c1 = tree.scale(b, 1.0).unwrap();
        let c2 = tree.scale(b, 1.0).unwrap();
        let c3 = tree.scale(b, 1.0).unwrap();
        let c4 = tree.scale(b, 1.0).unwrap();
        let s1 = tree.mul(c1, c2).unwrap();
        let s2 = tree.mul(c3, c4).unwrap();
        let s = tree.add(s1, s2).unwrap();
        let r = tree.sum_all(s).unwrap();
        let g2 = tree.backward(r).unwrap();
        assert_eq!(g1.get(a).unwrap().data(), g2.get(b).unwrap().data());
    }
}
