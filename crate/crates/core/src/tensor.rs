//! Dense row-major `f64` tensors.
//!
//! Tensors are immutable values: the buffer sits behind an `Arc`, so cloning
//! is cheap and a tensor can be shared between threads. Mutation goes through
//! [`Tensor::data_mut`], which copies on write.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    data: Arc<Vec<f64>>,
    shape: Vec<usize>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}...", &self.data[..PREVIEW])
        }
    }
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} holds {numel} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor {
            data: Arc::new(data),
            shape,
        })
    }

    /// Builds a tensor whose shape is known to match; panics otherwise.
    pub(crate) fn from_parts(data: Vec<f64>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            data: Arc::new(data),
            shape,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Self::from_parts(data, vec![n])
    }

    pub fn scalar(value: f64) -> Self {
        Self::from_parts(vec![value], vec![])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self::from_parts(vec![value; numel], shape.to_vec())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the last axis (1 for a scalar).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of vectors along the last axis.
    pub fn rows(&self) -> usize {
        self.numel().checked_div(self.last_dim()).unwrap_or(0)
    }

    pub fn bytes(&self) -> usize {
        self.numel() * std::mem::size_of::<f64>()
    }

    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::shape(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Tensor {
            data: Arc::clone(&self.data),
            shape: shape.to_vec(),
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_parts(
            self.data.iter().map(|&v| f(v)).collect(),
            self.shape.clone(),
        )
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self::from_parts(
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
            self.shape.clone(),
        ))
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.last_dim();
        &self.data[i * n..(i + 1) * n]
    }
}

/// Numpy-style broadcast of two shapes.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides that read a tensor of `src` shape at positions of `out` shape,
/// with zero stride along broadcast axes.
pub(crate) fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let mut strides = vec![0; rank];
    let mut acc = 1;
    for i in (0..src.len()).rev() {
        let oi = i + rank - src.len();
        strides[oi] = if src[i] == 1 && out[oi] != 1 { 0 } else { acc };
        acc *= src[i];
    }
    strides
}

/// Calls `f(out_index, src_offset)` for every element of `out`, in order.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    strides: &[usize],
    mut f: impl FnMut(usize, usize),
) {
    let numel: usize = out.iter().product();
    if numel == 0 {
        return;
    }
    let rank = out.len();
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for flat in 0..numel {
        f(flat, offset);
        for axis in (0..rank).rev() {
            idx[axis] += 1;
            offset += strides[axis];
            if idx[axis] < out[axis] {
                break;
            }
            offset -= strides[axis] * out[axis];
            idx[axis] = 0;
        }
    }
}

/// Reads `t` broadcast to `out`.
pub(crate) fn broadcast_to(t: &Tensor, out: &[usize]) -> Result<Tensor> {
    if t.shape() == out {
        return Ok(t.clone());
    }
    match broadcast_shapes(t.shape(), out) {
        Some(s) if s == out => {}
        _ => {
            return Err(Error::shape(format!(
                "cannot broadcast {:?} to {out:?}",
                t.shape()
            )))
        }
    }
    let strides = broadcast_strides(t.shape(), out);
    let src = t.data();
    let mut data = vec![0.0; out.iter().product()];
    for_each_broadcast(out, &strides, |i, o| data[i] = src[o]);
    Ok(Tensor::from_parts(data, out.to_vec()))
}

/// Sums `grad` (of a broadcast shape) back down to `target`.
pub(crate) fn reduce_to_shape(grad: &Tensor, target: &[usize]) -> Tensor {
    if grad.shape() == target {
        return grad.clone();
    }
    let strides = broadcast_strides(target, grad.shape());
    let mut data = vec![0.0; target.iter().product()];
    let g = grad.data();
    for_each_broadcast(grad.shape(), &strides, |i, o| data[o] += g[i]);
    Tensor::from_parts(data, target.to_vec())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(vec![1.0; 6], vec![2, 3]).is_ok());
        assert!(matches!(
            Tensor::new(vec![1.0; 5], vec![2, 3]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn broadcast_rules() {
        assert_eq!(broadcast_shapes(&[4, 3], &[3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shapes(&[4, 1], &[4, 3]), Some(vec![4, 3]));
        assert_eq!(broadcast_shapes(&[], &[2, 2]), Some(vec![2, 2]));
        assert_eq!(broadcast_shapes(&[4, 2], &[3]), None);
    }

    #[test]
    fn broadcast_then_reduce_sums_copies() {
        let t = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let b = broadcast_to(&t, &[2, 3]).unwrap();
        assert_eq!(b.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let r = reduce_to_shape(&b, &[3]);
        assert_eq!(r.data(), &[2.0, 4.0, 6.0]);
        let col = Tensor::new(vec![1.0, 2.0], vec![2, 1]).unwrap();
        let bc = broadcast_to(&col, &[2, 3]).unwrap();
        assert_eq!(bc.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(reduce_to_shape(&bc, &[2, 1]).data(), &[3.0, 6.0]);
    }

    #[test]
    fn clone_on_write() {
        let a = Tensor::vector(vec![1.0, 2.0]);
        let mut b = a.clone();
        b.data_mut()[0] = 5.0;
        assert_eq!(a.data()[0], 1.0);
        assert_eq!(b.data()[0], 5.0);
    }
}
