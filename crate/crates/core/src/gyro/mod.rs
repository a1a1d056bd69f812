//! Gyrovector calculus on the Poincare ball of curvature `-c`.
//!
//! [`raw`] holds the pointwise kernels on plain tensors, each paired with a
//! hand-derived backward. This module wraps them in types that carry the
//! curvature and the ball-membership invariant; [`taped`] records them on a
//! [`Tape`](crate::tape::Tape).

pub mod raw;
pub mod sample;
pub mod taped;

use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{norm_sq, Tensor};

pub use raw::{MobiusScalars, EPS_BOUNDARY, ZERO_NORM};

/// Positive curvature magnitude `c`; the ball has radius `c^{-1/2}`.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
pub struct Curvature(f64);

impl fmt::Debug for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c={}", self.0)
    }
}

impl fmt::Display for Curvature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Curvature {
    pub fn new(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::contract(format!(
                "curvature must be positive, got {c}"
            )));
        }
        Ok(Curvature(c))
    }

    pub fn get(self) -> f64 {
        self.0
    }

    pub fn sqrt(self) -> f64 {
        self.0.sqrt()
    }

    pub fn radius(self) -> f64 {
        1.0 / self.0.sqrt()
    }

    /// Radius of the shell that [`project`] clamps onto.
    pub fn max_norm(self) -> f64 {
        (1.0 - EPS_BOUNDARY) / self.0.sqrt()
    }
}

/// Points on the ball, batched along leading axes.
#[derive(Clone, Debug, PartialEq)]
pub struct BallTensor {
    coords: Tensor,
    c: Curvature,
}

impl BallTensor {
    /// Wraps coordinates that already satisfy `c |x|^2 < 1`.
    pub fn new(coords: Tensor, c: Curvature) -> Result<Self> {
        for i in 0..coords.rows() {
            if c.get() * norm_sq(coords.row(i)) >= 1.0 {
                return Err(Error::contract(format!(
                    "point {i} lies outside the ball of curvature {c}"
                )));
            }
        }
        Ok(BallTensor { coords, c })
    }

    pub(crate) fn from_raw(coords: Tensor, c: Curvature) -> Self {
        BallTensor { coords, c }
    }

    pub fn origin(shape: &[usize], c: Curvature) -> Self {
        BallTensor {
            coords: Tensor::zeros(shape),
            c,
        }
    }

    pub fn coords(&self) -> &Tensor {
        &self.coords
    }

    pub fn into_coords(self) -> Tensor {
        self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.coords.last_dim()
    }

    pub fn neg(&self) -> Self {
        BallTensor {
            coords: self.coords.map(|v| -v),
            c: self.c,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Basepoint {
    Origin,
    At(BallTensor),
}

/// Tangent vectors together with the point they are attached to.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentTensor {
    coords: Tensor,
    base: Basepoint,
}

impl TangentTensor {
    pub fn at_origin(coords: Tensor) -> Self {
        TangentTensor {
            coords,
            base: Basepoint::Origin,
        }
    }

    pub fn at(base: &BallTensor, coords: Tensor) -> Result<Self> {
        if base.coords.shape() != coords.shape() {
            return Err(Error::shape(format!(
                "tangent vectors {:?} at base points {:?}",
                coords.shape(),
                base.coords.shape()
            )));
        }
        Ok(TangentTensor {
            coords,
            base: Basepoint::At(base.clone()),
        })
    }

    pub fn coords(&self) -> &Tensor {
        &self.coords
    }

    pub fn basepoint(&self) -> &Basepoint {
        &self.base
    }
}

/// `lambda_x = 2 / (1 - c |x|^2)` at a single point.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct ConformalFactor(f64);

impl ConformalFactor {
    pub fn at(x: &[f64], c: Curvature) -> Self {
        ConformalFactor(2.0 / (1.0 - c.get() * norm_sq(x)))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn same_curvature(a: &BallTensor, b: &BallTensor) -> Result<Curvature> {
    if a.c != b.c {
        return Err(Error::contract(format!(
            "curvature mismatch: {} vs {}",
            a.c, b.c
        )));
    }
    Ok(a.c)
}

fn ball(coords: Tensor, c: Curvature) -> BallTensor {
    BallTensor::from_raw(raw::project(&coords, c), c)
}

pub fn mobius_add(x: &BallTensor, y: &BallTensor) -> Result<BallTensor> {
    let c = same_curvature(x, y)?;
    let (out, _) = raw::mobius_add(&x.coords, &y.coords, c)?;
    Ok(ball(out, c))
}

pub fn mobius_add_backward(u: &Tensor, x: &BallTensor, y: &BallTensor) -> Result<(Tensor, Tensor)> {
    let c = same_curvature(x, y)?;
    let scalars = raw::mobius_scalars(&x.coords, &y.coords, c);
    raw::mobius_add_backward(u, &x.coords, &y.coords, &scalars, c)
}

pub fn mobius_scalar_mul(r: f64, x: &BallTensor) -> BallTensor {
    ball(raw::mobius_scalar_mul(r, &x.coords, x.c), x.c)
}

pub fn mobius_scalar_mul_backward(u: &Tensor, r: f64, x: &BallTensor) -> Result<Tensor> {
    raw::mobius_scalar_mul_backward(u, r, &x.coords, x.c)
}

/// `gyr[x, y] z`
pub fn gyration(x: &BallTensor, y: &BallTensor, z: &BallTensor) -> Result<BallTensor> {
    let c = same_curvature(x, y)?;
    same_curvature(x, z)?;
    Ok(ball(raw::gyration(&x.coords, &y.coords, &z.coords, c)?, c))
}

pub fn gyration_backward(
    u: &Tensor,
    x: &BallTensor,
    y: &BallTensor,
    z: &BallTensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = same_curvature(x, y)?;
    raw::gyration_backward(u, &x.coords, &y.coords, &z.coords, c)
}

/// Geodesic distance, one value per pair (shape `[..., 1]`).
pub fn distance(x: &BallTensor, y: &BallTensor) -> Result<Tensor> {
    let c = same_curvature(x, y)?;
    Ok(raw::distance(&x.coords, &y.coords, c)?.0)
}

pub fn distance_backward(u: &Tensor, x: &BallTensor, y: &BallTensor) -> Result<(Tensor, Tensor)> {
    let c = same_curvature(x, y)?;
    let z = raw::log_at_z(&x.coords, &y.coords, c)?;
    raw::distance_backward(u, &x.coords, &y.coords, &z, c)
}

pub fn conformal_factor(x: &BallTensor) -> Tensor {
    raw::conformal_factor(&x.coords, x.c)
}

pub fn conformal_factor_backward(u: &Tensor, x: &BallTensor) -> Result<Tensor> {
    raw::conformal_factor_backward(u, &x.coords, x.c)
}

fn require_origin(v: &TangentTensor) -> Result<()> {
    match v.base {
        Basepoint::Origin => Ok(()),
        Basepoint::At(_) => Err(Error::contract("expected a tangent vector at the origin")),
    }
}

pub fn exp0(v: &TangentTensor, c: Curvature) -> Result<BallTensor> {
    require_origin(v)?;
    Ok(ball(raw::exp0(&v.coords, c), c))
}

pub fn exp0_backward(u: &Tensor, v: &TangentTensor, c: Curvature) -> Result<Tensor> {
    raw::exp0_backward(u, &v.coords, c)
}

pub fn log0(y: &BallTensor) -> TangentTensor {
    TangentTensor::at_origin(raw::log0(&y.coords, y.c))
}

pub fn log0_backward(u: &Tensor, y: &BallTensor) -> Result<Tensor> {
    raw::log0_backward(u, &y.coords, y.c)
}

fn base_of(v: &TangentTensor, x: &BallTensor) -> Result<()> {
    match &v.base {
        Basepoint::At(b) if b.coords == x.coords => Ok(()),
        Basepoint::Origin if x.coords.data().iter().all(|&a| a == 0.0) => Ok(()),
        _ => Err(Error::contract(
            "tangent vector is not attached to the given point",
        )),
    }
}

pub fn exp_at(x: &BallTensor, v: &TangentTensor) -> Result<BallTensor> {
    base_of(v, x)?;
    Ok(ball(raw::exp_at(&x.coords, &v.coords, x.c)?, x.c))
}

pub fn exp_at_backward(u: &Tensor, x: &BallTensor, v: &TangentTensor) -> Result<(Tensor, Tensor)> {
    let z = raw::exp_at_z(&x.coords, &v.coords, x.c)?;
    raw::exp_at_backward(u, &x.coords, &v.coords, &z, x.c)
}

pub fn log_at(x: &BallTensor, y: &BallTensor) -> Result<TangentTensor> {
    let c = same_curvature(x, y)?;
    let (v, _) = raw::log_at(&x.coords, &y.coords, c)?;
    TangentTensor::at(x, v)
}

pub fn log_at_backward(u: &Tensor, x: &BallTensor, y: &BallTensor) -> Result<(Tensor, Tensor)> {
    let c = same_curvature(x, y)?;
    let z = raw::log_at_z(&x.coords, &y.coords, c)?;
    raw::log_at_backward(u, &x.coords, &y.coords, &z, c)
}

pub fn parallel_transport(
    x: &BallTensor,
    y: &BallTensor,
    v: &TangentTensor,
) -> Result<TangentTensor> {
    let c = same_curvature(x, y)?;
    base_of(v, x)?;
    let out = raw::parallel_transport(&x.coords, &y.coords, &v.coords, c)?;
    TangentTensor::at(y, out)
}

pub fn parallel_transport_backward(
    u: &Tensor,
    x: &BallTensor,
    y: &BallTensor,
    v: &TangentTensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let c = same_curvature(x, y)?;
    raw::parallel_transport_backward(u, &x.coords, &y.coords, &v.coords, c)
}

pub fn project(x: &Tensor, c: Curvature) -> BallTensor {
    BallTensor::from_raw(raw::project(x, c), c)
}

pub fn project_backward(u: &Tensor, x: &Tensor, c: Curvature) -> Result<Tensor> {
    raw::project_backward(u, x, c)
}
