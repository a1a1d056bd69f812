//! Random interior points and tangent vectors for tests and benchmarks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

use super::Curvature;

/// `rows` points in `B_c^dim` with uniformly random direction and norm
/// uniform in `[0, frac * c^{-1/2}]`.
pub fn ball_points<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    dim: usize,
    c: Curvature,
    frac: f64,
) -> Tensor {
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = dir.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-300);
        let r = rng.random::<f64>() * frac * c.radius();
        data.extend(dir.iter().map(|a| a * r / n));
    }
    Tensor::from_parts(data, vec![rows, dim])
}

/// `rows` Gaussian vectors with standard deviation `std`.
pub fn tangent<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize, std: f64) -> Tensor {
    let data = (0..rows * dim)
        .map(|_| {
            let s: f64 = StandardNormal.sample(rng);
            std * s
        })
        .collect::<Vec<f64>>();
    Tensor::from_parts(data, vec![rows, dim])
}
