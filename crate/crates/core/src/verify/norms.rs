//! Mean output norms of a stack of Poincare FC layers under each
//! initialization scheme.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gyro::sample::tangent;
use crate::gyro::{raw, Curvature};
use crate::layers::{fc_forward, FcParams};
use crate::models::{identity_init, normal_init, InitScheme};
use crate::tensor::Tensor;
use crate::BallTensor;

use super::csv_f64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormSweepOptions {
    pub depth: usize,
    pub dim: usize,
    pub batch: usize,
    pub c: f64,
    /// Standard deviation of the tangent inputs at the origin.
    pub input_std: f64,
    pub seed: u64,
}

impl Default for NormSweepOptions {
    fn default() -> Self {
        Self {
            depth: 10,
            dim: 20,
            batch: 16,
            c: 1.0,
            input_std: 0.1f64.sqrt(),
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormRow {
    pub scheme: InitScheme,
    /// 0 is the input batch.
    pub layer: usize,
    pub mean_norm: f64,
}

impl NormRow {
    pub fn log_mean_norm(&self) -> f64 {
        self.mean_norm.ln()
    }
}

fn mean_norm(x: &Tensor) -> f64 {
    (0..x.rows())
        .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / x.rows() as f64
}

/// Pushes one batch through `depth` freshly initialized `dim x dim` layers.
pub fn norm_sweep(scheme: InitScheme, opts: &NormSweepOptions) -> Result<Vec<NormRow>> {
    if opts.depth == 0 || opts.dim == 0 || opts.batch == 0 {
        return Err(Error::contract(
            "norm sweep needs positive depth, dim and batch",
        ));
    }
    let c = Curvature::new(opts.c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let v = tangent(&mut rng, opts.batch, opts.dim, opts.input_std);
    let mut x = BallTensor::new(raw::project(&raw::exp0(&v, c), c), c)?;
    let mut rows = vec![NormRow {
        scheme,
        layer: 0,
        mean_norm: mean_norm(x.coords()),
    }];
    for layer in 1..=opts.depth {
        let p: FcParams = match scheme {
            InitScheme::Identity => identity_init(opts.dim, opts.dim)?,
            InitScheme::Normal => normal_init(opts.dim, opts.dim, &mut rng)?,
        };
        x = fc_forward(&x, &p)?;
        rows.push(NormRow {
            scheme,
            layer,
            mean_norm: mean_norm(x.coords()),
        });
    }
    Ok(rows)
}

pub fn norm_sweep_csv(rows: &[NormRow]) -> String {
    let mut s = String::from("scheme,layer,mean_norm,log_mean_norm\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.scheme.as_str(),
            r.layer,
            csv_f64(r.mean_norm),
            csv_f64(r.log_mean_norm())
        ));
    }
    s
}
