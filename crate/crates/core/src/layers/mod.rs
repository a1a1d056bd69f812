//! Poincare neural-network layers.

pub mod block;
pub mod bn;
pub mod concat;
pub mod conv;
pub mod fc;
pub mod mean;
pub mod relu;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use block::{BlockNodes, BlockSpec, BnNodes, FcNodes};
pub use bn::{batchnorm, BnConfig, BnMode, BnReport, BnState, BnStats, GammaMode};
pub use concat::{beta_concat, beta_ratio};
pub use conv::{conv2d, ConvSpec};
pub use fc::{fc_forward, mlr_scores};
pub use mean::{frechet_mean, poincare_midpoint, sum_sq_distance, FrechetInfo, FrechetOptions};
pub use relu::relu_p;

/// Weights `Z` (`[m, n]`, columns are tangent vectors at the origin) and
/// offsets `r` (`[n]`) of a Poincare FC or convolutional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct FcParams {
    pub z: Tensor,
    pub r: Tensor,
}

impl FcParams {
    pub fn new(z: Tensor, r: Tensor) -> Result<Self> {
        if z.ndim() != 2 || r.shape() != [z.shape()[1]] {
            return Err(Error::shape(format!(
                "FC parameters Z {:?}, r {:?}",
                z.shape(),
                r.shape()
            )));
        }
        if !z.is_finite() || !r.is_finite() {
            return Err(Error::NonFinite("FC parameters".into()));
        }
        Ok(Self { z, r })
    }

    pub fn fan_in(&self) -> usize {
        self.z.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.z.shape()[1]
    }
}
