//! Poincare batch normalization.
//!
//! The batch `[..., n]` is flattened to a population of points in `B_c^n`.
//! With centre `mu` and variance `s2 = mean d(x_i, mu)^2`, every point maps
//! to `exp_beta(sqrt(gamma / s2) P_{mu -> beta}(log_mu x_i))` where
//! `beta = exp0(bias)` and `gamma = exp(log_gamma)`.

use crate::error::{Error, Result};
use crate::gyro::{BallTensor, Curvature};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

use super::mean::{FrechetInfo, FrechetOptions};

/// Below this variance a batch counts as degenerate and is only transported.
pub const DEGENERATE_VAR: f64 = 1e-12;

/// How the batch centre is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BnMode {
    #[default]
    Midpoint,
    Frechet,
}

impl BnMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BnMode::Midpoint => "midpoint",
            BnMode::Frechet => "frechet",
        }
    }
}

impl std::str::FromStr for BnMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "midpoint" => Ok(BnMode::Midpoint),
            "frechet" => Ok(BnMode::Frechet),
            _ => Err(Error::Config(format!("unknown bn mode `{s}`"))),
        }
    }
}

/// Granularity of the learned scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GammaMode {
    /// One scale per feature coordinate.
    #[default]
    PerChannel,
    /// A single scale for the whole feature vector.
    Scalar,
}

/// Batch statistics; also used to freeze a layer to fixed statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mu: Tensor,
    pub var: f64,
}

/// Learnable parameters and last statistics of one normalization layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState {
    /// Tangent vector at the origin, `[n]`; the target centre is its `exp0`.
    pub bias: Tensor,
    /// `log gamma`, shape `[n]` or `[1]`.
    pub log_gamma: Tensor,
    pub last: Option<BnStats>,
    /// When set, these statistics replace the batch statistics.
    pub frozen: Option<BnStats>,
}

impl BnState {
    pub fn new(n: usize, gamma: f64, mode: GammaMode) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::contract(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        let len = match mode {
            GammaMode::PerChannel => n,
            GammaMode::Scalar => 1,
        };
        Ok(Self {
            bias: Tensor::zeros(&[n]),
            log_gamma: Tensor::full(&[len], gamma.ln()),
            last: None,
            frozen: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.bias.numel()
    }
}

/// Options shared by every normalization layer of a model.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BnConfig {
    pub mode: BnMode,
    pub frechet: FrechetOptions,
}

/// Statistics and Frechet diagnostics of one normalization call.
#[derive(Clone, Debug, PartialEq)]
pub struct BnReport {
    pub stats: BnStats,
    pub frechet: Option<FrechetInfo>,
}

impl Tape {
    /// Normalizes `x` (`[..., n]`). `bias` is `[n]`, `log_gamma` is `[n]`
    /// or `[1]`.
    pub fn batchnorm(
        &mut self,
        x: NodeId,
        bias: NodeId,
        log_gamma: NodeId,
        c: Curvature,
        cfg: &BnConfig,
        frozen: Option<&BnStats>,
    ) -> Result<(NodeId, BnReport)> {
        let shape = self.shape(x).to_vec();
        let n = *shape
            .last()
            .ok_or_else(|| Error::shape("batchnorm of a scalar"))?;
        let p = shape.iter().product::<usize>() / n.max(1);
        if frozen.is_none() && p < 2 {
            return Err(Error::contract("batchnorm needs at least two points"));
        }
        if self.shape(bias) != [n] {
            return Err(Error::shape(format!(
                "bn bias {:?} for dim {n}",
                self.shape(bias)
            )));
        }
        let gl = self.shape(log_gamma).to_vec();
        if gl != [n] && gl != [1] {
            return Err(Error::shape(format!("bn log_gamma {gl:?} for dim {n}")));
        }
        let flat = self.reshape(x, &[p, n])?;

        let mut frechet = None;
        let (mu, var) = match frozen {
            Some(st) => {
                let mu = self.constant(st.mu.reshape(&[n])?);
                let var = self.constant(Tensor::scalar(st.var));
                (mu, var)
            }
            None => {
                let mu = match cfg.mode {
                    BnMode::Midpoint => self.poincare_midpoint(flat, c)?,
                    BnMode::Frechet => {
                        let (mu, info) = self.frechet_mean(flat, c, cfg.frechet)?;
                        frechet = Some(info);
                        mu
                    }
                };
                let mub = self.broadcast_to(mu, &[p, n])?;
                let d = self.distance(mub, flat, c)?;
                let d2 = self.mul(d, d)?;
                let s = self.sum_all(d2)?;
                let var = self.scale(s, 1.0 / p as f64)?;
                (mu, var)
            }
        };
        let stats = BnStats {
            mu: self.value(mu).clone(),
            var: self.value(var).item()?,
        };

        let mub = self.broadcast_to(mu, &[p, n])?;
        let logs = self.log_at(mub, flat, c)?;
        let beta = self.exp0(bias, c)?;
        let betab = self.broadcast_to(beta, &[p, n])?;
        let moved = self.parallel_transport(mub, betab, logs, c)?;
        let scaled = if stats.var < DEGENERATE_VAR {
            moved
        } else {
            let gamma = self.exp(log_gamma)?;
            let ratio = self.div(gamma, var)?;
            let k = self.sqrt(ratio)?;
            self.mul(moved, k)?
        };
        let out = self.exp_at(betab, scaled, c)?;
        let out = self.reshape(out, &shape)?;
        if self.debug_checks() && !crate::gyro::raw::all_inside(self.value(out), c) {
            return Err(Error::contract("batchnorm output left the ball"));
        }
        Ok((out, BnReport { stats, frechet }))
    }
}

/// Applies batch normalization outside a tape and records the statistics
/// in `state.last`.
pub fn batchnorm(batch: &BallTensor, state: &mut BnState, cfg: &BnConfig) -> Result<BallTensor> {
    let c = batch.curvature();
    let mut tape = Tape::new();
    let x = tape.constant(batch.coords().clone());
    let b = tape.constant(state.bias.clone());
    let g = tape.constant(state.log_gamma.clone());
    let (y, report) = tape.batchnorm(x, b, g, c, cfg, state.frozen.as_ref())?;
    state.last = Some(report.stats);
    Ok(BallTensor::from_raw(tape.value(y).clone(), c))
}
