//! Beta-concatenation of ball points.

use statrs::function::beta::ln_beta;

use crate::error::{Error, Result};
use crate::gyro::{BallTensor, Curvature};
use crate::tape::{NodeId, Tape};

/// `B(n/2, 1/2) / B(part/2, 1/2)`, the tangent-space scale applied to a
/// part of dimension `part` inside a concatenation of total dimension `n`.
pub fn beta_ratio(n: usize, part: usize) -> f64 {
    if n == part {
        return 1.0;
    }
    (ln_beta(n as f64 / 2.0, 0.5) - ln_beta(part as f64 / 2.0, 0.5)).exp()
}

/// Concatenates points along the last axis through the tangent space at
/// the origin, scaling each part so the expected norm is preserved.
pub fn beta_concat(parts: &[BallTensor]) -> Result<BallTensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::contract("beta_concat of an empty list"))?;
    let c = first.curvature();
    let mut tape = Tape::new();
    let ids = parts
        .iter()
        .map(|p| {
            if p.curvature() != c {
                return Err(Error::contract("beta_concat parts disagree on curvature"));
            }
            Ok(tape.constant(p.coords().clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let out = tape.beta_concat(&ids, c)?;
    Ok(BallTensor::from_raw(tape.value(out).clone(), c))
}

impl Tape {
    pub fn beta_concat(&mut self, parts: &[NodeId], c: Curvature) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::contract("beta_concat of an empty list"));
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        let n: usize = parts.iter().map(|&p| self.value(p).last_dim()).sum();
        let mut scaled = Vec::with_capacity(parts.len());
        for &p in parts {
            let ni = self.value(p).last_dim();
            let v = self.log0(p, c)?;
            scaled.push(self.scale(v, beta_ratio(n, ni))?);
        }
        let v = self.concat_last(&scaled)?;
        self.exp0(v, c)
    }
}
