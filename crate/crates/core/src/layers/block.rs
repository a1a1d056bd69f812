//! Poincare residual block: `relu_p(shortcut(x) (+) G(x))` with
//! `G = conv -> bn -> relu_p -> conv -> bn`.

use crate::error::{Error, Result};
use crate::gyro::Curvature;
use crate::tape::{NodeId, Tape};

use super::bn::{BnConfig, BnReport, BnStats};
use super::conv::ConvSpec;

/// Tape handles of one FC/conv layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct FcNodes {
    pub z: NodeId,
    pub r: NodeId,
}

/// Tape handles of one normalization layer.
#[derive(Clone, Debug)]
pub struct BnNodes {
    pub bias: NodeId,
    pub log_gamma: NodeId,
    pub frozen: Option<BnStats>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub conv1: ConvSpec,
    pub conv2: ConvSpec,
    /// 1x1 shortcut convolution, required when the shape changes.
    pub down: Option<ConvSpec>,
}

impl BlockSpec {
    /// A basic block from `c_in` to `c_out` channels with the given stride.
    pub fn basic(c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        let down = if stride != 1 || c_in != c_out {
            Some(ConvSpec::new(1, stride, 0, c_in, c_out)?)
        } else {
            None
        };
        Ok(Self {
            conv1: ConvSpec::same(3, stride, c_in, c_out)?,
            conv2: ConvSpec::same(3, 1, c_out, c_out)?,
            down,
        })
    }
}

#[derive(Clone, Debug)]
pub struct BlockNodes {
    pub conv1: FcNodes,
    pub bn1: BnNodes,
    pub conv2: FcNodes,
    pub bn2: BnNodes,
    pub down: Option<FcNodes>,
}

impl Tape {
    pub fn conv_bn(
        &mut self,
        x: NodeId,
        spec: &ConvSpec,
        conv: FcNodes,
        bn: &BnNodes,
        c: Curvature,
        cfg: &BnConfig,
    ) -> Result<(NodeId, BnReport)> {
        let h = self.conv2d(x, conv.z, conv.r, spec, c)?;
        self.batchnorm(h, bn.bias, bn.log_gamma, c, cfg, bn.frozen.as_ref())
    }

    /// Returns the block output and the reports of its two normalizations.
    pub fn residual_block(
        &mut self,
        x: NodeId,
        spec: &BlockSpec,
        p: &BlockNodes,
        c: Curvature,
        cfg: &BnConfig,
    ) -> Result<(NodeId, [BnReport; 2])> {
        let shape = self.shape(x).to_vec();
        let changes = spec.conv1.stride != 1 || spec.conv1.c_in != spec.conv2.c_out;
        if changes && (spec.down.is_none() || p.down.is_none()) {
            return Err(Error::contract(
                "residual block changes shape but has no downsample shortcut",
            ));
        }
        if shape.last() != Some(&spec.conv1.c_in) {
            return Err(Error::shape(format!(
                "block input {shape:?} for {} channels",
                spec.conv1.c_in
            )));
        }
        let (h, r1) = self.conv_bn(x, &spec.conv1, p.conv1, &p.bn1, c, cfg)?;
        let h = self.relu_p(h, c)?;
        let (g, r2) = self.conv_bn(h, &spec.conv2, p.conv2, &p.bn2, c, cfg)?;
        let skip = match (&spec.down, p.down) {
            (Some(ds), Some(dn)) => self.conv2d(x, dn.z, dn.r, ds, c)?,
            _ => x,
        };
        let sum = self.mobius_add(skip, g, c)?;
        let out = self.relu_p(sum, c)?;
        Ok((out, [r1, r2]))
    }
}
