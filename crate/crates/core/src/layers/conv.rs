//! 2D Poincare convolution on channels-last feature maps `[B, H, W, C]`.
//!
//! Each output pixel is the FC layer applied to the beta-concatenation of
//! its receptive field, taken row-major with channels innermost. Padding
//! uses the ball origin.

use crate::error::{Error, Result};
use crate::gyro::{BallTensor, Curvature};
use crate::tape::{NodeId, Tape};

use super::concat::beta_ratio;
use super::FcParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvSpec {
    pub fn new(
        kernel: usize,
        stride: usize,
        padding: usize,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) || stride == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::contract(format!(
                "invalid conv spec: K={kernel} s={stride} C_in={c_in} C_out={c_out}"
            )));
        }
        Ok(Self {
            kernel,
            stride,
            padding,
            c_in,
            c_out,
        })
    }

    /// `K x K`, stride `s`, padding `K / 2`.
    pub fn same(kernel: usize, stride: usize, c_in: usize, c_out: usize) -> Result<Self> {
        Self::new(kernel, stride, kernel / 2, c_in, c_out)
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.c_in
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(Error::shape(format!(
                "{h}x{w} input too small for kernel {}",
                self.kernel
            )));
        }
        Ok((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }

    /// Source pixel row for every receptive-field slot, `None` for padding.
    pub(crate) fn im2col_index(&self, b: usize, h: usize, w: usize) -> Result<Vec<Option<usize>>> {
        let (ho, wo) = self.output_hw(h, w)?;
        let k = self.kernel;
        let mut index = Vec::with_capacity(b * ho * wo * k * k);
        for bi in 0..b {
            for oy in 0..ho {
                for ox in 0..wo {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * self.stride + ky) as isize - self.padding as isize;
                            let x = (ox * self.stride + kx) as isize - self.padding as isize;
                            let inside = y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w;
                            index.push(inside.then(|| (bi * h + y as usize) * w + x as usize));
                        }
                    }
                }
            }
        }
        Ok(index)
    }
}

fn map_dims(shape: &[usize], spec: &ConvSpec) -> Result<(usize, usize, usize)> {
    match shape {
        [b, h, w, ch] if *ch == spec.c_in => Ok((*b, *h, *w)),
        _ => Err(Error::shape(format!(
            "conv input {shape:?}, expected [B, H, W, {}]",
            spec.c_in
        ))),
    }
}

impl Tape {
    /// Poincare convolution of `x` (`[B, H, W, C_in]`) with FC weights
    /// `z` (`[K^2 C_in, C_out]`) and offsets `r`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        z: NodeId,
        r: NodeId,
        spec: &ConvSpec,
        c: Curvature,
    ) -> Result<NodeId> {
        let (b, h, w) = map_dims(self.shape(x), spec)?;
        if self.shape(z) != [spec.fan_in(), spec.c_out] {
            return Err(Error::shape(format!(
                "conv weights {:?}, expected [{}, {}]",
                self.shape(z),
                spec.fan_in(),
                spec.c_out
            )));
        }
        let (ho, wo) = spec.output_hw(h, w)?;
        let index = spec.im2col_index(b, h, w)?;
        let rows = b * ho * wo;
        let patches = if spec.kernel == 1 {
            // A single part: beta-concatenation is the identity.
            let g = self.gather_rows(x, index)?;
            self.reshape(g, &[rows, spec.c_in])?
        } else {
            let logs = self.log0(x, c)?;
            let g = self.gather_rows(logs, index)?;
            let g = self.reshape(g, &[rows, spec.fan_in()])?;
            let g = self.scale(g, beta_ratio(spec.fan_in(), spec.c_in))?;
            self.exp0(g, c)?
        };
        let y = self.poincare_fc(patches, z, r, c)?;
        self.reshape(y, &[b, ho, wo, spec.c_out])
    }
}

/// Poincare convolution of a feature map `[B, H, W, C_in]`.
pub fn conv2d(input: &BallTensor, spec: &ConvSpec, params: &FcParams) -> Result<BallTensor> {
    let c = input.curvature();
    let mut tape = Tape::new();
    let x = tape.constant(input.coords().clone());
    let z = tape.constant(params.z.clone());
    let r = tape.constant(params.r.clone());
    let y = tape.conv2d(x, z, r, spec, c)?;
    Ok(BallTensor::from_raw(tape.value(y).clone(), c))
}
