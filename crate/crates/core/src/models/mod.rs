//! Poincare ResNet and ConvNet assembly.

pub mod init;

use rand::Rng;

use crate::error::{Error, Result};
use crate::gyro::{raw, BallTensor, Curvature};
use crate::layers::{
    BlockNodes, BlockSpec, BnConfig, BnNodes, BnReport, BnState, BnStats, ConvSpec, FcNodes,
    FcParams, GammaMode,
};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub use init::{conv_identity_init, identity_init, normal_init, InitScheme};

/// Per-channel CIFAR-10 training-set statistics of `[0, 1]` pixels.
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2470, 0.2435, 0.2616];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArchKind {
    /// Three stages of `blocks` residual blocks each (depth `6 blocks + 2`).
    ResNet { blocks: usize },
    /// Stem followed by one strided conv-BN-ReLU layer per further width.
    ConvNet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub widths: Vec<usize>,
    pub c: f64,
    pub num_classes: usize,
    pub in_channels: usize,
    pub init: InitScheme,
    pub gamma_mode: GammaMode,
}

impl ArchSpec {
    pub fn resnet(depth: usize, widths: &[usize], c: f64, num_classes: usize) -> Result<Self> {
        if depth < 8 || !(depth - 2).is_multiple_of(6) {
            return Err(Error::contract(format!(
                "ResNet depth must be 6k + 2, got {depth}"
            )));
        }
        let spec = Self {
            kind: ArchKind::ResNet {
                blocks: (depth - 2) / 6,
            },
            widths: widths.to_vec(),
            c,
            num_classes,
            in_channels: 3,
            init: InitScheme::Identity,
            gamma_mode: GammaMode::PerChannel,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn convnet(widths: &[usize], c: f64, num_classes: usize) -> Result<Self> {
        let spec = Self {
            kind: ArchKind::ConvNet,
            widths: widths.to_vec(),
            c,
            num_classes,
            in_channels: 3,
            init: InitScheme::Identity,
            gamma_mode: GammaMode::PerChannel,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn depth(&self) -> Option<usize> {
        match self.kind {
            ArchKind::ResNet { blocks } => Some(6 * blocks + 2),
            ArchKind::ConvNet => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ArchKind::ResNet { blocks } = self.kind {
            if blocks == 0 || self.widths.len() != 3 {
                return Err(Error::contract(
                    "ResNet needs k >= 1 blocks and three widths",
                ));
            }
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::contract("widths must be non-empty and positive"));
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::contract(format!(
                "widths must be strictly increasing: {:?}",
                self.widths
            )));
        }
        if self.num_classes < 2 || self.in_channels == 0 {
            return Err(Error::contract(
                "need at least two classes and one input channel",
            ));
        }
        Curvature::new(self.c)?;
        Ok(())
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::new(self.c).expect("validated curvature")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub fc: FcParams,
    pub bn: BnState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock {
    pub spec: BlockSpec,
    pub conv1: FcParams,
    pub bn1: BnState,
    pub conv2: FcParams,
    pub bn2: BnState,
    pub down: Option<FcParams>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: ArchSpec,
    pub stem: ConvLayer,
    pub blocks: Vec<ResBlock>,
    pub convs: Vec<ConvLayer>,
    pub head: FcParams,
    /// Initialization choices not fixed by the architecture, for run logs.
    pub notes: Vec<String>,
}

fn init_conv<R: Rng + ?Sized>(
    spec: &ConvSpec,
    scheme: InitScheme,
    rng: &mut R,
    notes: &mut Vec<String>,
    name: &str,
) -> Result<FcParams> {
    match scheme {
        InitScheme::Normal => normal_init(spec.fan_in(), spec.c_out, rng),
        InitScheme::Identity if spec.fan_in() <= spec.c_out => {
            identity_init(spec.fan_in(), spec.c_out)
        }
        InitScheme::Identity if spec.kernel > 1 && spec.c_in <= spec.c_out && name != "stem" => {
            conv_identity_init(spec)
        }
        InitScheme::Identity => {
            notes.push(format!(
                "{name}: fan-in {} > {} outputs, normal init used",
                spec.fan_in(),
                spec.c_out
            ));
            normal_init(spec.fan_in(), spec.c_out, rng)
        }
    }
}

const BN_GAMMA: f64 = 1.0;

pub fn build_model<R: Rng + ?Sized>(arch: &ArchSpec, rng: &mut R) -> Result<ModelParams> {
    arch.validate()?;
    let mut notes = Vec::new();
    let bn = |n: usize| BnState::new(n, BN_GAMMA, arch.gamma_mode);
    let w = &arch.widths;
    let stem_spec = ConvSpec::same(3, 1, arch.in_channels, w[0])?;
    let stem = ConvLayer {
        spec: stem_spec,
        fc: init_conv(&stem_spec, arch.init, rng, &mut notes, "stem")?,
        bn: bn(w[0])?,
    };
    let mut blocks = Vec::new();
    let mut convs = Vec::new();
    match arch.kind {
        ArchKind::ResNet { blocks: k } => {
            let mut c_in = w[0];
            for (s, &c_out) in w.iter().enumerate() {
                for b in 0..k {
                    let stride = if s > 0 && b == 0 { 2 } else { 1 };
                    let spec = BlockSpec::basic(c_in, c_out, stride)?;
                    let name = format!("stage{}.block{}", s + 1, b + 1);
                    let down = match &spec.down {
                        Some(d) => Some(init_conv(d, arch.init, rng, &mut notes, &name)?),
                        None => None,
                    };
                    blocks.push(ResBlock {
                        conv1: init_conv(&spec.conv1, arch.init, rng, &mut notes, &name)?,
                        bn1: bn(c_out)?,
                        conv2: init_conv(&spec.conv2, arch.init, rng, &mut notes, &name)?,
                        bn2: bn(c_out)?,
                        down,
                        spec,
                    });
                    c_in = c_out;
                }
            }
        }
        ArchKind::ConvNet => {
            for pair in w.windows(2) {
                let spec = ConvSpec::same(3, 2, pair[0], pair[1])?;
                let name = format!("conv{}", convs.len() + 2);
                convs.push(ConvLayer {
                    fc: init_conv(&spec, arch.init, rng, &mut notes, &name)?,
                    bn: bn(pair[1])?,
                    spec,
                });
            }
        }
    }
    let head = normal_init(*w.last().unwrap(), arch.num_classes, rng)?;
    notes.push("head: normal init".into());
    notes.push("pooling: Poincare midpoint over spatial positions".into());
    Ok(ModelParams {
        arch: arch.clone(),
        stem,
        blocks,
        convs,
        head,
        notes,
    })
}

/// Per-channel standardization of `[..., 3]` pixels in `[0, 1]`.
pub fn normalize_pixels(image: &Tensor) -> Result<Tensor> {
    if image.last_dim() != 3 {
        return Err(Error::shape(format!(
            "expected RGB pixels, got {:?}",
            image.shape()
        )));
    }
    let mut out = image.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let ch = i % 3;
        *v = (*v - CIFAR_MEAN[ch]) / CIFAR_STD[ch];
    }
    Ok(out)
}

/// Maps normalized pixels (tangent vectors at the origin) onto the ball.
pub fn pixel_embed(normalized: &Tensor, c: Curvature) -> Result<BallTensor> {
    if !normalized.is_finite() {
        return Err(Error::NonFinite("image pixels".into()));
    }
    Ok(BallTensor::from_raw(
        raw::project(&raw::exp0(normalized, c), c),
        c,
    ))
}

/// Tape handles produced by a taped forward pass.
#[derive(Debug)]
pub struct TapedForward {
    pub scores: NodeId,
    /// Parameter nodes in [`ModelParams::params`] order.
    pub params: Vec<NodeId>,
    pub bn_reports: Vec<BnReport>,
    /// Mean Euclidean norm of the feature points after each layer.
    pub layer_norms: Vec<f64>,
}

fn mean_norm(t: &Tensor) -> f64 {
    let rows = t.rows().max(1);
    (0..t.rows())
        .map(|i| t.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
        / rows as f64
}

struct Binder<'a> {
    tape: &'a mut Tape,
    trainable: bool,
    ids: Vec<NodeId>,
}

impl Binder<'_> {
    fn bind(&mut self, t: &Tensor) -> NodeId {
        let id = self.tape.leaf(t.clone(), self.trainable);
        self.ids.push(id);
        id
    }
    fn fc(&mut self, p: &FcParams) -> FcNodes {
        FcNodes {
            z: self.bind(&p.z),
            r: self.bind(&p.r),
        }
    }
    fn bn(&mut self, s: &BnState) -> BnNodes {
        BnNodes {
            bias: self.bind(&s.bias),
            log_gamma: self.bind(&s.log_gamma),
            frozen: s.frozen.clone(),
        }
    }
}

impl ModelParams {
    /// Every learnable tensor in a fixed order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        fn layer<'a>(v: &mut Vec<&'a Tensor>, l: &'a ConvLayer) {
            v.extend([&l.fc.z, &l.fc.r, &l.bn.bias, &l.bn.log_gamma]);
        }
        layer(&mut v, &self.stem);
        for b in &self.blocks {
            v.extend([&b.conv1.z, &b.conv1.r, &b.bn1.bias, &b.bn1.log_gamma]);
            v.extend([&b.conv2.z, &b.conv2.r, &b.bn2.bias, &b.bn2.log_gamma]);
            if let Some(d) = &b.down {
                v.extend([&d.z, &d.r]);
            }
        }
        for l in &self.convs {
            layer(&mut v, l);
        }
        v.extend([&self.head.z, &self.head.r]);
        v
    }

    /// Mutable view in the same order as [`ModelParams::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = Vec::new();
        let l = &mut self.stem;
        v.extend([
            &mut l.fc.z,
            &mut l.fc.r,
            &mut l.bn.bias,
            &mut l.bn.log_gamma,
        ]);
        for b in &mut self.blocks {
            v.extend([
                &mut b.conv1.z,
                &mut b.conv1.r,
                &mut b.bn1.bias,
                &mut b.bn1.log_gamma,
            ]);
            v.extend([
                &mut b.conv2.z,
                &mut b.conv2.r,
                &mut b.bn2.bias,
                &mut b.bn2.log_gamma,
            ]);
            if let Some(d) = &mut b.down {
                v.extend([&mut d.z, &mut d.r]);
            }
        }
        for l in &mut self.convs {
            v.extend([
                &mut l.fc.z,
                &mut l.fc.r,
                &mut l.bn.bias,
                &mut l.bn.log_gamma,
            ]);
        }
        v.extend([&mut self.head.z, &mut self.head.r]);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    fn bn_states_mut(&mut self) -> Vec<&mut BnState> {
        let mut v = vec![&mut self.stem.bn];
        for b in &mut self.blocks {
            v.push(&mut b.bn1);
            v.push(&mut b.bn2);
        }
        for l in &mut self.convs {
            v.push(&mut l.bn);
        }
        v
    }

    /// Freezes every normalization layer to statistics that make it the
    /// identity while its bias is zero and its gamma is uniform.
    pub fn freeze_bn_identity(&mut self) {
        for s in self.bn_states_mut() {
            let gamma = s.log_gamma.data()[0].exp();
            s.frozen = Some(BnStats {
                mu: Tensor::zeros(&[s.dim()]),
                var: gamma,
            });
        }
    }

    pub fn unfreeze_bn(&mut self) {
        for s in self.bn_states_mut() {
            s.frozen = None;
        }
    }

    /// Stores the batch statistics of a forward pass in the layer states.
    pub fn record_bn_stats(&mut self, reports: &[BnReport]) {
        for (s, r) in self.bn_states_mut().into_iter().zip(reports) {
            s.last = Some(r.stats.clone());
        }
    }

    /// Records the forward pass of ball-embedded images `[B, H, W, C]`.
    pub fn forward_taped(
        &self,
        tape: &mut Tape,
        images: NodeId,
        cfg: &BnConfig,
        trainable: bool,
    ) -> Result<TapedForward> {
        let c = self.arch.curvature();
        let shape = tape.shape(images).to_vec();
        if shape.len() != 4 || shape[3] != self.arch.in_channels {
            return Err(Error::shape(format!(
                "model input {shape:?}, expected [B, H, W, {}]",
                self.arch.in_channels
            )));
        }
        let mut b = Binder {
            tape,
            trainable,
            ids: Vec::new(),
        };
        let stem = (b.fc(&self.stem.fc), b.bn(&self.stem.bn));
        let blocks: Vec<BlockNodes> = self
            .blocks
            .iter()
            .map(|blk| BlockNodes {
                conv1: b.fc(&blk.conv1),
                bn1: b.bn(&blk.bn1),
                conv2: b.fc(&blk.conv2),
                bn2: b.bn(&blk.bn2),
                down: blk.down.as_ref().map(|d| b.fc(d)),
            })
            .collect();
        let convs: Vec<(FcNodes, BnNodes)> = self
            .convs
            .iter()
            .map(|l| (b.fc(&l.fc), b.bn(&l.bn)))
            .collect();
        let head = b.fc(&self.head);
        let Binder { tape, ids, .. } = b;

        let mut reports = Vec::new();
        let mut norms = vec![mean_norm(tape.value(images))];
        let check = |tape: &Tape, id: NodeId, what: &str| -> Result<()> {
            if tape.debug_checks() && !raw::all_inside(tape.value(id), c) {
                return Err(Error::contract(format!("{what} output left the ball")));
            }
            Ok(())
        };

        let (h, rep) = tape.conv_bn(images, &self.stem.spec, stem.0, &stem.1, c, cfg)?;
        reports.push(rep);
        let mut x = tape.relu_p(h, c)?;
        check(tape, x, "stem")?;
        norms.push(mean_norm(tape.value(x)));
        for (blk, nodes) in self.blocks.iter().zip(&blocks) {
            let (y, reps) = tape.residual_block(x, &blk.spec, nodes, c, cfg)?;
            reports.extend(reps);
            x = y;
            check(tape, x, "residual block")?;
            norms.push(mean_norm(tape.value(x)));
        }
        for (layer, (fc, bn)) in self.convs.iter().zip(&convs) {
            let (h, rep) = tape.conv_bn(x, &layer.spec, *fc, bn, c, cfg)?;
            reports.push(rep);
            x = tape.relu_p(h, c)?;
            check(tape, x, "conv")?;
            norms.push(mean_norm(tape.value(x)));
        }
        let s = tape.shape(x).to_vec();
        let pooled = tape.reshape(x, &[s[0], s[1] * s[2], s[3]])?;
        let pooled = tape.poincare_midpoint(pooled, c)?;
        let scores = tape.mlr_scores(pooled, head.z, head.r, c)?;
        Ok(TapedForward {
            scores,
            params: ids,
            bn_reports: reports,
            layer_norms: norms,
        })
    }

    /// MLR scores `[B, num_classes]` for normalized images `[B, H, W, C]`.
    pub fn forward(&self, images: &Tensor, cfg: &BnConfig) -> Result<Tensor> {
        Ok(self.forward_trace(images, cfg)?.0)
    }

    /// Scores together with the mean feature norm after every layer.
    pub fn forward_trace(&self, images: &Tensor, cfg: &BnConfig) -> Result<(Tensor, Vec<f64>)> {
        let x = pixel_embed(images, self.arch.curvature())?;
        let mut tape = Tape::new();
        let xi = tape.constant(x.into_coords());
        let f = self.forward_taped(&mut tape, xi, cfg, false)?;
        Ok((tape.value(f.scores).clone(), f.layer_norms))
    }
}
