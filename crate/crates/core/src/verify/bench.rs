//! Wall-clock comparison of midpoint and Frechet centring, and the tape
//! size comparison of fused and naive recording.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gyro::sample::{ball_points, tangent};
use crate::gyro::{raw, BallTensor, Curvature};
use crate::layers::{
    frechet_mean, poincare_midpoint, BlockNodes, BlockSpec, BnConfig, BnMode, BnNodes, FcNodes,
    FrechetInfo, FrechetOptions,
};
use crate::tape::{Mode, NodeId, Tape};
use crate::tensor::Tensor;

use super::csv_f64;

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub batch_sizes: Vec<usize>,
    pub dims: Vec<usize>,
    pub c: f64,
    /// Timed samples per measurement; the median is reported.
    pub repeats: usize,
    pub warmups: usize,
    /// Each sample repeats the call until it lasts at least this long.
    pub min_sample_seconds: f64,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            batch_sizes: vec![32, 128],
            dims: vec![4, 16],
            c: 0.1,
            repeats: 10,
            warmups: 2,
            min_sample_seconds: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchMethod {
    Midpoint,
    Frechet,
    BnMidpoint,
    BnFrechet,
}

impl BenchMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMethod::Midpoint => "midpoint",
            BenchMethod::Frechet => "frechet",
            BenchMethod::BnMidpoint => "bn_midpoint",
            BenchMethod::BnFrechet => "bn_frechet",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub method: BenchMethod,
    pub batch: usize,
    pub dim: usize,
    pub repeats: usize,
    /// Median seconds per call.
    pub median_seconds: f64,
    /// Distance between the midpoint and the Frechet mean of the batch.
    pub centre_distance: f64,
    pub frechet_iterations: usize,
    pub frechet_converged: bool,
}

#[derive(Clone, Debug, Default)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, method: BenchMethod, batch: usize, dim: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.batch == batch && r.dim == dim)
    }

    /// `(batch, dim)` pairs where `fast` is not strictly faster than `slow`.
    pub fn violations(&self, fast: BenchMethod, slow: BenchMethod) -> Vec<(usize, usize)> {
        self.rows
            .iter()
            .filter(|r| r.method == fast)
            .filter(|r| {
                self.row(slow, r.batch, r.dim)
                    .is_none_or(|s| r.median_seconds >= s.median_seconds)
            })
            .map(|r| (r.batch, r.dim))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "method,batch,dim,repeats,median_seconds,centre_distance,frechet_iterations,frechet_converged\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.method.as_str(),
                r.batch,
                r.dim,
                r.repeats,
                csv_f64(r.median_seconds),
                csv_f64(r.centre_distance),
                r.frechet_iterations,
                r.frechet_converged
            ));
        }
        s
    }
}

/// Median per-call time of `f` after `warmups` untimed calls.
pub fn median_time(
    mut f: impl FnMut() -> Result<()>,
    warmups: usize,
    repeats: usize,
    min_sample: f64,
) -> Result<f64> {
    for _ in 0..warmups {
        f()?;
    }
    let mut inner = 1usize;
    loop {
        let t = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        if t.elapsed().as_secs_f64() >= min_sample || inner >= 1 << 16 {
            break;
        }
        inner *= 2;
    }
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        for _ in 0..inner {
            f()?;
        }
        samples.push(t.elapsed().as_secs_f64() / inner as f64);
    }
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    Ok(if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        0.5 * (samples[mid - 1] + samples[mid])
    })
}

fn bn_step(x: &Tensor, bias: &Tensor, lg: &Tensor, c: Curvature, mode: BnMode) -> Result<()> {
    let mut tape = Tape::new();
    let xi = tape.param(x.clone());
    let b = tape.param(bias.clone());
    let g = tape.param(lg.clone());
    let cfg = BnConfig {
        mode,
        ..BnConfig::default()
    };
    let (out, _) = tape.batchnorm(xi, b, g, c, &cfg, None)?;
    let sum = tape.sum_all(out)?;
    tape.backward(sum)?;
    Ok(())
}

/// Times both centring methods, alone and inside a full batch-norm
/// forward and backward pass, on identical random batches.
pub fn bn_bench(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.repeats < 10 {
        return Err(Error::contract("timings need at least 10 repetitions"));
    }
    let c = Curvature::new(opts.c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let fopts = FrechetOptions::default();
    let mut report = BenchReport::default();
    for &batch in &opts.batch_sizes {
        for &dim in &opts.dims {
            let x = ball_points(&mut rng, batch, dim, c, 0.7);
            let bias = tangent(&mut rng, 1, dim, 0.2).reshape(&[dim])?;
            let lg = Tensor::zeros(&[dim]);
            let ball = BallTensor::new(x.clone(), c)?;
            let mid = poincare_midpoint(&ball)?;
            let (fm, info): (BallTensor, FrechetInfo) = match frechet_mean(&ball, fopts) {
                Ok(r) => r,
                Err(Error::NoConvergence {
                    iterations,
                    last_step,
                    last_iterate,
                }) => (
                    BallTensor::new(last_iterate, c)?,
                    FrechetInfo {
                        iterations,
                        converged: false,
                        last_step,
                    },
                ),
                Err(e) => return Err(e),
            };
            let (d, _) = raw::distance(
                &mid.coords().reshape(&[1, dim])?,
                &fm.coords().reshape(&[1, dim])?,
                c,
            )?;
            let centre_distance = d.data()[0];
            let time = |method: BenchMethod| -> Result<f64> {
                let (w, r, m) = (opts.warmups, opts.repeats, opts.min_sample_seconds);
                match method {
                    BenchMethod::Midpoint => {
                        median_time(|| poincare_midpoint(&ball).map(drop), w, r, m)
                    }
                    BenchMethod::Frechet => median_time(
                        || match frechet_mean(&ball, fopts) {
                            Ok(_) | Err(Error::NoConvergence { .. }) => Ok(()),
                            Err(e) => Err(e),
                        },
                        w,
                        r,
                        m,
                    ),
                    BenchMethod::BnMidpoint => {
                        median_time(|| bn_step(&x, &bias, &lg, c, BnMode::Midpoint), w, r, m)
                    }
                    BenchMethod::BnFrechet => {
                        median_time(|| bn_step(&x, &bias, &lg, c, BnMode::Frechet), w, r, m)
                    }
                }
            };
            for method in [
                BenchMethod::Midpoint,
                BenchMethod::Frechet,
                BenchMethod::BnMidpoint,
                BenchMethod::BnFrechet,
            ] {
                report.rows.push(BenchRow {
                    method,
                    batch,
                    dim,
                    repeats: opts.repeats,
                    median_seconds: time(method)?,
                    centre_distance,
                    frechet_iterations: info.iterations,
                    frechet_converged: info.converged,
                });
            }
        }
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TapeRow {
    pub case: String,
    pub mode: Mode,
    pub nodes: usize,
    pub saved_bytes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TapeSizeOptions {
    pub block: BlockSpec,
    pub batch: usize,
    pub side: usize,
    pub c: f64,
    pub seed: u64,
}

impl Default for TapeSizeOptions {
    fn default() -> Self {
        Self {
            block: BlockSpec::basic(4, 4, 1).expect("valid block"),
            batch: 4,
            side: 8,
            c: 0.1,
            seed: 0,
        }
    }
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Fused => "fused",
        Mode::Naive => "naive",
    }
}

/// Records one residual-block forward and backward pass, and one Mobius
/// addition, in both tape modes.
pub fn tape_size_bench(opts: &TapeSizeOptions) -> Result<Vec<TapeRow>> {
    let c = Curvature::new(opts.c)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let spec = opts.block;
    let ci = spec.conv1.c_in;
    let co = spec.conv2.c_out;
    let x = ball_points(&mut rng, opts.batch * opts.side * opts.side, ci, c, 0.7)
        .reshape(&[opts.batch, opts.side, opts.side, ci])?;
    let mut params = Vec::new();
    for conv in [&spec.conv1, &spec.conv2] {
        params.push(tangent(&mut rng, conv.fan_in(), conv.c_out, 0.3));
        params.push(Tensor::zeros(&[conv.c_out]));
        params.push(tangent(&mut rng, 1, co, 0.1).reshape(&[co])?);
        params.push(Tensor::zeros(&[co]));
    }
    if let Some(d) = spec.down {
        params.push(tangent(&mut rng, d.fan_in(), d.c_out, 0.3));
        params.push(Tensor::zeros(&[d.c_out]));
    }
    let p = ball_points(&mut rng, opts.batch, 16, c, 0.7);
    let q = ball_points(&mut rng, opts.batch, 16, c, 0.7);

    let mut rows = Vec::new();
    for mode in [Mode::Fused, Mode::Naive] {
        let mut tape = Tape::with_mode(mode);
        let xi = tape.param(x.clone());
        let ids: Vec<NodeId> = params.iter().map(|t| tape.param(t.clone())).collect();
        let before = tape.len();
        let bn = |b: NodeId, g: NodeId| BnNodes {
            bias: b,
            log_gamma: g,
            frozen: None,
        };
        let nodes = BlockNodes {
            conv1: FcNodes {
                z: ids[0],
                r: ids[1],
            },
            bn1: bn(ids[2], ids[3]),
            conv2: FcNodes {
                z: ids[4],
                r: ids[5],
            },
            bn2: bn(ids[6], ids[7]),
            down: (ids.len() > 8).then(|| FcNodes {
                z: ids[8],
                r: ids[9],
            }),
        };
        let (out, _) = tape.residual_block(xi, &spec, &nodes, c, &BnConfig::default())?;
        let root = tape.sum_all(out)?;
        tape.backward(root)?;
        rows.push(TapeRow {
            case: "residual_block".into(),
            mode,
            nodes: tape.len() - before,
            saved_bytes: tape.saved_bytes(),
        });

        let mut tape = Tape::with_mode(mode);
        let a = tape.param(p.clone());
        let b = tape.param(q.clone());
        let before = tape.len();
        let s = tape.mobius_add(a, b, c)?;
        let root = tape.sum_all(s)?;
        tape.backward(root)?;
        rows.push(TapeRow {
            case: "mobius_add".into(),
            mode,
            // The reduction to a scalar root is not part of the primitive.
            nodes: tape.len() - before - 1,
            saved_bytes: tape.saved_bytes(),
        });
    }
    Ok(rows)
}

pub fn tape_rows_csv(rows: &[TapeRow]) -> String {
    let mut s = String::from("case,mode,nodes,saved_bytes\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.case,
            mode_name(r.mode),
            r.nodes,
            r.saved_bytes
        ));
    }
    s
}

/// `fused / naive` for one case, by node count and by saved bytes.
pub fn tape_ratio(rows: &[TapeRow], case: &str) -> Option<(f64, f64)> {
    let get = |m: Mode| rows.iter().find(|r| r.case == case && r.mode == m);
    let (f, n) = (get(Mode::Fused)?, get(Mode::Naive)?);
    Some((
        f.nodes as f64 / n.nodes as f64,
        f.saved_bytes as f64 / n.saved_bytes as f64,
    ))
}
