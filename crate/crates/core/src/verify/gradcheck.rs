//! Finite-difference certification of every hand-written backward rule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gyro::sample::{ball_points, tangent};
use crate::gyro::{raw, Curvature};
use crate::layers::{
    BlockNodes, BlockSpec, BnConfig, BnMode, BnNodes, ConvSpec, FcNodes, FrechetOptions,
};
use crate::tape::{fd_vjp, relative_error, NodeId, Tape};
use crate::tensor::Tensor;

use super::csv_f64;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub seed: u64,
    pub curvatures: Vec<f64>,
    /// Random configurations per primitive slot and curvature.
    pub points: usize,
    /// Random configurations per layer and curvature.
    pub layer_points: usize,
    pub h: f64,
    pub tol_primitive: f64,
    pub tol_layer: f64,
    /// Points are drawn with norm at most this fraction of the radius.
    pub radius_fraction: f64,
    pub include_layers: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            curvatures: vec![1.0, 0.1, 0.01],
            points: 100,
            layer_points: 5,
            h: 1e-6,
            tol_primitive: 1e-5,
            tol_layer: 1e-4,
            radius_fraction: 0.7,
            include_layers: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradRow {
    pub op: String,
    pub c: f64,
    pub max_dim: usize,
    pub points: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
}

impl GradReport {
    pub fn all_passed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.passed)
    }

    pub fn failures(&self) -> Vec<&GradRow> {
        self.rows.iter().filter(|r| !r.passed).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("op,c,max_dim,points,max_rel_error,tol,passed\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.op,
                csv_f64(r.c),
                r.max_dim,
                r.points,
                csv_f64(r.max_rel_error),
                csv_f64(r.tol),
                r.passed
            ));
        }
        s
    }
}

/// Accumulates the worst error of one slot across sampled points.
struct Slot {
    op: &'static str,
    worst: f64,
    max_dim: usize,
    points: usize,
}

impl Slot {
    fn new(op: &'static str) -> Self {
        Self {
            op,
            worst: 0.0,
            max_dim: 0,
            points: 0,
        }
    }

    fn record(&mut self, err: f64, dim: usize) {
        // A failed probe counts as an infinite error.
        self.worst = if err.is_nan() {
            f64::INFINITY
        } else {
            self.worst.max(err)
        };
        self.max_dim = self.max_dim.max(dim);
        self.points += 1;
    }

    fn row(&self, c: f64, tol: f64) -> GradRow {
        GradRow {
            op: self.op.to_string(),
            c,
            max_dim: self.max_dim,
            points: self.points,
            max_rel_error: self.worst,
            tol,
            passed: self.points > 0 && self.worst <= tol,
        }
    }
}

fn compare(
    manual: Option<Tensor>,
    f: impl FnMut(&Tensor) -> Result<Tensor>,
    x: &Tensor,
    u: &Tensor,
    h: f64,
) -> f64 {
    match (manual, fd_vjp(f, x, u, h)) {
        (Some(m), Ok(r)) if m.shape() == r.shape() => relative_error(&m, &r),
        _ => f64::NAN,
    }
}

const PRIMITIVE_SLOTS: [&str; 23] = [
    "mobius_add/x",
    "mobius_add/y",
    "mobius_scalar_mul/x",
    "gyration/a",
    "gyration/b",
    "gyration/w",
    "distance/x",
    "distance/y",
    "conformal_factor/x",
    "exp0/v",
    "log0/y",
    "exp_at/x",
    "exp_at/v",
    "log_at/x",
    "log_at/y",
    "parallel_transport/x",
    "parallel_transport/y",
    "parallel_transport/v",
    "project/inside",
    "project/outside",
    "exp_at_log_at/x",
    "exp_at_log_at/y",
    "exp_at_log_at/identity",
];

fn primitives(rng: &mut ChaCha8Rng, c: Curvature, opts: &GradcheckOptions) -> Vec<Slot> {
    let mut slots: Vec<Slot> = PRIMITIVE_SLOTS.iter().map(|s| Slot::new(s)).collect();
    let h = opts.h;
    let frac = opts.radius_fraction;
    for i in 0..opts.points {
        let dim = 2 + i % 7;
        let x = ball_points(rng, 1, dim, c, frac);
        let y = ball_points(rng, 1, dim, c, frac);
        let w = ball_points(rng, 1, dim, c, frac);
        let u = tangent(rng, 1, dim, 1.0);
        let u1 = tangent(rng, 1, 1, 1.0);
        let v = tangent(rng, 1, dim, 0.5 * c.radius());
        let r: f64 = rng.random_range(-2.0..2.0);
        let mut k = 0;
        let mut put = |err: f64| {
            slots[k].record(err, dim);
            k += 1;
        };

        let s = raw::mobius_scalars(&x, &y, c);
        let (gx, gy) = raw::mobius_add_backward(&u, &x, &y, &s, c).ok().unzip();
        put(compare(gx, |t| Ok(raw::mobius_add(t, &y, c)?.0), &x, &u, h));
        put(compare(gy, |t| Ok(raw::mobius_add(&x, t, c)?.0), &y, &u, h));
        let g = raw::mobius_scalar_mul_backward(&u, r, &x, c).ok();
        put(compare(
            g,
            |t| Ok(raw::mobius_scalar_mul(r, t, c)),
            &x,
            &u,
            h,
        ));

        let g = raw::gyration_backward(&u, &x, &y, &w, c).ok();
        let (ga, gb, gw) = (
            g.clone().map(|g| g.0),
            g.clone().map(|g| g.1),
            g.map(|g| g.2),
        );
        put(compare(ga, |t| raw::gyration(t, &y, &w, c), &x, &u, h));
        put(compare(gb, |t| raw::gyration(&x, t, &w, c), &y, &u, h));
        put(compare(gw, |t| raw::gyration(&x, &y, t, c), &w, &u, h));

        let z = raw::log_at_z(&x, &y, c).expect("same shape");
        let (gx, gy) = raw::distance_backward(&u1, &x, &y, &z, c).ok().unzip();
        put(compare(gx, |t| Ok(raw::distance(t, &y, c)?.0), &x, &u1, h));
        put(compare(gy, |t| Ok(raw::distance(&x, t, c)?.0), &y, &u1, h));

        let g = raw::conformal_factor_backward(&u1, &x, c).ok();
        put(compare(g, |t| Ok(raw::conformal_factor(t, c)), &x, &u1, h));
        let g = raw::exp0_backward(&u, &v, c).ok();
        put(compare(g, |t| Ok(raw::exp0(t, c)), &v, &u, h));
        let g = raw::log0_backward(&u, &x, c).ok();
        put(compare(g, |t| Ok(raw::log0(t, c)), &x, &u, h));

        let ze = raw::exp_at_z(&x, &v, c).expect("same shape");
        let (gx, gv) = raw::exp_at_backward(&u, &x, &v, &ze, c).ok().unzip();
        put(compare(gx, |t| raw::exp_at(t, &v, c), &x, &u, h));
        put(compare(gv, |t| raw::exp_at(&x, t, c), &v, &u, h));

        let (gx, gy) = raw::log_at_backward(&u, &x, &y, &z, c).ok().unzip();
        put(compare(gx, |t| Ok(raw::log_at(t, &y, c)?.0), &x, &u, h));
        put(compare(gy, |t| Ok(raw::log_at(&x, t, c)?.0), &y, &u, h));

        let g = raw::parallel_transport_backward(&u, &x, &y, &v, c).ok();
        let (gx, gy, gv) = (
            g.clone().map(|g| g.0),
            g.clone().map(|g| g.1),
            g.map(|g| g.2),
        );
        put(compare(
            gx,
            |t| raw::parallel_transport(t, &y, &v, c),
            &x,
            &u,
            h,
        ));
        put(compare(
            gy,
            |t| raw::parallel_transport(&x, t, &v, c),
            &y,
            &u,
            h,
        ));
        put(compare(
            gv,
            |t| raw::parallel_transport(&x, &y, t, c),
            &v,
            &u,
            h,
        ));

        // Interior points take the identity branch: the error is exactly 0.
        let g = raw::project_backward(&u, &x, c).ok();
        put(compare(g, |t| Ok(raw::project(t, c)), &x, &u, h));
        let norm = x.row(0).iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-3);
        let outside = x.scale(rng.random_range(1.5..4.0) * c.radius() / norm);
        let g = raw::project_backward(&u, &outside, c).ok();
        put(compare(g, |t| Ok(raw::project(t, c)), &outside, &u, h));

        // exp_x(log_x y) = y: taped gradients vs FD, and the y-gradient vs u.
        let (gx, gy) = roundtrip_grads(&x, &y, &u, c).ok().unzip();
        put(compare(gx, |t| roundtrip(t, &y, c), &x, &u, h));
        put(compare(gy.clone(), |t| roundtrip(&x, t, c), &y, &u, h));
        put(gy.map_or(f64::NAN, |g| relative_error(&g, &u)));
    }
    slots
}

fn roundtrip(x: &Tensor, y: &Tensor, c: Curvature) -> Result<Tensor> {
    let (v, _) = raw::log_at(x, y, c)?;
    raw::exp_at(x, &v, c)
}

fn roundtrip_grads(x: &Tensor, y: &Tensor, u: &Tensor, c: Curvature) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let xi = tape.param(x.clone());
    let yi = tape.param(y.clone());
    let v = tape.log_at(xi, yi, c)?;
    let out = tape.exp_at(xi, v, c)?;
    let g = tape.backward_with_seed(out, u.clone())?;
    let get = |id, like: &Tensor| {
        g.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    };
    Ok((get(xi, x), get(yi, y)))
}

type Build<'a> = dyn Fn(&mut Tape, &[NodeId]) -> Result<NodeId> + 'a;

/// Worst relative error over all inputs of a taped layer.
fn layer_error(inputs: &[Tensor], build: &Build<'_>, rng: &mut ChaCha8Rng, h: f64) -> f64 {
    let mut run = || -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = inputs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &ids)?;
        let w = tangent(rng, 1, tape.value(out).numel(), 1.0).reshape(tape.shape(out))?;
        let grads = tape.backward_with_seed(out, w.clone())?;
        let one = Tensor::scalar(1.0);
        let mut worst = 0.0f64;
        for (k, id) in ids.iter().enumerate() {
            let f = |x: &Tensor| {
                let mut tp = Tape::new();
                let ids: Vec<NodeId> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, v)| tp.constant(if j == k { x.clone() } else { v.clone() }))
                    .collect();
                let out = build(&mut tp, &ids)?;
                let dot = tp
                    .value(out)
                    .data()
                    .iter()
                    .zip(w.data())
                    .map(|(a, b)| a * b)
                    .sum();
                Ok(Tensor::scalar(dot))
            };
            let reference = fd_vjp(f, &inputs[k], &one, h)?;
            let manual = grads
                .get(*id)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
            worst = worst.max(relative_error(&manual, &reference));
        }
        Ok(worst)
    };
    run().unwrap_or(f64::NAN)
}

fn bn_nodes(b: NodeId, g: NodeId) -> BnNodes {
    BnNodes {
        bias: b,
        log_gamma: g,
        frozen: None,
    }
}

fn layers(rng: &mut ChaCha8Rng, c: Curvature, opts: &GradcheckOptions) -> Vec<Slot> {
    let names = [
        "mlr_scores",
        "poincare_fc",
        "beta_concat",
        "relu_p",
        "poincare_midpoint",
        "frechet_mean",
        "batchnorm/midpoint",
        "batchnorm/frechet",
        "conv2d",
        "residual_block",
    ];
    let mut slots: Vec<Slot> = names.iter().map(|s| Slot::new(s)).collect();
    let h = opts.h;
    let frac = opts.radius_fraction;
    for i in 0..opts.layer_points {
        let m = 2 + i % 3;
        let n = 2 + (i + 1) % 3;
        let x = ball_points(rng, 5, m, c, frac);
        let z = tangent(rng, m, n, 0.7);
        let r = tangent(rng, 1, n, 0.3).reshape(&[n]).expect("vector");
        let xzr = [x.clone(), z, r];
        let mut e =
            |k: usize, inputs: &[Tensor], b: &Build<'_>, dim: usize, rng: &mut ChaCha8Rng| {
                let err = layer_error(inputs, b, rng, h);
                slots[k].record(err, dim);
            };
        e(0, &xzr, &|t, a| t.mlr_scores(a[0], a[1], a[2], c), m, rng);
        e(1, &xzr, &|t, a| t.poincare_fc(a[0], a[1], a[2], c), m, rng);
        let y = ball_points(rng, 5, n, c, frac);
        e(
            2,
            &[x.clone(), y],
            &|t, a| t.beta_concat(&[a[0], a[1]], c),
            m + n,
            rng,
        );
        e(
            3,
            std::slice::from_ref(&x),
            &|t, a| t.relu_p(a[0], c),
            m,
            rng,
        );
        e(
            4,
            std::slice::from_ref(&x),
            &|t, a| t.poincare_midpoint(a[0], c),
            m,
            rng,
        );
        e(
            5,
            std::slice::from_ref(&x),
            &|t, a| Ok(t.frechet_mean(a[0], c, FrechetOptions::default())?.0),
            m,
            rng,
        );
        let bias = tangent(rng, 1, m, 0.3).reshape(&[m]).expect("vector");
        let lg = tangent(rng, 1, m, 0.2).reshape(&[m]).expect("vector");
        for (k, mode) in [(6, BnMode::Midpoint), (7, BnMode::Frechet)] {
            let cfg = BnConfig {
                mode,
                ..BnConfig::default()
            };
            e(
                k,
                &[x.clone(), bias.clone(), lg.clone()],
                &move |t, a| Ok(t.batchnorm(a[0], a[1], a[2], c, &cfg, None)?.0),
                m,
                rng,
            );
        }
        let spec = ConvSpec::same(3, 1 + i % 2, 2, 3).expect("valid conv");
        let fmap = ball_points(rng, 2 * 4 * 4, 2, c, frac)
            .reshape(&[2, 4, 4, 2])
            .expect("map");
        let cz = tangent(rng, spec.fan_in(), 3, 0.4);
        let cr = tangent(rng, 1, 3, 0.1).reshape(&[3]).expect("vector");
        e(
            8,
            &[fmap.clone(), cz, cr],
            &move |t, a| t.conv2d(a[0], a[1], a[2], &spec, c),
            18,
            rng,
        );

        let bspec = BlockSpec::basic(2, 3, 1 + i % 2).expect("valid block");
        let mut inputs = vec![fmap];
        for conv in [&bspec.conv1, &bspec.conv2] {
            inputs.push(tangent(rng, conv.fan_in(), conv.c_out, 0.4));
            inputs.push(
                tangent(rng, 1, conv.c_out, 0.1)
                    .reshape(&[conv.c_out])
                    .expect("vector"),
            );
            inputs.push(tangent(rng, 1, 3, 0.2).reshape(&[3]).expect("vector"));
            inputs.push(tangent(rng, 1, 3, 0.2).reshape(&[3]).expect("vector"));
        }
        if let Some(d) = bspec.down {
            inputs.push(tangent(rng, d.fan_in(), d.c_out, 0.4));
            inputs.push(Tensor::zeros(&[d.c_out]));
        }
        let cfg = BnConfig::default();
        e(
            9,
            &inputs,
            &move |t, a| {
                let nodes = BlockNodes {
                    conv1: FcNodes { z: a[1], r: a[2] },
                    bn1: bn_nodes(a[3], a[4]),
                    conv2: FcNodes { z: a[5], r: a[6] },
                    bn2: bn_nodes(a[7], a[8]),
                    down: (a.len() > 9).then(|| FcNodes { z: a[9], r: a[10] }),
                };
                Ok(t.residual_block(a[0], &bspec, &nodes, c, &cfg)?.0)
            },
            27,
            rng,
        );
    }
    slots
}

/// Checks every backward rule at every configured curvature.
pub fn gradcheck_all(opts: &GradcheckOptions) -> Result<GradReport> {
    let mut report = GradReport::default();
    for (ci, &cv) in opts.curvatures.iter().enumerate() {
        let c = Curvature::new(cv)?;
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(ci as u64));
        for s in primitives(&mut rng, c, opts) {
            report.rows.push(s.row(cv, opts.tol_primitive));
        }
        if opts.include_layers {
            for s in layers(&mut rng, c, opts) {
                report.rows.push(s.row(cv, opts.tol_layer));
            }
        }
    }
    Ok(report)
}
