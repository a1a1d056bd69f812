//! Acceptance gate: prints one PASS / FAIL / BLOCKED line per criterion.
//!
//! BLOCKED marks a criterion whose inputs are unavailable in this
//! environment (the CIFAR-10 binaries); a proxy measurement is printed on
//! the same line and the test does not fail on it.
//!
//! Set `CIFAR10_DIR` to a directory holding the binary distribution to run
//! the CIFAR criteria for real.

#![allow(clippy::field_reassign_with_default, clippy::type_complexity)]

use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use poincare_core::gyro::sample::{ball_points, tangent};
use poincare_core::gyro::{raw, BallTensor, Curvature, TangentTensor};
use poincare_core::layers::{batchnorm, fc_forward, BnConfig, BnMode, BnState, GammaMode};
use poincare_core::models::{identity_init, InitScheme};
use poincare_core::training::{strip_wall_time, train, DataSource, TrainConfig, TrainOutcome};
use poincare_core::verify::{
    bn_bench, gradcheck_all, norm_sweep, tape_ratio, tape_size_bench, BenchMethod, BenchOptions,
    GradcheckOptions, NormSweepOptions, TapeSizeOptions,
};
use poincare_core::{Mode, Tensor};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Status {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

const CURVATURES: [f64; 3] = [1.0, 0.1, 0.01];

fn curv(c: f64) -> Curvature {
    Curvature::new(c).unwrap()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}

fn gradient_certification() -> Outcome {
    let t = Instant::now();
    let report = gradcheck_all(&GradcheckOptions {
        include_layers: false,
        ..GradcheckOptions::default()
    })
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    let worst = report
        .rows
        .iter()
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let full = report.rows.iter().all(|r| r.points == 100);
    verdict(
        report.all_passed() && full && secs < 60.0,
        format!(
            "{} op slots x 3 curvatures x 100 points, worst rel err {worst:.2e} (tol 1e-5), {secs:.1}s",
            report.rows.len() / 3
        ),
    )
}

fn norm_preservation() -> Outcome {
    let opts = NormSweepOptions::default();
    let id = norm_sweep(InitScheme::Identity, &opts).unwrap();
    let nb = norm_sweep(InitScheme::Normal, &opts).unwrap();
    let base = id[0].mean_norm;
    let flat = id
        .iter()
        .map(|r| (r.mean_norm / base - 1.0).abs())
        .fold(0.0, f64::max);
    let monotone = nb.windows(2).all(|w| w[1].mean_norm < w[0].mean_norm);
    let ratio = nb[10].mean_norm / nb[0].mean_norm;
    verdict(
        flat <= 0.01 && monotone && ratio < 0.1,
        format!("identity max deviation {flat:.1e}; normal monotone={monotone}, layer10/input {ratio:.2e}"),
    )
}

fn identity_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..1000 {
        let c = curv(CURVATURES[i % 3]);
        let m = 1 + i % 8;
        let n = m + (i / 3) % 4;
        let x = BallTensor::new(ball_points(&mut rng, 1, m, c, 0.9), c).unwrap();
        let y = fc_forward(&x, &identity_init(m, n).unwrap()).unwrap();
        let mut want = x.coords().data().to_vec();
        want.resize(n, 0.0);
        let err = max_abs_diff(y.coords(), &Tensor::new(want, vec![1, n]).unwrap());
        worst = worst.max(err);
    }
    verdict(
        worst <= 1e-12,
        format!("1000 inputs, m = n and m < n, max abs err {worst:.2e}"),
    )
}

fn variance_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &cv in &[1.0, 0.1] {
        let c = curv(cv);
        for &n in &[4usize, 16] {
            for mode in [BnMode::Midpoint, BnMode::Frechet] {
                for _ in 0..5 {
                    let x = BallTensor::new(ball_points(&mut rng, 32, n, c, 0.8), c).unwrap();
                    let mut state = BnState::new(n, 1.0, GammaMode::Scalar).unwrap();
                    let gamma = 0.05 + 1.5 * norm(tangent(&mut rng, 1, 1, 1.0).data());
                    state.log_gamma = Tensor::vector(vec![gamma.ln()]);
                    state.bias = tangent(&mut rng, 1, n, 0.3).reshape(&[n]).unwrap();
                    let cfg = BnConfig {
                        mode,
                        ..BnConfig::default()
                    };
                    let y = batchnorm(&x, &mut state, &cfg).unwrap();
                    let beta = raw::exp0(&state.bias.reshape(&[1, n]).unwrap(), c);
                    let mut total = 0.0;
                    for i in 0..32 {
                        let row = Tensor::new(y.coords().row(i).to_vec(), vec![1, n]).unwrap();
                        let (d, _) = raw::distance(&row, &beta, c).unwrap();
                        total += d.data()[0].powi(2);
                    }
                    let var = total / 32.0;
                    worst = worst.max((var / gamma - 1.0).abs());
                    cases += 1;
                }
            }
        }
    }
    verdict(worst <= 1e-6, format!("{cases} batches (m = 32, n in {{4, 16}}, c in {{1, 0.1}}, both centres), max rel err {worst:.2e}"))
}

fn cifar_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("CIFAR10_DIR").map(PathBuf::from),
        Some(PathBuf::from("data/cifar-10-batches-bin")),
    ];
    candidates.into_iter().flatten().find(|d| {
        d.join("test_batch.bin").is_file()
            || d.join("cifar-10-batches-bin/test_batch.bin").is_file()
    })
}

fn synthetic_config(out: PathBuf, bn: BnMode, seed: u64, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::from_kv(
        "arch = convnet\nwidths = 4, 8\nc = 0.1\nnum_classes = 2\ndata = synthetic:8\n\
         batch_size = 32\ntrain_subset = 512\ntest_subset = 256\naugment = off",
    )
    .unwrap();
    cfg.bn_mode = bn;
    cfg.seed = seed;
    cfg.epochs = epochs;
    cfg.out_dir = out;
    cfg
}

fn cifar_config(dir: &std::path::Path, out: PathBuf, bn: BnMode, epochs: usize) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.data = DataSource::Cifar10(dir.to_path_buf());
    cfg.out_dir = out;
    cfg.bn_mode = bn;
    cfg.epochs = epochs;
    cfg
}

fn final_acc(o: &TrainOutcome) -> f64 {
    o.history.last().unwrap().test_acc
}

fn accuracy_direction(scratch: &std::path::Path) -> Outcome {
    let run = |bn: BnMode, mk: &dyn Fn(PathBuf, BnMode) -> TrainConfig| {
        train(&mk(scratch.join(format!("c5_{}", bn.as_str())), bn)).unwrap()
    };
    if let Some(dir) = cifar_dir() {
        let mk = |out, bn| cifar_config(&dir, out, bn, 10);
        let (a, b) = (run(BnMode::Midpoint, &mk), run(BnMode::Frechet, &mk));
        let gap = (final_acc(&a) - final_acc(&b)).abs() * 100.0;
        return verdict(
            gap <= 3.0,
            format!(
                "CIFAR-10 subset: midpoint {:.1}%, frechet {:.1}%, gap {gap:.1} points",
                final_acc(&a) * 100.0,
                final_acc(&b) * 100.0
            ),
        );
    }
    let mk = |out, bn| synthetic_config(out, bn, 1, 10);
    let (a, b) = (run(BnMode::Midpoint, &mk), run(BnMode::Frechet, &mk));
    let gap = (final_acc(&a) - final_acc(&b)).abs() * 100.0;
    let slower = a
        .history
        .iter()
        .zip(&b.history)
        .filter(|(m, f)| m.wall_seconds >= f.wall_seconds)
        .count();
    Outcome {
        status: Status::Blocked,
        detail: format!(
            "CIFAR-10 binaries absent; synthetic proxy: midpoint {:.1}%, frechet {:.1}%, gap {gap:.1} points; \
             midpoint epochs not faster: {slower}/{}",
            final_acc(&a) * 100.0,
            final_acc(&b) * 100.0,
            a.history.len()
        ),
    }
}

fn speed_direction() -> Outcome {
    let report = bn_bench(&BenchOptions::default()).unwrap();
    let means = report.violations(BenchMethod::Midpoint, BenchMethod::Frechet);
    let bns = report.violations(BenchMethod::BnMidpoint, BenchMethod::BnFrechet);
    let speedup = |fast, slow| {
        report
            .rows
            .iter()
            .filter(|r| r.method == fast)
            .map(|r| {
                1.0 - r.median_seconds / report.row(slow, r.batch, r.dim).unwrap().median_seconds
            })
            .fold(f64::INFINITY, f64::min)
    };
    verdict(
        means.is_empty() && bns.is_empty(),
        format!(
            "batches {{32, 128}} x dims {{4, 16}}, median of 10: min time saving mean {:.0}%, BN step {:.0}%",
            100.0 * speedup(BenchMethod::Midpoint, BenchMethod::Frechet),
            100.0 * speedup(BenchMethod::BnMidpoint, BenchMethod::BnFrechet)
        ),
    )
}

fn memory_direction() -> Outcome {
    let rows = tape_size_bench(&TapeSizeOptions::default()).unwrap();
    let get = |case: &str, m: Mode| {
        rows.iter()
            .find(|r| r.case == case && r.mode == m)
            .unwrap()
            .clone()
    };
    let (f, n) = (
        get("residual_block", Mode::Fused),
        get("residual_block", Mode::Naive),
    );
    let (rn, rb) = tape_ratio(&rows, "residual_block").unwrap();
    let locked =
        f.nodes == 58 && n.nodes == 621 && f.saved_bytes == 660112 && n.saved_bytes == 2600896;
    verdict(
        f.nodes < n.nodes && f.saved_bytes < n.saved_bytes && get("mobius_add", Mode::Fused).nodes == 1 && locked,
        format!(
            "residual block nodes {} vs {} (ratio {rn:.3}), saved bytes {} vs {} (ratio {rb:.3}, locked)",
            f.nodes, n.nodes, f.saved_bytes, n.saved_bytes
        ),
    )
}

fn algebra_suite() -> Outcome {
    let mut worst = [0.0f64; 7];
    for (k, &cv) in CURVATURES.iter().enumerate() {
        let c = curv(cv);
        let mut rng = ChaCha8Rng::seed_from_u64(80 + k as u64);
        let x = ball_points(&mut rng, 1000, 5, c, 0.9);
        let y = ball_points(&mut rng, 1000, 5, c, 0.9);
        let z = ball_points(&mut rng, 1000, 5, c, 0.9);
        let scale = c.radius();
        let (xy, _) = raw::mobius_add(&x, &y, c).unwrap();
        let (back, _) = raw::mobius_add(&x.map(|v| -v), &xy, c).unwrap();
        worst[0] = worst[0].max(max_abs_diff(&back, &y) / scale);

        let g = raw::gyration(&x, &y, &z, c).unwrap();
        let inv = raw::gyration(&y, &x, &g, c).unwrap();
        for i in 0..1000 {
            worst[1] = worst[1].max((norm(g.row(i)) - norm(z.row(i))).abs() / scale);
        }
        worst[1] = worst[1].max(max_abs_diff(&inv, &z) / scale);
        let origin = raw::gyration(&x, &y, &Tensor::zeros(&[1000, 5]), c).unwrap();
        worst[1] = worst[1].max(origin.max_abs());

        let v0 = raw::log0(&x, c);
        worst[2] = worst[2].max(max_abs_diff(&raw::exp0(&v0, c), &x) / scale);
        let (v, _) = raw::log_at(&x, &y, c).unwrap();
        worst[3] = worst[3].max(max_abs_diff(&raw::exp_at(&x, &v, c).unwrap(), &y) / scale);

        let w = tangent(&mut rng, 1000, 5, 1.0);
        let pt = raw::parallel_transport(&x, &y, &w, c).unwrap();
        for i in 0..1000 {
            let lx = 2.0 / (1.0 - cv * norm(x.row(i)).powi(2));
            let ly = 2.0 / (1.0 - cv * norm(y.row(i)).powi(2));
            let a = lx * norm(w.row(i));
            worst[4] = worst[4].max((ly * norm(pt.row(i)) - a).abs() / a.max(1.0));
        }

        let wild = tangent(&mut rng, 1000, 5, 2.0 * scale);
        let p = raw::project(&wild, c);
        worst[5] = worst[5].max(max_abs_diff(&raw::project(&p, c), &p));
        worst[5] = worst[5].max(if raw::all_inside(&p, c) { 0.0 } else { 1.0 });

        // Isometry spot-check: gyr[x, y] preserves distances.
        let (d0, _) = raw::distance(&z, &w.map(|t| t * 0.1 * scale), c).unwrap();
        let gz = raw::gyration(&x, &y, &z, c).unwrap();
        let gw = raw::gyration(&x, &y, &w.map(|t| t * 0.1 * scale), c).unwrap();
        let (d1, _) = raw::distance(&gz, &gw, c).unwrap();
        worst[6] = worst[6].max(max_abs_diff(&d0, &d1));
    }
    // Round-trips through the typed surface as well.
    let c = curv(0.1);
    let t = TangentTensor::at_origin(Tensor::new(vec![0.3, -0.4], vec![1, 2]).unwrap());
    let rt = poincare_core::gyro::log0(&poincare_core::gyro::exp0(&t, c).unwrap());
    let typed = max_abs_diff(rt.coords(), t.coords());
    let tol = [1e-10, 1e-9, 1e-8, 1e-8, 1e-9, 0.0, 1e-9];
    let ok = worst.iter().zip(tol).all(|(w, t)| *w <= t) && typed <= 1e-8;
    verdict(
        ok,
        format!(
            "1000 cases x 3 curvatures: cancel {:.1e}, gyration {:.1e}, exp0/log0 {:.1e}, exp_x/log_x {:.1e}, transport {:.1e}, project idempotent {}, isometry {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4], worst[5] == 0.0, worst[6]
        ),
    )
}

fn training_sanity(scratch: &std::path::Path) -> Outcome {
    let t = Instant::now();
    let a = train(&synthetic_config(
        scratch.join("c9_a"),
        BnMode::Midpoint,
        7,
        20,
    ))
    .unwrap();
    let b = train(&synthetic_config(
        scratch.join("c9_b"),
        BnMode::Midpoint,
        7,
        20,
    ))
    .unwrap();
    let read = |o: &TrainOutcome| std::fs::read_to_string(&o.csv_path).unwrap();
    let same = strip_wall_time(&read(&a)) == strip_wall_time(&read(&b));
    let first = a.history.iter().find(|m| m.test_acc > 0.9).map(|m| m.epoch);
    let mut detail = format!(
        "synthetic: >90% test acc at epoch {}, final {:.1}%; seeded CSVs identical={same}",
        first.map_or("never".into(), |e| e.to_string()),
        final_acc(&a) * 100.0
    );
    let mut status = if first.is_some() && same {
        Status::Pass
    } else {
        Status::Fail
    };
    match cifar_dir() {
        Some(dir) => {
            let o = train(&cifar_config(
                &dir,
                scratch.join("c9_cifar"),
                BnMode::Midpoint,
                10,
            ))
            .unwrap();
            let acc = final_acc(&o);
            detail.push_str(&format!(
                "; CIFAR-10 subset {:.1}% (need > 25%)",
                acc * 100.0
            ));
            if acc <= 0.25 {
                status = Status::Fail;
            }
        }
        None => {
            detail.push_str("; CIFAR-10 part not run (binaries absent)");
            if status == Status::Pass {
                status = Status::Blocked;
            }
        }
    }
    detail.push_str(&format!("; {:.0}s", t.elapsed().as_secs_f64()));
    Outcome { status, detail }
}

#[test]
fn acceptance() {
    let scratch = tempfile::tempdir().unwrap();
    let s = scratch.path();
    let checks: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("gradient certification", Box::new(gradient_certification)),
        ("norm preservation", Box::new(norm_preservation)),
        ("identity-layer exactness", Box::new(identity_exactness)),
        ("batchnorm variance law", Box::new(variance_law)),
        ("accuracy direction", Box::new(|| accuracy_direction(s))),
        ("speed direction", Box::new(speed_direction)),
        ("memory direction", Box::new(memory_direction)),
        ("gyrovector algebra", Box::new(algebra_suite)),
        ("training sanity", Box::new(|| training_sanity(s))),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in checks.iter().enumerate() {
        let o = check();
        let tag = match o.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Blocked => "BLOCKED",
        };
        println!("criterion {}: {tag}: {name}: {}", i + 1, o.detail);
        if o.status == Status::Fail {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
