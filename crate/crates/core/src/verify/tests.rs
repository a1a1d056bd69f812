use super::*;
use crate::gyro::sample::ball_points;
use crate::gyro::Curvature;
use crate::models::InitScheme;
use crate::tape::Mode;

#[test]
fn gradcheck_passes_everywhere() {
    let report = gradcheck_all(&GradcheckOptions::default()).unwrap();
    assert!(report.all_passed(), "{:?}", report.failures());
    // 23 primitive slots and 10 layers at each of three curvatures.
    assert_eq!(report.rows.len(), 3 * (23 + 10));
    for row in report.rows.iter().filter(|r| r.tol == 1e-5) {
        assert_eq!(row.points, 100, "{}", row.op);
    }
    assert!(report
        .to_csv()
        .starts_with("op,c,max_dim,points,max_rel_error,tol,passed\n"));
}

#[test]
fn interior_projection_gradient_is_exact() {
    let report = gradcheck_all(&GradcheckOptions {
        include_layers: false,
        points: 20,
        ..GradcheckOptions::default()
    })
    .unwrap();
    // FD of the identity carries only rounding noise.
    for row in report.rows.iter().filter(|r| r.op == "project/inside") {
        assert!(row.max_rel_error < 1e-9, "{row:?}");
    }
    for row in report
        .rows
        .iter()
        .filter(|r| r.op == "exp_at_log_at/identity")
    {
        assert!(row.max_rel_error < 1e-12, "{row:?}");
    }
}

#[test]
fn gradcheck_reports_failures() {
    let report = gradcheck_all(&GradcheckOptions {
        include_layers: false,
        points: 3,
        tol_primitive: 0.0,
        ..GradcheckOptions::default()
    })
    .unwrap();
    assert!(!report.all_passed());
}

#[test]
fn identity_stack_preserves_norm() {
    let rows = norm_sweep(InitScheme::Identity, &NormSweepOptions::default()).unwrap();
    assert_eq!(rows.len(), 11);
    let base = rows[0].mean_norm;
    for r in &rows {
        assert!((r.mean_norm / base - 1.0).abs() < 1e-12, "{r:?}");
    }
}

#[test]
fn depth_one_identity_returns_input() {
    let opts = NormSweepOptions {
        depth: 1,
        ..NormSweepOptions::default()
    };
    let rows = norm_sweep(InitScheme::Identity, &opts).unwrap();
    assert!((rows[1].mean_norm - rows[0].mean_norm).abs() < 1e-14);
}

#[test]
fn normal_stack_collapses_towards_origin() {
    for seed in 0..5 {
        let opts = NormSweepOptions {
            seed,
            ..NormSweepOptions::default()
        };
        let rows = norm_sweep(InitScheme::Normal, &opts).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].mean_norm < w[0].mean_norm, "seed {seed}: {w:?}");
        }
        assert!(rows[10].mean_norm < 0.1 * rows[0].mean_norm);
    }
}

#[test]
fn norm_sweep_csv_has_log_norms() {
    let rows = norm_sweep(InitScheme::Identity, &NormSweepOptions::default()).unwrap();
    let csv = norm_sweep_csv(&rows);
    assert_eq!(csv.lines().count(), 12);
    let last: Vec<&str> = csv.lines().last().unwrap().split(',').collect();
    let log: f64 = last[3].parse().unwrap();
    assert!((log - rows[10].mean_norm.ln()).abs() < 1e-15);
}

#[test]
fn norm_sweep_rejects_zero_depth() {
    let opts = NormSweepOptions {
        depth: 0,
        ..NormSweepOptions::default()
    };
    assert!(norm_sweep(InitScheme::Identity, &opts).is_err());
}

#[test]
fn fused_tape_is_smaller() {
    let rows = tape_size_bench(&TapeSizeOptions::default()).unwrap();
    let get = |case: &str, mode: Mode| {
        rows.iter()
            .find(|r| r.case == case && r.mode == mode)
            .unwrap()
    };
    let (f, n) = (
        get("residual_block", Mode::Fused),
        get("residual_block", Mode::Naive),
    );
    assert!(f.nodes < n.nodes && f.saved_bytes < n.saved_bytes);
    assert_eq!(get("mobius_add", Mode::Fused).nodes, 1);
    assert!(get("mobius_add", Mode::Naive).nodes > 1);
}

/// Measured once for the default block (4 -> 4 channels, batch 4, 8x8).
#[test]
fn residual_block_tape_regression() {
    let rows = tape_size_bench(&TapeSizeOptions::default()).unwrap();
    let get = |mode: Mode| {
        rows.iter()
            .find(|r| r.case == "residual_block" && r.mode == mode)
            .unwrap()
    };
    assert_eq!(
        (get(Mode::Fused).nodes, get(Mode::Fused).saved_bytes),
        (58, 660112)
    );
    assert_eq!(
        (get(Mode::Naive).nodes, get(Mode::Naive).saved_bytes),
        (621, 2600896)
    );
    let (nodes, bytes) = tape_ratio(&rows, "residual_block").unwrap();
    assert!((nodes - 58.0 / 621.0).abs() < 1e-12);
    assert!((bytes - 660112.0 / 2600896.0).abs() < 1e-12);
}

#[test]
fn identical_points_share_both_centres() {
    let c = Curvature::new(0.1).unwrap();
    let p = ball_points(
        &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3),
        1,
        4,
        c,
        0.5,
    );
    let batch = crate::tensor::Tensor::new(p.data().repeat(32), vec![32, 4]).unwrap();
    let ball = crate::BallTensor::new(batch, c).unwrap();
    let mid = crate::layers::poincare_midpoint(&ball).unwrap();
    let (fm, _) = crate::layers::frechet_mean(&ball, Default::default()).unwrap();
    for j in 0..4 {
        assert!((mid.coords().data()[j] - p.data()[j]).abs() < 1e-12);
        assert!((fm.coords().data()[j] - p.data()[j]).abs() < 1e-12);
    }
}

#[test]
fn midpoint_is_faster_at_reference_size() {
    let report = bn_bench(&BenchOptions {
        batch_sizes: vec![128],
        dims: vec![16],
        ..BenchOptions::default()
    })
    .unwrap();
    assert!(report
        .violations(BenchMethod::Midpoint, BenchMethod::Frechet)
        .is_empty());
    assert!(report
        .violations(BenchMethod::BnMidpoint, BenchMethod::BnFrechet)
        .is_empty());
    let row = report.row(BenchMethod::Midpoint, 128, 16).unwrap();
    assert!(row.centre_distance.is_finite() && row.frechet_converged);
    assert_eq!(report.to_csv().lines().count(), 5);
}

#[test]
fn bench_needs_ten_repeats() {
    let opts = BenchOptions {
        repeats: 9,
        ..BenchOptions::default()
    };
    assert!(bn_bench(&opts).is_err());
}

#[test]
fn median_time_counts_warmups_and_samples() {
    let mut calls = 0;
    let t = median_time(
        || {
            calls += 1;
            Ok(())
        },
        2,
        10,
        0.0,
    )
    .unwrap();
    assert!(t >= 0.0);
    assert_eq!(calls, 2 + 1 + 10);
}
