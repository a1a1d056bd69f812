use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use poincare_core::gyro::sample::{ball_points, tangent};
use poincare_core::gyro::{raw, BallTensor, Curvature};
use poincare_core::layers::{
    fc_forward, frechet_mean, poincare_midpoint, BnConfig, BnMode, ConvSpec, FcParams,
    FrechetOptions,
};
use poincare_core::{Mode, Tape, Tensor};

fn curvature() -> Curvature {
    Curvature::new(0.1).unwrap()
}

fn mobius(c: &mut Criterion) {
    let cv = curvature();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = ball_points(&mut rng, 256, 16, cv, 0.7);
    let y = ball_points(&mut rng, 256, 16, cv, 0.7);
    c.bench_function("mobius_add/forward", |b| {
        b.iter(|| raw::mobius_add(black_box(&x), black_box(&y), cv).unwrap())
    });
    let mut group = c.benchmark_group("mobius_add/forward_backward");
    for mode in [Mode::Fused, Mode::Naive] {
        group.bench_function(format!("{mode:?}"), |b| {
            b.iter(|| {
                let mut tape = Tape::with_mode(mode);
                let xi = tape.param(x.clone());
                let yi = tape.param(y.clone());
                let s = tape.mobius_add(xi, yi, cv).unwrap();
                let root = tape.sum_all(s).unwrap();
                tape.backward(root).unwrap()
            })
        });
    }
    group.finish();
}

fn means(c: &mut Criterion) {
    let cv = curvature();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut group = c.benchmark_group("centre");
    for batch in [32usize, 128] {
        let x = BallTensor::new(ball_points(&mut rng, batch, 16, cv, 0.7), cv).unwrap();
        group.bench_with_input(BenchmarkId::new("midpoint", batch), &x, |b, x| {
            b.iter(|| poincare_midpoint(black_box(x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("frechet", batch), &x, |b, x| {
            b.iter(|| frechet_mean(black_box(x), FrechetOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn batchnorm(c: &mut Criterion) {
    let cv = curvature();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = ball_points(&mut rng, 128, 16, cv, 0.7);
    let mut group = c.benchmark_group("batchnorm/forward_backward");
    for mode in [BnMode::Midpoint, BnMode::Frechet] {
        let cfg = BnConfig {
            mode,
            ..BnConfig::default()
        };
        group.bench_function(mode.as_str(), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let xi = tape.param(x.clone());
                let bias = tape.param(Tensor::zeros(&[16]));
                let lg = tape.param(Tensor::zeros(&[16]));
                let (out, _) = tape.batchnorm(xi, bias, lg, cv, &cfg, None).unwrap();
                let root = tape.sum_all(out).unwrap();
                tape.backward(root).unwrap()
            })
        });
    }
    group.finish();
}

fn layers(c: &mut Criterion) {
    let cv = curvature();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = BallTensor::new(ball_points(&mut rng, 256, 16, cv, 0.7), cv).unwrap();
    let p = FcParams::new(tangent(&mut rng, 16, 16, 0.3), Tensor::zeros(&[16])).unwrap();
    c.bench_function("poincare_fc/256x16", |b| {
        b.iter(|| fc_forward(black_box(&x), &p).unwrap())
    });

    let spec = ConvSpec::same(3, 1, 8, 8).unwrap();
    let map = ball_points(&mut rng, 4 * 16 * 16, 8, cv, 0.7)
        .reshape(&[4, 16, 16, 8])
        .unwrap();
    let z = tangent(&mut rng, spec.fan_in(), 8, 0.2);
    c.bench_function("conv2d/3x3_8to8_16x16_b4/forward_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let xi = tape.param(map.clone());
            let zi = tape.param(z.clone());
            let ri = tape.param(Tensor::zeros(&[8]));
            let out = tape.conv2d(xi, zi, ri, &spec, cv).unwrap();
            let root = tape.sum_all(out).unwrap();
            tape.backward(root).unwrap()
        })
    });
}

criterion_group!(benches, mobius, means, batchnorm, layers);
criterion_main!(benches);
