use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::models::{ArchSpec, CIFAR_MEAN, CIFAR_STD};
use crate::tape::{fd_vjp, relative_error, Tape};
use crate::tensor::Tensor;
use crate::Error;

fn t(data: &[f64], shape: &[usize]) -> Tensor {
    Tensor::new(data.to_vec(), shape.to_vec()).unwrap()
}

#[test]
fn cross_entropy_uniform_scores() {
    let s = Tensor::full(&[3, 10], 0.7);
    let l = cross_entropy(&s, &[0, 4, 9]).unwrap();
    assert!((l - 10f64.ln()).abs() < 1e-14);
}

#[test]
fn cross_entropy_dominant_class() {
    let mut s = Tensor::zeros(&[2, 5]);
    s.data_mut()[3] = 30.0;
    s.data_mut()[5] = 30.0;
    assert!(cross_entropy(&s, &[3, 0]).unwrap() < 1e-12);
}

#[test]
fn cross_entropy_matches_oracle() {
    let s = t(&[0.3, -1.2, 2.5, 0.1, 1.7, 0.2, -0.4, 3.3], &[2, 4]);
    let l = cross_entropy(&s, &[2, 0]).unwrap();
    assert!((l - 1.022_143_382_178_598).abs() < 1e-14);
}

#[test]
fn cross_entropy_is_stable_for_large_scores() {
    let s = t(&[1000.0, 999.0, -1000.0, 1001.0], &[2, 2]);
    let l = cross_entropy(&s, &[0, 1]).unwrap();
    assert!(l.is_finite());
}

#[test]
fn cross_entropy_rejects_bad_labels() {
    let s = Tensor::zeros(&[2, 3]);
    assert!(matches!(
        cross_entropy(&s, &[0, 3]),
        Err(Error::Contract(_))
    ));
    assert!(cross_entropy(&s, &[0]).is_err());
}

#[test]
fn cross_entropy_gradient_matches_fd() {
    let s = t(&[0.3, -1.2, 2.5, 0.1, 1.7, 0.2, -0.4, 3.3], &[2, 4]);
    let labels = [2, 1];
    let mut tape = Tape::new();
    let x = tape.param(s.clone());
    let l = tape.cross_entropy(x, &labels).unwrap();
    let g = tape.backward(l).unwrap().get(x).unwrap().clone();
    let u = Tensor::scalar(1.0);
    let fd = fd_vjp(
        |y| Ok(Tensor::scalar(cross_entropy(y, &labels)?)),
        &s,
        &u,
        1e-6,
    )
    .unwrap();
    assert!(relative_error(&g, &fd) < 1e-8);
}

#[test]
fn accuracy_counts_argmax() {
    let s = t(&[0.1, 0.9, 0.8, 0.2, 0.5, 0.5], &[3, 2]);
    assert!((accuracy(&s, &[1, 0, 1]) - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut p = t(&[0.5, -1.5], &[2]);
    let before = p.clone();
    let mut st = OptimizerState::new(OptimizerKind::Adam, &[&p]);
    for _ in 0..5 {
        adam_step(&mut [&mut p], &[Tensor::zeros(&[2])], &mut st, 1e-3, 0.0).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn adam_matches_hand_recurrence() {
    let expected = [
        0.990_000_000_181_818_2,
        0.985_502_180_090_502,
        0.980_519_637_145_545_4,
        0.973_428_571_431_563_7,
    ];
    let mut p = Tensor::vector(vec![1.0]);
    let mut st = OptimizerState::new(OptimizerKind::Adam, &[&p]);
    for (g, want) in [0.5, -0.2, 0.1, 0.7].iter().zip(expected) {
        adam_step(
            &mut [&mut p],
            &[Tensor::vector(vec![*g])],
            &mut st,
            0.01,
            0.05,
        )
        .unwrap();
        assert!(
            (p.data()[0] - want).abs() < 1e-14,
            "{} vs {want}",
            p.data()[0]
        );
    }
}

#[test]
fn optimizers_minimize_quadratic_bowl() {
    let target = [3.0, -2.0, 0.5];
    for kind in [OptimizerKind::Adam, OptimizerKind::Sgd { momentum: 0.9 }] {
        let mut p = Tensor::zeros(&[3]);
        let mut st = OptimizerState::new(kind, &[&p]);
        let lr = if kind == OptimizerKind::Adam {
            0.05
        } else {
            0.01
        };
        for _ in 0..500 {
            let g: Vec<f64> = p
                .data()
                .iter()
                .zip(&target)
                .map(|(w, c)| 2.0 * (w - c))
                .collect();
            optimizer_step(&mut [&mut p], &[Tensor::vector(g)], &mut st, lr, 0.0).unwrap();
        }
        for (w, c) in p.data().iter().zip(&target) {
            assert!((w - c).abs() < 1e-3, "{kind:?}: {w} vs {c}");
        }
    }
}

#[test]
fn non_finite_gradient_rejects_step() {
    let mut p = t(&[1.0, 2.0], &[2]);
    let before = p.clone();
    let mut st = OptimizerState::new(OptimizerKind::Adam, &[&p]);
    let g = t(&[0.1, f64::NAN], &[2]);
    assert!(matches!(
        adam_step(&mut [&mut p], &[g], &mut st, 1e-3, 0.0),
        Err(Error::NonFinite(_))
    ));
    assert_eq!(p, before);
    assert_eq!(st.step, 0);
}

#[test]
fn sgd_momentum_recurrence() {
    let mut p = Tensor::vector(vec![1.0]);
    let mut st = OptimizerState::new(OptimizerKind::Sgd { momentum: 0.5 }, &[&p]);
    sgd_step(
        &mut [&mut p],
        &[Tensor::vector(vec![1.0])],
        &mut st,
        0.1,
        0.0,
    )
    .unwrap();
    sgd_step(
        &mut [&mut p],
        &[Tensor::vector(vec![1.0])],
        &mut st,
        0.1,
        0.0,
    )
    .unwrap();
    // velocities 1 then 1.5
    assert!((p.data()[0] - 0.75).abs() < 1e-15);
}

fn record(label: u8, fill: u8) -> Vec<u8> {
    let mut r = vec![fill; data::CIFAR_RECORD];
    r[0] = label;
    r
}

#[test]
fn cifar_file_parses_records() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    let mut bytes = record(7, 0);
    for i in 0..9 {
        bytes.extend(record(i, 255));
    }
    std::fs::write(&path, &bytes).unwrap();
    let d = load_cifar10_file(&path, None).unwrap();
    assert_eq!(d.len(), 10);
    assert_eq!(d.labels[0], 7);
    let img = d.image(0);
    assert_eq!(img.shape(), &[32, 32, 3]);
    for (i, v) in img.data().iter().enumerate() {
        let ch = i % 3;
        let want = -CIFAR_MEAN[ch] / CIFAR_STD[ch];
        assert!((v - want).abs() < 1e-6);
    }
    assert_eq!(load_cifar10_file(&path, Some(4)).unwrap().len(), 4);
}

#[test]
fn cifar_channel_planes_are_interleaved() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("one.bin");
    let mut r = record(1, 0);
    // red plane at pixel 5, green at pixel 5
    r[1 + 5] = 255;
    r[1 + 1024 + 5] = 255;
    std::fs::write(&path, &r).unwrap();
    let img = load_cifar10_file(&path, None).unwrap().image(0);
    let px = &img.data()[15..18];
    assert!((px[0] - (1.0 - CIFAR_MEAN[0]) / CIFAR_STD[0]).abs() < 1e-6);
    assert!((px[1] - (1.0 - CIFAR_MEAN[1]) / CIFAR_STD[1]).abs() < 1e-6);
    assert!((px[2] + CIFAR_MEAN[2] / CIFAR_STD[2]).abs() < 1e-6);
}

#[test]
fn cifar_wrong_size_names_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.bin");
    std::fs::write(&path, vec![0u8; data::CIFAR_RECORD + 5]).unwrap();
    match load_cifar10_file(&path, None) {
        Err(Error::Format { path: p, reason }) => {
            assert_eq!(p, path);
            assert!(reason.contains("3073"), "{reason}");
        }
        other => panic!("expected format error, got {other:?}"),
    }
}

#[test]
fn cifar_directory_respects_subsets() {
    let dir = tempfile::tempdir().unwrap();
    for k in 1..=5 {
        let bytes: Vec<u8> = (0..3).flat_map(|i| record(i, 9)).collect();
        std::fs::write(dir.path().join(format!("data_batch_{k}.bin")), bytes).unwrap();
    }
    std::fs::write(dir.path().join("test_batch.bin"), record(2, 1).repeat(4)).unwrap();
    let d = load_cifar10(dir.path(), Some(7), Some(2)).unwrap();
    assert_eq!(d.train.len(), 7);
    assert_eq!(d.test.len(), 2);
    assert!(load_cifar10(&PathBuf::from("/nonexistent"), None, None).is_err());
    let test_only = load_cifar10(dir.path(), Some(0), None).unwrap();
    assert!(test_only.train.is_empty());
    assert_eq!(test_only.test.len(), 4);
}

#[test]
fn synthetic_test_split_ignores_train_size() {
    let (_, a) = synthetic_data(9, 100, 40, 4);
    let (_, b) = synthetic_data(9, 0, 40, 4);
    assert_eq!(a, b);
    assert_eq!(a.labels.iter().filter(|&&l| l == 1).count(), 20);
}

fn ramp(side: usize) -> Tensor {
    let data = (0..side * side * 3).map(|i| i as f64).collect();
    Tensor::new(data, vec![side, side, 3]).unwrap()
}

#[test]
fn centred_crop_without_flip_is_identity() {
    let img = ramp(32);
    assert_eq!(crop_flip(&img, 4, 4, 4, false), img);
}

#[test]
fn double_flip_restores_image() {
    let img = ramp(32);
    let once = crop_flip(&img, 4, 4, 4, true);
    assert_ne!(once, img);
    assert_eq!(crop_flip(&once, 4, 4, 4, true), img);
}

#[test]
fn crop_shift_pads_with_zero() {
    let img = ramp(4);
    let shifted = crop_flip(&img, 1, 0, 0, false);
    assert_eq!(&shifted.data()[..3], &[0.0, 0.0, 0.0]);
    assert_eq!(shifted.data()[15..18], img.data()[0..3]);
}

#[test]
fn augment_is_seed_deterministic() {
    let img = ramp(32);
    let a = augment(&img, &mut ChaCha8Rng::seed_from_u64(3));
    let b = augment(&img, &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(a, b);
}

#[test]
fn config_parses_every_key() {
    let text = "\
# desk run
arch = convnet
widths = 4, 8
c = 0.5
num_classes = 2
init = normal
gamma = scalar
lr = 0.01
weight_decay = 0
optimizer = sgd
momentum = 0.8
batch_size = 16
epochs = 3
seed = 42
bn_mode = frechet
augment = off
data = synthetic:6
out_dir = /tmp/run
train_subset = 100
test_subset = all
";
    let cfg = TrainConfig::from_kv(text).unwrap();
    assert_eq!(cfg.arch.widths, vec![4, 8]);
    assert_eq!(cfg.arch.c, 0.5);
    assert_eq!(cfg.optimizer, OptimizerKind::Sgd { momentum: 0.8 });
    assert_eq!(cfg.bn_mode, crate::layers::BnMode::Frechet);
    assert_eq!(cfg.data, DataSource::Synthetic { side: 6 });
    assert_eq!(cfg.train_subset, Some(100));
    assert_eq!(cfg.test_subset, None);
    assert!(!cfg.augment);
    assert_eq!(cfg.seed, 42);
}

#[test]
fn config_defaults_follow_protocol() {
    let cfg = TrainConfig::from_kv("").unwrap();
    assert_eq!(cfg.lr, 1e-3);
    assert_eq!(cfg.weight_decay, 1e-4);
    assert_eq!(cfg.optimizer, OptimizerKind::Adam);
    assert_eq!(cfg.arch.depth(), Some(20));
    assert_eq!(cfg.arch.c, 0.1);
}

#[test]
fn config_rejects_invalid_values() {
    for bad in [
        "lr = 0",
        "batch_size = 1",
        "colour = blue",
        "lr = fast",
        "depth = 21",
        "lr = 1\nlr = 2",
        "no equals sign",
    ] {
        assert!(TrainConfig::from_kv(bad).is_err(), "{bad}");
    }
}

#[test]
fn arch_round_trips_through_text() {
    let mut arch = ArchSpec::resnet(14, &[4, 8, 16], 0.1, 10).unwrap();
    arch.gamma_mode = crate::layers::GammaMode::Scalar;
    let back = config::arch_from_kv(&config::arch_to_kv(&arch)).unwrap();
    assert_eq!(back, arch);
}

fn sample_checkpoint() -> Checkpoint {
    let arch = ArchSpec::resnet(8, &[4, 8, 16], 0.1, 10).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model = crate::models::build_model(&arch, &mut rng).unwrap();
    for p in model.params_mut() {
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            *v += (i as f64 * 0.37).sin() * 1e-3;
        }
    }
    let mut optimizer = OptimizerState::new(OptimizerKind::Adam, &model.params());
    optimizer.step = 17;
    optimizer.m[0].data_mut()[0] = 0.25;
    optimizer.v[1].data_mut()[0] = f64::MIN_POSITIVE;
    Checkpoint {
        model,
        optimizer,
        epoch: 3,
        rng,
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.prn");
    let ck = sample_checkpoint();
    save_checkpoint(&ck, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    for (a, b) in ck.model.params().iter().zip(back.model.params()) {
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b));
    }
    assert_eq!(back.optimizer, ck.optimizer);
    assert_eq!(back.epoch, 3);
    assert_eq!(back.rng, ck.rng);
    assert_eq!(checkpoint::encode(&back), checkpoint::encode(&ck));
}

#[test]
fn truncated_checkpoint_is_format_error() {
    let bytes = checkpoint::encode(&sample_checkpoint());
    let p = PathBuf::from("ck.prn");
    for cut in [0, 3, 8, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(
            matches!(
                checkpoint::decode(&bytes[..cut], &p),
                Err(Error::Format { .. })
            ),
            "cut at {cut}"
        );
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        checkpoint::decode(&bad, &p),
        Err(Error::Format { .. })
    ));
    let mut bad = bytes;
    bad[4] = 9;
    assert!(matches!(
        checkpoint::decode(&bad, &p),
        Err(Error::Format { .. })
    ));
}

#[test]
fn loaded_checkpoint_evaluates_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.prn");
    save_checkpoint(&sample_checkpoint(), &path).unwrap();
    let x = Tensor::full(&[2, 8, 8, 3], 0.3);
    let cfg = crate::layers::BnConfig::default();
    let a = load_checkpoint(&path)
        .unwrap()
        .model
        .forward(&x, &cfg)
        .unwrap();
    let b = load_checkpoint(&path)
        .unwrap()
        .model
        .forward(&x, &cfg)
        .unwrap();
    assert_eq!(a, b);
}

fn tiny_config(out: &std::path::Path, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::from_kv(
        "arch = convnet\nwidths = 4,8\nc = 0.1\nnum_classes = 2\ndata = synthetic:4\n\
         batch_size = 16\nepochs = 2\ntrain_subset = 48\ntest_subset = 32\naugment = on",
    )
    .unwrap();
    cfg.seed = seed;
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn training_writes_csv_and_checkpoint_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = train(&tiny_config(&dir.path().join("a"), 5)).unwrap();
    let b = train(&tiny_config(&dir.path().join("b"), 5)).unwrap();
    let read = |p: &PathBuf| std::fs::read_to_string(p).unwrap();
    let (ca, cb) = (read(&a.csv_path), read(&b.csv_path));
    assert!(ca.starts_with(CSV_HEADER));
    assert_eq!(ca.lines().count(), 3);
    assert_eq!(strip_wall_time(&ca), strip_wall_time(&cb));
    let ck = load_checkpoint(&a.checkpoint_path).unwrap();
    assert_eq!(ck.epoch, 2);
    assert_eq!(ck.model.params(), a.model.params());
    for m in &a.history {
        assert!(m.train_loss.is_finite());
    }
}

#[test]
fn training_rejects_class_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path(), 1);
    cfg.arch.num_classes = 3;
    assert!(matches!(train(&cfg), Err(Error::Config(_))));
}

#[test]
fn strip_wall_time_drops_fifth_column() {
    assert_eq!(
        strip_wall_time("1,2,3,4,5,6\na,b,c,d,e,f"),
        "1,2,3,4,6\na,b,c,d,f"
    );
}
