use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::models::{CIFAR_MEAN, CIFAR_STD};
use crate::tensor::Tensor;

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE * 3;
pub const CIFAR_RECORD: usize = 1 + CIFAR_PIXELS;
pub const AUGMENT_PAD: usize = 4;

/// Normalized images in channels-last layout with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub side: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// `len * side * side * channels` values, already normalized.
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_len(&self) -> usize {
        self.side * self.side * self.channels
    }

    pub fn image(&self, i: usize) -> Tensor {
        let n = self.image_len();
        let data = self.pixels[i * n..(i + 1) * n]
            .iter()
            .map(|&v| v as f64)
            .collect();
        Tensor::from_parts(data, vec![self.side, self.side, self.channels])
    }

    /// Stacks the chosen images into `[B, side, side, channels]`, applying
    /// `augment` to each when given.
    pub fn batch<R: Rng + ?Sized>(
        &self,
        indices: &[usize],
        mut augment_rng: Option<&mut R>,
    ) -> (Tensor, Vec<usize>) {
        let n = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            let img = self.image(i);
            let img = match augment_rng.as_deref_mut() {
                Some(rng) => augment(&img, rng),
                None => img,
            };
            data.extend_from_slice(img.data());
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let shape = vec![indices.len(), self.side, self.side, self.channels];
        (Tensor::from_parts(data, shape), labels)
    }

    pub fn truncate(&mut self, cap: usize) {
        if cap < self.len() {
            self.labels.truncate(cap);
            self.pixels.truncate(cap * self.image_len());
        }
    }
}

fn normalize_record(bytes: &[u8], out: &mut Vec<f32>) {
    // Records are channel-major (R plane, G plane, B plane).
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    for p in 0..plane {
        for ch in 0..3 {
            let v = bytes[ch * plane + p] as f64 / 255.0;
            out.push(((v - CIFAR_MEAN[ch]) / CIFAR_STD[ch]) as f32);
        }
    }
}

/// Parses one CIFAR-10 binary file, reading at most `cap` records.
pub fn load_cifar10_file(path: &Path, cap: Option<usize>) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "size {} is not a positive multiple of the {CIFAR_RECORD}-byte record",
                bytes.len()
            ),
        });
    }
    let count = (bytes.len() / CIFAR_RECORD).min(cap.unwrap_or(usize::MAX));
    let mut pixels = Vec::with_capacity(count * CIFAR_PIXELS);
    let mut labels = Vec::with_capacity(count);
    for rec in bytes.chunks_exact(CIFAR_RECORD).take(count) {
        if rec[0] > 9 {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("label byte {} outside 0..=9", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        normalize_record(&rec[1..], &mut pixels);
    }
    Ok(Dataset {
        side: CIFAR_SIDE,
        channels: 3,
        num_classes: 10,
        pixels,
        labels,
    })
}

fn concat(parts: Vec<Dataset>) -> Dataset {
    let mut out = Dataset {
        side: CIFAR_SIDE,
        channels: 3,
        num_classes: 10,
        pixels: Vec::new(),
        labels: Vec::new(),
    };
    for d in parts {
        out.pixels.extend(d.pixels);
        out.labels.extend(d.labels);
    }
    out
}

/// Train and test splits of the binary CIFAR-10 distribution.
#[derive(Clone, Debug)]
pub struct Cifar10 {
    pub train: Dataset,
    pub test: Dataset,
}

/// Reads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir` (or from
/// its `cifar-10-batches-bin` subdirectory), keeping the first
/// `train_cap`/`test_cap` records.
pub fn load_cifar10(
    dir: &Path,
    train_cap: Option<usize>,
    test_cap: Option<usize>,
) -> Result<Cifar10> {
    let nested = dir.join("cifar-10-batches-bin");
    let dir: PathBuf = if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    };
    let test_file = dir.join("test_batch.bin");
    if !test_file.is_file() {
        return Err(Error::Format {
            path: test_file,
            reason: "missing CIFAR-10 test file".into(),
        });
    }
    let mut parts = Vec::new();
    let mut remaining = train_cap.unwrap_or(usize::MAX);
    for k in 1..=5 {
        if remaining == 0 {
            break;
        }
        let part = load_cifar10_file(&dir.join(format!("data_batch_{k}.bin")), Some(remaining))?;
        remaining -= part.len();
        parts.push(part);
    }
    Ok(Cifar10 {
        train: concat(parts),
        test: load_cifar10_file(&test_file, test_cap)?,
    })
}

/// Zero-pads by `pad`, takes the `H x W` window at `(dy, dx)` and
/// optionally mirrors it horizontally. Padding is zero in normalized
/// coordinates, which embeds as the origin.
pub fn crop_flip(image: &Tensor, pad: usize, dy: usize, dx: usize, flip: bool) -> Tensor {
    let s = image.shape();
    let (h, w, ch) = (s[0], s[1], s[2]);
    let src = image.data();
    let mut out = vec![0.0; h * w * ch];
    for y in 0..h {
        for x in 0..w {
            let sy = (y + dy) as isize - pad as isize;
            let sx_out = if flip { w - 1 - x } else { x };
            let sx = (sx_out + dx) as isize - pad as isize;
            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                continue;
            }
            let from = (sy as usize * w + sx as usize) * ch;
            let to = (y * w + x) * ch;
            out[to..to + ch].copy_from_slice(&src[from..from + ch]);
        }
    }
    Tensor::from_parts(out, s.to_vec())
}

/// Random pad-4 crop followed by a horizontal flip with probability 1/2.
pub fn augment<R: Rng + ?Sized>(image: &Tensor, rng: &mut R) -> Tensor {
    let dy = rng.random_range(0..=2 * AUGMENT_PAD);
    let dx = rng.random_range(0..=2 * AUGMENT_PAD);
    let flip = rng.random_bool(0.5);
    crop_flip(image, AUGMENT_PAD, dy, dx, flip)
}

impl Dataset {
    /// Two classes of noisy images around opposite mean patterns `+p` and `-p`;
    /// after embedding the class means lie in opposite half-balls.
    fn from_pattern<R: Rng + ?Sized>(
        rng: &mut R,
        pattern: &[f64],
        len: usize,
        side: usize,
        separation: f64,
        noise: f64,
    ) -> Dataset {
        let mut pixels = Vec::with_capacity(len * pattern.len());
        let mut labels = Vec::with_capacity(len);
        for i in 0..len {
            let label = i % 2;
            let sign = if label == 0 { 1.0 } else { -1.0 };
            for &p in pattern {
                let e: f64 = StandardNormal.sample(&mut *rng);
                pixels.push((sign * separation * p + noise * e) as f32);
            }
            labels.push(label);
        }
        Dataset {
            side,
            channels: 3,
            num_classes: 2,
            pixels,
            labels,
        }
    }
}

/// Train and test splits of the two-class task. Both classes share one
/// random unit colour direction `d`; class 0 pixels scatter around `+s d`,
/// class 1 pixels around `-s d`, so after embedding the class means lie in
/// opposite half-balls. The test split is drawn first so it does not depend
/// on the train size.
pub fn synthetic_splits<R: Rng + ?Sized>(
    rng: &mut R,
    train: usize,
    test: usize,
    side: usize,
) -> (Dataset, Dataset) {
    let d: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    let pattern: Vec<f64> = (0..side * side)
        .flat_map(|_| d.iter().map(|v| v / n))
        .collect();
    let (sep, noise) = (SYNTHETIC_SEPARATION, 1.0);
    let test = Dataset::from_pattern(rng, &pattern, test, side, sep, noise);
    let train = Dataset::from_pattern(rng, &pattern, train, side, sep, noise);
    (train, test)
}

/// Class-mean offset in units of the per-pixel noise.
pub const SYNTHETIC_SEPARATION: f64 = 0.3;
