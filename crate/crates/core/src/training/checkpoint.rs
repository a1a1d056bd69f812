//! Binary checkpoints.
//!
//! Layout (little-endian): magic `PRN1`, `u32` version, the architecture as
//! length-prefixed `key = value` text, `u64` epoch, the generator state
//! (32-byte seed, `u64` stream, `u128` word position), the optimizer header
//! (`u8` kind, `f64` momentum, `u64` step), then three tensor tables:
//! parameters, first moments, second moments. A table is a `u32` count,
//! each shape as `u32` rank plus `u64` extents, followed by the raw `f64`
//! data of every tensor in order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::models::{build_model, ModelParams};
use crate::tensor::Tensor;

use super::config::{arch_from_kv, arch_to_kv};
use super::optim::{OptimizerKind, OptimizerState};

pub const MAGIC: &[u8; 4] = b"PRN1";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelParams,
    pub optimizer: OptimizerState,
    pub epoch: u64,
    pub rng: ChaCha8Rng,
}

fn write_table(out: &mut Vec<u8>, tensors: &[&Tensor]) {
    out.extend((tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend((t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
    }
    for t in tensors {
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC);
    out.extend(VERSION.to_le_bytes());
    let arch = arch_to_kv(&ck.model.arch);
    out.extend((arch.len() as u32).to_le_bytes());
    out.extend(arch.as_bytes());
    out.extend(ck.epoch.to_le_bytes());
    out.extend(ck.rng.get_seed());
    out.extend(ck.rng.get_stream().to_le_bytes());
    out.extend(ck.rng.get_word_pos().to_le_bytes());
    let (kind, momentum) = match ck.optimizer.kind {
        OptimizerKind::Adam => (0u8, 0.0),
        OptimizerKind::Sgd { momentum } => (1u8, momentum),
    };
    out.push(kind);
    out.extend(f64::to_le_bytes(momentum));
    out.extend(ck.optimizer.step.to_le_bytes());
    write_table(&mut out, &ck.model.params());
    write_table(&mut out, &ck.optimizer.m.iter().collect::<Vec<_>>());
    write_table(&mut out, &ck.optimizer.v.iter().collect::<Vec<_>>());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(self.err(format!(
                "truncated: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            )));
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn table(&mut self) -> Result<Vec<Tensor>> {
        let count = self.u32()? as usize;
        let mut shapes = Vec::new();
        for _ in 0..count {
            let rank = self.u32()? as usize;
            if rank > 8 {
                return Err(self.err(format!("tensor rank {rank} is implausible")));
            }
            let shape = (0..rank)
                .map(|_| self.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            shapes.push(shape);
        }
        let mut out = Vec::with_capacity(count);
        for shape in shapes {
            let n: usize = shape.iter().product();
            let raw = self.bytes(
                n.checked_mul(8)
                    .ok_or_else(|| self.err("tensor too large"))?,
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            out.push(Tensor::from_parts(data, shape));
        }
        Ok(out)
    }
}

pub fn decode(buf: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0, path };
    if r.bytes(4)? != MAGIC {
        return Err(r.err("bad magic, expected PRN1"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(r.err(format!("unsupported version {version}, expected {VERSION}")));
    }
    let len = r.u32()? as usize;
    let text =
        std::str::from_utf8(r.bytes(len)?).map_err(|_| r.err("architecture is not UTF-8"))?;
    let arch = arch_from_kv(text).map_err(|e| r.err(e.to_string()))?;
    let epoch = r.u64()?;
    let seed: [u8; 32] = r.array()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.array()?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    let [kind] = r.array()?;
    let momentum = f64::from_le_bytes(r.array()?);
    let kind = match kind {
        0 => OptimizerKind::Adam,
        1 => OptimizerKind::Sgd { momentum },
        k => return Err(r.err(format!("unknown optimizer tag {k}"))),
    };
    let step = r.u64()?;
    let params = r.table()?;
    let m = r.table()?;
    let v = r.table()?;
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }

    // Rebuild the skeleton, then overwrite every learnable tensor.
    let mut model =
        build_model(&arch, &mut ChaCha8Rng::seed_from_u64(0)).map_err(|e| r.err(e.to_string()))?;
    let slots = model.params_mut();
    if slots.len() != params.len() {
        return Err(r.err(format!(
            "{} parameter tensors, architecture expects {}",
            params.len(),
            slots.len()
        )));
    }
    for (i, (slot, p)) in slots.into_iter().zip(params).enumerate() {
        if slot.shape() != p.shape() {
            return Err(r.err(format!(
                "parameter {i} has shape {:?}, expected {:?}",
                p.shape(),
                slot.shape()
            )));
        }
        *slot = p;
    }
    let expect_v = matches!(kind, OptimizerKind::Adam);
    let shapes_ok = |t: &[Tensor]| {
        t.len() == model.params().len()
            && t.iter()
                .zip(model.params())
                .all(|(a, b)| a.shape() == b.shape())
    };
    if !shapes_ok(&m) || (expect_v && !shapes_ok(&v)) || (!expect_v && !v.is_empty()) {
        return Err(r.err("optimizer state does not match the parameters"));
    }
    Ok(Checkpoint {
        model,
        optimizer: OptimizerState { kind, step, m, v },
        epoch,
        rng,
    })
}

/// Writes through a temporary file so a crash never leaves a torn file.
pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(ck))?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = fs::read(path)?;
    decode(&buf, path)
}
