use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::layers::{BnMode, GammaMode};
use crate::models::{ArchKind, ArchSpec};

use super::optim::OptimizerKind;

/// Where training images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Cifar10(PathBuf),
    /// The two-class separable task, with square images of `side` pixels.
    Synthetic {
        side: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchSpec,
    pub lr: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub bn_mode: BnMode,
    pub augment: bool,
    pub data: DataSource,
    pub out_dir: PathBuf,
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: ArchSpec::resnet(20, &[4, 8, 16], 0.1, 10).expect("default arch"),
            lr: 1e-3,
            weight_decay: 1e-4,
            optimizer: OptimizerKind::Adam,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            bn_mode: BnMode::Midpoint,
            augment: true,
            data: DataSource::Cifar10(PathBuf::from("data/cifar-10-batches-bin")),
            out_dir: PathBuf::from("runs/default"),
            train_subset: Some(2000),
            test_subset: Some(1000),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean `{value}` for `{key}`"))),
    }
}

fn parse_cap(key: &str, value: &str) -> Result<Option<usize>> {
    match value {
        "none" | "all" => Ok(None),
        v => parse(key, v).map(Some),
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
        let k = k.trim().to_ascii_lowercase();
        if map.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "line {}: duplicate key `{k}`",
                no + 1
            )));
        }
    }
    Ok(map)
}

fn parse_widths(v: &str) -> Result<Vec<usize>> {
    v.split(',').map(|w| parse("widths", w.trim())).collect()
}

/// Builds an architecture from its keys, consuming them from `map`.
fn arch_from(map: &mut BTreeMap<String, String>, base: &ArchSpec) -> Result<ArchSpec> {
    let mut take = |k: &str| map.remove(k);
    let kind = take("arch").unwrap_or_else(|| match base.kind {
        ArchKind::ResNet { .. } => "resnet".into(),
        ArchKind::ConvNet => "convnet".into(),
    });
    let widths = match take("widths") {
        Some(v) => parse_widths(&v)?,
        None => base.widths.clone(),
    };
    let c = take("c")
        .map(|v| parse("c", &v))
        .transpose()?
        .unwrap_or(base.c);
    let classes = take("num_classes")
        .map(|v| parse("num_classes", &v))
        .transpose()?
        .unwrap_or(base.num_classes);
    let depth = take("depth").map(|v| parse("depth", &v)).transpose()?;
    let mut arch = match kind.to_ascii_lowercase().as_str() {
        "resnet" => ArchSpec::resnet(depth.or(base.depth()).unwrap_or(20), &widths, c, classes)?,
        "convnet" => ArchSpec::convnet(&widths, c, classes)?,
        other => return Err(Error::Config(format!("unknown arch `{other}`"))),
    };
    arch.init = match take("init") {
        Some(v) => v.parse()?,
        None => base.init,
    };
    arch.gamma_mode = match take("gamma").as_deref() {
        None => base.gamma_mode,
        Some("per_channel") => GammaMode::PerChannel,
        Some("scalar") => GammaMode::Scalar,
        Some(v) => return Err(Error::Config(format!("unknown gamma mode `{v}`"))),
    };
    Ok(arch)
}

/// `key = value` lines describing an architecture; read back by
/// [`arch_from_kv`].
pub fn arch_to_kv(arch: &ArchSpec) -> String {
    let mut s = String::new();
    match arch.kind {
        ArchKind::ResNet { blocks } => {
            let _ = writeln!(s, "arch = resnet\ndepth = {}", 6 * blocks + 2);
        }
        ArchKind::ConvNet => s.push_str("arch = convnet\n"),
    }
    let widths: Vec<String> = arch.widths.iter().map(|w| w.to_string()).collect();
    let gamma = match arch.gamma_mode {
        GammaMode::PerChannel => "per_channel",
        GammaMode::Scalar => "scalar",
    };
    let _ = writeln!(
        s,
        "widths = {}\nc = {:?}\nnum_classes = {}\ninit = {}\ngamma = {gamma}",
        widths.join(","),
        arch.c,
        arch.num_classes,
        arch.init.as_str()
    );
    s
}

pub fn arch_from_kv(text: &str) -> Result<ArchSpec> {
    let mut map = parse_kv(text)?;
    let arch = arch_from(&mut map, &TrainConfig::default().arch)?;
    if let Some(k) = map.keys().next() {
        return Err(Error::Config(format!("unexpected architecture key `{k}`")));
    }
    Ok(arch)
}

impl TrainConfig {
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut map = parse_kv(text)?;
        let mut cfg = TrainConfig::default();
        cfg.arch = arch_from(&mut map, &cfg.arch)?;
        for (k, v) in &map {
            match k.as_str() {
                "lr" => cfg.lr = parse(k, v)?,
                "weight_decay" => cfg.weight_decay = parse(k, v)?,
                "optimizer" => cfg.optimizer = v.parse()?,
                "momentum" => {}
                "batch_size" => cfg.batch_size = parse(k, v)?,
                "epochs" => cfg.epochs = parse(k, v)?,
                "seed" => cfg.seed = parse(k, v)?,
                "bn_mode" => cfg.bn_mode = v.parse()?,
                "augment" => cfg.augment = parse_bool(k, v)?,
                "data" | "data_path" => {
                    cfg.data = match v.strip_prefix("synthetic") {
                        Some("") => DataSource::Synthetic { side: 8 },
                        Some(side) => DataSource::Synthetic {
                            side: parse(k, side.trim_start_matches(':'))?,
                        },
                        None => DataSource::Cifar10(PathBuf::from(v)),
                    }
                }
                "out_dir" => cfg.out_dir = PathBuf::from(v),
                "train_subset" | "subset" => cfg.train_subset = parse_cap(k, v)?,
                "test_subset" => cfg.test_subset = parse_cap(k, v)?,
                other => return Err(Error::Config(format!("unknown key `{other}`"))),
            }
        }
        if let (Some(m), OptimizerKind::Sgd { .. }) = (map.get("momentum"), cfg.optimizer) {
            cfg.optimizer = OptimizerKind::Sgd {
                momentum: parse("momentum", m)?,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_kv(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 for batch norm".into(),
            ));
        }
        if let OptimizerKind::Sgd { momentum } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return Err(Error::Config(format!("momentum {momentum} outside [0, 1)")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if let DataSource::Synthetic { side } = self.data {
            if side == 0 {
                return Err(Error::Config(
                    "synthetic image side must be positive".into(),
                ));
            }
        }
        self.arch.validate()
    }
}
