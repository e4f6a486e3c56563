//! Flat `key=value` run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use convnet::network::TrainConfig;

use crate::CliError;

pub const KEYS: [&str; 14] = [
    "conv.kernels",
    "conv.size",
    "conv.stride",
    "conv.pad",
    "pool.window",
    "pool.stride",
    "dense.widths",
    "train.alpha",
    "train.epochs",
    "train.batch_size",
    "train.seed",
    "data.source",
    "out.model",
    "out.csv",
];

/// Parsed but untyped config. Relative paths resolve against `base`.
#[derive(Debug, Clone)]
pub struct RawConfig {
    values: BTreeMap<String, (usize, String)>,
    base: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {n}: expected key=value, got `{line}`"))
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::Config(format!("line {n}: unknown key `{key}`")));
            }
            if let Some((first, _)) = values.insert(key.to_string(), (n, value.trim().to_string()))
            {
                return Err(CliError::Config(format!(
                    "line {n}: duplicate key `{key}` (first set on line {first})"
                )));
            }
        }
        Ok(Self {
            values,
            base: base.to_path_buf(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str, CliError> {
        self.get(key)
            .ok_or_else(|| CliError::Config(format!("missing key `{key}`")))
    }

    fn bad(&self, key: &str, what: &str) -> CliError {
        let (line, value) = &self.values[key];
        CliError::Config(format!("line {line}: `{key}` {what}, got `{value}`"))
    }

    fn count(&self, key: &str, min: usize) -> Result<usize, CliError> {
        let v: usize = self
            .require(key)?
            .parse()
            .map_err(|_| self.bad(key, "expects a whole number"))?;
        if v < min {
            return Err(self.bad(key, &format!("must be at least {min}")));
        }
        Ok(v)
    }

    fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        let v = self.require(key)?;
        if v.is_empty() {
            return Err(self.bad(key, "expects a path"));
        }
        Ok(self.base.join(v))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.require("train.seed")?
            .parse()
            .map_err(|_| self.bad("train.seed", "expects an unsigned integer"))
    }

    pub fn arch(&self) -> Result<ArchSpec, CliError> {
        let widths = self
            .require("dense.widths")?
            .split(',')
            .map(|w| w.trim().parse::<usize>().ok().filter(|&w| w > 0))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| self.bad("dense.widths", "expects a comma list of positive widths"))?;
        Ok(ArchSpec {
            kernels: self.count("conv.kernels", 1)?,
            size: self.count("conv.size", 1)?,
            stride: self.count("conv.stride", 1)?,
            pad: self.count("conv.pad", 0)?,
            pool_window: self.count("pool.window", 1)?,
            pool_stride: self.count("pool.stride", 1)?,
            dense_widths: widths,
        })
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let alpha: f64 = self
            .require("train.alpha")?
            .parse()
            .map_err(|_| self.bad("train.alpha", "expects a number"))?;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(self.bad("train.alpha", "must be finite and non-negative"));
        }
        Ok(TrainConfig {
            learning_rate: alpha,
            epochs: self.count("train.epochs", 1)?,
            batch_size: self.count("train.batch_size", 1)?,
            seed: self.seed()?,
        })
    }

    pub fn data(&self) -> Result<DataSource, CliError> {
        let spec = self.require("data.source")?;
        if let Some(rest) = spec.strip_prefix("idx:") {
            let (img, lbl) = rest
                .split_once(',')
                .ok_or_else(|| self.bad("data.source", "expects idx:<images>,<labels>"))?;
            return Ok(DataSource::Idx {
                images: self.base.join(img.trim()),
                labels: self.base.join(lbl.trim()),
            });
        }
        if let Some(rest) = spec.strip_prefix("bars:") {
            let fields = rest
                .split(',')
                .map(|f| f.trim().parse::<u64>().ok())
                .collect::<Option<Vec<_>>>()
                .filter(|f| f.len() == 3 || f.len() == 4)
                .ok_or_else(|| self.bad("data.source", "expects bars:<n>,<h>,<w>[,<seed>]"))?;
            let seed = match fields.get(3) {
                Some(&s) => s,
                None if self.get("train.seed").is_some() => self.seed()?,
                None => 0,
            };
            return Ok(DataSource::Bars {
                n: fields[0] as usize,
                h: fields[1] as usize,
                w: fields[2] as usize,
                seed,
            });
        }
        Err(self.bad(
            "data.source",
            "expects idx:<images>,<labels> or bars:<n>,<h>,<w>",
        ))
    }

    pub fn outputs(&self) -> Result<(PathBuf, PathBuf), CliError> {
        Ok((self.path("out.model")?, self.path("out.csv")?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub kernels: usize,
    pub size: usize,
    pub stride: usize,
    pub pad: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub dense_widths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
    /// Synthetic bars; the seed defaults to `train.seed`.
    Bars {
        n: usize,
        h: usize,
        w: usize,
        seed: u64,
    },
}
