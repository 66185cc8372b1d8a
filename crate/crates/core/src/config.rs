//! Pipeline configuration: a flat `key = value` text file, one entry per
//! line, `#` comments, comma-separated lists (optionally bracketed). Unknown
//! keys are rejected. An empty file yields the defaults.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::AggregationParams;
use crate::flow::FlowParams;
use crate::segmentation::ScaleConfig;
use crate::stcrf::{BetaNorm, ThetaParams};
use crate::unary::{TrainConfig, FDNN_HIDDEN};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Provider {
    /// Color histograms computed from the frames.
    #[default]
    Rgb,
    /// Precomputed features read from a feature file.
    File,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UnaryMode {
    /// Distance to foreground and background centroids found from motion and
    /// frame-border seeds.
    #[default]
    Fallback,
    /// A trained network loaded from a model file.
    Model,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub theta: ThetaParams,
    pub aggregation: AggregationParams,
    pub block_length: usize,
    pub block_overlap: f64,
    pub scales: ScaleConfig,
    pub flow: FlowParams,
    pub beta_norm: BetaNorm,
    pub provider: Provider,
    pub unary: UnaryMode,
    pub crf_max_iters: usize,
    pub seed: u64,
    pub train: TrainConfig,
    /// Hidden widths of a freshly initialized network.
    pub hidden: Vec<usize>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            theta: ThetaParams::default(),
            aggregation: AggregationParams::default(),
            block_length: 16,
            block_overlap: 0.5,
            scales: ScaleConfig::default(),
            flow: FlowParams::default(),
            beta_norm: BetaNorm::Sum,
            provider: Provider::Rgb,
            unary: UnaryMode::Fallback,
            crf_max_iters: 10,
            seed: 0,
            train: TrainConfig::default(),
            hidden: FDNN_HIDDEN.to_vec(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>> {
    let inner = v.trim().trim_start_matches('[').trim_end_matches(']');
    if inner.trim().is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    inner.split(',').map(|s| parse_num(key, s.trim())).collect()
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            c.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(e))))?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Config::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(e))))
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "theta_u" => self.theta.theta_u = parse_num(key, v)?,
            "theta_bs" => self.theta.theta_bs = parse_num(key, v)?,
            "theta_bt" => self.theta.theta_bt = parse_num(key, v)?,
            "sigma" => self.aggregation.sigma = parse_num(key, v)?,
            "k" => self.aggregation.k_default = parse_num(key, v)?,
            "block_length" => self.block_length = parse_num(key, v)?,
            "block_overlap" => self.block_overlap = parse_num(key, v)?,
            "scales" => self.scales.initial_superpixels = parse_list(key, v)?,
            "compactness" => self.scales.compactness = parse_num(key, v)?,
            "segmentation_iterations" => self.scales.iterations = parse_num(key, v)?,
            "smoothing" => self.scales.smoothing = parse_num(key, v)?,
            "link_threshold" => self.scales.link_threshold = parse_num(key, v)?,
            "flow_patch" => self.flow.patch = parse_num(key, v)?,
            "flow_search" => self.flow.search = parse_num(key, v)?,
            "beta_norm" => {
                self.beta_norm = match v {
                    "sum" => BetaNorm::Sum,
                    "mean" => BetaNorm::Mean,
                    _ => return Err(Error::Config(format!("{key}: expected sum or mean, got '{v}'"))),
                }
            }
            "provider" => {
                self.provider = match v {
                    "rgb" => Provider::Rgb,
                    "file" => Provider::File,
                    _ => return Err(Error::Config(format!("{key}: expected rgb or file, got '{v}'"))),
                }
            }
            "unary" => {
                self.unary = match v {
                    "fallback" => UnaryMode::Fallback,
                    "model" => UnaryMode::Model,
                    _ => return Err(Error::Config(format!("{key}: expected fallback or model, got '{v}'"))),
                }
            }
            "crf_max_iters" => self.crf_max_iters = parse_num(key, v)?,
            "seed" => {
                self.seed = parse_num(key, v)?;
                self.train.rng_seed = self.seed;
            }
            "train_preset" => {
                let seed = self.train.rng_seed;
                self.train = match v {
                    "full" => TrainConfig::default(),
                    "desk" => TrainConfig::desk(),
                    _ => return Err(Error::Config(format!("{key}: expected full or desk, got '{v}'"))),
                };
                self.train.rng_seed = seed;
            }
            "train_iterations" => self.train.iterations = parse_num(key, v)?,
            "batch_size" => self.train.batch_size = parse_num(key, v)?,
            "momentum" => self.train.momentum = parse_num(key, v)?,
            "weight_decay" => self.train.weight_decay = parse_num(key, v)?,
            "base_lr" => self.train.base_lr = parse_num(key, v)?,
            "lr_drop_every" => self.train.lr_drop_every = parse_num(key, v)?,
            "dropout" => self.train.dropout_rate = parse_num(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |r: Result<()>| r.map_err(|e| Error::Config(strip_prefix(e)));
        wrap(self.theta.validate())?;
        wrap(self.aggregation.validate())?;
        wrap(self.scales.validate())?;
        wrap(self.train.validate())?;
        if self.block_length == 0 {
            return Err(Error::Config("block_length must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.block_overlap) {
            return Err(Error::Config(format!("block_overlap {} outside [0, 1)", self.block_overlap)));
        }
        if self.flow.patch.is_multiple_of(2) {
            return Err(Error::Config(format!("flow_patch must be odd, got {}", self.flow.patch)));
        }
        if self.crf_max_iters == 0 {
            return Err(Error::Config("crf_max_iters must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be >= 1".into()));
        }
        Ok(())
    }
}

/// Message of an error without its category prefix.
fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidArgument(m) => m,
        other => other.to_string(),
    }
}
