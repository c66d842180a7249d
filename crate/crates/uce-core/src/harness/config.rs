//! Run configuration and the flat `key=value` config-file format.

use std::path::PathBuf;

use crate::data::AugmentConfig;
use crate::error::{Error, Result};
use crate::uce::UceConfig;

/// Which loss drives training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    Ce,
    Uce,
}

impl LossMode {
    pub fn parse(s: &str) -> Result<LossMode> {
        match s {
            "ce" => Ok(LossMode::Ce),
            "uce" => Ok(LossMode::Uce),
            other => Err(Error::Config(format!(
                "loss_mode must be ce or uce, got {other:?}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::Ce => "ce",
            LossMode::Uce => "uce",
        }
    }
}

/// Optimizer, schedule, and loop hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr_base: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
    pub head_lr_multiplier: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub loss_mode: LossMode,
    pub uce: UceConfig,
    pub eval_beta: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_base: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            poly_power: 0.9,
            head_lr_multiplier: 10.0,
            epochs: 30,
            batch_size: 8,
            loss_mode: LossMode::Uce,
            uce: UceConfig::default(),
            eval_beta: 10,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr_base <= 0.0 {
            return Err(Error::Config(format!(
                "lr_base must be positive, got {}",
                self.lr_base
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be at least 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config(
                "momentum must lie in [0,1), weight_decay be >= 0".into(),
            ));
        }
        if self.eval_beta < 2 {
            return Err(Error::Config(format!(
                "eval_beta must be at least 2, got {}",
                self.eval_beta
            )));
        }
        self.uce.validate()
    }
}

/// Everything a run needs besides the dataset itself.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub block_channels: Vec<usize>,
    pub dropout_ratio: f32,
    pub augment: AugmentConfig,
    /// Validation cadence in epochs; 0 evaluates only after the final epoch.
    pub eval_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            block_channels: vec![16, 32, 32, 16],
            dropout_ratio: 0.2,
            augment: AugmentConfig::default(),
            eval_every: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return Err(Error::Config(
                "block_channels must be non-empty and positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_ratio) {
            return Err(Error::Config(format!(
                "dropout_ratio must lie in [0, 1), got {}",
                self.dropout_ratio
            )));
        }
        self.augment.validate()
    }
}

/// Dataset and output locations named in a config file.
#[derive(Debug, Clone, Default)]
pub struct IoPaths {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: {value:?}")))
}

/// Apply `key=value` lines onto a config. Unknown keys are config errors.
pub fn apply_config_text(cfg: &mut RunConfig, paths: &mut IoPaths, text: &str) -> Result<()> {
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("config line without '=': {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "lr_base" => cfg.train.lr_base = parse_num(key, value)?,
            "momentum" => cfg.train.momentum = parse_num(key, value)?,
            "weight_decay" => cfg.train.weight_decay = parse_num(key, value)?,
            "poly_power" => cfg.train.poly_power = parse_num(key, value)?,
            "head_lr_multiplier" => cfg.train.head_lr_multiplier = parse_num(key, value)?,
            "epochs" => cfg.train.epochs = parse_num(key, value)?,
            "batch_size" => cfg.train.batch_size = parse_num(key, value)?,
            "loss_mode" => cfg.train.loss_mode = LossMode::parse(value)?,
            "alpha" => cfg.train.uce.alpha = parse_num(key, value)?,
            "beta" => cfg.train.uce.beta = parse_num(key, value)?,
            "eval_beta" => cfg.train.eval_beta = parse_num(key, value)?,
            "seed" => cfg.train.seed = parse_num(key, value)?,
            "dropout_ratio" => cfg.dropout_ratio = parse_num(key, value)?,
            "eval_every" => cfg.eval_every = parse_num(key, value)?,
            "block_channels" => {
                cfg.block_channels = value
                    .split(',')
                    .map(|v| parse_num::<usize>(key, v))
                    .collect::<Result<Vec<_>>>()?;
            }
            "data_dir" => paths.data_dir = Some(PathBuf::from(value)),
            "out_dir" => paths.out_dir = Some(PathBuf::from(value)),
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
    }
    Ok(())
}

/// Serialize a config in the same `key=value` shape (written next to each
/// checkpoint so evaluation can recover the dropout ratio).
pub fn config_text(cfg: &RunConfig) -> String {
    let blocks: Vec<String> = cfg.block_channels.iter().map(|c| c.to_string()).collect();
    format!(
        "lr_base={}\nmomentum={}\nweight_decay={}\npoly_power={}\nhead_lr_multiplier={}\n\
         epochs={}\nbatch_size={}\nloss_mode={}\nalpha={}\nbeta={}\neval_beta={}\nseed={}\n\
         dropout_ratio={}\nblock_channels={}\neval_every={}\n",
        cfg.train.lr_base,
        cfg.train.momentum,
        cfg.train.weight_decay,
        cfg.train.poly_power,
        cfg.train.head_lr_multiplier,
        cfg.train.epochs,
        cfg.train.batch_size,
        cfg.train.loss_mode.as_str(),
        cfg.train.uce.alpha,
        cfg.train.uce.beta,
        cfg.train.eval_beta,
        cfg.train.seed,
        cfg.dropout_ratio,
        blocks.join(","),
        cfg.eval_every,
    )
}
