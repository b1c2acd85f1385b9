//! Run configuration: defaults, `key = value` files and their echo.
//!
//! Layering, lowest to highest: built-in defaults, the `CODELNET_SEED`
//! environment variable, the config file, command-line flags. The echo
//! written by [`RunConfig::to_text`] parses back to the same config.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{Grouping, SplitSpec};
use crate::error::{Error, Result};
use crate::network::{format_branches, parse_branches, BranchSpec, NetworkConfig};
use crate::optim::{LrSchedule, OptimizerKind, TrainConfig};
use crate::phantom::PhantomConfig;
use crate::preprocess::{AugmentParams, ChannelSelection};

pub const SEED_ENV: &str = "CODELNET_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub workers: usize,
    pub manifest: Option<PathBuf>,
    pub weights: Option<PathBuf>,

    pub channels: ChannelSelection,
    pub canvas: usize,
    pub branches: Vec<BranchSpec>,
    pub fc: Vec<usize>,

    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub lr_halving_period: usize,
    pub batch_size: usize,
    pub early_stop_delta: f64,
    pub early_stop_patience: usize,
    pub epochs: usize,
    pub augment_fold: usize,
    pub augment: AugmentParams,

    pub test_per_class: usize,
    pub train_per_class: Option<usize>,
    pub validation_fraction: f64,
    pub grouping: Grouping,

    pub phantom: PhantomConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::desk_scale(2);
        let train = TrainConfig::default();
        let split = SplitSpec::default();
        RunConfig {
            seed: 0,
            out: PathBuf::from("out"),
            workers: 0,
            manifest: None,
            weights: None,
            channels: ChannelSelection::Both,
            canvas: net.canvas,
            branches: net.branches,
            fc: net.fc_sizes,
            optimizer: train.optimizer,
            lr: train.schedule.base_lr,
            lr_halving_period: train.schedule.halving_period,
            batch_size: train.batch_size,
            early_stop_delta: train.early_stop_delta,
            early_stop_patience: train.early_stop_patience,
            epochs: train.max_epochs,
            augment_fold: train.augmentation_fold,
            augment: train.augment,
            test_per_class: split.test_per_class,
            train_per_class: split.train_per_class,
            validation_fraction: split.validation_fraction,
            grouping: split.grouping,
            phantom: PhantomConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_default()
}

impl RunConfig {
    /// Defaults with the seed taken from the environment when set.
    pub fn from_env() -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = parse(SEED_ENV, v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "workers" => self.workers = parse(key, v)?,
            "manifest" => self.manifest = opt_path(v),
            "weights" => self.weights = opt_path(v),
            "channels" => self.channels = v.parse()?,
            "canvas" => self.canvas = parse(key, v)?,
            "branches" => self.branches = parse_branches(v)?,
            "fc" => {
                self.fc = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|s| parse(key, s.trim()))
                        .collect::<Result<_>>()?
                }
            }
            "optimizer" => self.optimizer = v.parse()?,
            "lr" => self.lr = parse(key, v)?,
            "lr_halving_period" => self.lr_halving_period = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "early_stop_delta" => self.early_stop_delta = parse(key, v)?,
            "early_stop_patience" => self.early_stop_patience = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "augment_fold" => self.augment_fold = parse(key, v)?,
            "max_shift" => self.augment.max_shift = parse(key, v)?,
            "max_rotation" => self.augment.max_rotation = parse(key, v)?,
            "flip_probability" => self.augment.flip_probability = parse(key, v)?,
            "test_per_class" => self.test_per_class = parse(key, v)?,
            "train_per_class" => {
                self.train_per_class = if v == "auto" {
                    None
                } else {
                    Some(parse(key, v)?)
                }
            }
            "validation_fraction" => self.validation_fraction = parse(key, v)?,
            "grouping" => self.grouping = v.parse()?,
            "phantom_patients" => self.phantom.patients_per_class = parse(key, v)?,
            "phantom_slices" => self.phantom.slices_per_patient = parse(key, v)?,
            "phantom_size" => self.phantom.size = parse(key, v)?,
            "phantom_radius_min" => self.phantom.radius.0 = parse(key, v)?,
            "phantom_radius_max" => self.phantom.radius.1 = parse(key, v)?,
            "phantom_signal" => self.phantom.signal = parse(key, v)?,
            "phantom_noise" => self.phantom.noise = parse(key, v)?,
            "phantom_texture" => self.phantom.texture = v.parse()?,
            "phantom_period" => self.phantom.stripe_period = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let fc = self
            .fc
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("seed", self.seed.to_string()),
            ("out", self.out.display().to_string()),
            ("workers", self.workers.to_string()),
            ("manifest", show_path(&self.manifest)),
            ("weights", show_path(&self.weights)),
            ("channels", self.channels.to_string()),
            ("canvas", self.canvas.to_string()),
            ("branches", format_branches(&self.branches)),
            ("fc", fc),
            ("optimizer", self.optimizer.to_string()),
            ("lr", self.lr.to_string()),
            ("lr_halving_period", self.lr_halving_period.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("early_stop_delta", self.early_stop_delta.to_string()),
            ("early_stop_patience", self.early_stop_patience.to_string()),
            ("epochs", self.epochs.to_string()),
            ("augment_fold", self.augment_fold.to_string()),
            ("max_shift", self.augment.max_shift.to_string()),
            ("max_rotation", self.augment.max_rotation.to_string()),
            (
                "flip_probability",
                self.augment.flip_probability.to_string(),
            ),
            ("test_per_class", self.test_per_class.to_string()),
            (
                "train_per_class",
                self.train_per_class
                    .map_or("auto".into(), |n| n.to_string()),
            ),
            ("validation_fraction", self.validation_fraction.to_string()),
            ("grouping", self.grouping.to_string()),
            (
                "phantom_patients",
                self.phantom.patients_per_class.to_string(),
            ),
            (
                "phantom_slices",
                self.phantom.slices_per_patient.to_string(),
            ),
            ("phantom_size", self.phantom.size.to_string()),
            ("phantom_radius_min", self.phantom.radius.0.to_string()),
            ("phantom_radius_max", self.phantom.radius.1.to_string()),
            ("phantom_signal", self.phantom.signal.to_string()),
            ("phantom_noise", self.phantom.noise.to_string()),
            ("phantom_texture", self.phantom.texture.to_string()),
            ("phantom_period", self.phantom.stripe_period.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn network_config(&self) -> NetworkConfig {
        NetworkConfig {
            input_channels: self.channels.count(),
            canvas: self.canvas,
            branches: self.branches.clone(),
            fc_sizes: self.fc.clone(),
            classes: 2,
            init_seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            schedule: LrSchedule {
                base_lr: self.lr,
                halving_period: self.lr_halving_period,
            },
            batch_size: self.batch_size,
            early_stop_delta: self.early_stop_delta,
            early_stop_patience: self.early_stop_patience,
            max_epochs: self.epochs,
            augmentation_fold: self.augment_fold,
            augment: self.augment,
            master_seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            test_per_class: self.test_per_class,
            train_per_class: self.train_per_class,
            validation_fraction: self.validation_fraction,
            grouping: self.grouping,
            seed: self.seed,
        }
    }

    pub fn phantom_config(&self) -> PhantomConfig {
        PhantomConfig {
            seed: self.seed,
            ..self.phantom.clone()
        }
    }

    /// Checks that do not need any data on disk.
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.augment_fold > 0 {
            self.augment.validate(self.canvas)?;
        }
        Ok(())
    }
}
