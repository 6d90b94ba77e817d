//! Training configuration and its flat `key = value` file form.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Manifest;
use crate::data::AugmentPolicy;
use crate::discretize::BlockLayout;
use crate::error::{ImsvdError, Result};
use crate::loss::{LossVariant, LossWeights};
use crate::model::ArchSpec;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[default]
    Adam,
    SgdMomentum,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::SgdMomentum => "sgd_momentum",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = ImsvdError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" | "sgd_momentum" | "sgd-momentum" => Ok(OptimizerKind::SgdMomentum),
            other => Err(ImsvdError::contract(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub final_lr: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub variant: LossVariant,
    pub lambda: f64,
    pub beta: f64,
    pub seed_model: u64,
    pub seed_data: u64,
    pub seed_shuffle: u64,
    pub m: usize,
    pub dm: usize,
    pub encoder_hidden: Vec<usize>,
    pub projector_hidden: Vec<usize>,
    pub aug_noise: f64,
    pub aug_dropout: f64,
    pub aug_scale: f64,
    /// Checkpoint every this many epochs (0 = only at the end).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let aug = AugmentPolicy::default();
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            base_lr: 1e-3,
            warmup_epochs: 10,
            final_lr: 1e-5,
            weight_decay: 1e-6,
            optimizer: OptimizerKind::Adam,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            variant: LossVariant::Full,
            lambda: 1.0,
            beta: 1.0,
            seed_model: 0,
            seed_data: 0,
            seed_shuffle: 0,
            m: 8,
            dm: 8,
            encoder_hidden: vec![64, 64],
            projector_hidden: vec![128],
            aug_noise: aug.noise_sigma,
            aug_dropout: aug.dropout,
            aug_scale: aug.scale,
            checkpoint_every: 50,
        }
    }
}

/// Keys accepted in config files, in documentation order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("epochs", "training epochs"),
    ("batch_size", "samples per batch N (>= 2)"),
    ("base_lr", "peak learning rate reached after warmup"),
    ("warmup_epochs", "linear warmup length from lr 0"),
    (
        "final_lr",
        "learning rate at the last step of the cosine decay",
    ),
    ("weight_decay", "decoupled weight decay"),
    ("optimizer", "adam | sgd_momentum"),
    ("momentum", "SGD momentum"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("adam_eps", "Adam denominator epsilon"),
    ("variant", "loss variant: de-oe | oe-ti | de-oe-tic | full"),
    (
        "lambda",
        "weight of the entropy terms (0 = TI-only diagnostic)",
    ),
    ("beta", "redundancy weight, recorded only"),
    ("seed_model", "parameter initialization seed"),
    ("seed_data", "synthetic world seed"),
    ("seed_shuffle", "batch order and augmentation seed"),
    ("m", "number of discrete variables M"),
    ("dm", "units per variable D_M"),
    (
        "encoder_hidden",
        "comma-separated encoder widths after the input",
    ),
    (
        "projector_hidden",
        "comma-separated projector hidden widths",
    ),
    ("aug_noise", "augmentation Gaussian noise sigma"),
    ("aug_dropout", "augmentation coordinate dropout fraction"),
    ("aug_scale", "augmentation global scale jitter"),
    (
        "checkpoint_every",
        "checkpoint interval in epochs (0 = end only)",
    ),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| ImsvdError::contract(format!("config key {key}: {value:?}: {e}")))
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    let v = value.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|w| parse(key, w)).collect()
}

fn join(ws: &[usize]) -> String {
    ws.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "base_lr" => self.base_lr = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "final_lr" => self.final_lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "momentum" => self.momentum = parse(key, value)?,
            "adam_beta1" => self.adam_beta1 = parse(key, value)?,
            "adam_beta2" => self.adam_beta2 = parse(key, value)?,
            "adam_eps" => self.adam_eps = parse(key, value)?,
            "variant" => self.variant = value.parse()?,
            "lambda" => self.lambda = parse(key, value)?,
            "beta" => self.beta = parse(key, value)?,
            "seed_model" => self.seed_model = parse(key, value)?,
            "seed_data" => self.seed_data = parse(key, value)?,
            "seed_shuffle" => self.seed_shuffle = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "dm" => self.dm = parse(key, value)?,
            "encoder_hidden" => self.encoder_hidden = parse_widths(key, value)?,
            "projector_hidden" => self.projector_hidden = parse_widths(key, value)?,
            "aug_noise" => self.aug_noise = parse(key, value)?,
            "aug_dropout" => self.aug_dropout = parse(key, value)?,
            "aug_scale" => self.aug_scale = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            other => {
                return Err(ImsvdError::contract(format!(
                    "unknown config key {other:?}"
                )))
            }
        }
        Ok(())
    }

    /// Applies every entry of a `key = value` file on top of `self`.
    pub fn apply_manifest(&mut self, kv: &Manifest) -> Result<()> {
        for (k, v) in kv.entries() {
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut c = TrainConfig::default();
        c.apply_manifest(&Manifest::load(path)?)?;
        Ok(c)
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("epochs", self.epochs)
            .set("batch_size", self.batch_size)
            .set("base_lr", self.base_lr)
            .set("warmup_epochs", self.warmup_epochs)
            .set("final_lr", self.final_lr)
            .set("weight_decay", self.weight_decay)
            .set("optimizer", self.optimizer)
            .set("momentum", self.momentum)
            .set("adam_beta1", self.adam_beta1)
            .set("adam_beta2", self.adam_beta2)
            .set("adam_eps", self.adam_eps)
            .set("variant", self.variant)
            .set("lambda", self.lambda)
            .set("beta", self.beta)
            .set("seed_model", self.seed_model)
            .set("seed_data", self.seed_data)
            .set("seed_shuffle", self.seed_shuffle)
            .set("m", self.m)
            .set("dm", self.dm)
            .set("encoder_hidden", join(&self.encoder_hidden))
            .set("projector_hidden", join(&self.projector_hidden))
            .set("aug_noise", self.aug_noise)
            .set("aug_dropout", self.aug_dropout)
            .set("aug_scale", self.aug_scale)
            .set("checkpoint_every", self.checkpoint_every);
        m
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs > 0 && self.warmup_epochs >= self.epochs {
            return Err(ImsvdError::contract(format!(
                "warmup_epochs {} must be < epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.base_lr > 0.0) {
            return Err(ImsvdError::contract("base_lr must be > 0"));
        }
        if !(self.final_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(ImsvdError::contract(
                "final_lr and weight_decay must be >= 0",
            ));
        }
        if self.batch_size < 2 {
            return Err(ImsvdError::contract(
                "batch_size must be >= 2 to estimate distributions",
            ));
        }
        self.layout()?;
        self.weights()?;
        self.augment_policy().validate()?;
        Ok(())
    }

    pub fn layout(&self) -> Result<BlockLayout> {
        BlockLayout::new(self.m, self.dm)
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda, self.beta)
    }

    pub fn augment_policy(&self) -> AugmentPolicy {
        AugmentPolicy {
            noise_sigma: self.aug_noise,
            dropout: self.aug_dropout,
            scale: self.aug_scale,
        }
    }

    pub fn arch(&self, input_dim: usize) -> Result<ArchSpec> {
        let layout = self.layout()?;
        let mut encoder = vec![input_dim];
        encoder.extend(&self.encoder_hidden);
        if encoder.len() < 2 {
            return Err(ImsvdError::contract(
                "encoder_hidden needs at least one width",
            ));
        }
        let mut projector = vec![*encoder.last().unwrap()];
        projector.extend(&self.projector_hidden);
        projector.push(layout.dim());
        let arch = ArchSpec { encoder, projector };
        arch.validate(layout)?;
        Ok(arch)
    }
}
