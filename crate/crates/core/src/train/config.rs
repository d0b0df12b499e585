use std::fmt::Write as _;

use crate::data::AugmentSpec;
use crate::error::{Error, Result};

/// SGD-with-momentum recipe with step learning-rate decay.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
    /// L2 penalty coefficient added to the gradient; 0 disables it.
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: AugmentSpec,
}

impl TrainConfig {
    /// Desk-scale defaults for `size × size` inputs.
    pub fn desk(size: usize, seed: u64) -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            lr0: 0.01,
            momentum: 0.9,
            decay_factor: 10.0,
            decay_every_epochs: 8,
            weight_decay: 0.0,
            seed,
            augment: AugmentSpec::identity(size, seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be a finite non-negative number, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if !(self.decay_factor > 1.0) {
            return Err(Error::Config(format!("decay factor must exceed 1, got {}", self.decay_factor)));
        }
        if self.decay_every_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("decay interval and batch size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        self.augment.validate()
    }

    /// `lr0 / decay_factor^floor(epoch / decay_every_epochs)`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 / self.decay_factor.powi((epoch / self.decay_every_epochs) as i32)
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let a = &self.augment;
        for (k, v) in [
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("lr0", self.lr0.to_string()),
            ("momentum", self.momentum.to_string()),
            ("decay_factor", self.decay_factor.to_string()),
            ("decay_every_epochs", self.decay_every_epochs.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("seed", self.seed.to_string()),
            ("augment.resize_shorter_to", a.resize_shorter_to.to_string()),
            ("augment.crop", a.crop.to_string()),
            ("augment.horizontal_flip", a.horizontal_flip.to_string()),
            ("augment.seed", a.seed.to_string()),
        ] {
            writeln!(s, "{k}={v}").expect("writing to a String");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::desk(1, 0);
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config(format!("malformed line {line:?}")))?;
            let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{k}: {e}"));
            match k {
                "epochs" => cfg.epochs = v.parse().map_err(|e| bad(&e))?,
                "batch_size" => cfg.batch_size = v.parse().map_err(|e| bad(&e))?,
                "lr0" => cfg.lr0 = v.parse().map_err(|e| bad(&e))?,
                "momentum" => cfg.momentum = v.parse().map_err(|e| bad(&e))?,
                "decay_factor" => cfg.decay_factor = v.parse().map_err(|e| bad(&e))?,
                "decay_every_epochs" => cfg.decay_every_epochs = v.parse().map_err(|e| bad(&e))?,
                "weight_decay" => cfg.weight_decay = v.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = v.parse().map_err(|e| bad(&e))?,
                "augment.resize_shorter_to" => cfg.augment.resize_shorter_to = v.parse().map_err(|e| bad(&e))?,
                "augment.crop" => cfg.augment.crop = v.parse().map_err(|e| bad(&e))?,
                "augment.horizontal_flip" => cfg.augment.horizontal_flip = v.parse().map_err(|e| bad(&e))?,
                "augment.seed" => cfg.augment.seed = v.parse().map_err(|e| bad(&e))?,
                other => return Err(Error::Config(format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }
}
