use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::AugmentSpec;
use crate::objective::ObjectiveConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_generator: f64,
    pub lr_critic: f64,
    pub decay_factor: f64,
    /// Epochs between learning-rate drops.
    pub decay_every: usize,
    pub batch_size: usize,
    pub objective: ObjectiveConfig,
    pub image_side: usize,
    pub seed: u64,
    /// Epochs between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Applied to inputs and targets independently.
    pub augment: AugmentSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    /// Small images and few epochs, sized for a CPU.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            lr_generator: 5e-5,
            lr_critic: 1e-4,
            decay_factor: 10.0,
            decay_every: 100,
            batch_size: 8,
            objective: ObjectiveConfig::default(),
            image_side: 64,
            seed: 0,
            checkpoint_every: 10,
            augment: AugmentSpec {
                hflip_prob: 0.5,
                vflip_prob: 0.5,
                max_rotation_deg: 0.0,
                crop_fraction: 1.0,
                seed: 0,
            },
        }
    }

    /// The full-size recipe: 256 pixels, 200 epochs, flips, crops and
    /// rotations.
    pub fn paper() -> Self {
        Self {
            epochs: 200,
            image_side: 256,
            checkpoint_every: 20,
            augment: AugmentSpec::default(),
            ..Self::desk()
        }
    }

    /// Looks up a named profile (`desk` or `paper`).
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            _ => Err(Error::InvalidArgument(format!("unknown profile {name:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let rate_ok = |r: f64| r > 0.0 && r.is_finite();
        if !rate_ok(self.lr_generator) || !rate_ok(self.lr_critic) {
            return Err(Error::InvalidArgument("learning rates must be > 0".into()));
        }
        if !(self.decay_factor >= 1.0 && self.decay_factor.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "decay_factor must be >= 1, got {}",
                self.decay_factor
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidArgument("decay_every must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.image_side == 0 {
            return Err(Error::InvalidArgument("image_side must be >= 1".into()));
        }
        self.objective.validate()?;
        self.augment.validate()
    }
}

/// Base rates divided by `decay_factor^floor(epoch / decay_every)`.
pub fn lr_schedule(cfg: &TrainConfig, epoch: usize) -> Result<(f64, f64)> {
    cfg.validate()?;
    if epoch >= cfg.epochs {
        return Err(Error::InvalidArgument(format!(
            "epoch {epoch} outside [0, {})",
            cfg.epochs
        )));
    }
    let drops = (epoch / cfg.decay_every) as i32;
    let div = cfg.decay_factor.powi(drops);
    Ok((cfg.lr_generator / div, cfg.lr_critic / div))
}
