//! Encoder-decoder segmentation networks and their training loop.
//!
//! Two architectures share one encoder design (per stage: two 3×3
//! conv+ReLU, 2×2 max pool, dropout):
//!
//! - **U-Net**: a bottleneck of two convs, then per decoder stage
//!   2× nearest upsampling, a halving conv, concatenation with the
//!   matching encoder features, and two more conv+ReLU.
//! - **SegNet**: no skip concatenation; each decoder stage max-unpools
//!   with the indices recorded by the matching encoder pool, then runs
//!   two conv+ReLU (the second halves the channel count).
//!
//! Both end in a 1-channel 3×3 conv with sigmoid. Training uses mean
//! binary cross-entropy plus an optional L2 penalty, Adam, optional
//! global-norm gradient clipping, and early stopping on validation loss
//! with best-epoch weight restoration.

mod checkpoint;
mod layers;
mod init;
mod network;
mod segnet;
mod train;
mod unet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patchwork::PATCH_SIZE;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use init::{init_conv_bias, init_conv_weight, InitScheme};
pub use network::{
    grad_check_network, predict_masks, predict_probs, ForwardCache, Network, NetworkGradCheck,
};
pub use train::{train, EarlyStopping, LearningCurve, TrainOutcome};

/// Which architecture to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    UNet,
    SegNet,
}

impl ArchKind {
    pub fn name(self) -> &'static str {
        match self {
            ArchKind::UNet => "unet",
            ArchKind::SegNet => "segnet",
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub arch: ArchKind,
    pub in_channels: usize,
    pub stages: usize,
    pub base_filters: usize,
    pub dropout_rate: f64,
    pub init: InitScheme,
    pub l2_lambda: f64,
}

impl ArchConfig {
    /// The regularized preset: dropout 0.1, lecun-normal init, L2 1e-3.
    pub fn tuned(arch: ArchKind, in_channels: usize) -> ArchConfig {
        ArchConfig {
            arch,
            in_channels,
            stages: 4,
            base_filters: 16,
            dropout_rate: 0.1,
            init: InitScheme::LecunNormal,
            l2_lambda: 0.001,
        }
    }

    /// The unregularized preset: no dropout, glorot-uniform init, no L2.
    pub fn default_preset(arch: ArchKind, in_channels: usize) -> ArchConfig {
        ArchConfig {
            arch,
            in_channels,
            stages: 4,
            base_filters: 16,
            dropout_rate: 0.0,
            init: InitScheme::GlorotUniform,
            l2_lambda: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("stages must be at least 1".into()));
        }
        if PATCH_SIZE % (1 << self.stages) != 0 {
            return Err(Error::Config(format!(
                "{} is not divisible by 2^{} stages",
                PATCH_SIZE, self.stages
            )));
        }
        if self.base_filters == 0 {
            return Err(Error::Config("base_filters must be at least 1".into()));
        }
        if self.in_channels == 0 {
            return Err(Error::Config("in_channels must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.l2_lambda < 0.0 {
            return Err(Error::Config("l2_lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// Optimizer selection (Adam is the only implemented choice).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

/// Training-loop hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 16,
            patience: 20,
            learning_rate: 0.001,
            clip_norm: None,
            seed: 42,
            optimizer: Optimizer::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch_size, and patience must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err(Error::Config("clip_norm must be positive when set".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_config_validation() {
        let mut cfg = ArchConfig::tuned(ArchKind::UNet, 14);
        assert!(cfg.validate().is_ok());
        cfg.stages = 6; // 96 / 2^6 is not integral
        assert!(cfg.validate().is_err());
        cfg.stages = 5;
        assert!(cfg.validate().is_ok());
        cfg.base_filters = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn presets_match_expected_hyperparameters() {
        let tuned = ArchConfig::tuned(ArchKind::UNet, 14);
        assert_eq!(tuned.dropout_rate, 0.1);
        assert_eq!(tuned.init, InitScheme::LecunNormal);
        assert_eq!(tuned.l2_lambda, 0.001);
        let default = ArchConfig::default_preset(ArchKind::UNet, 14);
        assert_eq!(default.dropout_rate, 0.0);
        assert_eq!(default.init, InitScheme::GlorotUniform);
        assert_eq!(default.l2_lambda, 0.0);
    }
}
