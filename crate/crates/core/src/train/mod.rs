//! Rate-distortion training: the distortion regimes, the pretrain and
//! finetune schedules, and frame sampling over video sequences.

mod data;
mod distortion;
mod optim;
mod run;

pub use data::{sample_frame_index, sample_training_frame, FrameMode, Sequence, SequenceDataset};
pub use distortion::{
    distortion_feature, distortion_feature_var, distortion_gt, distortion_gt_var, distortion_mse, distortion_mse_var,
    distortion_pseudo_gt, distortion_pseudo_gt_var, pseudo_labels, rd_loss, RDLossBreakdown,
};
pub use optim::Adam;
pub use run::{finetune, pretrain, LogRecord, TrainedModel};

use serde::{Deserialize, Serialize};

use crate::codec::{NetworkConfig, LATENT_STRIDE, MIN_IMAGE_SIDE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Pixel MSE.
    #[default]
    Mse,
    /// Task loss against ground-truth annotations.
    Gt,
    /// Squared error of backbone features.
    Feature,
    /// Task loss against the task network's own predictions on the original.
    PseudoGt,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Self::Mse => "mse",
            Self::Gt => "gt",
            Self::Feature => "feature",
            Self::PseudoGt => "pseudo_gt",
        }
    }

    pub fn needs_annotations(self) -> bool {
        self == Self::Gt
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(Self::Mse),
            "gt" => Ok(Self::Gt),
            "feature" => Ok(Self::Feature),
            "pseudo_gt" | "pseudo-gt" => Ok(Self::PseudoGt),
            _ => Err(Error::Config(format!("unknown strategy `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub strategy: Strategy,
    /// Trade-off used by `pretrain` and by `finetune` when the ladder is empty.
    pub lambda: f64,
    /// One finetuned model per entry.
    pub lambda_ladder: Vec<f64>,
    pub pretrain_iterations: usize,
    pub finetune_epochs: usize,
    pub batch_size: usize,
    pub crop_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub frame_mode: FrameMode,
    /// Feature tap for the `feature` strategy.
    pub cut_point: String,
    /// Instance score threshold when hardening pseudo labels.
    pub confidence_threshold: f64,
    /// Write an intermediate checkpoint every this many steps (0 = never).
    pub checkpoint_every: usize,
    pub network: NetworkConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Mse,
            lambda: 1000.0,
            lambda_ladder: vec![16.0, 8.0, 4.0, 2.0],
            pretrain_iterations: 125_000,
            finetune_epochs: 10,
            batch_size: 8,
            crop_size: 256,
            learning_rate: 1e-4,
            seed: 0,
            frame_mode: FrameMode::LabeledOnly,
            cut_point: "stage2".into(),
            confidence_threshold: 0.5,
            checkpoint_every: 5000,
            network: NetworkConfig::full(),
        }
    }
}

impl TrainingConfig {
    /// Desk-scale preset on 64x64 crops.
    pub fn toy() -> Self {
        Self {
            pretrain_iterations: 500,
            batch_size: 4,
            crop_size: 64,
            learning_rate: 1e-3,
            checkpoint_every: 0,
            network: NetworkConfig::toy(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lambda > 0.0) {
            return Err(Error::NonPositiveLambda(self.lambda));
        }
        if let Some(&l) = self.lambda_ladder.iter().find(|&&l| !(l > 0.0)) {
            return Err(Error::NonPositiveLambda(l));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.crop_size < MIN_IMAGE_SIDE || self.crop_size % LATENT_STRIDE != 0 {
            return bad(format!(
                "crop_size {} must be a multiple of {LATENT_STRIDE} and at least {MIN_IMAGE_SIDE}",
                self.crop_size
            ));
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return bad("confidence_threshold must lie in [0, 1]".into());
        }
        self.network.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("training config serializes")
    }

    /// The λ values `finetune` trains.
    pub fn ladder(&self) -> Vec<f64> {
        if self.lambda_ladder.is_empty() {
            vec![self.lambda]
        } else {
            self.lambda_ladder.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let c = TrainingConfig::toy();
        let back = TrainingConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_files_take_defaults() {
        let c = TrainingConfig::from_toml_str("strategy = \"pseudo_gt\"\nlambda_ladder = [64, 32, 16, 8]\n").unwrap();
        assert_eq!(c.strategy, Strategy::PseudoGt);
        assert_eq!(c.ladder(), vec![64.0, 32.0, 16.0, 8.0]);
        assert_eq!(c.crop_size, 256);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = TrainingConfig::from_toml_str("seed = 1\nbatch_size = \"four\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(TrainingConfig::from_toml_str("lambda = -1.0").is_err());
        assert!(TrainingConfig::from_toml_str("crop_size = 70").is_err());
        assert!(TrainingConfig::from_toml_str("unknown_field = 1").is_err());
    }
}
