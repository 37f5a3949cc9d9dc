//! The JSON training configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LossWeights, ModelConfig, SrArch, StyleVaeArch};
use crate::optim::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub scale_factor: usize,
    pub hr_size: usize,
    pub batch_size: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub samples_per_hr: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub d_style: usize,
    pub la_window: usize,
    /// 1-based extractor stage compared by the content loss.
    pub content_stage: usize,
    /// Whether the SR blocks carry their attention stages.
    pub attention: bool,
    /// Procedural HR training images generated when `hr_dir` is unset.
    pub train_images: usize,
    /// Procedural held-out images for `eval` when `eval_dir` is unset.
    pub eval_images: usize,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub paths: Paths,
}

/// Optional data directories of PNG files. Unset directories are replaced
/// by procedurally generated images.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub hr_dir: Option<PathBuf>,
    /// Real LR images, unpaired with `hr_dir`.
    pub lr_dir: Option<PathBuf>,
    /// Held-out HR images; LR inputs are synthesized from them.
    pub eval_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            scale_factor: 4,
            hr_size: 64,
            batch_size: 8,
            epochs_stage1: 12,
            epochs_stage2: 20,
            samples_per_hr: 2,
            lr: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            lambda1: 0.01,
            lambda2: 1.0,
            lambda3: 0.1,
            alpha: 1.0,
            beta: 0.1,
            d_style: 128,
            la_window: 7,
            content_stage: 1,
            attention: true,
            train_images: 200,
            eval_images: 32,
            checkpoint_every: 0,
            model: ModelConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if ![2, 4, 8].contains(&self.scale_factor) {
            return fail(format!("scale_factor must be 2, 4 or 8, got {}", self.scale_factor));
        }
        if self.hr_size == 0 || self.hr_size % 16 != 0 {
            return fail(format!("hr_size {} must be a positive multiple of 16", self.hr_size));
        }
        let lr_size = self.hr_size / self.scale_factor;
        if lr_size % 4 != 0 {
            return fail(format!("LR size {lr_size} must be divisible by 4"));
        }
        if lr_size < 8 {
            return fail(format!("LR size {lr_size} is too small for the feature extractor"));
        }
        if self.batch_size < 2 {
            return fail("batch_size must be at least 2 for the MI estimator".into());
        }
        for (name, v) in [
            ("lr", self.lr),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if self.la_window < 3 || self.la_window % 2 == 0 {
            return fail(format!("la_window {} must be odd and >= 3", self.la_window));
        }
        if !(1..=4).contains(&self.content_stage) {
            return fail(format!("content_stage {} outside 1..=4", self.content_stage));
        }
        if self.d_style == 0 || self.samples_per_hr == 0 {
            return fail("d_style and samples_per_hr must be positive".into());
        }
        if self.paths.hr_dir.is_none() && self.train_images < self.batch_size {
            return fail("train_images must cover at least one batch".into());
        }
        let m = &self.model;
        if m.sr_garbs > 0 && self.attention && m.sr_width % 8 != 0 {
            return fail(format!("sr_width {} must be divisible by 8 for global attention", m.sr_width));
        }
        if [m.enc_width, m.code_channels, m.gen_width, m.sr_width, m.critic_fc].contains(&0) {
            return fail("model widths must be positive".into());
        }
        Ok(())
    }

    /// The published hyperparameters and network sizes. The default keeps
    /// the loss weights but trains narrower networks with a 10× learning
    /// rate and full-resolution content features, which suits runs of a
    /// few hundred steps.
    pub fn published() -> Self {
        TrainConfig {
            lr: 1e-4,
            content_stage: 3,
            model: ModelConfig::published(),
            ..TrainConfig::default()
        }
    }

    /// A configuration that runs the whole pipeline in seconds: 32×32 HR,
    /// two-image batches and the narrowest networks. For smoke tests only.
    pub fn smoke() -> Self {
        TrainConfig {
            hr_size: 32,
            batch_size: 2,
            epochs_stage1: 1,
            epochs_stage2: 1,
            d_style: 4,
            train_images: 4,
            eval_images: 2,
            model: ModelConfig {
                enc_width: 4,
                enc_blocks: 1,
                code_channels: 8,
                gen_width: 4,
                gen_blocks: 1,
                sr_width: 8,
                sr_garbs: 1,
                sr_larbs: 1,
                critic_fc: 8,
            },
            ..TrainConfig::default()
        }
    }

    pub fn lr_size(&self) -> usize {
        self.hr_size / self.scale_factor
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: 1e-8,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
            alpha: self.alpha,
            beta: self.beta,
            content_stage: self.content_stage,
        }
    }

    pub fn stylevae_arch(&self) -> StyleVaeArch {
        StyleVaeArch {
            model: self.model.clone(),
            scale_factor: self.scale_factor,
            d_style: self.d_style,
        }
    }

    pub fn sr_arch(&self) -> SrArch {
        SrArch {
            model: self.model.clone(),
            scale_factor: self.scale_factor,
            la_window: self.la_window,
            attention: self.attention,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_preset_matches_the_reference_hyperparameters() {
        let c = TrainConfig::published();
        assert_eq!((c.lr, c.adam_beta1, c.adam_beta2), (1e-4, 0.9, 0.999));
        assert_eq!(c.content_stage, 3);
        assert_eq!((c.lambda1, c.lambda2, c.lambda3), (0.01, 1.0, 0.1));
        assert_eq!((c.alpha, c.beta), (1.0, 0.1));
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let mut c = TrainConfig::default();
        c.lr = 3.3e-4;
        c.paths.hr_dir = Some("data/hr".into());
        let back: TrainConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(serde_json::from_str::<TrainConfig>(r#"{"sead": 1}"#).is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"model": {"width": 1}}"#).is_err());
        let partial: TrainConfig = serde_json::from_str(r#"{"seed": 7}"#).unwrap();
        assert_eq!(partial.seed, 7);
        let mut c = TrainConfig::default();
        c.scale_factor = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = TrainConfig::default();
        c.lambda3 = -1.0;
        assert!(c.validate().is_err());
    }
}
