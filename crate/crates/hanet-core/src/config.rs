//! Serializable run configuration: one struct drives training, evaluation,
//! and the ablation harness, and is echoed verbatim into checkpoints and
//! output directories.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, NormConfig};
use crate::error::{Error, Result};
use crate::groundtruth::{FixedKernel, KernelRecipe};
use crate::model::ModelConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig { lr: 1e-4, weight_decay: 5e-4, momentum: 0.0 }
    }
}

/// What `iterations` counts. An epoch is one expected pass over all patches
/// (`ceil(images * patches_per_image / batch_size)` optimizer steps).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IterationUnit {
    #[default]
    Steps,
    Epochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub iterations: u64,
    pub iteration_unit: IterationUnit,
    /// Ground-truth stamp recipe.
    pub gt: KernelRecipe,
    pub augment: AugmentConfig,
    pub norm: NormConfig,
    pub train_manifest: Option<PathBuf>,
    pub test_manifest: Option<PathBuf>,
    /// Where checkpoints / traces / reports land; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    /// Evaluate on `test_manifest` every this many steps.
    pub eval_every: Option<u64>,
    /// Write an intermediate checkpoint every this many steps.
    pub checkpoint_every: Option<u64>,
    /// Clamp negative density pixels to zero when counting.
    pub clamp_negative_counts: bool,
    pub log_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: ModelConfig::default(),
            optim: OptimConfig::default(),
            batch_size: 8,
            iterations: 2000,
            iteration_unit: IterationUnit::Steps,
            gt: KernelRecipe::Fixed(FixedKernel::default()),
            augment: AugmentConfig::default(),
            norm: NormConfig::default(),
            train_manifest: None,
            test_manifest: None,
            out_dir: None,
            eval_every: None,
            checkpoint_every: None,
            clamp_negative_counts: false,
            log_every: 50,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if !(self.optim.lr.is_finite() && self.optim.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be finite and > 0", self.optim.lr)));
        }
        if !(self.optim.weight_decay.is_finite() && self.optim.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay {} must be finite and >= 0",
                self.optim.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.optim.momentum) {
            return Err(Error::Config(format!(
                "momentum {} outside [0, 1)",
                self.optim.momentum
            )));
        }
        if !(self.model.init_std.is_finite() && self.model.init_std > 0.0) {
            return Err(Error::Config(format!("init_std {} must be > 0", self.model.init_std)));
        }
        for (name, v) in [("bn_momentum", self.model.bn_momentum), ("bn_eps", self.model.bn_eps)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} {v} must be finite and > 0")));
            }
        }
        self.augment.validate()?;
        self.gt.validate()?;
        self.model.backbone.stages()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_json() {
        let cfg = RunConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"batch_size": 4, "seed": 9}"#).unwrap();
        assert_eq!(cfg.batch_size, 4);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.iterations, 2000);
        assert_eq!(cfg.optim.lr, 1e-4);
        assert_eq!(cfg.optim.weight_decay, 5e-4);
        assert_eq!(cfg.augment.gray_prob, 0.2);
        assert_eq!(cfg.augment.hflip_prob, 0.5);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.optim.lr = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.optim.momentum = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.augment.gray_prob = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn gt_recipe_serializes_with_mode_tag() {
        let cfg = RunConfig::default();
        let v: serde_json::Value = serde_json::to_value(&cfg).unwrap();
        assert_eq!(v["gt"]["mode"], "fixed");
        assert_eq!(v["gt"]["window"], 15);
        assert_eq!(v["gt"]["sigma"], 4.0);
    }
}
