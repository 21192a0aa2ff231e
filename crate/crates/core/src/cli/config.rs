//! Per-command run configurations. Every long flag `--foo-bar` has a JSON key
//! `foo_bar`; values are resolved as defaults, then the `--config` file, then
//! flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adaptation::{AdaptConfig, GammaMode, Scenario, Weighting};
use crate::data::{ToyShiftConfig, TOY_OFFSET, TOY_RADIUS, TOY_TILT_DEGREES};
use crate::error::{Error, Result};
use crate::evaluation::AccuracyMode;
use crate::gmm::{CovarianceKind, FeatureLayer, GmmConfig};
use crate::model::{TrainConfig, DEFAULT_HIDDEN};

pub const SNAPSHOT_FILE: &str = "config.json";

pub fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Reads a JSON config file; unknown keys are rejected.
pub fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref().ok_or_else(|| Error::Config(format!("missing required --{flag}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyRun {
    pub seed: u64,
    pub out: PathBuf,
    pub classes: usize,
    pub dim: usize,
    pub radius: f64,
    pub offset: f64,
    pub tilt: f64,
    pub per_class: usize,
    pub covariance_scale: f64,
    pub target_classes: Option<Vec<usize>>,
    pub unknown_count: usize,
    /// Centre of the planted unknown cluster; defaults to the origin.
    pub unknown_mean: Option<Vec<f64>>,
}

impl Default for ToyRun {
    fn default() -> Self {
        Self {
            seed: 0,
            out: default_out(),
            classes: 3,
            dim: 2,
            radius: TOY_RADIUS,
            offset: TOY_OFFSET,
            tilt: TOY_TILT_DEGREES,
            per_class: 200,
            covariance_scale: 1.0,
            target_classes: None,
            unknown_count: 0,
            unknown_mean: None,
        }
    }
}

impl ToyRun {
    pub fn toy_config(&self) -> Result<ToyShiftConfig> {
        let sd = self.covariance_scale.sqrt();
        let mut cfg = ToyShiftConfig::ring(self.classes, self.dim, self.radius * sd, self.offset * sd, self.per_class, self.seed)
            .with_offset_rotation(self.tilt);
        cfg.covariance_scale = self.covariance_scale;
        cfg.target_classes = self.target_classes.clone();
        if self.unknown_count > 0 {
            cfg.unknown_count = self.unknown_count;
            cfg.unknown_mean = Some(self.unknown_mean.clone().unwrap_or_else(|| vec![0.0; self.dim]));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainRun {
    pub seed: u64,
    pub out: PathBuf,
    pub source: Option<PathBuf>,
    pub hidden: usize,
    pub lr: f64,
    pub extractor_lr: Option<f64>,
    pub classifier_lr: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
}

impl Default for PretrainRun {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            seed: 0,
            out: default_out(),
            source: None,
            hidden: DEFAULT_HIDDEN,
            lr: t.learning_rate,
            extractor_lr: t.extractor_learning_rate,
            classifier_lr: t.classifier_learning_rate,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            label_smoothing: t.label_smoothing,
        }
    }
}

impl PretrainRun {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            extractor_learning_rate: self.extractor_lr,
            classifier_learning_rate: self.classifier_lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            label_smoothing: self.label_smoothing,
            seed: self.seed,
        }
    }
}

fn gmm_config(
    reg_epsilon: Option<f64>,
    reg_scale: f64,
    covariance: CovarianceKind,
    em_iterations: usize,
    layer: FeatureLayer,
) -> Result<GmmConfig> {
    if let Some(eps) = reg_epsilon {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("reg_epsilon must be finite and >= 0, got {eps}")));
        }
    }
    if !(reg_scale >= 0.0 && reg_scale.is_finite()) {
        return Err(Error::Config(format!("reg_scale must be finite and >= 0, got {reg_scale}")));
    }
    Ok(GmmConfig { reg_epsilon, reg_scale, covariance, em_iterations, layer })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreRun {
    pub seed: u64,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub reg_epsilon: Option<f64>,
    pub reg_scale: f64,
    pub covariance: CovarianceKind,
    pub em_iterations: usize,
    pub gmm_layer: FeatureLayer,
}

impl Default for ScoreRun {
    fn default() -> Self {
        let g = GmmConfig::default();
        Self {
            seed: 0,
            out: default_out(),
            model: None,
            target: None,
            reg_epsilon: g.reg_epsilon,
            reg_scale: g.reg_scale,
            covariance: g.covariance,
            em_iterations: g.em_iterations,
            gmm_layer: g.layer,
        }
    }
}

impl ScoreRun {
    pub fn gmm_config(&self) -> Result<GmmConfig> {
        gmm_config(self.reg_epsilon, self.reg_scale, self.covariance, self.em_iterations, self.gmm_layer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptRun {
    pub seed: u64,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub scenario: Scenario,
    pub alpha: f64,
    pub tau: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub extractor_lr: Option<f64>,
    pub classifier_lr: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `None` enables weight Mixup except in the open-set scenario.
    pub weight_mixup: Option<bool>,
    pub gamma_mode: GammaMode,
    pub gamma: Option<f64>,
    pub weighting: Weighting,
    pub accuracy_mode: AccuracyMode,
    pub reg_epsilon: Option<f64>,
    pub reg_scale: f64,
    pub covariance: CovarianceKind,
    pub em_iterations: usize,
    pub gmm_layer: FeatureLayer,
}

impl Default for AdaptRun {
    fn default() -> Self {
        let a = AdaptConfig::default();
        let g = a.gmm.clone();
        Self {
            seed: 0,
            out: default_out(),
            model: None,
            target: None,
            scenario: a.scenario,
            alpha: a.mixup_alpha,
            tau: a.partial_threshold,
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.learning_rate,
            extractor_lr: a.extractor_learning_rate,
            classifier_lr: a.classifier_learning_rate,
            momentum: a.momentum,
            weight_decay: a.weight_decay,
            weight_mixup: a.use_weight_mixup,
            gamma_mode: a.gamma_mode,
            gamma: a.gamma_override,
            weighting: a.weighting,
            accuracy_mode: a.accuracy_mode,
            reg_epsilon: g.reg_epsilon,
            reg_scale: g.reg_scale,
            covariance: g.covariance,
            em_iterations: g.em_iterations,
            gmm_layer: g.layer,
        }
    }
}

impl AdaptRun {
    pub fn adapt_config(&self) -> Result<AdaptConfig> {
        let cfg = AdaptConfig {
            scenario: self.scenario,
            mixup_alpha: self.alpha,
            partial_threshold: self.tau,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            extractor_learning_rate: self.extractor_lr,
            classifier_learning_rate: self.classifier_lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            use_weight_mixup: self.weight_mixup,
            gamma_mode: self.gamma_mode,
            gamma_override: self.gamma,
            weighting: self.weighting,
            gmm: gmm_config(self.reg_epsilon, self.reg_scale, self.covariance, self.em_iterations, self.gmm_layer)?,
            accuracy_mode: self.accuracy_mode,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalRun {
    pub seed: u64,
    pub out: PathBuf,
    pub model: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub scores: Option<PathBuf>,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self { seed: 0, out: default_out(), model: None, data: None, scores: None }
    }
}
