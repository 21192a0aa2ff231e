use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mixup::{sample_mixing_coefficient, weight_mixup_rows};
use super::openset::known_unknown_split;
use super::partial::estimate_classes;
use crate::data::FeatureSet;
use crate::error::{Error, Result};
use crate::evaluation::{accuracy, AccuracyMode};
use crate::gmm::{data_probability, fit_gmm, GmmConfig};
use crate::model::{
    model_probability, one_hot, sgd_step, shuffled_batches, weighted_ce_grad, MlpModel, SgdState,
    TrainConfig,
};
use crate::rng;
use crate::scalar::{format_scalar, Scalar};
use crate::scores::{joint_scores, ScoreVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    #[default]
    Closed,
    Open,
    Partial,
}

/// Per-sample training weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Jmds,
    Lpg,
    Mppl,
    /// Every pseudo-labelled sample weighs 1.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    #[default]
    PerBatch,
    PerSample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    pub scenario: Scenario,
    pub mixup_alpha: f64,
    pub partial_threshold: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub extractor_learning_rate: Option<f64>,
    pub classifier_learning_rate: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `None` enables weight Mixup except in the open-set scenario.
    pub use_weight_mixup: Option<bool>,
    pub gamma_mode: GammaMode,
    /// Pins every mixing coefficient to this value instead of sampling.
    pub gamma_override: Option<f64>,
    pub weighting: Weighting,
    pub gmm: GmmConfig,
    pub accuracy_mode: AccuracyMode,
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Closed,
            mixup_alpha: 0.2,
            partial_threshold: 0.3,
            epochs: 15,
            batch_size: 64,
            learning_rate: 0.05,
            extractor_learning_rate: None,
            classifier_learning_rate: None,
            momentum: 0.9,
            weight_decay: 1e-3,
            use_weight_mixup: None,
            gamma_mode: GammaMode::PerBatch,
            gamma_override: None,
            weighting: Weighting::Jmds,
            gmm: GmmConfig::default(),
            accuracy_mode: AccuracyMode::Overall,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn weight_mixup_enabled(&self) -> bool {
        self.use_weight_mixup.unwrap_or(self.scenario != Scenario::Open)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            extractor_learning_rate: self.extractor_learning_rate,
            classifier_learning_rate: self.classifier_learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs.max(1),
            label_smoothing: 0.0,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mixup_alpha > 0.0 && self.mixup_alpha.is_finite()) {
            return Err(Error::Config(format!("mixup_alpha must be > 0, got {}", self.mixup_alpha)));
        }
        if !(self.partial_threshold > 0.0 && self.partial_threshold < 1.0) {
            return Err(Error::Config(format!(
                "partial_threshold must be in (0,1), got {}",
                self.partial_threshold
            )));
        }
        if let Some(g) = self.gamma_override {
            if !(0.0..=1.0).contains(&g) {
                return Err(Error::Config(format!("gamma_override must be in [0,1], got {g}")));
            }
        }
        self.train_config().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub accuracy: Option<f64>,
    pub mean_jmds: f64,
    pub median_jmds: f64,
    pub q10_jmds: f64,
    pub q90_jmds: f64,
    pub known_fraction: f64,
    /// Mean batch loss of the training pass that followed this state.
    pub train_loss: Option<f64>,
}

/// Snapshot taken at the start of an epoch (the last entry follows the final
/// epoch and is not trained on).
#[derive(Debug, Clone, PartialEq)]
pub struct EpochState<T> {
    pub epoch: usize,
    pub pseudo_labels: Vec<usize>,
    pub jmds: ScoreVector<T>,
    pub weights: Vec<T>,
    pub known_mask: Vec<bool>,
    pub active_classes: Vec<usize>,
    pub metrics: EpochMetrics,
}

#[derive(Debug, Clone)]
pub struct AdaptOutcome<T> {
    pub model: MlpModel<T>,
    pub log: Vec<EpochState<T>>,
}

impl<T> AdaptOutcome<T> {
    pub fn initial(&self) -> &EpochState<T> {
        &self.log[0]
    }

    pub fn last(&self) -> &EpochState<T> {
        self.log.last().expect("log has the initial state")
    }
}

/// Fits the mixture, computes scores and the open-set split for the current
/// model.
pub fn epoch_state<T: Scalar>(
    model: &MlpModel<T>,
    target: &FeatureSet<T>,
    cfg: &AdaptConfig,
    epoch: usize,
) -> Result<EpochState<T>> {
    let x = target.features();
    let k = model.class_count();
    let mut active: Vec<usize> = (0..k).collect();
    if cfg.scenario == Scenario::Partial {
        active = estimate_classes(model, x, cfg.partial_threshold, &cfg.gmm)?.classes;
    }
    let out = model.forward(x)?;
    let probs = model_probability(&out.logits);
    let feats = cfg.gmm.layer.select(&out);
    let fit = fit_gmm(feats, &probs, &active, &cfg.gmm)?;
    if !fit.dropped.is_empty() {
        log::warn!("epoch {epoch}: classes {:?} dropped from the mixture", fit.dropped);
    }
    active = fit.params.classes().to_vec();
    let dp = data_probability(&fit.params, feats)?;
    let joint = joint_scores(&probs, &dp)?;

    let known_mask = if cfg.scenario == Scenario::Open {
        known_unknown_split(&probs)?.known_mask
    } else {
        vec![true; x.rows()]
    };

    let weights: Vec<T> = match cfg.weighting {
        Weighting::Jmds => joint.jmds.values().to_vec(),
        Weighting::Lpg => joint.lpg.values().to_vec(),
        Weighting::Mppl => joint.mppl.values().to_vec(),
        Weighting::Uniform => vec![T::one(); x.rows()],
    };

    let accuracy = match target.labels() {
        Some(truth) => {
            let mut pred = probs.argmax();
            let mode = if cfg.scenario == Scenario::Open {
                for (p, &known) in pred.iter_mut().zip(&known_mask) {
                    if !known {
                        *p = k;
                    }
                }
                AccuracyMode::PerClassMean
            } else {
                cfg.accuracy_mode
            };
            Some(accuracy(&pred, truth, mode)?)
        }
        None => None,
    };

    let jmds = joint.jmds;
    let known = known_mask.iter().filter(|&&b| b).count();
    let metrics = EpochMetrics {
        accuracy,
        mean_jmds: jmds.mean().as_f64(),
        median_jmds: jmds.median().as_f64(),
        q10_jmds: jmds.quantile(0.1).as_f64(),
        q90_jmds: jmds.quantile(0.9).as_f64(),
        known_fraction: known as f64 / x.rows() as f64,
        train_loss: None,
    };
    Ok(EpochState {
        epoch,
        pseudo_labels: jmds.pseudo_labels().to_vec(),
        jmds,
        weights,
        known_mask,
        active_classes: active,
        metrics,
    })
}

/// Runs the adaptation loop: per epoch, refresh pseudo-labels and weights
/// from the current model, then one weighted pass over the (known) target
/// samples, with or without weight Mixup.
pub fn cowa_adapt<T: Scalar>(
    model: MlpModel<T>,
    target: &FeatureSet<T>,
    cfg: &AdaptConfig,
) -> Result<AdaptOutcome<T>> {
    cfg.validate()?;
    if target.dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "target has {} features, model expects {}",
            target.dim(),
            model.input_dim()
        )));
    }
    let mut model = model;
    let k = model.class_count();
    let train_cfg = cfg.train_config();
    let mixup = cfg.weight_mixup_enabled();
    let x = target.features();
    let mut state = SgdState::new(&model);
    let mut shuffle_rng = rng::stream(cfg.seed, rng::STREAM_SHUFFLE);
    let mut mixup_rng = rng::stream(cfg.seed, rng::STREAM_MIXUP);
    let mut log = Vec::with_capacity(cfg.epochs + 1);

    for epoch in 0..cfg.epochs {
        let mut st = epoch_state(&model, target, cfg, epoch)?;
        let train_idx: Vec<usize> = (0..x.rows()).filter(|&i| st.known_mask[i]).collect();
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for batch in shuffled_batches(&train_idx, cfg.batch_size, &mut shuffle_rng) {
            let xb = x.select_rows(&batch);
            let yb: Vec<usize> = batch.iter().map(|&i| st.pseudo_labels[i]).collect();
            let wb: Vec<T> = batch.iter().map(|&i| st.weights[i]).collect();
            let lg = if mixup {
                let mut partner: Vec<usize> = (0..batch.len()).collect();
                partner.shuffle(&mut mixup_rng);
                let gammas: Vec<T> = match (cfg.gamma_override, cfg.gamma_mode) {
                    (Some(g), _) => vec![T::of(g); batch.len()],
                    (None, GammaMode::PerBatch) => {
                        vec![T::of(sample_mixing_coefficient(cfg.mixup_alpha, &mut mixup_rng)?); batch.len()]
                    }
                    (None, GammaMode::PerSample) => (0..batch.len())
                        .map(|_| sample_mixing_coefficient(cfg.mixup_alpha, &mut mixup_rng).map(T::of))
                        .collect::<Result<_>>()?,
                };
                let xj = xb.select_rows(&partner);
                let yj: Vec<usize> = partner.iter().map(|&p| yb[p]).collect();
                let wj: Vec<T> = partner.iter().map(|&p| wb[p]).collect();
                let mixed = weight_mixup_rows(&xb, &xj, &yb, &yj, &wb, &wj, &gammas, k)?;
                weighted_ce_grad(&model, &mixed.x, &mixed.soft_labels, &mixed.weights)?
            } else {
                weighted_ce_grad(&model, &xb, &one_hot(&yb, k), &wb)?
            };
            sgd_step(&mut model, &lg.grads, &mut state, &train_cfg);
            loss_sum += lg.loss.as_f64();
            batches += 1;
        }
        if batches > 0 {
            st.metrics.train_loss = Some(loss_sum / batches as f64);
        }
        log::info!(
            "epoch {epoch}: accuracy {:?}, median JMDS {:.4}",
            st.metrics.accuracy,
            st.metrics.median_jmds
        );
        log.push(st);
    }
    model.validate()?;
    log.push(epoch_state(&model, target, cfg, cfg.epochs)?);
    Ok(AdaptOutcome { model, log })
}

/// `epoch,accuracy,mean_jmds,median_jmds,q10_jmds,q90_jmds,active_classes,known_fraction`.
/// Accuracy is empty for unlabelled targets.
pub fn adapt_log_to_csv<T: Scalar>(log: &[EpochState<T>]) -> String {
    let mut s = String::from(
        "epoch,accuracy,mean_jmds,median_jmds,q10_jmds,q90_jmds,active_classes,known_fraction\n",
    );
    for st in log {
        let m = &st.metrics;
        let acc = m.accuracy.map(format_scalar).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{acc},{},{},{},{},{},{}",
            st.epoch,
            format_scalar(m.mean_jmds),
            format_scalar(m.median_jmds),
            format_scalar(m.q10_jmds),
            format_scalar(m.q90_jmds),
            st.active_classes.len(),
            format_scalar(m.known_fraction)
        );
    }
    s
}

pub const QUANTILE_LEVELS: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// JMDS deciles per epoch: `epoch,q0,q10,...,q100`.
pub fn jmds_quantiles_to_csv<T: Scalar>(log: &[EpochState<T>]) -> String {
    let mut s = String::from("epoch");
    for q in QUANTILE_LEVELS {
        let _ = write!(s, ",q{}", (q * 100.0).round() as u32);
    }
    s.push('\n');
    for st in log {
        s.push_str(&st.epoch.to_string());
        for q in QUANTILE_LEVELS {
            let _ = write!(s, ",{}", format_scalar(st.jmds.quantile(q)));
        }
        s.push('\n');
    }
    s
}
