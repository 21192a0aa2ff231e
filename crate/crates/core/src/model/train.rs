use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{one_hot, weighted_ce_grad, weighted_ce_loss, MlpGrads, MlpModel};
use crate::error::{Error, Result};
use crate::data::FeatureSet;
use crate::linalg::Matrix;
use crate::rng::{self, ChaCha8Rng};
use crate::scalar::Scalar;

/// Mini-batch SGD settings. Learning rates default to a single shared value;
/// `extractor_learning_rate` / `classifier_learning_rate` override per layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub extractor_learning_rate: Option<f64>,
    pub classifier_learning_rate: Option<f64>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            extractor_learning_rate: None,
            classifier_learning_rate: None,
            momentum: 0.9,
            weight_decay: 1e-3,
            batch_size: 64,
            epochs: 30,
            label_smoothing: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lr_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !self.extractor_learning_rate.into_iter().chain(self.classifier_learning_rate).all(lr_ok) {
            return Err(Error::Config("per-layer learning rates must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must be in [0,1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must be in [0,1)".into()));
        }
        Ok(())
    }

    fn extractor_lr(&self) -> f64 {
        self.extractor_learning_rate.unwrap_or(self.learning_rate)
    }

    fn classifier_lr(&self) -> f64 {
        self.classifier_learning_rate.unwrap_or(self.learning_rate)
    }
}

/// Momentum buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub velocity: MlpGrads<T>,
}

impl<T: Scalar> SgdState<T> {
    pub fn new(model: &MlpModel<T>) -> Self {
        Self { velocity: MlpGrads::zeros_like(model) }
    }
}

/// `v ← μ·v + g + λ·θ`, then `θ ← θ − lr·v`.
pub fn sgd_step<T: Scalar>(
    model: &mut MlpModel<T>,
    grads: &MlpGrads<T>,
    state: &mut SgdState<T>,
    cfg: &TrainConfig,
) {
    let mu = T::of(cfg.momentum);
    let wd = T::of(cfg.weight_decay);
    let update = |param: &mut [T], grad: &[T], vel: &mut [T], lr: T| {
        for ((p, &g), v) in param.iter_mut().zip(grad).zip(vel.iter_mut()) {
            *v = mu * *v + g + wd * *p;
            *p -= lr * *v;
        }
    };
    let lr1 = T::of(cfg.extractor_lr());
    let lr2 = T::of(cfg.classifier_lr());
    let v = &mut state.velocity;
    update(model.w1.as_mut_slice(), grads.w1.as_slice(), v.w1.as_mut_slice(), lr1);
    update(&mut model.b1, &grads.b1, &mut v.b1, lr1);
    update(model.w2.as_mut_slice(), grads.w2.as_slice(), v.w2.as_mut_slice(), lr2);
    update(&mut model.b2, &grads.b2, &mut v.b2, lr2);
}

/// Index batches over a fresh shuffle of `indices`; the last batch may be short.
pub fn shuffled_batches(indices: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// `1−ε` on the labelled class and `ε/(K−1)` elsewhere.
pub fn smoothed_targets<T: Scalar>(labels: &[usize], classes: usize, epsilon: f64) -> Matrix<T> {
    if epsilon == 0.0 {
        return one_hot(labels, classes);
    }
    let off = T::of(epsilon / (classes - 1) as f64);
    let on = T::of(1.0 - epsilon);
    let mut m = Matrix::from_fn(labels.len(), classes, |_, _| off);
    for (i, &l) in labels.iter().enumerate() {
        m[(i, l)] = on;
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,accuracy\n");
        for r in &self.records {
            s.push_str(&format!("{},{:.16e},{:.16e}\n", r.epoch, r.loss, r.accuracy));
        }
        s
    }

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

/// Supervised source training with label smoothing. Each record holds the
/// full-set smoothed loss and accuracy after that epoch.
pub fn pretrain_source<T: Scalar>(
    model: &mut MlpModel<T>,
    source: &FeatureSet<T>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let labels = source
        .labels()
        .ok_or_else(|| Error::MissingLabels("source pre-training requires labels".into()))?;
    if source.dim() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "source has {} features, model expects {}",
            source.dim(),
            model.input_dim()
        )));
    }
    let k = model.class_count();
    if labels.iter().any(|&l| l >= k) {
        return Err(Error::Validation(format!("source label outside the model's {k} classes")));
    }
    let x = source.features();
    let targets = smoothed_targets::<T>(labels, k, cfg.label_smoothing);
    let mut state = SgdState::new(model);
    let mut rng = rng::stream(cfg.seed, rng::STREAM_SHUFFLE);
    let all: Vec<usize> = (0..x.rows()).collect();
    let mut log = TrainLog::default();

    for epoch in 1..=cfg.epochs {
        for batch in shuffled_batches(&all, cfg.batch_size, &mut rng) {
            let xb = x.select_rows(&batch);
            let yb = targets.select_rows(&batch);
            let wb = vec![T::one(); batch.len()];
            let lg = weighted_ce_grad(model, &xb, &yb, &wb)?;
            sgd_step(model, &lg.grads, &mut state, cfg);
        }
        let ones = vec![T::one(); x.rows()];
        let loss = weighted_ce_loss(model, x, &targets, &ones)?;
        let pred = model.predict_proba(x)?.argmax();
        let correct = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        log.records.push(TrainRecord {
            epoch,
            loss: loss.as_f64(),
            accuracy: correct as f64 / labels.len() as f64,
        });
    }
    model.validate()?;
    Ok(log)
}
