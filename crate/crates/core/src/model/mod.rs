//! Two-layer fully-connected classifier: a ReLU feature extractor followed by
//! a linear classification head, with analytic gradients of the weighted
//! soft-label cross entropy.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, model_from_text, model_to_text, save_checkpoint};
pub use train::{
    pretrain_source, shuffled_batches, sgd_step, smoothed_targets, SgdState, TrainConfig, TrainLog,
    TrainRecord,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;
use crate::scalar::{argmax, log_sum_exp, Scalar};

pub const DEFAULT_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

/// Parameters of `g ∘ f` where `f(x) = relu(W1·x + b1)` and `g(z) = W2·z + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
    pub activation: Activation,
}

/// Parameter-shaped tensors: gradients, velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads<T> {
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    /// `X·W1ᵀ + b1`, before the activation.
    pub pre_activation: Matrix<T>,
    /// Extractor output `f(X)`.
    pub features: Matrix<T>,
    pub logits: Matrix<T>,
}

/// Row-stochastic `n×K` class probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities<T> {
    probs: Matrix<T>,
}

impl<T: Scalar> Probabilities<T> {
    /// Wraps a matrix after checking every row is a distribution.
    pub fn new(probs: Matrix<T>) -> Result<Self> {
        let tol = T::of(1e-9);
        for (i, row) in probs.row_iter().enumerate() {
            let s: T = row.iter().copied().sum();
            if row.iter().any(|&p| !(p >= T::zero()) || !p.is_finite()) || (s - T::one()).abs() > tol {
                return Err(Error::Validation(format!("probability row {i} is not a distribution")));
            }
        }
        Ok(Self { probs })
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_count(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.probs.row(i)
    }

    /// Row argmax, lowest index on ties.
    pub fn argmax(&self) -> Vec<usize> {
        self.probs.row_iter().map(argmax).collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self { probs: self.probs.select_rows(indices) }
    }
}

impl<T: Scalar> MlpGrads<T> {
    pub fn zeros_like(model: &MlpModel<T>) -> Self {
        Self {
            w1: Matrix::zeros(model.w1.rows(), model.w1.cols()),
            b1: vec![T::zero(); model.b1.len()],
            w2: Matrix::zeros(model.w2.rows(), model.w2.cols()),
            b2: vec![T::zero(); model.b2.len()],
        }
    }

    /// All entries in the fixed order W1, b1, W2, b2.
    pub fn flat(&self) -> Vec<T> {
        let mut v = Vec::new();
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }
}

impl<T: Scalar> MlpModel<T> {
    /// He-normal extractor, `N(0, 1/h)` head, zero biases.
    pub fn init(input_dim: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || classes < 2 {
            return Err(Error::Validation(format!(
                "invalid model shape d={input_dim}, h={hidden}, K={classes}"
            )));
        }
        let mut rng = rng::stream(seed, rng::STREAM_INIT);
        let s1 = (2.0 / input_dim as f64).sqrt();
        let s2 = (1.0 / hidden as f64).sqrt();
        let mut draw = |s: f64| T::of(s * rng.sample::<f64, _>(StandardNormal));
        let w1 = Matrix::from_fn(hidden, input_dim, |_, _| draw(s1));
        let w2 = Matrix::from_fn(classes, hidden, |_, _| draw(s2));
        Self::from_parts(w1, vec![T::zero(); hidden], w2, vec![T::zero(); classes])
    }

    pub fn from_parts(w1: Matrix<T>, b1: Vec<T>, w2: Matrix<T>, b2: Vec<T>) -> Result<Self> {
        let model = Self { w1, b1, w2, b2, activation: Activation::Relu };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w1.rows();
        if h == 0 || self.w1.cols() == 0 {
            return Err(Error::Validation("hidden width and input dim must be >= 1".into()));
        }
        if self.b1.len() != h || self.w2.cols() != h || self.b2.len() != self.w2.rows() {
            return Err(Error::Dimension(format!(
                "inconsistent parameter shapes: W1 {:?}, b1 {}, W2 {:?}, b2 {}",
                self.w1.shape(),
                self.b1.len(),
                self.w2.shape(),
                self.b2.len()
            )));
        }
        if self.w2.rows() < 2 {
            return Err(Error::Validation("classifier needs at least 2 outputs".into()));
        }
        let finite = self.w1.is_finite()
            && self.w2.is_finite()
            && self.b1.iter().chain(&self.b2).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("non-finite model parameter".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn class_count(&self) -> usize {
        self.w2.rows()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Forward<T>> {
        forward(self, x)
    }

    pub fn predict_proba(&self, x: &Matrix<T>) -> Result<Probabilities<T>> {
        Ok(model_probability(&self.forward(x)?.logits))
    }

    /// Adds `scale · g` to every parameter.
    pub fn axpy(&mut self, scale: T, g: &MlpGrads<T>) {
        let add = |dst: &mut [T], src: &[T]| dst.iter_mut().zip(src).for_each(|(d, &s)| *d += scale * s);
        add(self.w1.as_mut_slice(), g.w1.as_slice());
        add(&mut self.b1, &g.b1);
        add(self.w2.as_mut_slice(), g.w2.as_slice());
        add(&mut self.b2, &g.b2);
    }

    pub fn param_count(&self) -> usize {
        self.w1.as_slice().len() + self.b1.len() + self.w2.as_slice().len() + self.b2.len()
    }

    /// Mutable access to parameter `idx` in the W1, b1, W2, b2 flat order.
    pub fn param_mut(&mut self, idx: usize) -> &mut T {
        let n1 = self.w1.as_slice().len();
        let n2 = n1 + self.b1.len();
        let n3 = n2 + self.w2.as_slice().len();
        match idx {
            i if i < n1 => &mut self.w1.as_mut_slice()[i],
            i if i < n2 => &mut self.b1[i - n1],
            i if i < n3 => &mut self.w2.as_mut_slice()[i - n2],
            i => &mut self.b2[i - n3],
        }
    }
}

/// `features = relu(X·W1ᵀ + b1)`, `logits = features·W2ᵀ + b2`.
pub fn forward<T: Scalar>(model: &MlpModel<T>, x: &Matrix<T>) -> Result<Forward<T>> {
    if x.cols() != model.input_dim() {
        return Err(Error::Dimension(format!(
            "input has {} columns, model expects {}",
            x.cols(),
            model.input_dim()
        )));
    }
    let mut pre_activation = x.matmul_t(&model.w1)?;
    for r in 0..pre_activation.rows() {
        for (v, &b) in pre_activation.row_mut(r).iter_mut().zip(&model.b1) {
            *v += b;
        }
    }
    let mut features = pre_activation.clone();
    for v in features.as_mut_slice() {
        *v = v.max(T::zero());
    }
    let mut logits = features.matmul_t(&model.w2)?;
    for r in 0..logits.rows() {
        for (v, &b) in logits.row_mut(r).iter_mut().zip(&model.b2) {
            *v += b;
        }
    }
    Ok(Forward { pre_activation, features, logits })
}

/// Row-wise softmax with max subtraction.
pub fn model_probability<T: Scalar>(logits: &Matrix<T>) -> Probabilities<T> {
    let mut probs = logits.clone();
    for r in 0..probs.rows() {
        let row = probs.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Probabilities { probs }
}

fn check_targets<T: Scalar>(
    model: &MlpModel<T>,
    x: &Matrix<T>,
    soft_labels: &Matrix<T>,
    weights: &[T],
) -> Result<()> {
    let n = x.rows();
    if soft_labels.shape() != (n, model.class_count()) || weights.len() != n {
        return Err(Error::Dimension(format!(
            "targets {:?} / weights {} do not match {n} samples and {} classes",
            soft_labels.shape(),
            weights.len(),
            model.class_count()
        )));
    }
    if n == 0 {
        return Err(Error::Dimension("empty batch".into()));
    }
    Ok(())
}

/// `(1/n) Σᵢ wᵢ Σ_c −yᵢc log p(xᵢ)_c` where `y` are soft labels.
pub fn weighted_ce_loss<T: Scalar>(
    model: &MlpModel<T>,
    x: &Matrix<T>,
    soft_labels: &Matrix<T>,
    weights: &[T],
) -> Result<T> {
    check_targets(model, x, soft_labels, weights)?;
    let logits = forward(model, x)?.logits;
    Ok(loss_from_logits(&logits, soft_labels, weights))
}

fn loss_from_logits<T: Scalar>(logits: &Matrix<T>, soft_labels: &Matrix<T>, weights: &[T]) -> T {
    let n = T::of_usize(logits.rows());
    let mut total = T::zero();
    for (i, (z, y)) in logits.row_iter().zip(soft_labels.row_iter()).enumerate() {
        let lse = log_sum_exp(z);
        let mut ce = T::zero();
        for (&zc, &yc) in z.iter().zip(y) {
            if yc != T::zero() {
                ce -= yc * (zc - lse);
            }
        }
        total += weights[i] * ce;
    }
    total / n
}

#[derive(Debug, Clone)]
pub struct LossAndGrad<T> {
    pub loss: T,
    pub grads: MlpGrads<T>,
}

/// Weighted soft-label cross entropy and its gradient with respect to every
/// parameter, by backpropagation.
pub fn weighted_ce_grad<T: Scalar>(
    model: &MlpModel<T>,
    x: &Matrix<T>,
    soft_labels: &Matrix<T>,
    weights: &[T],
) -> Result<LossAndGrad<T>> {
    check_targets(model, x, soft_labels, weights)?;
    let Forward { features, logits, .. } = forward(model, x)?;
    let loss = loss_from_logits(&logits, soft_labels, weights);
    let probs = model_probability(&logits);
    let n = T::of_usize(x.rows());

    // dL/dz = (w/n)·(p·Σy − y)
    let mut dz = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let scale = weights[i] / n;
        let y = soft_labels.row(i);
        let mass: T = y.iter().copied().sum();
        for (c, d) in dz.row_mut(i).iter_mut().enumerate() {
            *d = scale * (probs.probs[(i, c)] * mass - y[c]);
        }
    }

    let w2 = dz.t_matmul(&features)?;
    let b2 = column_sums(&dz);
    let mut da = dz.matmul(&model.w2)?;
    for i in 0..da.rows() {
        for (d, &f) in da.row_mut(i).iter_mut().zip(features.row(i)) {
            if f <= T::zero() {
                *d = T::zero();
            }
        }
    }
    let w1 = da.t_matmul(x)?;
    let b1 = column_sums(&da);
    Ok(LossAndGrad { loss, grads: MlpGrads { w1, b1, w2, b2 } })
}

fn column_sums<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    let mut s = vec![T::zero(); m.cols()];
    for r in m.row_iter() {
        s.iter_mut().zip(r).for_each(|(a, &v)| *a += v);
    }
    s
}

/// One-hot rows for hard labels.
pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Matrix<T> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        m[(i, l)] = T::one();
    }
    m
}
