//! Gaussian mixture over classifier features.
//!
//! Components are tied to classifier classes: the mixture is initialised by
//! treating the model's softmax outputs as responsibilities, refined by a
//! fixed number of EM iterations (one by default), and its posterior
//! responsibilities serve as the data-structure-wise class probabilities.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::model::{Forward, Probabilities};
use crate::scalar::{argmax, log_sum_exp, Scalar};
use crate::sections::{write_section, write_vector, SectionReader};

/// Responsibility mass below which a component is treated as empty.
pub const DEGENERATE_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Full,
    Diagonal,
}

/// Which representation of the extractor the mixture is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureLayer {
    /// `X·W1ᵀ + b1`, the linear bottleneck output.
    #[default]
    PreActivation,
    /// The activated hidden features `f(X)`.
    Hidden,
}

impl FeatureLayer {
    pub fn select<T>(self, fwd: &Forward<T>) -> &Matrix<T> {
        match self {
            FeatureLayer::PreActivation => &fwd.pre_activation,
            FeatureLayer::Hidden => &fwd.features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmConfig {
    /// Absolute diagonal regularisation; `None` uses `reg_scale` times the
    /// mean per-dimension feature variance.
    pub reg_epsilon: Option<f64>,
    pub reg_scale: f64,
    pub covariance: CovarianceKind,
    pub em_iterations: usize,
    pub layer: FeatureLayer,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { reg_epsilon: None, reg_scale: 1e-6, covariance: CovarianceKind::Full, em_iterations: 1, layer: FeatureLayer::PreActivation }
    }
}

impl GmmConfig {
    pub fn reg_epsilon_for<T: Scalar>(&self, features: &Matrix<T>) -> T {
        if let Some(eps) = self.reg_epsilon {
            return T::of(eps);
        }
        let var = features.column_variances();
        let mean = var.iter().copied().sum::<T>() / T::of_usize(var.len().max(1));
        // Below a few ulps per dimension the ridge cannot absorb rounding in
        // the covariance estimate (relevant for f32 only).
        let floor = T::epsilon() * T::of_usize(16 * var.len().max(1));
        let eps = T::of(self.reg_scale).max(floor) * mean;
        if eps > T::zero() {
            eps
        } else {
            T::of(self.reg_scale.max(f64::MIN_POSITIVE))
        }
    }
}

/// Mixing weights, means and covariances for the components of `classes`.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams<T> {
    classes: Vec<usize>,
    mixing: Vec<T>,
    means: Matrix<T>,
    covariances: Vec<Matrix<T>>,
    reg_epsilon: T,
    kind: CovarianceKind,
    factors: Vec<Cholesky<T>>,
}

impl<T: Scalar> GmmParams<T> {
    /// Validates the parameters and factorises every covariance.
    pub fn new(
        classes: Vec<usize>,
        mixing: Vec<T>,
        means: Matrix<T>,
        covariances: Vec<Matrix<T>>,
        reg_epsilon: T,
        kind: CovarianceKind,
    ) -> Result<Self> {
        let k = classes.len();
        let h = means.cols();
        if k == 0 || mixing.len() != k || means.rows() != k || covariances.len() != k {
            return Err(Error::Dimension(format!(
                "{k} classes, {} weights, {} means, {} covariances",
                mixing.len(),
                means.rows(),
                covariances.len()
            )));
        }
        let total: T = mixing.iter().copied().sum();
        let tol = T::of(1e-9).max(T::epsilon() * T::of_usize(16 * k));
        if mixing.iter().any(|&p| !(p >= T::zero())) || (total - T::one()).abs() > tol {
            return Err(Error::Validation("mixing weights must lie on the simplex".into()));
        }
        if !(reg_epsilon >= T::zero()) || !means.is_finite() {
            return Err(Error::Validation("invalid means or regularisation".into()));
        }
        let mut factors = Vec::with_capacity(k);
        for (c, cov) in covariances.iter().enumerate() {
            if cov.shape() != (h, h) {
                return Err(Error::Dimension(format!("covariance {c} is not {h}x{h}")));
            }
            if cov.max_asymmetry() > T::of(1e-9) {
                return Err(Error::Validation(format!("covariance {c} is not symmetric")));
            }
            factors.push(Cholesky::factor(cov)?);
        }
        Ok(Self { classes, mixing, means, covariances, reg_epsilon, kind, factors })
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn mixing(&self) -> &[T] {
        &self.mixing
    }

    pub fn means(&self) -> &Matrix<T> {
        &self.means
    }

    pub fn covariances(&self) -> &[Matrix<T>] {
        &self.covariances
    }

    pub fn reg_epsilon(&self) -> T {
        self.reg_epsilon
    }

    pub fn kind(&self) -> CovarianceKind {
        self.kind
    }

    pub fn component_count(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn component_of(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    fn component_log_density(&self, x: &[T], comp: usize) -> T {
        let diff: Vec<T> = x.iter().zip(self.means.row(comp)).map(|(&a, &m)| a - m).collect();
        let f = &self.factors[comp];
        let h = T::of_usize(self.dim());
        let two_pi = T::of(2.0 * std::f64::consts::PI);
        -T::of(0.5) * (h * two_pi.ln() + f.log_det() + f.quad_form(&diff))
    }
}

/// Moments of the features under responsibilities `resp` (`n×|classes|`).
pub fn from_responsibilities<T: Scalar>(
    features: &Matrix<T>,
    resp: &Matrix<T>,
    classes: &[usize],
    reg_epsilon: T,
    kind: CovarianceKind,
) -> Result<GmmParams<T>> {
    let (n, h) = features.shape();
    let k = classes.len();
    if resp.shape() != (n, k) {
        return Err(Error::Dimension(format!(
            "responsibilities {:?} for {n} samples and {k} components",
            resp.shape()
        )));
    }
    let mut masses = vec![T::zero(); k];
    for row in resp.row_iter() {
        masses.iter_mut().zip(row).for_each(|(m, &r)| *m += r);
    }
    for (c, &m) in masses.iter().enumerate() {
        if !(m >= T::of(DEGENERATE_MASS)) {
            return Err(Error::DegenerateComponent { class: classes[c] });
        }
    }

    let mut means = Matrix::zeros(k, h);
    for (x, r) in features.row_iter().zip(resp.row_iter()) {
        for c in 0..k {
            if r[c] == T::zero() {
                continue;
            }
            means.row_mut(c).iter_mut().zip(x).for_each(|(m, &v)| *m += r[c] * v);
        }
    }
    for c in 0..k {
        means.row_mut(c).iter_mut().for_each(|m| *m /= masses[c]);
    }

    let mut covariances = vec![Matrix::zeros(h, h); k];
    let mut diff = vec![T::zero(); h];
    for (x, r) in features.row_iter().zip(resp.row_iter()) {
        for c in 0..k {
            let rc = r[c];
            if rc == T::zero() {
                continue;
            }
            diff.iter_mut().zip(x.iter().zip(means.row(c))).for_each(|(d, (&v, &m))| *d = v - m);
            let cov = &mut covariances[c];
            for a in 0..h {
                let ra = rc * diff[a];
                match kind {
                    CovarianceKind::Full => {
                        for b in 0..=a {
                            cov[(a, b)] += ra * diff[b];
                        }
                    }
                    CovarianceKind::Diagonal => cov[(a, a)] += ra * diff[a],
                }
            }
        }
    }
    for (c, cov) in covariances.iter_mut().enumerate() {
        for a in 0..h {
            for b in 0..=a {
                let v = cov[(a, b)] / masses[c];
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
            cov[(a, a)] += reg_epsilon;
        }
    }

    let nt = T::of_usize(n);
    let mixing = masses.iter().map(|&m| m / nt).collect();
    GmmParams::new(classes.to_vec(), mixing, means, covariances, reg_epsilon, kind)
}

/// Initialises the mixture from model probabilities restricted to
/// `class_set` and renormalised per row.
pub fn init_from_predictions<T: Scalar>(
    features: &Matrix<T>,
    probs: &Probabilities<T>,
    class_set: &[usize],
    reg_epsilon: T,
    kind: CovarianceKind,
) -> Result<GmmParams<T>> {
    let n = features.rows();
    if probs.len() != n {
        return Err(Error::Dimension(format!("{} probability rows for {n} samples", probs.len())));
    }
    if class_set.is_empty() || class_set.iter().any(|&c| c >= probs.class_count()) {
        return Err(Error::Validation("class set must be a non-empty subset of the classes".into()));
    }
    if n <= class_set.len() {
        return Err(Error::Validation(format!(
            "need more samples ({n}) than components ({})",
            class_set.len()
        )));
    }
    let k = class_set.len();
    let mut resp = Matrix::zeros(n, k);
    for i in 0..n {
        let p = probs.row(i);
        let row = resp.row_mut(i);
        let mut s = T::zero();
        for (dst, &c) in row.iter_mut().zip(class_set) {
            *dst = p[c];
            s += p[c];
        }
        if s > T::zero() {
            row.iter_mut().for_each(|v| *v /= s);
        } else {
            row.iter_mut().for_each(|v| *v = T::one() / T::of_usize(k));
        }
    }
    from_responsibilities(features, &resp, class_set, reg_epsilon, kind)
}

/// One E-step followed by one M-step.
pub fn em_iteration<T: Scalar>(gmm: &GmmParams<T>, features: &Matrix<T>) -> Result<GmmParams<T>> {
    let dp = data_probability(gmm, features)?;
    from_responsibilities(features, &dp.probs, &gmm.classes, gmm.reg_epsilon, gmm.kind)
}

/// Gaussian log-density of `x` under the component for `class`.
pub fn log_likelihood<T: Scalar>(gmm: &GmmParams<T>, x: &[T], class: usize) -> Result<T> {
    let comp = gmm
        .component_of(class)
        .ok_or_else(|| Error::Validation(format!("class {class} has no mixture component")))?;
    if x.len() != gmm.dim() {
        return Err(Error::Dimension(format!("point has {} dims, mixture {}", x.len(), gmm.dim())));
    }
    Ok(gmm.component_log_density(x, comp))
}

/// Posterior responsibilities (data-structure-wise probabilities) together
/// with the unnormalised log terms `log π_c + log N(x | μ_c, Σ_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataProbabilities<T> {
    classes: Vec<usize>,
    probs: Matrix<T>,
    log_numerators: Matrix<T>,
}

impl<T: Scalar> DataProbabilities<T> {
    /// Normalises each row of `log_numerators` in the log domain.
    pub fn from_log_numerators(classes: Vec<usize>, log_numerators: Matrix<T>) -> Result<Self> {
        if log_numerators.cols() != classes.len() || classes.is_empty() {
            return Err(Error::Dimension("one column per class required".into()));
        }
        let mut probs = log_numerators.clone();
        for r in 0..probs.rows() {
            let row = probs.row_mut(r);
            let lse = log_sum_exp(row);
            if !lse.is_finite() {
                return Err(Error::Numerical(format!("row {r} has no finite log term")));
            }
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        Ok(Self { classes, probs, log_numerators })
    }

    /// Builds from probabilities directly, taking their logs as log terms.
    pub fn from_probs(classes: Vec<usize>, probs: Matrix<T>) -> Result<Self> {
        let logs = Matrix::from_fn(probs.rows(), probs.cols(), |i, j| probs[(i, j)].ln());
        Self::from_log_numerators(classes, logs)
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn probs(&self) -> &Matrix<T> {
        &self.probs
    }

    pub fn log_numerators(&self) -> &Matrix<T> {
        &self.log_numerators
    }

    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Total responsibility per component.
    pub fn class_masses(&self) -> Vec<T> {
        let mut m = vec![T::zero(); self.classes.len()];
        for row in self.probs.row_iter() {
            m.iter_mut().zip(row).for_each(|(a, &p)| *a += p);
        }
        m
    }
}

pub fn data_probability<T: Scalar>(
    gmm: &GmmParams<T>,
    features: &Matrix<T>,
) -> Result<DataProbabilities<T>> {
    if features.cols() != gmm.dim() {
        return Err(Error::Dimension(format!(
            "features have {} dims, mixture {}",
            features.cols(),
            gmm.dim()
        )));
    }
    let k = gmm.component_count();
    let log_pi: Vec<T> = gmm.mixing.iter().map(|p| p.ln()).collect();
    let mut logs = Matrix::zeros(features.rows(), k);
    for (i, x) in features.row_iter().enumerate() {
        for c in 0..k {
            logs[(i, c)] = log_pi[c] + gmm.component_log_density(x, c);
        }
    }
    DataProbabilities::from_log_numerators(gmm.classes.clone(), logs)
}

/// `Σᵢ log Σ_c π_c N(xᵢ | μ_c, Σ_c)`.
pub fn total_log_likelihood<T: Scalar>(gmm: &GmmParams<T>, features: &Matrix<T>) -> Result<T> {
    let dp = data_probability(gmm, features)?;
    Ok(dp.log_numerators.row_iter().map(log_sum_exp).sum())
}

/// Argmax class per row (mapped back to classifier class indices), lowest
/// class on ties.
pub fn pseudo_labels<T: Scalar>(dp: &DataProbabilities<T>) -> Vec<usize> {
    dp.log_numerators.row_iter().map(|r| dp.classes[argmax(r)]).collect()
}

/// A fitted mixture plus the classes whose components collapsed.
#[derive(Debug, Clone)]
pub struct GmmFit<T> {
    pub params: GmmParams<T>,
    pub dropped: Vec<usize>,
}

/// Prediction-based initialisation followed by `cfg.em_iterations` EM steps.
/// Degenerate components are dropped and the fit restarted on the remaining
/// classes.
pub fn fit_gmm<T: Scalar>(
    features: &Matrix<T>,
    probs: &Probabilities<T>,
    class_set: &[usize],
    cfg: &GmmConfig,
) -> Result<GmmFit<T>> {
    let eps = cfg.reg_epsilon_for(features);
    let mut classes = class_set.to_vec();
    let mut dropped = Vec::new();
    'restart: loop {
        if classes.is_empty() {
            return Err(Error::Numerical("every mixture component degenerated".into()));
        }
        let attempt = init_from_predictions(features, probs, &classes, eps, cfg.covariance)
            .and_then(|mut g| {
                for _ in 0..cfg.em_iterations {
                    g = em_iteration(&g, features)?;
                }
                Ok(g)
            });
        match attempt {
            Ok(params) => return Ok(GmmFit { params, dropped }),
            Err(Error::DegenerateComponent { class }) => {
                log::warn!("dropping degenerate mixture component for class {class}");
                classes.retain(|&c| c != class);
                dropped.push(class);
                continue 'restart;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Debug dump: class list, mixing weights, means, regularisation and one
/// covariance section per component.
pub fn gmm_to_text<T: Scalar>(gmm: &GmmParams<T>) -> String {
    let kind = match gmm.kind {
        CovarianceKind::Full => "full",
        CovarianceKind::Diagonal => "diagonal",
    };
    let mut out = format!("# gmm dump v1 covariance={kind}\n");
    let _ = writeln!(out, "classes,1,{}", gmm.classes.len());
    let cls: Vec<String> = gmm.classes.iter().map(usize::to_string).collect();
    out.push_str(&cls.join(","));
    out.push('\n');
    write_vector(&mut out, "mixing", &gmm.mixing);
    write_section(&mut out, "means", &gmm.means);
    write_vector(&mut out, "reg_epsilon", &[gmm.reg_epsilon]);
    for (c, cov) in gmm.classes.iter().zip(&gmm.covariances) {
        write_section(&mut out, &format!("covariance_{c}"), cov);
    }
    out
}

pub fn gmm_from_text<T: Scalar>(text: &str) -> Result<GmmParams<T>> {
    let kind = if text.lines().next().is_some_and(|l| l.contains("covariance=diagonal")) {
        CovarianceKind::Diagonal
    } else {
        CovarianceKind::Full
    };
    let mut r = SectionReader::new(text);
    let classes: Vec<usize> = r
        .read_vector::<f64>("classes")?
        .into_iter()
        .map(|v| v as usize)
        .collect();
    let mixing = r.read_vector("mixing")?;
    let means = r.read("means")?;
    let reg = r.read_vector::<T>("reg_epsilon")?;
    let reg_epsilon = *reg
        .first()
        .ok_or_else(|| Error::Format { line: 0, message: "empty reg_epsilon".into() })?;
    let mut covariances = Vec::with_capacity(classes.len());
    for c in &classes {
        covariances.push(r.read(&format!("covariance_{c}"))?);
    }
    GmmParams::new(classes, mixing, means, covariances, reg_epsilon, kind)
}
