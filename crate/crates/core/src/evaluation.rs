//! Selective-prediction evaluation: risk-coverage curves, AURC under 0/1
//! loss, accuracy, and the side-by-side comparison of every confidence score.
//!
//! Curve arithmetic is generic over the loss number type so exact rationals
//! can be used where floating-point rounding would blur a comparison.

use std::fmt;

use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{data_probability, fit_gmm, GmmConfig, GmmParams};
use crate::linalg::Matrix;
use crate::model::{MlpModel, Probabilities};
use crate::scalar::{format_scalar, parse_scalar, Scalar};
use crate::scores::{
    cluster_centers, joint_scores, score_cossim, score_ent, score_maxprob, ScoreKind, ScoreVector,
};

/// Loss/risk number type: any ordered field-like numeric.
pub trait RiskValue: Num + Copy + PartialOrd + FromPrimitive {}

impl<R: Num + Copy + PartialOrd + FromPrimitive> RiskValue for R {}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskCoverageCurve<R> {
    /// `(coverage, risk)` at coverages `1/n, 2/n, …, 1`.
    pub points: Vec<(R, R)>,
    pub aurc: R,
}

impl<R: RiskValue + fmt::Display> RiskCoverageCurve<R> {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("coverage,risk\n");
        for (c, r) in &self.points {
            s.push_str(&format!("{c},{r}\n"));
        }
        s
    }
}

/// Parses `coverage,risk` rows and recomputes the AURC as their mean risk.
pub fn curve_from_csv<T: Scalar>(text: &str) -> Result<RiskCoverageCurve<T>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "coverage,risk")) => {}
        _ => return Err(Error::Format { line: 1, message: "expected header coverage,risk".into() }),
    }
    let mut points = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let mut it = line.split(',');
        let parse = |c: Option<&str>| c.and_then(parse_scalar::<T>);
        match (parse(it.next()), parse(it.next()), it.next()) {
            (Some(c), Some(r), None) => points.push((c, r)),
            _ => return Err(Error::Format { line: i + 1, message: "expected coverage,risk".into() }),
        }
    }
    if points.is_empty() {
        return Err(Error::Format { line: 1, message: "empty curve".into() });
    }
    let aurc = points.iter().map(|p| p.1).sum::<T>() / T::of_usize(points.len());
    Ok(RiskCoverageCurve { points, aurc })
}

/// 1 where the pseudo-label disagrees with the ground truth.
pub fn zero_one_loss<R: RiskValue>(pseudo_labels: &[usize], true_labels: &[usize]) -> Result<Vec<R>> {
    if pseudo_labels.len() != true_labels.len() {
        return Err(Error::Dimension(format!(
            "{} pseudo-labels vs {} true labels",
            pseudo_labels.len(),
            true_labels.len()
        )));
    }
    Ok(pseudo_labels
        .iter()
        .zip(true_labels)
        .map(|(p, t)| if p == t { R::zero() } else { R::one() })
        .collect())
}

/// Curve for losses already arranged from most to least confident.
fn curve_from_ranked<R: RiskValue>(ranked_losses: impl Iterator<Item = R>, n: usize) -> RiskCoverageCurve<R> {
    let total = R::from_usize(n).expect("sample count representable");
    let mut points = Vec::with_capacity(n);
    let mut cum = R::zero();
    let mut risk_sum = R::zero();
    for (i, loss) in ranked_losses.enumerate() {
        let k = R::from_usize(i + 1).expect("sample count representable");
        cum = cum + loss;
        let risk = cum / k;
        risk_sum = risk_sum + risk;
        points.push((k / total, risk));
    }
    RiskCoverageCurve { points, aurc: risk_sum / total }
}

/// Order of samples from highest to lowest score, ties by index.
pub fn confidence_order<T: Scalar>(values: &[T]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    order
}

pub fn risk_coverage_values<T: Scalar, R: RiskValue>(values: &[T], losses: &[R]) -> Result<RiskCoverageCurve<R>> {
    if values.is_empty() || values.len() != losses.len() {
        return Err(Error::Dimension(format!(
            "{} scores vs {} losses (need n >= 1)",
            values.len(),
            losses.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation("scores must be finite".into()));
    }
    let order = confidence_order(values);
    Ok(curve_from_ranked(order.iter().map(|&i| losses[i]), losses.len()))
}

pub fn risk_coverage<T: Scalar, R: RiskValue>(scores: &ScoreVector<T>, losses: &[R]) -> Result<RiskCoverageCurve<R>> {
    risk_coverage_values(scores.values(), losses)
}

/// AURC of the ranking that places every correct sample first.
pub fn oracle_aurc<R: RiskValue>(losses: &[R]) -> Result<R> {
    if losses.is_empty() {
        return Err(Error::Dimension("oracle AURC needs n >= 1".into()));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(curve_from_ranked(sorted.into_iter(), losses.len()).aurc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    #[default]
    Overall,
    PerClassMean,
}

/// Overall accuracy, or the unweighted mean of per-class accuracies over the
/// classes present in `true_labels`.
pub fn accuracy(pred: &[usize], truth: &[usize], mode: AccuracyMode) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Dimension(format!("{} predictions vs {} labels", pred.len(), truth.len())));
    }
    match mode {
        AccuracyMode::Overall => {
            let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
            Ok(hits as f64 / pred.len() as f64)
        }
        AccuracyMode::PerClassMean => {
            let k = truth.iter().chain(pred).max().map_or(0, |&m| m + 1);
            let mut total = vec![0usize; k];
            let mut hits = vec![0usize; k];
            for (&p, &t) in pred.iter().zip(truth) {
                total[t] += 1;
                if p == t {
                    hits[t] += 1;
                }
            }
            let mut sum = 0.0;
            let mut present = 0usize;
            for c in 0..k {
                if total[c] == 0 {
                    log::warn!("class {c} has no samples; excluded from per-class accuracy");
                    continue;
                }
                sum += hits[c] as f64 / total[c] as f64;
                present += 1;
            }
            Ok(sum / present as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PseudoLabeler {
    Naive,
    Gmm,
}

impl fmt::Display for PseudoLabeler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Naive => "naive",
            Self::Gmm => "gmm",
        })
    }
}

/// All six scores for one model and feature set.
#[derive(Debug, Clone)]
pub struct ScoreSet<T> {
    pub probs: Probabilities<T>,
    pub gmm: GmmParams<T>,
    pub entries: Vec<(PseudoLabeler, ScoreVector<T>)>,
}

impl<T: Scalar> ScoreSet<T> {
    pub fn get(&self, kind: ScoreKind) -> Option<&ScoreVector<T>> {
        self.entries.iter().find(|(_, s)| s.kind() == kind).map(|(_, s)| s)
    }
}

/// Naive-PL rows (Maxprob, Ent) and mixture-PL rows (Cossim, MPPL, LPG, JMDS).
pub fn compute_scores<T: Scalar>(model: &MlpModel<T>, x: &Matrix<T>, gmm_cfg: &GmmConfig) -> Result<ScoreSet<T>> {
    let out = model.forward(x)?;
    let probs = crate::model::model_probability(&out.logits);
    let classes: Vec<usize> = (0..model.class_count()).collect();
    let feats = gmm_cfg.layer.select(&out);
    let fit = fit_gmm(feats, &probs, &classes, gmm_cfg)?;
    let dp = data_probability(&fit.params, feats)?;
    let joint = joint_scores(&probs, &dp)?;
    let centers = cluster_centers(feats, joint.lpg.pseudo_labels(), model.class_count());
    let cossim = score_cossim(feats, joint.lpg.pseudo_labels(), &centers)?;
    let entries = vec![
        (PseudoLabeler::Naive, score_maxprob(&probs)),
        (PseudoLabeler::Naive, score_ent(&probs)),
        (PseudoLabeler::Gmm, cossim),
        (PseudoLabeler::Gmm, joint.mppl),
        (PseudoLabeler::Gmm, joint.lpg),
        (PseudoLabeler::Gmm, joint.jmds),
    ];
    Ok(ScoreSet { probs, gmm: fit.params, entries })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow<T> {
    pub pseudo_labeler: PseudoLabeler,
    pub score: ScoreKind,
    pub curve: RiskCoverageCurve<T>,
}

impl<T: Scalar> ComparisonRow<T> {
    pub fn aurc(&self) -> T {
        self.curve.aurc
    }
}

/// Pseudo-labeler paired with each score in the comparison protocol: the
/// model-only scores rank naive (argmax) labels, the rest mixture labels.
pub fn labeler_for(kind: ScoreKind) -> PseudoLabeler {
    match kind {
        ScoreKind::Maxprob | ScoreKind::Ent => PseudoLabeler::Naive,
        _ => PseudoLabeler::Gmm,
    }
}

pub fn compare_score_set<T: Scalar>(set: &ScoreSet<T>, true_labels: &[usize]) -> Result<Vec<ComparisonRow<T>>> {
    compare_entries(&set.entries, true_labels)
}

/// Risk-coverage curve of each `(pseudo-labeler, score)` entry.
pub fn compare_entries<T: Scalar>(
    entries: &[(PseudoLabeler, ScoreVector<T>)],
    true_labels: &[usize],
) -> Result<Vec<ComparisonRow<T>>> {
    entries
        .iter()
        .map(|(pl, s)| {
            let losses = zero_one_loss::<T>(s.pseudo_labels(), true_labels)?;
            Ok(ComparisonRow { pseudo_labeler: *pl, score: s.kind(), curve: risk_coverage(s, &losses)? })
        })
        .collect()
}

/// AURC of every (pseudo-labeler, score) pair on a labelled set.
pub fn compare_scores<T: Scalar>(
    model: &MlpModel<T>,
    features: &Matrix<T>,
    true_labels: &[usize],
    gmm_cfg: &GmmConfig,
) -> Result<Vec<ComparisonRow<T>>> {
    if true_labels.len() != features.rows() {
        return Err(Error::Dimension("one true label per sample required".into()));
    }
    compare_score_set(&compute_scores(model, features, gmm_cfg)?, true_labels)
}

pub fn comparison_to_csv<T: Scalar>(rows: &[ComparisonRow<T>]) -> String {
    let mut s = String::from("pseudo_labeler,score,aurc\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.pseudo_labeler, r.score, format_scalar(r.aurc())));
    }
    s
}

/// Parses the comparison table into `(pseudo_labeler, score, aurc)` triples.
pub fn comparison_from_csv<T: Scalar>(text: &str) -> Result<Vec<(PseudoLabeler, ScoreKind, T)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "pseudo_labeler,score,aurc")) => {}
        _ => return Err(Error::Format { line: 1, message: "expected pseudo_labeler,score,aurc".into() }),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let err = || Error::Format { line: i + 1, message: format!("bad row {line:?}") };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(err());
        }
        let pl = match cells[0] {
            "naive" => PseudoLabeler::Naive,
            "gmm" => PseudoLabeler::Gmm,
            _ => return Err(err()),
        };
        rows.push((pl, cells[1].parse()?, parse_scalar(cells[2]).ok_or_else(err)?));
    }
    Ok(rows)
}
