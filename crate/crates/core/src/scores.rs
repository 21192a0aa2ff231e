//! Per-sample confidence scores, each in `[0, 1]` and paired with the
//! pseudo-labels they rate.
//!
//! Model-only scores (`Maxprob`, `Ent`) rate the naive argmax labels;
//! `Cossim`, `MPPL`, `LPG` and `JMDS` rate mixture pseudo-labels.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{pseudo_labels, DataProbabilities};
use crate::linalg::Matrix;
use crate::model::Probabilities;
use crate::scalar::{format_scalar, parse_scalar, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Maxprob,
    Ent,
    Cossim,
    Mppl,
    Lpg,
    Jmds,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 6] =
        [Self::Maxprob, Self::Ent, Self::Cossim, Self::Mppl, Self::Lpg, Self::Jmds];

    pub fn name(self) -> &'static str {
        match self {
            Self::Maxprob => "maxprob",
            Self::Ent => "ent",
            Self::Cossim => "cossim",
            Self::Mppl => "mppl",
            Self::Lpg => "lpg",
            Self::Jmds => "jmds",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown score kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector<T> {
    values: Vec<T>,
    kind: ScoreKind,
    pseudo_labels: Vec<usize>,
}

impl<T: Scalar> ScoreVector<T> {
    pub fn new(values: Vec<T>, kind: ScoreKind, pseudo_labels: Vec<usize>) -> Result<Self> {
        if values.len() != pseudo_labels.len() {
            return Err(Error::Dimension(format!(
                "{} scores for {} pseudo-labels",
                values.len(),
                pseudo_labels.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= T::zero() && **v <= T::one())) {
            return Err(Error::Validation(format!("{kind} score {v} outside [0,1]")));
        }
        Ok(Self { values, kind, pseudo_labels })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn pseudo_labels(&self) -> &[usize] {
        &self.pseudo_labels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn median(&self) -> T {
        self.quantile(0.5)
    }

    /// Linear-interpolation quantile, `q ∈ [0, 1]`.
    pub fn quantile(&self, q: f64) -> T {
        quantile(&self.values, q)
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::of_usize(self.values.len().max(1))
    }
}

pub fn quantile<T: Scalar>(values: &[T], q: f64) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::of(pos - lo as f64);
    v[lo] + (v[hi] - v[lo]) * frac
}

fn clamp01<T: Scalar>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

pub fn score_maxprob<T: Scalar>(probs: &Probabilities<T>) -> ScoreVector<T> {
    let labels = probs.argmax();
    let values = labels.iter().enumerate().map(|(i, &c)| probs.row(i)[c]).collect();
    ScoreVector { values, kind: ScoreKind::Maxprob, pseudo_labels: labels }
}

/// `1 + Σ p log p / log K`, natural logs, `0·log 0 = 0`.
pub fn score_ent<T: Scalar>(probs: &Probabilities<T>) -> ScoreVector<T> {
    let log_k = T::of_usize(probs.class_count()).ln();
    let values = (0..probs.len())
        .map(|i| {
            let neg_h: T = probs
                .row(i)
                .iter()
                .filter(|&&p| p > T::zero())
                .map(|&p| p * p.ln())
                .sum();
            clamp01(T::one() + neg_h / log_k)
        })
        .collect();
    ScoreVector { values, kind: ScoreKind::Ent, pseudo_labels: probs.argmax() }
}

/// Per-label feature means; labels with no members get a zero row.
pub fn cluster_centers<T: Scalar>(features: &Matrix<T>, labels: &[usize], classes: usize) -> Matrix<T> {
    let mut centers = Matrix::zeros(classes, features.cols());
    let mut counts = vec![0usize; classes];
    for (x, &l) in features.row_iter().zip(labels) {
        counts[l] += 1;
        centers.row_mut(l).iter_mut().zip(x).for_each(|(c, &v)| *c += v);
    }
    for (c, &n) in counts.iter().enumerate() {
        if n > 0 {
            centers.row_mut(c).iter_mut().for_each(|v| *v /= T::of_usize(n));
        }
    }
    centers
}

/// `½(1 + cos(x, C_ŷ))`.
pub fn score_cossim<T: Scalar>(
    features: &Matrix<T>,
    pseudo_labels: &[usize],
    centers: &Matrix<T>,
) -> Result<ScoreVector<T>> {
    if pseudo_labels.len() != features.rows() || centers.cols() != features.cols() {
        return Err(Error::Dimension("features, labels and centers disagree".into()));
    }
    let norm = |v: &[T]| v.iter().map(|&a| a * a).sum::<T>().sqrt();
    let half = T::of(0.5);
    let mut values = Vec::with_capacity(pseudo_labels.len());
    for (i, (x, &l)) in features.row_iter().zip(pseudo_labels).enumerate() {
        if l >= centers.rows() {
            return Err(Error::Validation(format!("pseudo-label {l} has no center")));
        }
        let c = centers.row(l);
        let (nx, nc) = (norm(x), norm(c));
        if nx == T::zero() || nc == T::zero() {
            return Err(Error::Validation(format!("zero-norm feature or center at sample {i}")));
        }
        let dot: T = x.iter().zip(c).map(|(&a, &b)| a * b).sum();
        values.push(clamp01(half * (T::one() + dot / (nx * nc))));
    }
    Ok(ScoreVector { values, kind: ScoreKind::Cossim, pseudo_labels: pseudo_labels.to_vec() })
}

/// Model probability at the given pseudo-label.
pub fn score_mppl<T: Scalar>(probs: &Probabilities<T>, pseudo_labels: &[usize]) -> Result<ScoreVector<T>> {
    if pseudo_labels.len() != probs.len() {
        return Err(Error::Dimension("one pseudo-label per sample required".into()));
    }
    let mut values = Vec::with_capacity(pseudo_labels.len());
    for (i, &l) in pseudo_labels.iter().enumerate() {
        if l >= probs.class_count() {
            return Err(Error::Validation(format!("pseudo-label {l} out of range")));
        }
        values.push(probs.row(i)[l]);
    }
    Ok(ScoreVector { values, kind: ScoreKind::Mppl, pseudo_labels: pseudo_labels.to_vec() })
}

/// Top-1 minus top-2 log data-structure probability per sample. The row
/// normaliser cancels, so the gap is taken on the log numerators.
pub fn min_gaps<T: Scalar>(dp: &DataProbabilities<T>) -> Result<Vec<T>> {
    if dp.classes().len() < 2 {
        return Err(Error::Validation("log-probability gap needs at least two components".into()));
    }
    Ok(dp
        .log_numerators()
        .row_iter()
        .map(|r| {
            let (mut best, mut second) = (T::neg_infinity(), T::neg_infinity());
            for &v in r {
                if v > best {
                    second = best;
                    best = v;
                } else if v > second {
                    second = v;
                }
            }
            best - second
        })
        .collect())
}

/// Gaps normalised by their dataset maximum; all zeros when every gap is 0.
pub fn score_lpg<T: Scalar>(dp: &DataProbabilities<T>) -> Result<ScoreVector<T>> {
    let gaps = min_gaps(dp)?;
    let max = gaps.iter().copied().fold(T::zero(), T::max);
    if !max.is_finite() {
        return Err(Error::Numerical("infinite log-probability gap".into()));
    }
    let values = if max > T::zero() {
        gaps.iter().map(|&g| clamp01(g / max)).collect()
    } else {
        vec![T::zero(); gaps.len()]
    };
    Ok(ScoreVector { values, kind: ScoreKind::Lpg, pseudo_labels: pseudo_labels(dp) })
}

pub fn score_jmds<T: Scalar>(lpg: &ScoreVector<T>, mppl: &ScoreVector<T>) -> Result<ScoreVector<T>> {
    if lpg.pseudo_labels != mppl.pseudo_labels {
        return Err(Error::Validation("LPG and MPPL rate different pseudo-labels".into()));
    }
    let values = lpg.values.iter().zip(&mppl.values).map(|(&a, &b)| a * b).collect();
    Ok(ScoreVector { values, kind: ScoreKind::Jmds, pseudo_labels: lpg.pseudo_labels.clone() })
}

/// LPG, MPPL and their product for one mixture fit.
#[derive(Debug, Clone)]
pub struct JointScores<T> {
    pub lpg: ScoreVector<T>,
    pub mppl: ScoreVector<T>,
    pub jmds: ScoreVector<T>,
}

pub fn joint_scores<T: Scalar>(probs: &Probabilities<T>, dp: &DataProbabilities<T>) -> Result<JointScores<T>> {
    let lpg = score_lpg(dp)?;
    let mppl = score_mppl(probs, lpg.pseudo_labels())?;
    let jmds = score_jmds(&lpg, &mppl)?;
    Ok(JointScores { lpg, mppl, jmds })
}

/// Long-format score dump: `index,pseudo_label,score_kind,value[,true_label,correct]`.
pub fn scores_to_csv<T: Scalar>(scores: &[ScoreVector<T>], true_labels: Option<&[usize]>) -> String {
    let mut out = String::from("index,pseudo_label,score_kind,value");
    if true_labels.is_some() {
        out.push_str(",true_label,correct");
    }
    out.push('\n');
    for s in scores {
        for (i, (&v, &l)) in s.values.iter().zip(&s.pseudo_labels).enumerate() {
            out.push_str(&format!("{i},{l},{},{}", s.kind, format_scalar(v)));
            if let Some(t) = true_labels {
                out.push_str(&format!(",{},{}", t[i], u8::from(t[i] == l)));
            }
            out.push('\n');
        }
    }
    out
}

/// Parses a score dump back into one vector per kind, in order of first
/// appearance.
pub fn scores_from_csv<T: Scalar>(text: &str) -> Result<Vec<ScoreVector<T>>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Format { line: 1, message: "empty file".into() })?;
    if !header.starts_with("index,pseudo_label,score_kind,value") {
        return Err(Error::Format { line: 1, message: format!("unexpected header {header:?}") });
    }
    let mut out: Vec<(ScoreKind, Vec<T>, Vec<usize>)> = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fmt_err = |m: &str| Error::Format { line: idx + 1, message: m.to_string() };
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 4 {
            return Err(fmt_err("expected at least 4 fields"));
        }
        let i: usize = cells[0].parse().map_err(|_| fmt_err("bad index"))?;
        let l: usize = cells[1].parse().map_err(|_| fmt_err("bad pseudo-label"))?;
        let kind: ScoreKind = cells[2].parse()?;
        let v: T = parse_scalar(cells[3]).ok_or_else(|| fmt_err("bad value"))?;
        let slot = match out.iter().position(|(k, _, _)| *k == kind) {
            Some(p) => p,
            None => {
                out.push((kind, Vec::new(), Vec::new()));
                out.len() - 1
            }
        };
        let entry = &mut out[slot];
        if entry.1.len() != i {
            return Err(fmt_err("indices must be contiguous per score kind"));
        }
        entry.1.push(v);
        entry.2.push(l);
    }
    out.into_iter().map(|(k, v, l)| ScoreVector::new(v, k, l)).collect()
}

/// Reads the optional `true_label` column of a score dump. Every score kind
/// must carry the same labels.
pub fn score_true_labels_from_csv(text: &str) -> Result<Option<Vec<usize>>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(Error::Format { line: 1, message: "empty file".into() })?;
    let columns: Vec<&str> = header.split(',').collect();
    let Some(col) = columns.iter().position(|c| *c == "true_label") else {
        return Ok(None);
    };
    let mut labels: Vec<usize> = Vec::new();
    let mut seen = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fmt_err = |m: &str| Error::Format { line: idx + 1, message: m.to_string() };
        let cells: Vec<&str> = line.split(',').collect();
        let i: usize = cells.first().and_then(|c| c.parse().ok()).ok_or_else(|| fmt_err("bad index"))?;
        let t: usize = cells.get(col).and_then(|c| c.parse().ok()).ok_or_else(|| fmt_err("bad true label"))?;
        if i == labels.len() && !seen.contains(&i) {
            labels.push(t);
            seen.push(i);
        } else if labels.get(i) != Some(&t) {
            return Err(fmt_err("true labels differ between score kinds"));
        }
    }
    Ok(Some(labels))
}
