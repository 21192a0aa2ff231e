//! Feature sets, CSV persistence and the synthetic shifted-Gaussian toy.
//!
//! The CSV layout is a header `f0,...,f{d-1}` optionally followed by a `label`
//! column, then one row per sample. Values are written with 17 significant
//! digits so `f64` matrices survive a save/load cycle bit-exactly.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;
use crate::scalar::{format_scalar, parse_scalar, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    #[default]
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
}

/// An `n×d` matrix of finite features with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet<T> {
    features: Matrix<T>,
    labels: Option<Vec<usize>>,
    domain: DomainTag,
    class_count: usize,
}

impl<T: Scalar> FeatureSet<T> {
    pub fn new(
        features: Matrix<T>,
        labels: Option<Vec<usize>>,
        domain: DomainTag,
        class_count: usize,
    ) -> Result<Self> {
        let (n, d) = features.shape();
        if n == 0 || d == 0 {
            return Err(Error::Validation(format!("feature set must be non-empty, got {n}x{d}")));
        }
        if class_count < 2 {
            return Err(Error::Validation(format!("class_count must be >= 2, got {class_count}")));
        }
        if let Some((i, _)) = features.as_slice().iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite feature at row {}, column {}",
                i / d,
                i % d
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Validation(format!("{} labels for {n} samples", labels.len())));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
                return Err(Error::Validation(format!(
                    "label {bad} out of range for {class_count} classes"
                )));
            }
        }
        Ok(Self { features, labels, domain, class_count })
    }

    pub fn features(&self) -> &Matrix<T> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_class_count(self, class_count: usize) -> Result<Self> {
        Self::new(self.features, self.labels, self.domain, class_count)
    }

    /// Drops the labels, as seen by a learner that may not use them.
    pub fn unlabeled(&self) -> Self {
        Self { labels: None, ..self.clone() }
    }
}

/// Renders a feature set in the CSV interchange layout.
pub fn features_to_csv<T: Scalar>(set: &FeatureSet<T>) -> String {
    let d = set.dim();
    let mut out = String::new();
    let header: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    out.push_str(&header.join(","));
    if set.labels.is_some() {
        out.push_str(",label");
    }
    out.push('\n');
    for (i, row) in set.features.row_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format_scalar(v));
        }
        if let Some(labels) = &set.labels {
            let _ = write!(out, ",{}", labels[i]);
        }
        out.push('\n');
    }
    out
}

/// Parses the CSV layout. `class_count` of `None` infers `max(label)+1`,
/// floored at 2.
pub fn parse_features_csv<T: Scalar>(
    text: &str,
    domain: DomainTag,
    class_count: Option<usize>,
) -> Result<FeatureSet<T>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format { line: 1, message: "missing header".into() })?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let has_label = names.last() == Some(&"label");
    let d = if has_label { names.len() - 1 } else { names.len() };
    if d == 0 {
        return Err(Error::Format { line: 1, message: "no feature columns".into() });
    }
    for (j, name) in names.iter().take(d).enumerate() {
        if *name != format!("f{j}") {
            return Err(Error::Format {
                line: 1,
                message: format!("expected column f{j}, found {name:?}"),
            });
        }
    }

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != names.len() {
            return Err(Error::Format {
                line: line_no,
                message: format!("expected {} fields, found {}", names.len(), cells.len()),
            });
        }
        for cell in &cells[..d] {
            let v: T = parse_scalar(cell).ok_or_else(|| Error::Format {
                line: line_no,
                message: format!("cannot parse {:?} as a number", cell.trim()),
            })?;
            if !v.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite value {:?} at line {line_no}",
                    cell.trim()
                )));
            }
            values.push(v);
        }
        if has_label {
            let cell = cells[d].trim();
            let l: usize = cell.parse().map_err(|_| Error::Format {
                line: line_no,
                message: format!("cannot parse label {cell:?}"),
            })?;
            labels.push(l);
        }
        n += 1;
    }
    let features = Matrix::from_vec(n, d, values)?;
    let k = class_count.unwrap_or_else(|| labels.iter().max().map_or(2, |&m| (m + 1).max(2)));
    FeatureSet::new(features, has_label.then_some(labels), domain, k)
}

pub fn load_features<T: Scalar>(path: &Path, format: FeatureFormat) -> Result<FeatureSet<T>> {
    match format {
        FeatureFormat::Csv => {
            let text = std::fs::read_to_string(path)?;
            parse_features_csv(&text, DomainTag::Target, None)
        }
    }
}

pub fn save_features<T: Scalar>(set: &FeatureSet<T>, path: &Path) -> Result<()> {
    std::fs::write(path, features_to_csv(set))?;
    Ok(())
}

/// Parameters of the three-mode (by default) shifted-Gaussian toy.
///
/// Class `c` is drawn from `N(source_means[c], covariance_scale·I)` in the
/// source domain and from `N(source_means[c] + target_mean_offset[c], ·)` in
/// the target domain. Two optional extensions plant the extended scenarios:
/// `target_classes` keeps only a subset of classes in the target (partial
/// set) and `unknown_mean` appends an extra cluster labelled `class_count`
/// to the target (open set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyShiftConfig {
    pub class_count: usize,
    pub dim: usize,
    pub source_means: Vec<Vec<f64>>,
    pub target_mean_offset: Vec<Vec<f64>>,
    pub per_class_count: usize,
    pub covariance_scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub target_classes: Option<Vec<usize>>,
    #[serde(default)]
    pub unknown_mean: Option<Vec<f64>>,
    #[serde(default)]
    pub unknown_count: usize,
}

/// Radius of the default three-mode ring, in standard deviations.
pub const TOY_RADIUS: f64 = 2.25;
/// Length of the default target shift, in standard deviations.
pub const TOY_OFFSET: f64 = 1.0;
/// Inward tilt of the default tangential shift, in degrees.
pub const TOY_TILT_DEGREES: f64 = 30.0;

impl Default for ToyShiftConfig {
    fn default() -> Self {
        Self::ring(3, 2, TOY_RADIUS, TOY_OFFSET, 200, 0).with_offset_rotation(TOY_TILT_DEGREES)
    }
}

impl ToyShiftConfig {
    /// Class means evenly spaced on a circle of `radius` in the first two
    /// coordinates; each target mode is moved tangentially (counter-clockwise)
    /// by `offset` standard deviations.
    pub fn ring(
        class_count: usize,
        dim: usize,
        radius: f64,
        offset: f64,
        per_class_count: usize,
        seed: u64,
    ) -> Self {
        let mut source_means = Vec::with_capacity(class_count);
        let mut target_mean_offset = Vec::with_capacity(class_count);
        for c in 0..class_count {
            let theta = std::f64::consts::FRAC_PI_2
                + 2.0 * std::f64::consts::PI * c as f64 / class_count as f64;
            let mut mean = vec![0.0; dim];
            let mut shift = vec![0.0; dim];
            mean[0] = radius * theta.cos();
            shift[0] = -offset * theta.sin();
            if dim > 1 {
                mean[1] = radius * theta.sin();
                shift[1] = offset * theta.cos();
            }
            source_means.push(mean);
            target_mean_offset.push(shift);
        }
        Self {
            class_count,
            dim,
            source_means,
            target_mean_offset,
            per_class_count,
            covariance_scale: 1.0,
            seed,
            target_classes: None,
            unknown_mean: None,
            unknown_count: 0,
        }
    }

    /// Rotates every target offset counter-clockwise by `degrees` in the first
    /// two coordinates. On a `ring` layout a positive angle tilts the
    /// tangential shift towards the centre.
    pub fn with_offset_rotation(mut self, degrees: f64) -> Self {
        if self.dim < 2 {
            return self;
        }
        let (sin, cos) = degrees.to_radians().sin_cos();
        for o in &mut self.target_mean_offset {
            let (x, y) = (o[0], o[1]);
            o[0] = cos * x - sin * y;
            o[1] = sin * x + cos * y;
        }
        self
    }

    /// Rescales every target offset to the given length (in standard deviations).
    pub fn with_offset_magnitude(mut self, magnitude: f64) -> Self {
        let sd = self.covariance_scale.sqrt();
        for off in &mut self.target_mean_offset {
            let norm = off.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                off.iter_mut().for_each(|v| *v *= magnitude * sd / norm);
            } else if magnitude != 0.0 {
                off[0] = magnitude * sd;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.class_count < 2 {
            return bad(format!("class_count must be >= 2, got {}", self.class_count));
        }
        if self.dim == 0 {
            return bad("dim must be >= 1".into());
        }
        if self.per_class_count == 0 {
            return bad("per_class_count must be >= 1".into());
        }
        if !(self.covariance_scale > 0.0 && self.covariance_scale.is_finite()) {
            return bad(format!("covariance_scale must be > 0, got {}", self.covariance_scale));
        }
        for (name, rows) in [("source_means", &self.source_means), ("target_mean_offset", &self.target_mean_offset)] {
            if rows.len() != self.class_count || rows.iter().any(|r| r.len() != self.dim) {
                return bad(format!("{name} must be {}x{}", self.class_count, self.dim));
            }
            if rows.iter().flatten().any(|v| !v.is_finite()) {
                return bad(format!("{name} must be finite"));
            }
        }
        if let Some(tc) = &self.target_classes {
            if tc.is_empty() || tc.iter().any(|&c| c >= self.class_count) {
                return bad("target_classes must be a non-empty subset of the classes".into());
            }
        }
        if let Some(u) = &self.unknown_mean {
            if u.len() != self.dim || u.iter().any(|v| !v.is_finite()) {
                return bad(format!("unknown_mean must be a finite {}-vector", self.dim));
            }
        }
        Ok(())
    }
}

fn sample_block<R: Rng>(rng: &mut R, mean: &[f64], sd: f64, count: usize, out: &mut Vec<f64>) {
    for _ in 0..count {
        for &m in mean {
            let z: f64 = rng.sample(StandardNormal);
            out.push(m + sd * z);
        }
    }
}

/// Draws the labelled source and target sets. Target labels are kept for
/// evaluation only.
pub fn generate_toy<T: Scalar>(cfg: &ToyShiftConfig) -> Result<(FeatureSet<T>, FeatureSet<T>)> {
    cfg.validate()?;
    let mut rng = rng::stream(cfg.seed, rng::STREAM_TOY);
    let sd = cfg.covariance_scale.sqrt();
    let k = cfg.class_count;

    let mut src = Vec::new();
    let mut src_labels = Vec::new();
    for c in 0..k {
        sample_block(&mut rng, &cfg.source_means[c], sd, cfg.per_class_count, &mut src);
        src_labels.extend(std::iter::repeat_n(c, cfg.per_class_count));
    }

    let present: Vec<usize> = cfg.target_classes.clone().unwrap_or_else(|| (0..k).collect());
    let mut tgt = Vec::new();
    let mut tgt_labels = Vec::new();
    for &c in &present {
        let mean: Vec<f64> = cfg.source_means[c]
            .iter()
            .zip(&cfg.target_mean_offset[c])
            .map(|(m, o)| m + o)
            .collect();
        sample_block(&mut rng, &mean, sd, cfg.per_class_count, &mut tgt);
        tgt_labels.extend(std::iter::repeat_n(c, cfg.per_class_count));
    }
    let mut target_k = k;
    if let Some(u) = &cfg.unknown_mean {
        if cfg.unknown_count > 0 {
            sample_block(&mut rng, u, sd, cfg.unknown_count, &mut tgt);
            tgt_labels.extend(std::iter::repeat_n(k, cfg.unknown_count));
            target_k = k + 1;
        }
    }

    let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
    let n_src = src_labels.len();
    let n_tgt = tgt_labels.len();
    let source = FeatureSet::new(
        Matrix::from_vec(n_src, cfg.dim, cast(src))?,
        Some(src_labels),
        DomainTag::Source,
        k,
    )?;
    let target = FeatureSet::new(
        Matrix::from_vec(n_tgt, cfg.dim, cast(tgt))?,
        Some(tgt_labels),
        DomainTag::Target,
        target_k,
    )?;
    Ok((source, target))
}
