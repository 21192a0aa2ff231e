//! Confidence scoring and confidence-weighted adaptation for source-free
//! domain adaptation.
//!
//! A source-trained classifier is adapted to an unlabelled target set by
//! fitting a Gaussian mixture to its target features, scoring each mixture
//! pseudo-label with the joint model/data-structure (JMDS) confidence, and
//! training on the pseudo-labels weighted by that confidence, optionally with
//! weight Mixup. All numerics are generic over [`Scalar`] (`f32` / `f64`);
//! the `*64` / `*32` aliases below fix the scalar type.

// `!(x >= 0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod gmm;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod scores;
mod sections;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Matrix64 = linalg::Matrix<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type FeatureSet64 = data::FeatureSet<f64>;
pub type FeatureSet32 = data::FeatureSet<f32>;
pub type MlpModel64 = model::MlpModel<f64>;
pub type MlpModel32 = model::MlpModel<f32>;
pub type Probabilities64 = model::Probabilities<f64>;
pub type GmmParams64 = gmm::GmmParams<f64>;
pub type GmmParams32 = gmm::GmmParams<f32>;
pub type DataProbabilities64 = gmm::DataProbabilities<f64>;
pub type ScoreVector64 = scores::ScoreVector<f64>;
pub type ScoreVector32 = scores::ScoreVector<f32>;
pub type RiskCoverageCurve64 = evaluation::RiskCoverageCurve<f64>;
pub type EpochState64 = adaptation::EpochState<f64>;
