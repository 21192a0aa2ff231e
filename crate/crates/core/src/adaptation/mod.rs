//! Confidence-weighted target adaptation with weight Mixup, plus the
//! open-set (known/unknown) and partial-set (class estimation) extensions.

mod cowa;
mod mixup;
mod openset;
mod partial;

pub use cowa::{
    adapt_log_to_csv, cowa_adapt, epoch_state, jmds_quantiles_to_csv, AdaptConfig, AdaptOutcome,
    EpochMetrics, EpochState, GammaMode, Scenario, Weighting, QUANTILE_LEVELS,
};
pub use mixup::{sample_mixing_coefficient, weight_mixup_batch, weight_mixup_rows, MixedBatch};
pub use openset::{known_unknown_split, prediction_entropy, two_means_1d, OpenSetSplit};
pub use partial::{estimate_classes, ClassEstimate};
