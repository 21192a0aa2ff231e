use crate::error::{Error, Result};
use crate::model::Probabilities;
use crate::scalar::Scalar;

/// Result of the entropy-based known/unknown split.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenSetSplit<T> {
    pub known_mask: Vec<bool>,
    pub entropies: Vec<T>,
    /// Final `(low, high)` cluster centroids.
    pub centroids: (T, T),
}

impl<T> OpenSetSplit<T> {
    pub fn unknown_mask(&self) -> Vec<bool> {
        self.known_mask.iter().map(|k| !k).collect()
    }

    pub fn known_count(&self) -> usize {
        self.known_mask.iter().filter(|&&k| k).count()
    }
}

/// Shannon entropy (nats) of each probability row.
pub fn prediction_entropy<T: Scalar>(probs: &Probabilities<T>) -> Vec<T> {
    (0..probs.len())
        .map(|i| {
            -probs
                .row(i)
                .iter()
                .filter(|&&p| p > T::zero())
                .map(|&p| p * p.ln())
                .sum::<T>()
        })
        .collect()
}

/// Optimal two-cluster k-means on scalar values. In one dimension the
/// optimal clusters are contiguous in sorted order, so every split between
/// distinct values is scored by its within-cluster sum of squares (prefix
/// sums over mean-centred values) and the smallest wins, ties to the lower
/// split. Returns membership in the low cluster and the two centroids.
pub fn two_means_1d<T: Scalar>(values: &[T]) -> (Vec<bool>, (T, T)) {
    let n = values.len();
    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    if !(hi > lo) {
        return (vec![true; n], (lo, lo));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let mean = values.iter().copied().sum::<T>() / T::of_usize(n);
    let centred: Vec<T> = order.iter().map(|&i| values[i] - mean).collect();
    let (mut sum, mut sq) = (vec![T::zero(); n + 1], vec![T::zero(); n + 1]);
    for (i, &v) in centred.iter().enumerate() {
        sum[i + 1] = sum[i] + v;
        sq[i + 1] = sq[i] + v * v;
    }
    let sse = |a: usize, b: usize| {
        let m = T::of_usize(b - a);
        let s = sum[b] - sum[a];
        (sq[b] - sq[a]) - s * s / m
    };
    let mut best: Option<(T, usize)> = None;
    for cut in 1..n {
        if values[order[cut - 1]] == values[order[cut]] {
            continue;
        }
        let cost = sse(0, cut) + sse(cut, n);
        if best.is_none_or(|(b, _)| cost < b) {
            best = Some((cost, cut));
        }
    }
    let (_, cut) = best.expect("at least two distinct values");
    let mut low = vec![false; n];
    order[..cut].iter().for_each(|&i| low[i] = true);
    let c_lo = mean + sum[cut] / T::of_usize(cut);
    let c_hi = mean + (sum[n] - sum[cut]) / T::of_usize(n - cut);
    (low, (c_lo, c_hi))
}

/// Low-entropy cluster is known, high-entropy cluster unknown. When every
/// entropy is equal all samples are known.
pub fn known_unknown_split<T: Scalar>(probs: &Probabilities<T>) -> Result<OpenSetSplit<T>> {
    if probs.len() < 2 {
        return Err(Error::Validation("known/unknown split needs at least two samples".into()));
    }
    let entropies = prediction_entropy(probs);
    let (known_mask, centroids) = two_means_1d(&entropies);
    Ok(OpenSetSplit { known_mask, entropies, centroids })
}
