use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

/// Draws `γ ~ Beta(α, α)`.
///
/// For `α ≥ 1` two independent `Gamma(α, 1)` draws give `γ = g₁/(g₁+g₂)`.
/// For `α < 1` the Gamma draws underflow easily, so Jöhnk's method is used
/// instead, evaluated in the log domain.
pub fn sample_mixing_coefficient<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("mixup alpha must be > 0, got {alpha}")));
    }
    if alpha >= 1.0 {
        let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::Config(e.to_string()))?;
        loop {
            let g1 = gamma.sample(rng);
            let g2 = gamma.sample(rng);
            let s = g1 + g2;
            if s > 0.0 {
                return Ok(g1 / s);
            }
        }
    }
    loop {
        let u: f64 = 1.0 - rng.random::<f64>();
        let v: f64 = 1.0 - rng.random::<f64>();
        let lx = u.ln() / alpha;
        let ly = v.ln() / alpha;
        let m = lx.max(ly);
        let ls = m + ((lx - m).exp() + (ly - m).exp()).ln();
        if ls <= 0.0 && ls.is_finite() {
            return Ok((lx - ls).exp().clamp(0.0, 1.0));
        }
    }
}

/// Mixed inputs, soft labels and weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch<T> {
    pub x: Matrix<T>,
    pub soft_labels: Matrix<T>,
    pub weights: Vec<T>,
}

/// `x̃ = γxᵢ + (1−γ)xⱼ`, `ỹ = γ·onehot(ŷᵢ) + (1−γ)·onehot(ŷⱼ)`,
/// `w̃ = γwᵢ + (1−γ)wⱼ`, with one `γ` per row.
#[allow(clippy::too_many_arguments)]
pub fn weight_mixup_rows<T: Scalar>(
    x_i: &Matrix<T>,
    x_j: &Matrix<T>,
    y_i: &[usize],
    y_j: &[usize],
    w_i: &[T],
    w_j: &[T],
    gammas: &[T],
    classes: usize,
) -> Result<MixedBatch<T>> {
    let n = x_i.rows();
    if x_j.shape() != x_i.shape()
        || [y_i.len(), y_j.len(), w_i.len(), w_j.len(), gammas.len()].iter().any(|&l| l != n)
    {
        return Err(Error::Dimension("mixup batches must have identical shapes".into()));
    }
    if y_i.iter().chain(y_j).any(|&c| c >= classes) {
        return Err(Error::Validation("pseudo-label outside the class range".into()));
    }
    let mut x = Matrix::zeros(n, x_i.cols());
    let mut soft = Matrix::zeros(n, classes);
    let mut weights = Vec::with_capacity(n);
    for r in 0..n {
        let g = gammas[r];
        let h = T::one() - g;
        for ((d, &a), &b) in x.row_mut(r).iter_mut().zip(x_i.row(r)).zip(x_j.row(r)) {
            *d = g * a + h * b;
        }
        let row = soft.row_mut(r);
        for (c, v) in row.iter_mut().enumerate() {
            let a = if y_i[r] == c { T::one() } else { T::zero() };
            let b = if y_j[r] == c { T::one() } else { T::zero() };
            *v = g * a + h * b;
        }
        weights.push(g * w_i[r] + h * w_j[r]);
    }
    Ok(MixedBatch { x, soft_labels: soft, weights })
}

/// Batch-level mixing with a single `γ`.
#[allow(clippy::too_many_arguments)]
pub fn weight_mixup_batch<T: Scalar>(
    x_i: &Matrix<T>,
    x_j: &Matrix<T>,
    y_i: &[usize],
    y_j: &[usize],
    w_i: &[T],
    w_j: &[T],
    gamma: T,
    classes: usize,
) -> Result<MixedBatch<T>> {
    if !(gamma >= T::zero() && gamma <= T::one()) {
        return Err(Error::Validation(format!("gamma {gamma} outside [0,1]")));
    }
    weight_mixup_rows(x_i, x_j, y_i, y_j, w_i, w_j, &vec![gamma; x_i.rows()], classes)
}
