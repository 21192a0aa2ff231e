//! Shared oracles and instance generators for the integration tests.
#![allow(dead_code)]

use std::ops::{Add, Div, Mul, Neg, Sub};

use cowa_jmds::linalg::Matrix;
use cowa_jmds::model::{model_probability, MlpModel, Probabilities};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Double-double number `hi + lo` (about 32 significant digits), built from
/// error-free transforms.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    /// `ln(hi + lo)`: one Newton step on `exp(y) = x` from the f64 estimate.
    pub fn ln(self) -> Dd {
        let y = Dd::new(self.hi.ln());
        y + self * y.neg().exp() - Dd::ONE
    }

    /// `exp` by range reduction to `|r| <= ln2/2` and a Taylor series.
    pub fn exp(self) -> Dd {
        if self.hi == f64::NEG_INFINITY {
            return Dd::ZERO;
        }
        const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * Dd::new(k);
        let mut term = Dd::ONE;
        let mut sum = Dd::ONE;
        for i in 1..30 {
            term = term * r / Dd::new(i as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-34 {
                break;
            }
        }
        let scale = 2f64.powi(k as i32);
        Dd { hi: sum.hi * scale, lo: sum.lo * scale }
    }

    pub fn sqrt(self) -> Dd {
        let y = Dd::new(self.hi.sqrt());
        (y + self / y) / Dd::new(2.0)
    }

    pub fn abs(self) -> Dd {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        let (hi, lo) = quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi));
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

pub fn dd_sum(values: impl IntoIterator<Item = Dd>) -> Dd {
    values.into_iter().fold(Dd::ZERO, |a, b| a + b)
}

/// Dense inverse and log-determinant by Gauss-Jordan elimination with partial
/// pivoting, in double-double.
pub fn dd_inverse_logdet(a: &Matrix<f64>) -> (Vec<Vec<Dd>>, Dd) {
    let n = a.rows();
    let mut m: Vec<Vec<Dd>> = (0..n).map(|i| a.row(i).iter().map(|&v| Dd::new(v)).collect()).collect();
    let mut inv: Vec<Vec<Dd>> =
        (0..n).map(|i| (0..n).map(|j| if i == j { Dd::ONE } else { Dd::ZERO }).collect()).collect();
    let mut logdet = Dd::ZERO;
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].hi.abs().total_cmp(&m[y][col].hi.abs())).unwrap();
        m.swap(col, piv);
        inv.swap(col, piv);
        let p = m[col][col];
        assert!(p.hi != 0.0, "singular matrix");
        logdet = logdet + p.abs().ln();
        for j in 0..n {
            m[col][j] = m[col][j] / p;
            inv[col][j] = inv[col][j] / p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r][col];
            for j in 0..n {
                m[r][j] = m[r][j] - f * m[col][j];
                inv[r][j] = inv[r][j] - f * inv[col][j];
            }
        }
    }
    (inv, logdet)
}

/// Extended-precision log-density of `x` under `N(mean, cov)` using the dense
/// inverse.
pub fn dd_log_gaussian(x: &[f64], mean: &[f64], cov: &Matrix<f64>) -> Dd {
    let (inv, logdet) = dd_inverse_logdet(cov);
    let h = x.len();
    let diff: Vec<Dd> = x.iter().zip(mean).map(|(&a, &b)| Dd::new(a) - Dd::new(b)).collect();
    let mut q = Dd::ZERO;
    for a in 0..h {
        for b in 0..h {
            q = q + diff[a] * inv[a][b] * diff[b];
        }
    }
    const LN_2PI: Dd = Dd { hi: 1.837_877_066_409_345_6, lo: -7.756_588_316_134_483e-17 };
    Dd::new(-0.5) * (Dd::new(h as f64) * LN_2PI + logdet + q)
}

/// Extended-precision softmax of one row.
pub fn dd_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<Dd> = z.iter().map(|&v| (Dd::new(v) - Dd::new(max)).exp()).collect();
    let s = dd_sum(e.iter().copied());
    e.iter().map(|&v| (v / s).to_f64()).collect()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Random well-conditioned SPD matrix `A·Aᵀ + floor·I`.
pub fn random_spd(rng: &mut ChaCha8Rng, h: usize, floor: f64) -> Matrix<f64> {
    let a = gaussian_matrix(rng, h, h, 1.0);
    let mut s = a.matmul_t(&a).unwrap();
    for i in 0..h {
        s[(i, i)] += floor;
    }
    for i in 0..h {
        for j in 0..i {
            let v = s[(i, j)];
            s[(j, i)] = v;
        }
    }
    s
}

/// Random point on the probability simplex with all entries positive.
pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Row-stochastic probabilities from random logits.
pub fn random_probs(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> Probabilities<f64> {
    model_probability(&gaussian_matrix(rng, n, k, scale))
}

/// A model with random (non-trained) weights and random biases.
pub fn random_model(rng: &mut ChaCha8Rng, d: usize, h: usize, k: usize) -> MlpModel<f64> {
    let w1 = gaussian_matrix(rng, h, d, 1.0);
    let b1 = (0..h).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let w2 = gaussian_matrix(rng, k, h, 1.0);
    let b2 = (0..k).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    MlpModel::from_parts(w1, b1, w2, b2).unwrap()
}

/// Naive triple-loop forward pass: `(pre-activation, relu features, logits)`.
pub fn naive_forward(model: &MlpModel<f64>, x: &Matrix<f64>) -> (Matrix<f64>, Matrix<f64>, Matrix<f64>) {
    let (n, d) = x.shape();
    let h = model.hidden();
    let k = model.class_count();
    let mut pre = Matrix::zeros(n, h);
    let mut feat = Matrix::zeros(n, h);
    let mut logits = Matrix::zeros(n, k);
    for i in 0..n {
        for a in 0..h {
            let mut s = model.b1[a];
            for j in 0..d {
                s += model.w1[(a, j)] * x[(i, j)];
            }
            pre[(i, a)] = s;
            feat[(i, a)] = s.max(0.0);
        }
        for c in 0..k {
            let mut s = model.b2[c];
            for a in 0..h {
                s += model.w2[(c, a)] * feat[(i, a)];
            }
            logits[(i, c)] = s;
        }
    }
    (pre, feat, logits)
}

/// Heap's algorithm over all permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k % 2 == 0 {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (|diff| = {:e} > {tol:e})", (a - b).abs());
}

/// Central finite-difference gradient of the weighted soft-label cross
/// entropy, one parameter at a time in the W1, b1, W2, b2 order.
pub fn fd_gradient(model: &MlpModel<f64>, x: &Matrix<f64>, soft: &Matrix<f64>, w: &[f64], step: f64) -> Vec<f64> {
    let mut m = model.clone();
    (0..model.param_count())
        .map(|p| {
            let orig = *m.param_mut(p);
            *m.param_mut(p) = orig + step;
            let up = cowa_jmds::model::weighted_ce_loss(&m, x, soft, w).unwrap();
            *m.param_mut(p) = orig - step;
            let down = cowa_jmds::model::weighted_ce_loss(&m, x, soft, w).unwrap();
            *m.param_mut(p) = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Normwise relative error `‖a−f‖∞ / max(‖a‖∞, ‖f‖∞)`. Entries far below
/// the gradient scale carry finite-difference rounding noise of order
/// `eps·loss/step`, so they are judged against the scale, not their own size.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
    let scale = inf(analytic).max(inf(numeric));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Toy source/target pair and a source model pre-trained with default
/// settings, all from `seed`.
pub fn toy_pipeline(
    cfg: &cowa_jmds::data::ToyShiftConfig,
    seed: u64,
) -> (MlpModel<f64>, cowa_jmds::data::FeatureSet<f64>, cowa_jmds::data::FeatureSet<f64>) {
    use cowa_jmds::model::{pretrain_source, TrainConfig, DEFAULT_HIDDEN};
    let cfg = cowa_jmds::data::ToyShiftConfig { seed, ..cfg.clone() };
    let (source, target) = cowa_jmds::data::generate_toy::<f64>(&cfg).unwrap();
    let mut model = MlpModel::init(source.dim(), DEFAULT_HIDDEN, source.class_count(), seed).unwrap();
    pretrain_source(&mut model, &source, &TrainConfig { seed, ..Default::default() }).unwrap();
    (model, source, target)
}
