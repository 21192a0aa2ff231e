//! Acceptance suite: ten criteria, one `criterion N: PASS|FAIL` line each.
//!
//! Runs without the libtest harness so the report reaches stdout. The
//! process fails if a hard check fails; a criterion listed in
//! `REPORTED_ONLY` prints its verdict but does not fail the run.

mod common;

use std::time::{Duration, Instant};

use common::{
    dd_log_gaussian, dd_sum, fd_gradient, gaussian_matrix, random_model, random_probs, random_simplex, random_spd,
    relative_error, rng, toy_pipeline, Dd,
};
use cowa_jmds::adaptation::{
    cowa_adapt, estimate_classes, known_unknown_split, sample_mixing_coefficient, two_means_1d, weight_mixup_batch,
    weight_mixup_rows, AdaptConfig, AdaptOutcome, Weighting,
};
use cowa_jmds::data::{FeatureSet, ToyShiftConfig};
use cowa_jmds::evaluation::{compare_scores, oracle_aurc, risk_coverage_values, zero_one_loss};
use cowa_jmds::gmm::{
    data_probability, em_iteration, init_from_predictions, total_log_likelihood, CovarianceKind, DataProbabilities,
    GmmConfig, GmmParams,
};
use cowa_jmds::linalg::Matrix;
use cowa_jmds::model::{model_probability, one_hot, weighted_ce_grad, MlpModel, Probabilities};
use cowa_jmds::scores::{joint_scores, min_gaps, score_ent, score_maxprob, ScoreKind};
use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Criteria whose verdict is printed but not enforced (see README).
const REPORTED_ONLY: [u32; 1] = [5];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Verdict {
    let mut r = rng(101);
    let (mut worst_hard, mut worst_mix) = (0.0f64, 0.0f64);
    let instances = 25;
    for _ in 0..instances {
        let model = random_model(&mut r, 3, 4, 3);
        let x = gaussian_matrix(&mut r, 5, 3, 1.0);
        let labels: Vec<usize> = (0..5).map(|_| r.random_range(0..3)).collect();
        let w: Vec<f64> = (0..5).map(|_| r.random()).collect();
        let y = one_hot(&labels, 3);
        let g = weighted_ce_grad(&model, &x, &y, &w).unwrap();
        worst_hard = worst_hard.max(relative_error(&g.grads.flat(), &fd_gradient(&model, &x, &y, &w, 1e-5)));

        let xj = gaussian_matrix(&mut r, 5, 3, 1.0);
        let yj: Vec<usize> = (0..5).map(|_| r.random_range(0..3)).collect();
        let wj: Vec<f64> = (0..5).map(|_| r.random()).collect();
        let m = weight_mixup_batch(&x, &xj, &labels, &yj, &w, &wj, r.random::<f64>(), 3).unwrap();
        let g = weighted_ce_grad(&model, &m.x, &m.soft_labels, &m.weights).unwrap();
        let fd = fd_gradient(&model, &m.x, &m.soft_labels, &m.weights, 1e-5);
        worst_mix = worst_mix.max(relative_error(&g.grads.flat(), &fd));
    }
    verdict(
        worst_hard < 1e-5 && worst_mix < 1e-5,
        format!("{instances}+{instances} instances, max rel err hard {worst_hard:.2e}, mixup {worst_mix:.2e}"),
    )
}

// ---------------------------------------------------------------- 2

fn random_gmm(r: &mut rand_chacha::ChaCha8Rng) -> (GmmParams<f64>, Matrix<f64>) {
    let n = r.random_range(2..=20);
    let h = r.random_range(1..=3);
    let k = r.random_range(1..=4);
    let means = gaussian_matrix(r, k, h, 2.0);
    let covs: Vec<Matrix<f64>> = (0..k).map(|_| random_spd(r, h, 0.2)).collect();
    let gmm = GmmParams::new((0..k).collect(), random_simplex(r, k), means, covs, 0.0, CovarianceKind::Full).unwrap();
    (gmm, gaussian_matrix(r, n, h, 2.5))
}

fn criterion_2() -> Verdict {
    let mut r = rng(102);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (gmm, x) = random_gmm(&mut r);
        let dp = data_probability(&gmm, &x).unwrap();
        let k = gmm.component_count();
        for (i, xi) in x.row_iter().enumerate() {
            let logs: Vec<Dd> = (0..k)
                .map(|c| Dd::new(gmm.mixing()[c]).ln() + dd_log_gaussian(xi, gmm.means().row(c), &gmm.covariances()[c]))
                .collect();
            let max = logs.iter().copied().fold(Dd::new(f64::NEG_INFINITY), |a, b| if b > a { b } else { a });
            let e: Vec<Dd> = logs.iter().map(|&l| (l - max).exp()).collect();
            let s = dd_sum(e.iter().copied());
            for c in 0..k {
                worst = worst.max((dp.probs()[(i, c)] - (e[c] / s).to_f64()).abs());
            }
        }
    }

    let mut worst_drop = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(10..=20);
        let h = r.random_range(1..=3);
        let k = r.random_range(2..=4);
        let x = gaussian_matrix(&mut r, n, h, 1.5);
        let probs = random_probs(&mut r, n, k, 1.0);
        let classes: Vec<usize> = (0..k).collect();
        let eps = GmmConfig::default().reg_epsilon_for(&x);
        let g0 = init_from_predictions(&x, &probs, &classes, eps, CovarianceKind::Full).unwrap();
        let g1 = em_iteration(&g0, &x).unwrap();
        let (l0, l1) = (total_log_likelihood(&g0, &x).unwrap(), total_log_likelihood(&g1, &x).unwrap());
        worst_drop = worst_drop.max((l0 - l1) / l0.abs());
    }
    verdict(
        worst <= 1e-10 && worst_drop <= 1e-8,
        format!("max |p - oracle| {worst:.2e} over 50 instances; max relative EM drop {worst_drop:.2e} over 50"),
    )
}

// ---------------------------------------------------------------- 3

fn score_case(
    (n, k, logits, logs, shift, hot): (usize, usize, Vec<f64>, Vec<f64>, f64, usize),
) -> Result<(), TestCaseError> {
    let z = Matrix::from_vec(n, k, logits).unwrap();
    let p = model_probability(&z);
    let dp = DataProbabilities::from_log_numerators((0..k).collect(), Matrix::from_vec(n, k, logs).unwrap()).unwrap();
    let j = joint_scores(&p, &dp).unwrap();
    for v in j.lpg.values().iter().chain(j.jmds.values()) {
        prop_assert!((0.0..=1.0).contains(v));
    }
    if min_gaps(&dp).unwrap().iter().any(|&g| g > 0.0) {
        prop_assert_eq!(j.lpg.values().iter().copied().fold(0.0, f64::max), 1.0);
    }
    for i in 0..n {
        prop_assert!(j.jmds.values()[i] <= j.lpg.values()[i].min(j.mppl.values()[i]));
    }
    let uniform = Probabilities::<f64>::new(Matrix::from_vec(1, k, vec![1.0 / k as f64; k]).unwrap()).unwrap();
    prop_assert!(score_ent(&uniform).values()[0].abs() < 1e-12);
    let onehot = Probabilities::<f64>::new(one_hot(&[hot % k], k)).unwrap();
    prop_assert_eq!(score_ent(&onehot).values()[0], 1.0);

    let ps = model_probability(&Matrix::from_fn(n, k, |i, c| z[(i, c)] + shift));
    let js = joint_scores(&ps, &dp).unwrap();
    let pairs = [
        (j.lpg.clone(), js.lpg),
        (j.mppl.clone(), js.mppl),
        (j.jmds.clone(), js.jmds),
        (score_maxprob(&p), score_maxprob(&ps)),
        (score_ent(&p), score_ent(&ps)),
    ];
    for (a, b) in pairs {
        prop_assert_eq!(a.pseudo_labels(), b.pseudo_labels());
        for (u, v) in a.values().iter().zip(b.values()) {
            prop_assert!((u - v).abs() <= 1e-12, "{:?}: {} vs {}", a.kind(), u, v);
        }
    }
    Ok(())
}

fn criterion_3() -> Verdict {
    let strategy = (2usize..30, 2usize..6).prop_flat_map(|(n, k)| {
        (
            Just(n),
            Just(k),
            prop::collection::vec(-8.0f64..8.0, n * k),
            prop::collection::vec(-40.0f64..5.0, n * k),
            -50.0f64..50.0,
            0usize..6,
        )
    });
    let mut runner = TestRunner::new_with_rng(
        Config { cases: 1000, failure_persistence: None, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    match runner.run(&strategy, score_case) {
        Ok(()) => verdict(true, "1000 random instances".into()),
        Err(e) => verdict(false, format!("{e}")),
    }
}

// ---------------------------------------------------------------- 4

type Q = Ratio<i64>;

fn aurc_of_order(losses: &[Q], order: &[usize]) -> Q {
    let mut cum = Q::from_integer(0);
    let mut sum = Q::from_integer(0);
    for (k, &i) in order.iter().enumerate() {
        cum += losses[i];
        sum += cum / Q::from_integer(k as i64 + 1);
    }
    sum / Q::from_integer(losses.len() as i64)
}

fn criterion_4() -> Verdict {
    let losses: Vec<Q> = zero_one_loss(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
    let hand = risk_coverage_values(&[0.9, 0.8, 0.2, 0.1], &losses).unwrap().aurc;
    let mut ok = hand == Q::new(5, 24);

    let mut r = rng(104);
    let mut checked = 0;
    for n in 1..=8usize {
        let perms = common::permutations(n);
        for _ in 0..3 {
            let losses: Vec<Q> = (0..n).map(|_| Q::from_integer(r.random_range(0..2))).collect();
            let oracle = oracle_aurc(&losses).unwrap();
            let best = perms.iter().map(|p| aurc_of_order(&losses, p)).min().unwrap();
            ok &= best == oracle;
            checked += 1;
        }
    }
    let scores: Vec<f64> = (0..50).map(|_| r.random()).collect();
    let perfect = risk_coverage_values(&scores, &zero_one_loss::<Q>(&[1; 50], &[1; 50]).unwrap()).unwrap().aurc;
    ok &= perfect == Q::from_integer(0);
    verdict(ok, format!("hand case AURC = {hand}; oracle = brute-force minimum on {checked} sets (n <= 8); perfect = {perfect}"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Verdict {
    let kinds = [ScoreKind::Maxprob, ScoreKind::Mppl, ScoreKind::Lpg, ScoreKind::Jmds];
    let mut per_seed: Vec<[f64; 4]> = Vec::new();
    for seed in SEEDS {
        let (model, _, target) = toy_pipeline(&ToyShiftConfig::default(), seed);
        let rows = compare_scores(&model, target.features(), target.labels().unwrap(), &GmmConfig::default()).unwrap();
        let aurc = |k: ScoreKind| rows.iter().find(|r| r.score == k).unwrap().aurc();
        per_seed.push(kinds.map(aurc));
    }
    let mean = |i: usize| per_seed.iter().map(|a| a[i]).sum::<f64>() / per_seed.len() as f64;
    let j = mean(3);
    let mut parts = Vec::new();
    let mut all = true;
    for (i, kind) in kinds.iter().enumerate().take(3) {
        let strict = per_seed.iter().filter(|a| a[3] < a[i]).count();
        let ok = j <= mean(i) && strict >= 3;
        all &= ok;
        parts.push(format!(
            "JMDS {j:.4} <= {kind} {:.4} strict {strict}/5 {}",
            mean(i),
            if ok { "ok" } else { "NOT MET" }
        ));
    }
    verdict(all, parts.join("; "))
}

// ---------------------------------------------------------------- 6, 10

fn adapt(model: &MlpModel<f64>, target: &FeatureSet<f64>, seed: u64, weighting: Weighting) -> AdaptOutcome<f64> {
    cowa_adapt(model.clone(), target, &AdaptConfig { seed, weighting, ..Default::default() }).unwrap()
}

fn criterion_6() -> Verdict {
    let (mut src, mut jmds, mut uniform) = (0.0, 0.0, 0.0);
    for seed in SEEDS {
        let (model, _, target) = toy_pipeline(&ToyShiftConfig::default(), seed);
        let a = adapt(&model, &target, seed, Weighting::Jmds);
        let u = adapt(&model, &target, seed, Weighting::Uniform);
        src += a.initial().metrics.accuracy.unwrap() / 5.0;
        jmds += a.last().metrics.accuracy.unwrap() / 5.0;
        uniform += u.last().metrics.accuracy.unwrap() / 5.0;
    }
    verdict(
        jmds - src >= 0.05 && jmds >= uniform,
        format!(
            "mean accuracy source-only {src:.4}, JMDS-weighted {jmds:.4} (+{:.1} points), unweighted {uniform:.4}",
            100.0 * (jmds - src)
        ),
    )
}

fn criterion_10() -> Verdict {
    let mut grew = 0;
    let mut medians = Vec::new();
    for seed in SEEDS {
        let (model, _, target) = toy_pipeline(&ToyShiftConfig::default(), seed);
        let a = adapt(&model, &target, seed, Weighting::Jmds);
        let (m0, m1) = (a.initial().metrics.median_jmds, a.last().metrics.median_jmds);
        grew += usize::from(m1 >= m0);
        medians.push(format!("{m0:.3}->{m1:.3}"));
    }
    verdict(grew >= 4, format!("median JMDS grew in {grew}/5 seeds ({})", medians.join(", ")))
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Verdict {
    let (model, _, target) = toy_pipeline(&ToyShiftConfig::default(), 7);
    let base = AdaptConfig { seed: 7, gamma_override: Some(1.0), ..Default::default() };
    let pinned = cowa_adapt(model.clone(), &target, &AdaptConfig { use_weight_mixup: Some(true), ..base.clone() }).unwrap();
    let plain = cowa_adapt(model, &target, &AdaptConfig { use_weight_mixup: Some(false), ..base }).unwrap();
    let identical = pinned.model == plain.model && pinned.log == plain.log;

    let mut r = rng(107);
    let mut in_range = true;
    for _ in 0..1000 {
        let n = r.random_range(1..16);
        let xi = gaussian_matrix(&mut r, n, 2, 1.0);
        let xj = gaussian_matrix(&mut r, n, 2, 1.0);
        let y: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let wi: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let wj: Vec<f64> = (0..n).map(|_| r.random()).collect();
        let g: Vec<f64> = (0..n).map(|_| sample_mixing_coefficient(0.2, &mut r).unwrap()).collect();
        let m = weight_mixup_rows(&xi, &xj, &y, &y, &wi, &wj, &g, 3).unwrap();
        in_range &= (0..n).all(|i| m.weights[i] >= wi[i].min(wj[i]) && m.weights[i] <= wi[i].max(wj[i]));
    }

    let mut draws = |alpha: f64| -> Vec<f64> { (0..100_000).map(|_| sample_mixing_coefficient(alpha, &mut r).unwrap()).collect() };
    let moments = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
    };
    let (m11, _) = moments(&draws(1.0));
    let (_, v22) = moments(&draws(2.0));
    let ok = identical && in_range && (m11 - 0.5).abs() <= 0.01 && (v22 - 0.05).abs() <= 0.005;
    verdict(
        ok,
        format!(
            "gamma=1 run bit-identical: {identical}; mixed weights in range on 1000 batches: {in_range}; \
             Beta(1,1) mean {m11:.4}; Beta(2,2) variance {v22:.5}"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn partial_toy() -> ToyShiftConfig {
    let mut cfg = ToyShiftConfig::ring(6, 2, 6.0, 1.0, 200, 0).with_offset_rotation(30.0);
    cfg.target_classes = Some(vec![0, 2, 4]);
    cfg
}

fn criterion_8() -> Verdict {
    let mut exact = 0;
    let mut all_kept = 0;
    let mut found = Vec::new();
    for seed in SEEDS {
        let (model, _, target) = toy_pipeline(&partial_toy(), seed);
        let est = estimate_classes(&model, target.features(), 0.3, &GmmConfig::default()).unwrap();
        exact += usize::from(est.classes == vec![0, 2, 4]);
        found.push(format!("{:?}", est.classes));
        let loose = estimate_classes(&model, target.features(), 1e-9, &GmmConfig::default()).unwrap();
        all_kept += usize::from(loose.classes == (0..6).collect::<Vec<_>>());
    }
    verdict(
        exact == 5 && all_kept == 5,
        format!("tau 0.3 exact in {exact}/5 seeds ({}); tau 1e-9 keeps all 6 classes in {all_kept}/5", found.join(" ")),
    )
}

// ---------------------------------------------------------------- 9

/// Known modes on a ring of radius 8 sd, unknowns at its centre.
fn open_toy() -> ToyShiftConfig {
    let mut cfg = ToyShiftConfig::ring(3, 2, 8.0, 1.0, 200, 0).with_offset_rotation(30.0);
    cfg.unknown_mean = Some(vec![0.0, 0.0]);
    cfg.unknown_count = 200;
    cfg
}

fn exhaustive_sse(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let sse = |s: &[f64]| {
        let m = s.iter().sum::<f64>() / s.len() as f64;
        s.iter().map(|x| (x - m).powi(2)).sum::<f64>()
    };
    (1..v.len()).map(|i| sse(&v[..i]) + sse(&v[i..])).fold(f64::INFINITY, f64::min)
}

fn criterion_9() -> Verdict {
    let mut ok_seeds = 0;
    let mut report = Vec::new();
    let mut entropies = Vec::new();
    for seed in SEEDS {
        let (model, _, target) = toy_pipeline(&open_toy(), seed);
        let probs = model.predict_proba(target.features()).unwrap();
        let split = known_unknown_split(&probs).unwrap();
        let truth: Vec<bool> = target.labels().unwrap().iter().map(|&l| l < 3).collect();
        let count = |pred: bool, real: bool| {
            split.known_mask.iter().zip(&truth).filter(|(&p, &t)| p == pred && t == real).count() as f64
        };
        let known_precision = count(true, true) / (count(true, true) + count(true, false));
        let unknown_precision = count(false, false) / (count(false, false) + count(false, true));
        ok_seeds += usize::from(known_precision >= 0.9 && unknown_precision >= 0.9);
        report.push(format!("{known_precision:.3}/{unknown_precision:.3}"));
        entropies = split.entropies;
    }

    let mut r = rng(109);
    let mut matches = 0;
    let trials = 500;
    for t in 0..trials {
        let n = r.random_range(2..=200);
        let values: Vec<f64> = if t % 2 == 0 {
            (0..n).map(|_| entropies[r.random_range(0..entropies.len())]).collect()
        } else {
            (0..n).map(|_| r.random::<f64>().powi(3)).collect()
        };
        if values.iter().all(|&v| v == values[0]) {
            matches += 1;
            continue;
        }
        let (low, (a, b)) = two_means_1d(&values);
        let got: f64 = values.iter().zip(&low).map(|(v, &l)| (v - if l { a } else { b }).powi(2)).sum();
        matches += usize::from(got <= exhaustive_sse(&values) * (1.0 + 1e-9) + 1e-12);
    }
    verdict(
        ok_seeds == 5 && matches == trials,
        format!(
            "known/unknown precision >= 0.9 in {ok_seeds}/5 seeds ({}); 2-means = exhaustive optimum on {matches}/{trials} sets (n <= 200)",
            report.join(" ")
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    type Check = fn() -> Verdict;
    let criteria: [(u32, Check, Duration); 10] = [
        (1, criterion_1, Duration::from_secs(5)),
        (2, criterion_2, Duration::from_secs(10)),
        (3, criterion_3, Duration::from_secs(5)),
        (4, criterion_4, Duration::from_secs(10)),
        (5, criterion_5, Duration::from_secs(60)),
        (6, criterion_6, Duration::from_secs(120)),
        (7, criterion_7, Duration::from_secs(10)),
        (8, criterion_8, Duration::from_secs(30)),
        (9, criterion_9, Duration::from_secs(30)),
        (10, criterion_10, Duration::from_secs(120)),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut hard_failures = Vec::new();
    for (id, check, budget) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = v.pass && in_time;
        println!(
            "criterion {id}: {} ({}; {:.2}s of {}s budget)",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        if !pass && !REPORTED_ONLY.contains(&id) {
            hard_failures.push(id);
        }
    }
    if !hard_failures.is_empty() {
        eprintln!("acceptance failures: {hard_failures:?}");
        std::process::exit(1);
    }
}
