mod common;

use common::{permutations, rng};
use cowa_jmds::evaluation::{
    accuracy, comparison_from_csv, comparison_to_csv, compare_scores, confidence_order, curve_from_csv, oracle_aurc,
    risk_coverage, risk_coverage_values, zero_one_loss, AccuracyMode, PseudoLabeler,
};
use cowa_jmds::gmm::GmmConfig;
use cowa_jmds::scores::{ScoreKind, ScoreVector};
use num_rational::Ratio;
use proptest::prelude::*;
use rand::Rng;

type Q = Ratio<i64>;

fn sv(values: Vec<f64>) -> ScoreVector<f64> {
    let n = values.len();
    ScoreVector::new(values, ScoreKind::Jmds, vec![0; n]).unwrap()
}

fn q(n: i64, d: i64) -> Q {
    Q::new(n, d)
}

/// AURC of losses taken in the given order, from the definition.
fn aurc_of_order(losses: &[Q], order: &[usize]) -> Q {
    let n = losses.len() as i64;
    let mut cum = Q::from_integer(0);
    let mut sum = Q::from_integer(0);
    for (k, &i) in order.iter().enumerate() {
        cum += losses[i];
        sum += cum / Q::from_integer(k as i64 + 1);
    }
    sum / Q::from_integer(n)
}

#[test]
fn zero_one_cases() {
    assert_eq!(zero_one_loss::<f64>(&[0, 1, 2], &[0, 1, 2]).unwrap(), vec![0.0; 3]);
    assert_eq!(zero_one_loss::<f64>(&[1, 2, 0], &[0, 1, 2]).unwrap(), vec![1.0; 3]);
    assert!(zero_one_loss::<f64>(&[0], &[0, 1]).is_err());
}

#[test]
fn hand_enumerated_curve_is_exactly_five_twentyfourths() {
    let losses: Vec<Q> = zero_one_loss(&[0, 0, 1, 1], &[0, 0, 0, 0]).unwrap();
    let c = risk_coverage(&sv(vec![0.9, 0.8, 0.2, 0.1]), &losses).unwrap();
    assert_eq!(c.aurc, q(5, 24));
    let risks: Vec<Q> = c.points.iter().map(|p| p.1).collect();
    assert_eq!(risks, vec![q(0, 1), q(0, 1), q(1, 3), q(1, 2)]);
    let cov: Vec<Q> = c.points.iter().map(|p| p.0).collect();
    assert_eq!(cov, vec![q(1, 4), q(1, 2), q(3, 4), q(1, 1)]);

    let f = risk_coverage(&sv(vec![0.9, 0.8, 0.2, 0.1]), &[0.0f64, 0.0, 1.0, 1.0]).unwrap();
    assert!((f.aurc - 5.0 / 24.0).abs() < 1e-15);
}

#[test]
fn extremes() {
    let s = sv(vec![0.3, 0.1, 0.7]);
    assert_eq!(risk_coverage(&s, &[q(0, 1); 3]).unwrap().aurc, q(0, 1));
    assert_eq!(risk_coverage(&s, &[q(1, 1); 3]).unwrap().aurc, q(1, 1));
    assert_eq!(oracle_aurc(&[0.0; 5]).unwrap(), 0.0);
    assert_eq!(oracle_aurc(&[1.0; 5]).unwrap(), 1.0);
    assert!(oracle_aurc::<f64>(&[]).is_err());
    assert!(risk_coverage_values::<f64, f64>(&[], &[]).is_err());
    assert!(risk_coverage_values(&[f64::NAN], &[0.0]).is_err());
}

#[test]
fn ties_break_by_index() {
    let s = sv(vec![0.5, 0.5, 0.5]);
    let c = risk_coverage(&s, &[1.0, 0.0, 0.0]).unwrap();
    assert_eq!(c.points[0].1, 1.0);
    assert_eq!(confidence_order(&[0.2, 0.9, 0.2, 0.9]), vec![1, 3, 0, 2]);
}

#[test]
fn oracle_is_minimum_over_all_orderings() {
    let mut r = rng(31);
    for n in 1..=7usize {
        for _ in 0..5 {
            let losses: Vec<Q> = (0..n).map(|_| Q::from_integer(r.random_range(0..2))).collect();
            let oracle = oracle_aurc(&losses).unwrap();
            let mut best = None::<Q>;
            for perm in permutations(n) {
                let a = aurc_of_order(&losses, &perm);
                assert!(a >= oracle);
                best = Some(best.map_or(a, |b| b.min(a)));
            }
            assert_eq!(best.unwrap(), oracle);
        }
    }
}

#[test]
fn oracle_matches_exhaustive_at_n8() {
    let losses: Vec<Q> = [1, 0, 1, 1, 0, 0, 1, 0].iter().map(|&v| Q::from_integer(v)).collect();
    let oracle = oracle_aurc(&losses).unwrap();
    let best = permutations(8).iter().map(|p| aurc_of_order(&losses, p)).min().unwrap();
    assert_eq!(best, oracle);
}

#[test]
fn curve_matches_definition_for_random_scores() {
    let mut r = rng(32);
    for _ in 0..200 {
        let n = r.random_range(1..40);
        let values: Vec<f64> = (0..n).map(|_| (r.random_range(0..10) as f64) / 10.0).collect();
        let losses: Vec<Q> = (0..n).map(|_| Q::from_integer(r.random_range(0..2))).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
        let c = risk_coverage_values(&values, &losses).unwrap();
        assert_eq!(c.aurc, aurc_of_order(&losses, &order));
        assert!(c.aurc >= oracle_aurc(&losses).unwrap());
    }
}

#[test]
fn equal_scores_give_error_rate_curve_when_errors_last() {
    // With all scores equal the order is by index; putting errors at the end
    // makes the curve coincide with the oracle.
    let losses = [q(0, 1), q(0, 1), q(0, 1), q(1, 1)];
    let c = risk_coverage_values(&[0.4; 4], &losses).unwrap();
    assert_eq!(c.aurc, oracle_aurc(&losses).unwrap());
    assert_eq!(c.points.last().unwrap().1, q(1, 4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn aurc_is_invariant_to_monotone_transforms(
        pairs in prop::collection::vec((0.0f64..1.0, 0i128..2), 1..40),
        scale in 0.01f64..10.0,
    ) {
        let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let losses: Vec<Ratio<i128>> = pairs.iter().map(|p| Ratio::from_integer(p.1)).collect();
        let a = risk_coverage_values(&values, &losses).unwrap();
        let mapped: Vec<f64> = values.iter().map(|v| (scale * v).exp()).collect();
        // Rounding may merge distinct scores; those cases are not strictly monotone.
        let strict = (0..values.len()).all(|i| {
            (0..values.len()).all(|j| values[i] == values[j] || mapped[i] != mapped[j])
        });
        prop_assume!(strict);
        let b = risk_coverage_values(&mapped, &losses).unwrap();
        prop_assert_eq!(a.aurc, b.aurc);
        prop_assert!(a.aurc >= oracle_aurc(&losses).unwrap());
        // Final risk is the error rate.
        let errors: i128 = pairs.iter().map(|p| p.1).sum();
        prop_assert_eq!(a.points.last().unwrap().1, Ratio::new(errors, pairs.len() as i128));
        prop_assert!(a.aurc <= Ratio::from_integer(1) && a.aurc >= Ratio::from_integer(0));
    }
}

#[test]
fn accuracy_modes() {
    assert_eq!(accuracy(&[0, 1, 1], &[0, 1, 1], AccuracyMode::Overall).unwrap(), 1.0);
    assert_eq!(accuracy(&[0, 0, 0, 0], &[0, 0, 1, 1], AccuracyMode::PerClassMean).unwrap(), 0.5);
    // A class that never appears as truth is excluded.
    assert_eq!(accuracy(&[2, 1], &[0, 1], AccuracyMode::PerClassMean).unwrap(), 0.5);
    assert!(accuracy(&[], &[], AccuracyMode::Overall).is_err());
    assert!(accuracy(&[0], &[0, 1], AccuracyMode::Overall).is_err());
}

#[test]
fn accuracy_matches_confusion_matrix_oracle() {
    let mut r = rng(33);
    for _ in 0..100 {
        let n = r.random_range(1..80);
        let k = r.random_range(2..6);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let pred: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        let mut cm = vec![vec![0usize; k]; k];
        for (&p, &t) in pred.iter().zip(&truth) {
            cm[t][p] += 1;
        }
        let diag: usize = (0..k).map(|c| cm[c][c]).sum();
        let overall = accuracy(&pred, &truth, AccuracyMode::Overall).unwrap();
        assert!((overall - diag as f64 / n as f64).abs() < 1e-15);
        let rows: Vec<f64> = (0..k)
            .filter(|&c| cm[c].iter().sum::<usize>() > 0)
            .map(|c| cm[c][c] as f64 / cm[c].iter().sum::<usize>() as f64)
            .collect();
        let per_class = accuracy(&pred, &truth, AccuracyMode::PerClassMean).unwrap();
        assert!((per_class - rows.iter().sum::<f64>() / rows.len() as f64).abs() < 1e-12);
    }
}

#[test]
fn curve_csv_round_trips() {
    let c = risk_coverage(&sv(vec![0.9, 0.8, 0.2, 0.1]), &[0.0, 1.0, 0.0, 1.0]).unwrap();
    let text = c.to_csv();
    assert!(text.starts_with("coverage,risk\n"));
    let back = curve_from_csv::<f64>(&text).unwrap();
    assert_eq!(back.points, c.points);
    assert!((back.aurc - c.aurc).abs() < 1e-15);
    assert!(curve_from_csv::<f64>("coverage,risk\n0.5\n").is_err());
    assert!(curve_from_csv::<f64>("x,y\n").is_err());
}

#[test]
fn comparison_covers_every_score_and_round_trips() {
    let mut r = rng(34);
    let model = common::random_model(&mut r, 2, 6, 3);
    let x = common::gaussian_matrix(&mut r, 90, 2, 2.0);
    let truth: Vec<usize> = (0..90).map(|i| i % 3).collect();
    let rows = compare_scores(&model, &x, &truth, &GmmConfig::default()).unwrap();
    let kinds: Vec<ScoreKind> = rows.iter().map(|r| r.score).collect();
    for k in ScoreKind::ALL {
        assert!(kinds.contains(&k));
    }
    for row in &rows {
        let expect = match row.score {
            ScoreKind::Maxprob | ScoreKind::Ent => PseudoLabeler::Naive,
            _ => PseudoLabeler::Gmm,
        };
        assert_eq!(row.pseudo_labeler, expect);
        assert!((0.0..=1.0).contains(&row.aurc()));
    }
    let parsed = comparison_from_csv::<f64>(&comparison_to_csv(&rows)).unwrap();
    for (row, (pl, kind, aurc)) in rows.iter().zip(parsed) {
        assert_eq!((row.pseudo_labeler, row.score, row.aurc()), (pl, kind, aurc));
    }
    assert!(compare_scores(&model, &x, &truth[..5], &GmmConfig::default()).is_err());
    assert!(comparison_from_csv::<f64>("pseudo_labeler,score,aurc\nsomething,jmds,0.1\n").is_err());
}
