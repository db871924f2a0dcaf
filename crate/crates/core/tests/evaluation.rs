mod common;

use std::collections::BTreeMap;

use common::oracle;
use rankaug::evaluation::{ndcg_of, paired_significance, sign_flip_p_value, MetricReport, DEFAULT_PERMUTATIONS};

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for at in 0..=p.len() {
            let mut q = p.clone();
            q.insert(at, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn ndcg_matches_exhaustive_ideal_on_all_orderings() {
    let grade_sets: [&[u32]; 7] = [&[1], &[0, 1], &[1, 1, 0], &[2, 0, 1], &[0, 0, 3, 1], &[1, 2, 0, 2, 1], &[0, 0, 0, 0, 1]];
    let mut checked = 0;
    for grades in grade_sets {
        for perm in permutations(grades.len()) {
            let ranked: Vec<u32> = perm.iter().map(|&i| grades[i]).collect();
            for k in [1, 3, 10] {
                let got = ndcg_of(&ranked, grades, k).unwrap();
                let want = oracle::ndcg_exhaustive(&ranked, grades, k).unwrap();
                assert!((got - want).abs() < 1e-12, "{ranked:?} k={k}");
                checked += 1;
            }
        }
    }
    assert!(checked > 400);
    assert!((ndcg_of(&[0, 1], &[0, 1], 10).unwrap() - 0.63093).abs() < 1e-5);
    assert_eq!(ndcg_of(&[0, 0], &[0, 0], 10), None);
}

fn report(values: &[f64]) -> MetricReport {
    MetricReport {
        metric: "ndcg_cut_10".into(),
        k: 10,
        mean: values.iter().sum::<f64>() / values.len() as f64,
        per_query: values.iter().enumerate().map(|(i, v)| (format!("q{i:02}"), *v)).collect::<BTreeMap<_, _>>(),
        no_relevant: Vec::new(),
    }
}

#[test]
fn identical_runs_give_p_one() {
    let a = report(&[0.1, 0.5, 0.9, 0.3]);
    let r = paired_significance(&a, &a, DEFAULT_PERMUTATIONS, 1).unwrap();
    assert_eq!(r.p_value, 1.0);
    assert!(!r.significant_90);
}

#[test]
fn one_signed_case_matches_exact_enumeration() {
    let a = report(&[0.6, 0.7, 0.55, 0.8, 0.62, 0.9, 0.71, 0.66, 0.58, 0.77]);
    let b = report(&[0.5, 0.6, 0.50, 0.7, 0.60, 0.8, 0.70, 0.60, 0.50, 0.70]);
    let diffs: Vec<f64> = a.per_query.values().zip(b.per_query.values()).map(|(x, y)| x - y).collect();
    let exact = oracle::exact_sign_flip(&diffs);
    assert!((exact - 2.0 / 1024.0).abs() < 1e-15);
    let n = DEFAULT_PERMUTATIONS;
    let sd = (exact * (1.0 - exact) / n as f64).sqrt();
    for seed in 0..5 {
        let p = paired_significance(&a, &b, n, seed).unwrap().p_value;
        assert!((p - exact).abs() < 4.0 * sd, "seed {seed}: {p} vs {exact}");
    }
}

#[test]
fn monte_carlo_tracks_exact_on_mixed_signs() {
    let diffs = [0.05, -0.02, 0.03, 0.04, -0.01, 0.02, 0.0, 0.06];
    let exact = oracle::exact_sign_flip(&diffs);
    let p = sign_flip_p_value(&diffs, 50_000, 9);
    let sd = (exact * (1.0 - exact) / 50_000.0).sqrt();
    assert!((p - exact).abs() < 4.0 * sd, "{p} vs {exact}");
}

#[test]
fn significance_is_seeded_and_rejects_bad_input() {
    let a = report(&[0.2, 0.4, 0.3]);
    let b = report(&[0.1, 0.5, 0.1]);
    let p1 = paired_significance(&a, &b, 3000, 4).unwrap();
    let p2 = paired_significance(&a, &b, 3000, 4).unwrap();
    assert_eq!(p1, p2);
    assert!(paired_significance(&report(&[0.1]), &report(&[0.2]), 100, 0).is_err());
    assert!(paired_significance(&a, &report(&[0.1, 0.2]), 100, 0).is_err());
}
