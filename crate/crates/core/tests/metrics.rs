mod common;

use std::sync::atomic::{AtomicU64, Ordering};

use common::graph;
use grail_core::eval::{auc_pr, evaluate_scorer, mid_rank, rank_histogram, EvalConfig};
use grail_core::exec::Serial;
use grail_core::graph::Triple;
use grail_core::rng::{indexed_substream, substream};
use grail_core::Result;
use rand::Rng as _;

/// Independent uniform score on every call, in call order.
fn fresh_scores(seed: u64) -> impl Fn(&Triple) -> Result<f64> + Sync {
    let calls = AtomicU64::new(0);
    move |_| Ok(indexed_substream(seed, "random-scorer", calls.fetch_add(1, Ordering::Relaxed)).gen())
}

/// Step-wise precision-recall area: for every distinct score threshold t
/// (descending), predict positive when score >= t and add
/// `precision(t) * (recall(t) - recall(previous t))`. O(n^2).
fn auc_pr_reference(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for t in thresholds {
        let tp = pos.iter().filter(|&&s| s >= t).count() as f64;
        let fp = neg.iter().filter(|&&s| s >= t).count() as f64;
        let recall = tp / pos.len() as f64;
        area += tp / (tp + fp) * (recall - prev_recall);
        prev_recall = recall;
    }
    area
}

#[test]
fn auc_pr_matches_threshold_enumeration() {
    for trial in 0..100 {
        let mut rng = indexed_substream(0, "auc", trial);
        let np = rng.gen_range(1..60);
        let nn = rng.gen_range(1..60);
        // a coarse grid forces ties on some trials
        let grid = if trial % 3 == 0 { 5.0 } else { 1e9 };
        let mut draw = |shift: f64| ((rng.gen::<f64>() + shift) * grid).round() / grid;
        let pos: Vec<f64> = (0..np).map(|_| draw(0.3)).collect();
        let neg: Vec<f64> = (0..nn).map(|_| draw(0.0)).collect();
        let got = auc_pr(&pos, &neg).unwrap();
        let want = auc_pr_reference(&pos, &neg);
        assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs {want}");
    }
}

#[test]
fn mid_rank_counts_ties_half() {
    assert_eq!(mid_rank(0.5, &[0.1, 0.2]), 1);
    assert_eq!(mid_rank(0.5, &[0.9, 0.5, 0.5, 0.1]), 3);
    assert_eq!(mid_rank(0.5, &[0.5; 50]), 26);
}

#[test]
fn random_scorer_hits_at_10_is_ten_in_fifty_one() {
    let n = 200;
    let triples: Vec<Triple> = (0..n).map(|i| Triple::new(i, 0, (i + 1) % n)).collect();
    let g = graph(n, 1, triples.clone());
    let scorer = fresh_scores(9);
    let trials = 20_000;
    let test: Vec<Triple> = (0..trials).map(|i| triples[i % n]).collect();
    let report = evaluate_scorer(&scorer, &g, &test, &EvalConfig::default(), &Serial).unwrap();
    let p = 10.0 / 51.0;
    let sigma = (p * (1.0 - p) / trials as f64).sqrt();
    assert!(
        (report.hits_at_10 - p).abs() < 5.0 * sigma,
        "hits@10 {} vs {p} (sigma {sigma})",
        report.hits_at_10
    );
}

#[test]
fn random_ranks_are_uniform() {
    let n = 500;
    let triples: Vec<Triple> = (0..n).map(|i| Triple::new(i, 0, (i + 7) % n)).collect();
    let g = graph(n, 1, triples.clone());
    let salt: u64 = substream(4, "noise").gen();
    let scorer = fresh_scores(salt);
    let test: Vec<Triple> = (0..5100).map(|i| triples[i % n]).collect();
    let cfg = EvalConfig {
        num_negatives: 50,
        seed: 1,
    };
    let report = evaluate_scorer(&scorer, &g, &test, &cfg, &Serial).unwrap();
    let hist = rank_histogram(&report.records, 50);
    let expected = test.len() as f64 / 51.0;
    let chi2: f64 = hist.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 50 degrees of freedom: mean 50, sd 10
    assert!(chi2 < 100.0, "chi-square {chi2}");
}

#[test]
fn perfect_and_constant_scorers() {
    let n = 50;
    let triples: Vec<Triple> = (0..n).map(|i| Triple::new(i, 0, (i + 1) % n)).collect();
    let g = graph(n, 1, triples.clone());
    let oracle = |t: &Triple| -> Result<f64> { Ok(if g.contains(t) { 1.0 } else { 0.0 }) };
    let r = evaluate_scorer(&oracle, &g, &triples, &EvalConfig::default(), &Serial).unwrap();
    assert_eq!(r.auc_pr, 1.0);
    assert_eq!(r.hits_at_10, 1.0);
    let constant = |_: &Triple| -> Result<f64> { Ok(0.3) };
    let r = evaluate_scorer(&constant, &g, &triples, &EvalConfig::default(), &Serial).unwrap();
    assert_eq!(r.auc_pr, 0.5);
    assert!(r.records.iter().all(|x| x.rank == 26));
}

#[test]
fn evaluation_is_reproducible_and_seed_sensitive() {
    let n = 80;
    let triples: Vec<Triple> = (0..n).map(|i| Triple::new(i, 0, (i * 3 + 1) % n)).collect();
    let g = graph(n, 1, triples.clone());
    let scorer = |t: &Triple| -> Result<f64> { Ok(((t.head * 31 + t.tail * 17) % 97) as f64) };
    let a = evaluate_scorer(&scorer, &g, &triples, &EvalConfig::default(), &Serial).unwrap();
    let b = evaluate_scorer(&scorer, &g, &triples, &EvalConfig::default(), &Serial).unwrap();
    assert_eq!(a, b);
    let c = evaluate_scorer(
        &scorer,
        &g,
        &triples,
        &EvalConfig {
            seed: 5,
            ..Default::default()
        },
        &Serial,
    )
    .unwrap();
    assert_ne!(a.auc_negatives, c.auc_negatives);
}
