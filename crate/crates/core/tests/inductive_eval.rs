mod common;

use common::graph;
use grail_core::eval::{
    align_columns, auc_pr, ensemble_gain, evaluate, fit_fusion, late_fusion, prepare_inductive, EvalConfig,
    GrailScorer, TripleScorer,
};
use grail_core::exec::Serial;
use grail_core::graph::{KnowledgeGraph, Triple, Vocab};
use grail_core::model::{GnnConfig, GnnParams};
use grail_core::rng::substream;
use grail_core::subgraph::SubgraphSpec;
use grail_core::Error;
use rand::Rng as _;

fn named(ents: &[&str], rels: &[&str], triples: &[(usize, usize, usize)]) -> KnowledgeGraph {
    KnowledgeGraph::from_triples(
        Vocab::from_names(ents.iter().copied()),
        Vocab::from_names(rels.iter().copied()),
        triples.iter().map(|&(h, r, t)| Triple::new(h, r, t)),
    )
    .unwrap()
    .0
}

#[test]
fn relations_are_aligned_by_name_and_test_edges_removed() {
    let model_rels = Vocab::from_names(["likes", "knows"]);
    // the inductive graph lists its relations in the other order
    let g = named(
        &["a", "b", "c"],
        &["knows", "likes"],
        &[(0, 0, 1), (1, 1, 2), (0, 1, 2)],
    );
    let test = [Triple::new(0, 1, 2)];
    let (msg, aligned) = prepare_inductive(&model_rels, &g.without(&test), &test).unwrap();
    assert_eq!(aligned, vec![Triple::new(0, 0, 2)]);
    assert_eq!(msg.relations(), &model_rels);
    assert!(!msg.contains(&aligned[0]));
    assert!(msg.contains(&Triple::new(0, 1, 1)));
    assert_eq!(msg.num_triples(), 2);
}

#[test]
fn unknown_relation_is_an_error() {
    let model_rels = Vocab::from_names(["likes"]);
    let g = named(&["a", "b"], &["hates"], &[(0, 0, 1)]);
    assert!(prepare_inductive(&model_rels, &g, &[]).is_err());
}

#[test]
fn test_edges_do_not_leak_into_their_own_subgraphs() {
    let mut rng = substream(8, "leak");
    let n = 30;
    let triples: Vec<Triple> = (0..90)
        .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..2), rng.gen_range(0..n)))
        .filter(|t| t.head != t.tail)
        .collect();
    let full = graph(n, 2, triples);
    let test: Vec<Triple> = full.triples()[..10].to_vec();
    let rest = full.without(&test);
    let spec = SubgraphSpec::new(2);
    let cfg = GnnConfig {
        hidden_dim: 4,
        attn_hidden: 4,
        num_bases: 2,
        ..GnnConfig::new(spec.feature_dim(None))
    };
    let params = GnnParams::init(&cfg, 2, &mut rng).unwrap();

    // scoring with the test edges present in the input graph must equal
    // scoring on a graph that never contained them
    let report = evaluate(
        &params,
        &cfg,
        spec,
        full.relations(),
        &full,
        &test,
        None,
        &EvalConfig::default(),
        &Serial,
    )
    .unwrap();
    let clean = GrailScorer {
        graph: &rest,
        params: &params,
        gnn: &cfg,
        spec,
        aux: None,
    };
    for r in &report.records {
        assert_eq!(r.score, clean.score(&r.triple).unwrap());
        let sub = spec.extract(&rest, &r.triple, None).unwrap();
        let hits = sub
            .subgraph()
            .edges()
            .iter()
            .filter(|e| e.src == 0 && e.dst == 1 && e.rel == r.triple.rel)
            .count();
        assert_eq!(hits, 1);
    }
}

#[test]
fn fusion_loss_never_increases_and_beats_noise() {
    let mut rng = substream(3, "fusion");
    let rows = |rng: &mut grail_core::rng::Rng, n: usize| -> (Vec<Vec<f64>>, Vec<bool>) {
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let x = labels
            .iter()
            .map(|&l| {
                let signal = if l { 1.0 } else { 0.0 } + 0.8 * rng.gen::<f64>();
                vec![signal, rng.gen::<f64>() * 10.0]
            })
            .collect();
        (x, labels)
    };
    let (valid, vl) = rows(&mut rng, 400);
    let fusion = fit_fusion(&valid, &vl, 2000).unwrap();
    for w in fusion.loss_log.windows(2) {
        assert!(w[1] <= w[0] + 1e-12);
    }
    assert!(fusion.weights[0].abs() > 5.0 * fusion.weights[1].abs());

    let (test, tl) = rows(&mut rng, 400);
    let (fused, _) = late_fusion(&valid, &vl, &test).unwrap();
    let split = |col: &dyn Fn(usize) -> f64| {
        let pos: Vec<f64> = (0..tl.len()).filter(|&i| tl[i]).map(col).collect();
        let neg: Vec<f64> = (0..tl.len()).filter(|&i| !tl[i]).map(col).collect();
        auc_pr(&pos, &neg).unwrap()
    };
    let noise = split(&|i| test[i][1]);
    let combined = split(&|i| fused[i]);
    assert!(combined > noise + 0.2, "{combined} vs {noise}");
}

#[test]
fn fusion_input_errors() {
    assert!(fit_fusion(&[], &[], 10).is_err());
    assert!(fit_fusion(&[vec![1.0]], &[true, false], 10).is_err());
    assert!(late_fusion(&[vec![1.0], vec![0.0]], &[true, false], &[vec![1.0, 2.0]]).is_err());
}

#[test]
fn gain_is_relative_to_best_single_model() {
    assert!((ensemble_gain(0.8, 0.9, 0.99).unwrap() - 0.1).abs() < 1e-12);
    assert!(ensemble_gain(0.8, 0.9, 0.85).unwrap() < 0.0);
    assert!(ensemble_gain(0.0, 0.9, 0.85).is_err());
}

#[test]
fn columns_must_line_up() {
    let a = vec![("x".to_string(), 1.0), ("y".to_string(), 2.0)];
    let b = vec![("x".to_string(), 3.0), ("y".to_string(), 4.0)];
    let (keys, rows) = align_columns(&[a.clone(), b]).unwrap();
    assert_eq!(keys, ["x", "y"]);
    assert_eq!(rows, vec![vec![1.0, 3.0], vec![2.0, 4.0]]);
    let swapped = vec![("y".to_string(), 3.0), ("x".to_string(), 4.0)];
    match align_columns(&[a.clone(), swapped]) {
        Err(Error::Misaligned(msg)) => assert!(msg.contains("row 1") && msg.contains('x')),
        other => panic!("{other:?}"),
    }
    assert!(align_columns(&[a.clone(), a[..1].to_vec()]).is_err());
}
