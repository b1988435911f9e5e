mod common;

use std::collections::BTreeSet;

use common::graph;
use grail_core::graph::{KnowledgeGraph, Triple};
use grail_core::rng::indexed_substream;
use grail_core::subgraph::{extract_enclosing, label_nodes, ExtractMode, LabelScheme};
use proptest::prelude::*;
use rand::Rng as _;

/// Union of the nodes of every simple undirected `u`-`v` path with at most
/// `max_len` edges, found by exhaustive enumeration.
fn path_oracle(g: &KnowledgeGraph, u: usize, v: usize, max_len: usize) -> BTreeSet<usize> {
    let n = g.num_entities();
    let mut adj = vec![BTreeSet::new(); n];
    for t in g.triples() {
        if t.head != t.tail {
            adj[t.head].insert(t.tail);
            adj[t.tail].insert(t.head);
        }
    }
    let mut out = BTreeSet::from([u, v]);
    let mut path = vec![u];
    fn go(adj: &[BTreeSet<usize>], v: usize, max_len: usize, path: &mut Vec<usize>, out: &mut BTreeSet<usize>) {
        let x = *path.last().unwrap();
        if x == v {
            out.extend(path.iter().copied());
            return;
        }
        if path.len() > max_len {
            return;
        }
        for &y in &adj[x] {
            if !path.contains(&y) {
                path.push(y);
                go(adj, v, max_len, path, out);
                path.pop();
            }
        }
    }
    go(&adj, v, max_len, &mut path, &mut out);
    out
}

fn random_case(seed: u64, trial: u64) -> (KnowledgeGraph, usize, usize, usize) {
    let mut rng = indexed_substream(seed, "extract-oracle", trial);
    let n = rng.gen_range(2..=12);
    let m = rng.gen_range(0..=3 * n);
    let triples = (0..m)
        .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..3), rng.gen_range(0..n)))
        .collect();
    let g = graph(n, 3, triples);
    let u = rng.gen_range(0..n);
    let v = (u + rng.gen_range(1..n)) % n;
    (g, u, v, rng.gen_range(1..=3))
}

#[test]
fn enclosing_nodes_equal_exhaustive_path_set() {
    for trial in 0..500 {
        let (g, u, v, k) = random_case(0, trial);
        let sub = extract_enclosing(&g, u, v, 0, k, ExtractMode::Enclosing).unwrap();
        assert_eq!(
            sub.node_set(),
            path_oracle(&g, u, v, k + 1),
            "trial {trial}: u={u} v={v} k={k}"
        );
    }
}

#[test]
fn full_khop_is_union_of_balls() {
    for trial in 0..200 {
        let (g, u, v, k) = random_case(1, trial);
        let sub = extract_enclosing(&g, u, v, 0, k, ExtractMode::FullKhop).unwrap();
        let mut want = g.khop_nodes(u, k).unwrap();
        want.extend(g.khop_nodes(v, k).unwrap());
        assert_eq!(sub.node_set(), want);
    }
}

#[test]
fn extraction_keeps_induced_edges_and_one_target_edge() {
    for trial in 0..300 {
        let (g, u, v, k) = random_case(2, trial);
        let r_t = (trial % 3) as usize;
        let sub = extract_enclosing(&g, u, v, r_t, k, ExtractMode::Enclosing).unwrap();
        let nodes = sub.node_set();
        let mut induced: Vec<(usize, usize, usize)> = g
            .triples()
            .iter()
            .filter(|t| nodes.contains(&t.head) && nodes.contains(&t.tail))
            .map(|t| (t.head, t.rel, t.tail))
            .collect();
        if !g.contains(&Triple::new(u, r_t, v)) {
            induced.push((u, r_t, v));
        }
        let mut got: Vec<(usize, usize, usize)> = sub
            .edges()
            .iter()
            .map(|e| (sub.nodes()[e.src], e.rel, sub.nodes()[e.dst]))
            .collect();
        induced.sort_unstable();
        got.sort_unstable();
        assert_eq!(got, induced);
        let targets = got.iter().filter(|&&e| e == (u, r_t, v)).count();
        assert_eq!(targets, 1);
    }
}

#[test]
fn spec_fork_example() {
    // u=0 a=1 v=2 b=3 c=4
    let g = graph(
        5,
        2,
        vec![
            Triple::new(0, 0, 1),
            Triple::new(1, 1, 2),
            Triple::new(0, 0, 3),
            Triple::new(3, 1, 4),
        ],
    );
    let enc = extract_enclosing(&g, 0, 2, 0, 2, ExtractMode::Enclosing).unwrap();
    assert_eq!(enc.node_set(), BTreeSet::from([0, 1, 2]));
    let full = extract_enclosing(&g, 0, 2, 0, 2, ExtractMode::FullKhop).unwrap();
    assert_eq!(full.node_set(), BTreeSet::from([0, 1, 2, 3, 4]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn labels_respect_invariants(seed in any::<u64>(), full in any::<bool>()) {
        let (g, u, v, k) = random_case(seed, 0);
        let mode = if full { ExtractMode::FullKhop } else { ExtractMode::Enclosing };
        let sub = extract_enclosing(&g, u, v, 0, k, mode).unwrap();
        let lab = label_nodes(sub.clone(), LabelScheme::DoubleRadius, None).unwrap();
        let (tu, tv) = (sub.target_u(), sub.target_v());
        prop_assert_eq!((lab.dist_u()[tu], lab.dist_v()[tu]), (0, 1));
        prop_assert_eq!((lab.dist_u()[tv], lab.dist_v()[tv]), (1, 0));
        prop_assert_eq!(lab.feature_dim(), 2 * (k + 2));
        for i in 0..sub.num_nodes() {
            prop_assert!(lab.dist_u()[i] <= k + 1 && lab.dist_v()[i] <= k + 1);
            if mode == ExtractMode::Enclosing {
                prop_assert!(lab.dist_u()[i].max(lab.dist_v()[i]) <= k);
                if i != tu && i != tv {
                    prop_assert!(lab.dist_u()[i] + lab.dist_v()[i] <= k + 1);
                }
            }
            let row = lab.features().row_slice(i);
            prop_assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 2);
            prop_assert_eq!(row[lab.dist_u()[i]], 1.0);
            prop_assert_eq!(row[k + 2 + lab.dist_v()[i]], 1.0);
        }
    }

    #[test]
    fn labels_ignore_node_order(seed in any::<u64>()) {
        let (g, u, v, k) = random_case(seed, 1);
        let sub = extract_enclosing(&g, u, v, 0, k, ExtractMode::FullKhop).unwrap();
        let lab = label_nodes(sub, LabelScheme::DoubleRadius, None).unwrap();
        let n = lab.subgraph().num_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        let permuted = lab.permuted(&perm).unwrap();
        let relabeled = label_nodes(permuted.subgraph().clone(), LabelScheme::DoubleRadius, None).unwrap();
        prop_assert_eq!(relabeled.features(), permuted.features());
        prop_assert_eq!(relabeled.dist_u(), permuted.dist_u());
    }

    #[test]
    fn constant_scheme_is_one_one(seed in any::<u64>()) {
        let (g, u, v, k) = random_case(seed, 2);
        let sub = extract_enclosing(&g, u, v, 0, k, ExtractMode::Enclosing).unwrap();
        let lab = label_nodes(sub, LabelScheme::Constant, None).unwrap();
        prop_assert!(lab.dist_u().iter().chain(lab.dist_v()).all(|&d| d == 1));
    }
}
