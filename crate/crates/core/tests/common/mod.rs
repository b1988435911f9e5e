#![allow(dead_code)]

use grail_core::autodiff::Var;
use grail_core::graph::{KnowledgeGraph, Triple, Vocab};
use grail_core::model::{BoundLayer, BoundParams, GnnConfig, GnnParams, Readout};
use grail_core::rng::Rng;
use grail_core::subgraph::{extract_labeled, ExtractMode, LabelScheme, LabeledSubgraph};
use grail_core::Tensor;
use rand::Rng as _;

pub fn graph(n: usize, r: usize, triples: Vec<Triple>) -> KnowledgeGraph {
    let entities = Vocab::from_names((0..n).map(|i| format!("e{i}")));
    let relations = Vocab::from_names((0..r).map(|i| format!("r{i}")));
    KnowledgeGraph::from_triples(entities, relations, triples).unwrap().0
}

pub fn random_graph(rng: &mut Rng, max_nodes: usize, num_rel: usize, density: f64) -> KnowledgeGraph {
    let n = rng.gen_range(2..=max_nodes);
    let m = rng.gen_range(0..=((density * n as f64) as usize).max(1));
    let triples = (0..m)
        .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..num_rel), rng.gen_range(0..n)))
        .collect();
    graph(n, num_rel, triples)
}

/// A labeled subgraph of a random graph with at most `max_nodes` nodes.
pub fn random_labeled(rng: &mut Rng, max_nodes: usize, num_rel: usize, k: usize) -> LabeledSubgraph {
    let g = random_graph(rng, max_nodes, num_rel, 2.5);
    let n = g.num_entities();
    let u = rng.gen_range(0..n);
    let v = (u + rng.gen_range(1..n)) % n;
    let mode = if rng.gen_bool(0.5) {
        ExtractMode::Enclosing
    } else {
        ExtractMode::FullKhop
    };
    extract_labeled(
        &g,
        u,
        v,
        rng.gen_range(0..num_rel),
        k,
        mode,
        LabelScheme::DoubleRadius,
        None,
    )
    .unwrap()
}

/// Rebuilds bound parameters from leaves given in `GnnParams::tensors` order.
pub fn bound_from_vars(vars: &[Var], num_layers: usize) -> BoundParams {
    let layers = (0..num_layers)
        .map(|k| {
            let v = &vars[7 * k..7 * k + 7];
            BoundLayer {
                basis: v[0],
                coeff: v[1],
                self_weight: v[2],
                attn_w1: v[3],
                attn_b1: v[4],
                attn_w2: v[5],
                attn_b2: v[6],
            }
        })
        .collect();
    let rest = &vars[7 * num_layers..];
    BoundParams {
        layers,
        attn_rel_emb: rest[0],
        rel_emb: rest[1],
        readout: rest[2],
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot_rows(x: &[f64], w: &Tensor, row0: usize, col: usize) -> f64 {
    x.iter().enumerate().map(|(i, xi)| xi * w.get(row0 + i, col)).sum()
}

/// Score computed with plain loops over nodes and edges.
pub fn naive_score(sub: &LabeledSubgraph, p: &GnnParams, cfg: &GnnConfig, masks: Option<&[Vec<f64>]>) -> f64 {
    let s = sub.subgraph();
    let n = s.num_nodes();
    let d = cfg.hidden_dim;
    let r_t = s.target_rel();
    let mut h: Vec<Vec<f64>> = (0..n).map(|i| sub.features().row_slice(i).to_vec()).collect();
    let mut outputs = Vec::new();
    for (k, l) in p.layers.iter().enumerate() {
        let din = h[0].len();
        let mut next: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..d).map(|j| dot_rows(&h[i], &l.self_weight, 0, j)).collect())
            .collect();
        for (ei, e) in s.edges().iter().enumerate() {
            let (dst_node, src_node) = if cfg.aggregate_in_neighbors {
                (e.dst, e.src)
            } else {
                (e.src, e.dst)
            };
            let mut alpha = 1.0;
            if cfg.attention {
                let mut logit = l.attn_b2.get(0, 0);
                for a in 0..cfg.attn_hidden {
                    let mut pre = l.attn_b1.get(0, a);
                    pre += dot_rows(&h[src_node], &l.attn_w1, 0, a);
                    pre += dot_rows(&h[dst_node], &l.attn_w1, din, a);
                    pre += dot_rows(p.attn_rel_emb.row_slice(e.rel), &l.attn_w1, 2 * din, a);
                    pre += dot_rows(p.attn_rel_emb.row_slice(r_t), &l.attn_w1, 2 * din + d, a);
                    logit += pre.max(0.0) * l.attn_w2.get(a, 0);
                }
                alpha = sigmoid(logit);
                if let Some(f) = cfg.attention_floor {
                    if alpha < f {
                        alpha = 0.0;
                    }
                }
            }
            if let Some(m) = masks {
                alpha *= m[k][ei];
            }
            for j in 0..d {
                let mut msg = 0.0;
                for i in 0..din {
                    let mut w = 0.0;
                    for b in 0..cfg.num_bases {
                        w += l.coeff.get(e.rel, b) * l.basis.get(b, i * d + j);
                    }
                    msg += h[src_node][i] * w;
                }
                next[dst_node][j] += alpha * msg;
            }
        }
        for row in &mut next {
            for x in row.iter_mut() {
                *x = x.max(0.0);
            }
        }
        outputs.push(next.clone());
        h = next;
    }
    let mut feat = Vec::new();
    match cfg.readout {
        Readout::TargetNode => feat.extend_from_slice(&h[s.target_v()]),
        Readout::JumpingKnowledge | Readout::LastLayer => {
            let from = if cfg.readout == Readout::LastLayer {
                outputs.len() - 1
            } else {
                0
            };
            for hk in &outputs[from..] {
                for j in 0..d {
                    feat.push(hk.iter().map(|r| r[j]).sum::<f64>() / n as f64);
                }
                feat.extend_from_slice(&hk[s.target_u()]);
                feat.extend_from_slice(&hk[s.target_v()]);
                feat.extend_from_slice(p.rel_emb.row_slice(r_t));
            }
        }
    }
    feat.iter().enumerate().map(|(i, x)| x * p.readout.get(i, 0)).sum()
}
