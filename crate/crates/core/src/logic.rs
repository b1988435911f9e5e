//! Path rules, their satisfaction and walk-count oracles, and a hand-built
//! network whose score counts the walks realizing a rule body.
//!
//! Bindings are walks: intermediate entities may repeat.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple, Vocab};
use crate::model::{self, GnnConfig, GnnParams, LayerParams, Readout};
use crate::rng::{indexed_substream, Rng};
use crate::subgraph::{LabeledSubgraph, LocalEdge, Subgraph};
use crate::tensor::Tensor;

/// `head(X, Y) <- body[0](X, Z1) ^ body[1](Z1, Z2) ^ ... ^ body[k-1](Z{k-1}, Y)`
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct PathRule {
    pub head: usize,
    pub body: Vec<usize>,
}

impl PathRule {
    pub fn new(head: usize, body: Vec<usize>) -> Result<Self> {
        if body.is_empty() {
            return Err(Error::InvalidArgument("rule body must not be empty".into()));
        }
        Ok(Self { head, body })
    }

    pub fn len(&self) -> usize {
        self.body.len()
    }

    pub fn is_empty(&self) -> bool {
        self.body.is_empty()
    }

    fn check(&self, g: &KnowledgeGraph) -> Result<()> {
        g.check_relation(self.head)?;
        self.body.iter().try_for_each(|&r| g.check_relation(r))
    }
}

/// Returns the intermediate entities of one walk `u -> ... -> v` whose
/// edges follow the rule body, or `None` if no such walk exists.
pub fn rule_satisfied(g: &KnowledgeGraph, rule: &PathRule, u: usize, v: usize) -> Result<Option<Vec<usize>>> {
    rule.check(g)?;
    g.check_entity(u)?;
    g.check_entity(v)?;
    let n = g.num_entities();
    // parent[step][node]: predecessor on some walk reaching `node` after `step + 1` edges
    let mut parents: Vec<Vec<Option<usize>>> = Vec::with_capacity(rule.len());
    let mut frontier = BTreeSet::from([u]);
    for &r in &rule.body {
        let mut parent = vec![None; n];
        let mut next = BTreeSet::new();
        for &x in &frontier {
            for y in g.out_neighbors(x, r)? {
                if parent[y].is_none() {
                    parent[y] = Some(x);
                }
                next.insert(y);
            }
        }
        parents.push(parent);
        frontier = next;
    }
    if !frontier.contains(&v) {
        return Ok(None);
    }
    let mut witness = Vec::with_capacity(rule.len() - 1);
    let mut node = v;
    for step in (1..rule.len()).rev() {
        node = parents[step][node].expect("reached nodes have parents");
        witness.push(node);
    }
    witness.reverse();
    Ok(Some(witness))
}

/// Number of relation-labelled walks from `u` to `v` realizing the body.
pub fn count_walks(g: &KnowledgeGraph, rule: &PathRule, u: usize, v: usize) -> Result<f64> {
    rule.check(g)?;
    g.check_entity(u)?;
    g.check_entity(v)?;
    let n = g.num_entities();
    let mut counts = vec![0.0; n];
    counts[u] = 1.0;
    for &r in &rule.body {
        let mut next = vec![0.0; n];
        for t in g.triples().iter().filter(|t| t.rel == r) {
            next[t.tail] += counts[t.head];
        }
        counts = next;
    }
    Ok(counts[v])
}

/// Number of rules in a shared-head set whose body holds for `(u, v)`.
pub fn count_satisfied(g: &KnowledgeGraph, rules: &[PathRule], u: usize, v: usize) -> Result<usize> {
    if let Some(first) = rules.first() {
        if rules.iter().any(|r| r.head != first.head) {
            return Err(Error::MixedHeads);
        }
    }
    let mut beta = 0;
    for rule in rules {
        if rule_satisfied(g, rule, u, v)?.is_some() {
            beta += 1;
        }
    }
    Ok(beta)
}

/// Sigmoid pre-activation magnitude used by the hand-set attention.
pub const ATTENTION_GAIN: f64 = 40.0;
/// Attention values below this are replaced by exact zeros.
pub const ATTENTION_FLOOR: f64 = 1e-6;

/// Parameters making layer `l` pass messages only along `body[l]` edges,
/// with unit relation weights, no self connection and `score = h_v`.
///
/// The attention relation embedding is the relation id itself; a three-unit
/// ReLU bump `relu(x-c+1) - 2 relu(x-c) + relu(x-c-1)` is 1 at `x = c` and 0
/// at every other integer.
pub fn construct_rule_params(
    rule: &PathRule,
    num_relations: usize,
    max_layers: usize,
) -> Result<(GnnParams, GnnConfig)> {
    if rule.len() > max_layers {
        return Err(Error::RuleTooLong {
            len: rule.len(),
            max: max_layers,
        });
    }
    if let Some(&bad) = rule.body.iter().chain([&rule.head]).find(|&&r| r >= num_relations) {
        return Err(Error::UnknownRelation(bad));
    }
    if rule.is_empty() {
        return Err(Error::InvalidArgument("rule body must not be empty".into()));
    }
    let cfg = GnnConfig {
        num_layers: rule.len(),
        hidden_dim: 1,
        num_bases: 1,
        attn_hidden: 3,
        attention: true,
        readout: Readout::TargetNode,
        edge_dropout: 0.0,
        aggregate_in_neighbors: true,
        input_dim: 1,
        attention_floor: Some(ATTENTION_FLOOR),
    };
    let g = ATTENTION_GAIN;
    let layers = rule
        .body
        .iter()
        .map(|&c| {
            let c = c as f64;
            // rows: h_s, h_t, e_r, e_rt
            let mut w1 = Tensor::zeros(4, 3);
            for j in 0..3 {
                w1.set(2, j, 1.0);
            }
            LayerParams {
                basis: Tensor::scalar(1.0),
                coeff: Tensor::filled(num_relations, 1, 1.0),
                self_weight: Tensor::scalar(0.0),
                attn_w1: w1,
                attn_b1: Tensor::row(&[1.0 - c, -c, -1.0 - c]),
                attn_w2: Tensor::column(&[2.0 * g, -4.0 * g, 2.0 * g]),
                attn_b2: Tensor::scalar(-g),
            }
        })
        .collect();
    let attn_rel_emb = Tensor::column(&(0..num_relations).map(|r| r as f64).collect::<Vec<_>>());
    let params = GnnParams {
        layers,
        attn_rel_emb,
        rel_emb: Tensor::zeros(num_relations, 1),
        readout: Tensor::scalar(1.0),
    };
    Ok((params, cfg))
}

/// The whole graph as a subgraph targeting `(u, v)`, with feature 1 on `u`
/// and 0 elsewhere. No target edge is added.
pub fn indicator_subgraph(g: &KnowledgeGraph, u: usize, v: usize, r_t: usize) -> Result<LabeledSubgraph> {
    g.check_entity(u)?;
    g.check_entity(v)?;
    g.check_relation(r_t)?;
    if u == v {
        return Err(Error::SameTargets(u));
    }
    let n = g.num_entities();
    let edges = g
        .triples()
        .iter()
        .map(|t| LocalEdge {
            src: t.head,
            rel: t.rel,
            dst: t.tail,
        })
        .collect();
    let sub = Subgraph::from_parts((0..n).collect(), edges, u, v, r_t, None, 1)?;
    let mut features = Tensor::zeros(n, 1);
    features.set(u, 0, 1.0);
    LabeledSubgraph::with_features(sub, features)
}

/// Scores `(u, v)` under the constructed parameters for `rule`.
pub fn rule_score(g: &KnowledgeGraph, rule: &PathRule, u: usize, v: usize, max_layers: usize) -> Result<f64> {
    let (params, cfg) = construct_rule_params(rule, g.num_relations(), max_layers)?;
    model::score(&indicator_subgraph(g, u, v, rule.head)?, &params, &cfg)
}

/// Final-layer states of every node when activation starts at `u`.
fn all_scores(g: &KnowledgeGraph, params: &GnnParams, cfg: &GnnConfig, head: usize, u: usize) -> Result<Vec<f64>> {
    let v = if u == 0 { 1 } else { 0 };
    let sub = indicator_subgraph(g, u, v, head)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = model::forward(&mut tape, &bound, &sub, cfg, None)?;
    let last = tape.value(*out.layers.last().expect("at least one layer"));
    Ok(last.data().to_vec())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyConfig {
    pub trials: usize,
    pub max_rule_len: usize,
    pub max_nodes: usize,
    pub max_relations: usize,
    /// Largest rule set used for the counting check.
    pub max_rules: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            trials: 1000,
            max_rule_len: 3,
            max_nodes: 12,
            max_relations: 4,
            max_rules: 3,
            seed: 0,
        }
    }
}

/// A pair on which the score and the oracle disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct Counterexample {
    pub trial: usize,
    pub triples: Vec<Triple>,
    pub rule: PathRule,
    pub u: usize,
    pub v: usize,
    pub score: f64,
    pub satisfied: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerifyReport {
    pub trials: usize,
    /// Ordered pairs checked for the single-rule property.
    pub checks: usize,
    pub agreements: usize,
    /// Pairs where the rule held.
    pub satisfied: usize,
    pub disagreements: Vec<Counterexample>,
    /// Pairs checked for the rule-set counting property.
    pub count_checks: usize,
    /// Largest relative gap between summed scores and summed walk counts.
    pub count_max_rel_error: f64,
    /// Pairs where the number of non-zero per-rule scores differed from the
    /// number of satisfied rules.
    pub count_mismatches: usize,
}

impl VerifyReport {
    pub fn agreement_rate(&self) -> f64 {
        if self.checks == 0 {
            1.0
        } else {
            self.agreements as f64 / self.checks as f64
        }
    }
}

fn random_graph(rng: &mut Rng, cfg: &VerifyConfig) -> KnowledgeGraph {
    let n = rng.gen_range(2..=cfg.max_nodes.max(2));
    let r = rng.gen_range(1..=cfg.max_relations.max(1));
    let m = rng.gen_range(0..=3 * n);
    let triples: Vec<Triple> = (0..m)
        .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..r), rng.gen_range(0..n)))
        .collect();
    let entities = Vocab::from_names((0..n).map(|i| format!("e{i}")));
    let relations = Vocab::from_names((0..r).map(|i| format!("r{i}")));
    KnowledgeGraph::from_triples(entities, relations, triples)
        .expect("ids drawn in range")
        .0
}

fn random_rule(rng: &mut Rng, head: usize, num_rel: usize, max_len: usize) -> PathRule {
    let len = rng.gen_range(1..=max_len);
    PathRule {
        head,
        body: (0..len).map(|_| rng.gen_range(0..num_rel)).collect(),
    }
}

/// Random graphs and rules: checks `score != 0` against the path oracle on
/// every ordered pair, then checks summed scores of a random shared-head
/// rule set against summed walk counts and satisfied-rule counts.
pub fn verify_theorem1(cfg: &VerifyConfig) -> Result<VerifyReport> {
    if cfg.max_rule_len == 0 || cfg.max_nodes < 2 {
        return Err(Error::InvalidArgument(
            "need max_rule_len >= 1 and max_nodes >= 2".into(),
        ));
    }
    let mut report = VerifyReport {
        trials: cfg.trials,
        ..Default::default()
    };
    for trial in 0..cfg.trials {
        let mut rng = indexed_substream(cfg.seed, "verify", trial as u64);
        let g = random_graph(&mut rng, cfg);
        let n = g.num_entities();
        let nr = g.num_relations();
        let head = rng.gen_range(0..nr);
        let rule = random_rule(&mut rng, head, nr, cfg.max_rule_len);
        let (params, gcfg) = construct_rule_params(&rule, nr, cfg.max_rule_len)?;

        for u in 0..n {
            let scores = all_scores(&g, &params, &gcfg, head, u)?;
            for v in (0..n).filter(|&v| v != u) {
                let satisfied = rule_satisfied(&g, &rule, u, v)?.is_some();
                let score = scores[v];
                report.checks += 1;
                report.satisfied += satisfied as usize;
                if (score != 0.0) == satisfied {
                    report.agreements += 1;
                } else {
                    report.disagreements.push(Counterexample {
                        trial,
                        triples: g.triples().to_vec(),
                        rule: rule.clone(),
                        u,
                        v,
                        score,
                        satisfied,
                    });
                }
            }
        }

        let set_size = rng.gen_range(1..=cfg.max_rules.max(1));
        let rules: Vec<PathRule> = (0..set_size)
            .map(|_| random_rule(&mut rng, head, nr, cfg.max_rule_len))
            .collect();
        let built = rules
            .iter()
            .map(|r| construct_rule_params(r, nr, cfg.max_rule_len))
            .collect::<Result<Vec<_>>>()?;
        for u in 0..n {
            let per_rule = built
                .iter()
                .map(|(p, c)| all_scores(&g, p, c, head, u))
                .collect::<Result<Vec<_>>>()?;
            for v in (0..n).filter(|&v| v != u) {
                let summed: f64 = per_rule.iter().map(|s| s[v]).sum();
                let mut walks = 0.0;
                for r in &rules {
                    walks += count_walks(&g, r, u, v)?;
                }
                let rel = if walks == 0.0 {
                    summed.abs()
                } else {
                    (summed - walks).abs() / walks
                };
                report.count_max_rel_error = report.count_max_rel_error.max(rel);
                let indicators = per_rule.iter().filter(|s| s[v] != 0.0).count();
                if indicators != count_satisfied(&g, &rules, u, v)? {
                    report.count_mismatches += 1;
                }
                report.count_checks += 1;
            }
        }
    }
    Ok(report)
}

/// Plain-text summary of a verification run.
pub fn report_text(r: &VerifyReport) -> String {
    let mut s = format!(
        "trials={}\nchecks={}\nagreements={}\nsatisfied={}\nagreement_rate={}\ndisagreements={}\ncount_checks={}\ncount_max_rel_error={}\ncount_mismatches={}\n",
        r.trials,
        r.checks,
        r.agreements,
        r.satisfied,
        r.agreement_rate(),
        r.disagreements.len(),
        r.count_checks,
        r.count_max_rel_error,
        r.count_mismatches
    );
    for c in &r.disagreements {
        s.push_str(&format!(
            "counterexample trial={} rule={}<-{:?} u={} v={} score={} satisfied={} triples=",
            c.trial, c.rule.head, c.rule.body, c.u, c.v, c.score, c.satisfied
        ));
        for t in &c.triples {
            s.push_str(&format!("({},{},{})", t.head, t.rel, t.tail));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(n: usize, r: usize, edges: &[(usize, usize, usize)]) -> KnowledgeGraph {
        KnowledgeGraph::from_triples(
            Vocab::from_names((0..n).map(|i| format!("e{i}"))),
            Vocab::from_names((0..r).map(|i| format!("r{i}"))),
            edges.iter().map(|&(h, r, t)| Triple::new(h, r, t)),
        )
        .unwrap()
        .0
    }

    // u=0 z=1 v=2; relations: 0 = head, 1 = r1, 2 = r2
    fn chain() -> KnowledgeGraph {
        graph(3, 3, &[(0, 1, 1), (1, 2, 2)])
    }

    #[test]
    fn chain_satisfaction_and_witness() {
        let g = chain();
        let fwd = PathRule::new(0, vec![1, 2]).unwrap();
        let rev = PathRule::new(0, vec![2, 1]).unwrap();
        assert_eq!(rule_satisfied(&g, &fwd, 0, 2).unwrap(), Some(vec![1]));
        assert_eq!(rule_satisfied(&g, &rev, 0, 2).unwrap(), None);
        assert_eq!(count_satisfied(&g, &[fwd.clone(), rev.clone()], 0, 2).unwrap(), 1);
        assert_eq!(count_satisfied(&g, &[], 0, 2).unwrap(), 0);
        let other_head = PathRule::new(1, vec![2]).unwrap();
        assert_eq!(count_satisfied(&g, &[fwd, other_head], 0, 2), Err(Error::MixedHeads));
    }

    #[test]
    fn constructed_scores_follow_rule() {
        let g = chain();
        let fwd = PathRule::new(0, vec![1, 2]).unwrap();
        assert_eq!(rule_score(&g, &fwd, 0, 2, 3).unwrap(), 1.0);
        let rev = PathRule::new(0, vec![2, 1]).unwrap();
        assert_eq!(rule_score(&g, &rev, 0, 2, 3).unwrap(), 0.0);
        let cut = graph(3, 3, &[(0, 1, 1)]);
        assert_eq!(rule_score(&cut, &fwd, 0, 2, 3).unwrap(), 0.0);
        let long = PathRule::new(0, vec![1, 1, 1, 1]).unwrap();
        assert!(matches!(
            rule_score(&g, &long, 0, 2, 3),
            Err(Error::RuleTooLong { len: 4, max: 3 })
        ));
    }

    #[test]
    fn scores_count_parallel_paths() {
        // beta disjoint two-step paths from 0 to 1 through 2, 3, 4
        for beta in 1..=3usize {
            let mut edges = Vec::new();
            for k in 0..beta {
                edges.push((0, 1, 2 + k));
                edges.push((2 + k, 2, 1));
            }
            let g = graph(5, 3, &edges);
            let rule = PathRule::new(0, vec![1, 2]).unwrap();
            assert_eq!(rule_score(&g, &rule, 0, 1, 3).unwrap(), beta as f64);
            assert_eq!(count_walks(&g, &rule, 0, 1).unwrap(), beta as f64);
        }
    }

    #[test]
    fn walks_may_revisit_nodes() {
        // 0 -> 1 -> 0 -> 1 under r1 r1 r1 with edges both ways
        let g = graph(2, 2, &[(0, 1, 1), (1, 1, 0)]);
        let rule = PathRule::new(0, vec![1, 1, 1]).unwrap();
        assert_eq!(rule_satisfied(&g, &rule, 0, 1).unwrap(), Some(vec![1, 0]));
        assert_eq!(rule_score(&g, &rule, 0, 1, 3).unwrap(), 1.0);
    }

    #[test]
    fn empty_graph_agrees() {
        let g = graph(2, 1, &[]);
        let rule = PathRule::new(0, vec![0]).unwrap();
        assert_eq!(rule_score(&g, &rule, 0, 1, 3).unwrap(), 0.0);
        assert_eq!(rule_satisfied(&g, &rule, 0, 1).unwrap(), None);
    }

    #[test]
    fn params_ignore_graph_content() {
        let rule = PathRule::new(0, vec![2, 1]).unwrap();
        let a = construct_rule_params(&rule, 4, 3).unwrap();
        let b = construct_rule_params(&rule, 4, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_verification_run() {
        let report = verify_theorem1(&VerifyConfig {
            trials: 40,
            ..Default::default()
        })
        .unwrap();
        assert!(report.disagreements.is_empty(), "{}", report_text(&report));
        assert!(report.satisfied > 0);
        assert_eq!(report.count_mismatches, 0);
        assert!(report.count_max_rel_error <= 1e-9);
    }
}
