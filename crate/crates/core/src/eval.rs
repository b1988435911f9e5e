//! Classification and ranking metrics, inductive evaluation and late fusion.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::graph::{KnowledgeGraph, Triple, Vocab};
use crate::model::{self, GnnConfig, GnnParams};
use crate::rng::{substream, Rng};
use crate::subgraph::{EntityFeatures, SubgraphSpec};
use crate::train::sample_negative;

/// Area under the step precision-recall curve.
///
/// Scores are visited in descending order; all items sharing a score enter
/// the curve together, so a block of tied scores contributes the precision of
/// the whole block.
pub fn auc_pr(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidArgument("auc_pr needs positives and negatives".into()));
    }
    if pos.iter().chain(neg).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("auc_pr scores".into()));
    }
    let mut items: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    items.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total = pos.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < items.len() {
        let s = items[i].0;
        while i < items.len() && items[i].0 == s {
            if items[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(area)
}

/// `1 + #{greater} + floor(#{ties} / 2)`
pub fn mid_rank(score: f64, negatives: &[f64]) -> usize {
    let greater = negatives.iter().filter(|&&s| s > score).count();
    let ties = negatives.iter().filter(|&&s| s == score).count();
    1 + greater + ties / 2
}

pub trait TripleScorer: Sync {
    fn score(&self, t: &Triple) -> Result<f64>;
}

impl<F> TripleScorer for F
where
    F: Fn(&Triple) -> Result<f64> + Sync,
{
    fn score(&self, t: &Triple) -> Result<f64> {
        self(t)
    }
}

/// Scores triples with a trained network on subgraphs of `graph`.
#[derive(Clone, Copy, Debug)]
pub struct GrailScorer<'a> {
    pub graph: &'a KnowledgeGraph,
    pub params: &'a GnnParams,
    pub gnn: &'a GnnConfig,
    pub spec: SubgraphSpec,
    pub aux: Option<&'a EntityFeatures>,
}

impl TripleScorer for GrailScorer<'_> {
    fn score(&self, t: &Triple) -> Result<f64> {
        let sub = self.spec.extract(self.graph, t, self.aux)?;
        model::score(&sub, self.params, self.gnn)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankRecord {
    pub triple: Triple,
    pub score: f64,
    pub rank: usize,
    pub negatives: usize,
}

/// Ranks `t` against `num_neg` random corruptions.
pub fn rank_triplet<S: TripleScorer + ?Sized>(
    scorer: &S,
    t: &Triple,
    g: &KnowledgeGraph,
    num_neg: usize,
    rng: &mut Rng,
) -> Result<RankRecord> {
    let score = scorer.score(t)?;
    let mut neg = Vec::with_capacity(num_neg);
    for _ in 0..num_neg {
        neg.push(scorer.score(&sample_negative(g, t, rng)?)?);
    }
    Ok(RankRecord {
        triple: *t,
        score,
        rank: mid_rank(score, &neg),
        negatives: num_neg,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub num_negatives: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            num_negatives: 50,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub auc_pr: f64,
    pub hits_at_10: f64,
    pub records: Vec<RankRecord>,
    /// The corruption paired with each record for AUC-PR, and its score.
    pub auc_negatives: Vec<(Triple, f64)>,
    pub seed: u64,
    pub num_negatives: usize,
    /// Test edges with `head == tail`, which have no enclosing subgraph.
    pub skipped_self_loops: usize,
}

impl EvalReport {
    pub fn mean_rank(&self) -> f64 {
        let n = self.records.len().max(1) as f64;
        self.records.iter().map(|r| r.rank as f64).sum::<f64>() / n
    }
}

/// AUC-PR against one corruption per test edge plus Hits@10 against
/// `num_negatives` corruptions per test edge. Self-loop test edges are
/// skipped and counted. Negatives are drawn serially
/// from `g` before any scoring, so the report does not depend on `exec`.
pub fn evaluate_scorer<S: TripleScorer, E: Executor>(
    scorer: &S,
    g: &KnowledgeGraph,
    test_edges: &[Triple],
    cfg: &EvalConfig,
    exec: &E,
) -> Result<EvalReport> {
    let all = test_edges.len();
    let kept: Vec<Triple> = test_edges.iter().copied().filter(|t| t.head != t.tail).collect();
    let test_edges = kept.as_slice();
    if test_edges.is_empty() {
        return Err(Error::InvalidArgument("no scorable test edges".into()));
    }
    let mut auc_rng = substream(cfg.seed, "eval-auc-negatives");
    let mut rank_rng = substream(cfg.seed, "eval-rank-negatives");
    let per = 2 + cfg.num_negatives;
    let mut queries = Vec::with_capacity(test_edges.len() * per);
    for t in test_edges {
        queries.push(*t);
        queries.push(sample_negative(g, t, &mut auc_rng)?);
        for _ in 0..cfg.num_negatives {
            queries.push(sample_negative(g, t, &mut rank_rng)?);
        }
    }
    let scores = exec
        .map(&queries, |q| scorer.score(q))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;

    let mut pos = Vec::with_capacity(test_edges.len());
    let mut neg = Vec::with_capacity(test_edges.len());
    let mut auc_negatives = Vec::with_capacity(test_edges.len());
    let mut records = Vec::with_capacity(test_edges.len());
    for ((i, t), chunk) in test_edges.iter().enumerate().zip(scores.chunks(per)) {
        auc_negatives.push((queries[i * per + 1], chunk[1]));
        pos.push(chunk[0]);
        neg.push(chunk[1]);
        records.push(RankRecord {
            triple: *t,
            score: chunk[0],
            rank: mid_rank(chunk[0], &chunk[2..]),
            negatives: cfg.num_negatives,
        });
    }
    let hits = records.iter().filter(|r| r.rank <= 10).count() as f64 / records.len() as f64;
    Ok(EvalReport {
        auc_pr: auc_pr(&pos, &neg)?,
        hits_at_10: hits,
        records,
        auc_negatives,
        seed: cfg.seed,
        num_negatives: cfg.num_negatives,
        skipped_self_loops: all - test_edges.len(),
    })
}

/// Re-expresses `graph` and `test_edges` over the model's relation ids and
/// removes the test edges from the graph used for message passing.
pub fn prepare_inductive(
    relations: &Vocab,
    graph: &KnowledgeGraph,
    test_edges: &[Triple],
) -> Result<(KnowledgeGraph, Vec<Triple>)> {
    let combined = graph.with_triples(graph.triples().iter().chain(test_edges).copied())?;
    let aligned = combined.align_relations(relations)?;
    let map = |t: &Triple| -> Triple {
        let name = graph.relations().name(t.rel).expect("validated by with_triples");
        Triple::new(t.head, relations.id(name).expect("checked by align_relations"), t.tail)
    };
    let test: Vec<Triple> = test_edges.iter().map(map).collect();
    Ok((aligned.without(&test), test))
}

/// Scores every test edge of an inductive graph with a trained network.
#[allow(clippy::too_many_arguments)]
pub fn evaluate<E: Executor>(
    params: &GnnParams,
    gnn: &GnnConfig,
    spec: SubgraphSpec,
    relations: &Vocab,
    graph: &KnowledgeGraph,
    test_edges: &[Triple],
    aux: Option<&EntityFeatures>,
    cfg: &EvalConfig,
    exec: &E,
) -> Result<EvalReport> {
    let (message_graph, test) = prepare_inductive(relations, graph, test_edges)?;
    let scorer = GrailScorer {
        graph: &message_graph,
        params,
        gnn,
        spec,
        aux,
    };
    evaluate_scorer(&scorer, &message_graph, &test, cfg, exec)
}

/// `(p12 - max(p1, p2)) / max(p1, p2)`
pub fn ensemble_gain(p1: f64, p2: f64, p12: f64) -> Result<f64> {
    if !(p1 > 0.0 && p2 > 0.0 && p12 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ensemble_gain needs positive inputs, got {p1}, {p2}, {p12}"
        )));
    }
    let best = p1.max(p2);
    Ok((p12 - best) / best)
}

/// Joins per-method `(key, score)` columns on their keys.
///
/// Every column must list the same keys in the same order.
pub fn align_columns(columns: &[Vec<(String, f64)>]) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let Some(first) = columns.first() else {
        return Err(Error::InvalidArgument("no score columns".into()));
    };
    let keys: Vec<String> = first.iter().map(|(k, _)| k.clone()).collect();
    let mut rows = Vec::with_capacity(keys.len());
    for (i, key) in keys.iter().enumerate() {
        let mut row = Vec::with_capacity(columns.len());
        for (c, col) in columns.iter().enumerate() {
            match col.get(i) {
                Some((k, s)) if k == key => row.push(*s),
                Some((k, _)) => {
                    return Err(Error::Misaligned(format!(
                        "row {} of column {c}: expected {key}, found {k}",
                        i + 1
                    )))
                }
                None => {
                    return Err(Error::Misaligned(format!(
                        "column {c} ends before row {} ({key})",
                        i + 1
                    )))
                }
            }
        }
        rows.push(row);
    }
    if let Some((c, col)) = columns.iter().enumerate().find(|(_, col)| col.len() > keys.len()) {
        return Err(Error::Misaligned(format!(
            "column {c} has extra row {} ({})",
            keys.len() + 1,
            col[keys.len()].0
        )));
    }
    Ok((keys, rows))
}

/// Logistic-regression combination of per-method scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    /// Per-method weights on standardized scores.
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Mean log-loss on the validation rows, one entry per iteration.
    pub loss_log: Vec<f64>,
}

impl Fusion {
    pub fn apply(&self, row: &[f64]) -> f64 {
        let z: f64 = row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .zip(&self.weights)
            .map(|(((x, m), s), w)| w * (x - m) / s)
            .sum();
        z + self.bias
    }
}

fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Fits the fusion weights on labelled validation rows by full-batch
/// gradient descent. The step size is `1 / L` for the log-loss smoothness
/// bound `L = mean(|x|^2) / 4`, so the loss never increases.
pub fn fit_fusion(valid: &[Vec<f64>], labels: &[bool], iterations: usize) -> Result<Fusion> {
    if valid.is_empty() || valid.len() != labels.len() {
        return Err(Error::InvalidArgument(
            "fusion needs one label per validation row".into(),
        ));
    }
    let m = valid[0].len();
    if m < 2 || valid.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidArgument(
            "fusion needs at least two aligned score columns".into(),
        ));
    }
    if valid.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("fusion inputs".into()));
    }
    let n = valid.len() as f64;
    let mean: Vec<f64> = (0..m).map(|j| valid.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..m)
        .map(|j| {
            let var = valid.iter().map(|r| (r[j] - mean[j]) * (r[j] - mean[j])).sum::<f64>() / n;
            let s = libm::sqrt(var);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let z: Vec<Vec<f64>> = valid
        .iter()
        .map(|r| (0..m).map(|j| (r[j] - mean[j]) / std[j]).collect())
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let sq = z
        .iter()
        .map(|r| 1.0 + r.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        / n;
    let lr = 4.0 / sq;

    let mut w = alloc::vec![0.0; m];
    let mut b = 0.0;
    let loss = |w: &[f64], b: f64| -> f64 {
        z.iter()
            .zip(&y)
            .map(|(r, &t)| {
                let s: f64 = r.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + b;
                log1p_exp(s) - t * s
            })
            .sum::<f64>()
            / n
    };
    let mut loss_log = alloc::vec![loss(&w, b)];
    for _ in 0..iterations {
        let mut gw = alloc::vec![0.0; m];
        let mut gb = 0.0;
        for (r, &t) in z.iter().zip(&y) {
            let s: f64 = r.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() + b;
            let err = crate::autodiff::sigmoid(s) - t;
            for (g, x) in gw.iter_mut().zip(r) {
                *g += err * x;
            }
            gb += err;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= lr * g / n;
        }
        b -= lr * gb / n;
        loss_log.push(loss(&w, b));
    }
    if !w.iter().all(|x| x.is_finite()) || !b.is_finite() {
        return Err(Error::NonFinite("fusion weights".into()));
    }
    Ok(Fusion {
        weights: w,
        bias: b,
        mean,
        std,
        loss_log,
    })
}

/// Fits on validation rows and returns the fused test scores.
pub fn late_fusion(valid: &[Vec<f64>], labels: &[bool], test: &[Vec<f64>]) -> Result<(Vec<f64>, Fusion)> {
    let fusion = fit_fusion(valid, labels, 2000)?;
    if test.iter().any(|r| r.len() != fusion.weights.len()) {
        return Err(Error::InvalidArgument(
            "test rows have the wrong number of columns".into(),
        ));
    }
    Ok((test.iter().map(|r| fusion.apply(r)).collect(), fusion))
}

/// Counts of ranks, for goodness-of-fit checks: `hist[r - 1]` is the number
/// of records with rank `r`.
pub fn rank_histogram(records: &[RankRecord], num_negatives: usize) -> Vec<usize> {
    let mut hist = alloc::vec![0; num_negatives + 1];
    for r in records {
        if let Some(slot) = hist.get_mut(r.rank - 1) {
            *slot += 1;
        }
    }
    hist
}

/// Flat `key -> value` summary of a report.
pub fn report_pairs(report: &EvalReport) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    out.insert("auc_pr".into(), format!("{}", report.auc_pr));
    out.insert("hits_at_10".into(), format!("{}", report.hits_at_10));
    out.insert("mean_rank".into(), format!("{}", report.mean_rank()));
    out.insert("num_test".into(), format!("{}", report.records.len()));
    out.insert("num_negatives".into(), format!("{}", report.num_negatives));
    out.insert("seed".into(), format!("{}", report.seed));
    out.insert("skipped_self_loops".into(), format!("{}", report.skipped_self_loops));
    out
}
