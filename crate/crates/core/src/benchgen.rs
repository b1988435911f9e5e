//! Fully inductive benchmark generation and synthetic rule-governed graphs.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::{IteratorRandom, SliceRandom};
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple, Vocab};
use crate::rng::{substream, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub num_roots: usize,
    pub hops: usize,
    /// Cap on new neighbors taken from each frontier node at each hop.
    pub max_new_per_hop: usize,
    /// Root batches are added until at least this many edges are induced.
    pub target_edges: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_roots == 0 || self.hops == 0 || self.max_new_per_hop == 0 || self.target_edges == 0 {
            return Err(Error::InvalidArgument("sampler counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Entity set grown from uniform roots by capped breadth-first expansion.
fn sample_entities(g: &KnowledgeGraph, cfg: &SamplerConfig, rng: &mut Rng) -> BTreeSet<usize> {
    let mut visited = vec![false; g.num_entities()];
    let mut chosen = BTreeSet::new();
    let mut induced = 0usize;
    let mut pool: Vec<usize> = (0..g.num_entities()).filter(|&e| g.degree(e) > 0).collect();
    while induced < cfg.target_edges {
        pool.retain(|&e| !visited[e]);
        if pool.is_empty() {
            break;
        }
        let roots: Vec<usize> = pool.choose_multiple(rng, cfg.num_roots).copied().collect();
        let mut frontier = Vec::new();
        for r in roots {
            visited[r] = true;
            chosen.insert(r);
            frontier.push(r);
        }
        for _ in 0..cfg.hops {
            let mut next = Vec::new();
            for &x in &frontier {
                let fresh = g
                    .neighbors(x)
                    .iter()
                    .copied()
                    .filter(|&y| !visited[y])
                    .choose_multiple(rng, cfg.max_new_per_hop);
                for y in fresh {
                    visited[y] = true;
                    chosen.insert(y);
                    next.push(y);
                }
            }
            frontier = next;
        }
        induced = g
            .triples()
            .iter()
            .filter(|t| chosen.contains(&t.head) && chosen.contains(&t.tail))
            .count();
    }
    chosen
}

fn induced(g: &KnowledgeGraph, nodes: &BTreeSet<usize>) -> Vec<Triple> {
    g.triples()
        .iter()
        .copied()
        .filter(|t| nodes.contains(&t.head) && nodes.contains(&t.tail))
        .collect()
}

/// Samples a training graph, removes its entities, then samples an
/// inductive test graph from what is left. Test triples whose relation never
/// occurs in the training graph are dropped. Both graphs are re-indexed over
/// their own entities and keep the relation vocabulary of `g`.
pub fn sample_inductive_pair(
    g: &KnowledgeGraph,
    cfg_train: &SamplerConfig,
    cfg_test: &SamplerConfig,
) -> Result<(KnowledgeGraph, KnowledgeGraph)> {
    cfg_train.validate()?;
    cfg_test.validate()?;
    let mut rng = substream(cfg_train.seed, "benchgen-train");
    let train_nodes = sample_entities(g, cfg_train, &mut rng);
    let train_triples = induced(g, &train_nodes);
    if train_triples.is_empty() {
        return Err(Error::Sampling("training sample induced no edges".into()));
    }
    let rest: Vec<Triple> = g
        .triples()
        .iter()
        .copied()
        .filter(|t| !train_nodes.contains(&t.head) && !train_nodes.contains(&t.tail))
        .collect();
    if rest.is_empty() {
        return Err(Error::Sampling(
            "no edges remain after removing training entities; use fewer roots or a smaller edge target for the training graph".into(),
        ));
    }
    let remainder = g.with_triples(rest)?;
    let mut rng = substream(cfg_test.seed, "benchgen-test");
    let test_nodes = sample_entities(&remainder, cfg_test, &mut rng);
    let train_rels: BTreeSet<usize> = train_triples.iter().map(|t| t.rel).collect();
    let test_triples: Vec<Triple> = induced(&remainder, &test_nodes)
        .into_iter()
        .filter(|t| train_rels.contains(&t.rel))
        .collect();
    if test_triples.is_empty() {
        return Err(Error::Sampling("test sample induced no usable edges".into()));
    }
    Ok((g.compact(&train_triples), g.compact(&test_triples)))
}

/// Withdraws `ceil(fraction * |E|)` uniformly chosen edges, skipping any
/// edge whose removal would leave one of its endpoints without edges.
/// Returns fewer test edges only when no further edge can be withdrawn.
pub fn split_test_edges(g: &KnowledgeGraph, fraction: f64, rng: &mut Rng) -> Result<(KnowledgeGraph, Vec<Triple>)> {
    split_test_edges_where(g, fraction, |_| true, rng)
}

/// [`split_test_edges`] restricted to edges satisfying `eligible`; the
/// fraction applies to the eligible edges.
pub fn split_test_edges_where(
    g: &KnowledgeGraph,
    fraction: f64,
    eligible: impl Fn(&Triple) -> bool,
    rng: &mut Rng,
) -> Result<(KnowledgeGraph, Vec<Triple>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} must lie in (0, 1)"
        )));
    }
    let m = g.num_triples();
    let mut order: Vec<usize> = (0..m).filter(|&i| eligible(&g.triples()[i])).collect();
    let want = libm::ceil(fraction * order.len() as f64) as usize;
    if want >= m {
        return Err(Error::InvalidArgument(format!(
            "withdrawing {want} of {m} edges leaves an empty graph"
        )));
    }
    let mut degree = vec![0usize; g.num_entities()];
    for t in g.triples() {
        degree[t.head] += 1;
        degree[t.tail] += 1;
    }
    order.shuffle(rng);
    let mut taken = BTreeSet::new();
    for i in order {
        if taken.len() == want {
            break;
        }
        let t = g.triples()[i];
        let ok = if t.head == t.tail {
            degree[t.head] >= 3
        } else {
            degree[t.head] >= 2 && degree[t.tail] >= 2
        };
        if ok {
            degree[t.head] -= 1;
            degree[t.tail] -= 1;
            taken.insert(i);
        }
    }
    let test: Vec<Triple> = taken.iter().map(|&i| g.triples()[i]).collect();
    Ok((g.without(&test), test))
}

/// `(#relations, #nodes, #links)` counted over what the graph actually uses.
pub fn stats(g: &KnowledgeGraph) -> (usize, usize, usize) {
    (g.relations_used().len(), g.entities_used().len(), g.num_triples())
}

/// A generated benchmark: training graph with validation edges held out,
/// and an inductive graph with test edges held out.
#[derive(Clone, Debug, PartialEq)]
pub struct Benchmark {
    pub train: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub ind_test_graph: KnowledgeGraph,
    pub test: Vec<Triple>,
}

impl Benchmark {
    /// Tab-separated `(#relations, #nodes, #links)` per graph; links
    /// include the held-out edges.
    pub fn stats_text(&self) -> String {
        let (tr, tn, tl) = stats(&self.train);
        let (ir, inn, il) = stats(&self.ind_test_graph);
        format!(
            "graph\trelations\tnodes\tlinks\ntrain\t{tr}\t{tn}\t{}\nind_test\t{ir}\t{inn}\t{}\n",
            tl + self.valid.len(),
            il + self.test.len(),
        )
    }
}

/// Samples a pair and holds out `valid_fraction` of the training edges and
/// `test_fraction` of the inductive edges.
pub fn make_benchmark(
    g: &KnowledgeGraph,
    cfg_train: &SamplerConfig,
    cfg_test: &SamplerConfig,
    valid_fraction: f64,
    test_fraction: f64,
) -> Result<Benchmark> {
    let (train_full, test_full) = sample_inductive_pair(g, cfg_train, cfg_test)?;
    let mut rng = substream(cfg_train.seed, "benchgen-valid");
    let (train, valid) = split_test_edges(&train_full, valid_fraction, &mut rng)?;
    let mut rng = substream(cfg_test.seed, "benchgen-test-edges");
    let (ind_test_graph, test) = split_test_edges(&test_full, test_fraction, &mut rng)?;
    Ok(Benchmark {
        train,
        valid,
        ind_test_graph,
        test,
    })
}

/// Graph governed by `target(X, Y) <- first(X, Z) ^ second(Z, Y)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SyntheticConfig {
    pub entities: usize,
    /// Number of sampled `X -> Z -> Y` body instances.
    pub instances: usize,
    /// Extra edges over distractor relations, placed uniformly at random.
    pub noise_edges: usize,
    pub noise_relations: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            entities: 200,
            instances: 200,
            noise_edges: 0,
            noise_relations: 0,
            seed: 0,
        }
    }
}

pub const SYNTHETIC_TARGET: &str = "target";
pub const SYNTHETIC_FIRST: &str = "first";
pub const SYNTHETIC_SECOND: &str = "second";

/// Samples rule instances and then closes the graph under the rule, so the
/// target relation holds exactly where the body does. Entity names carry
/// `prefix`, which keeps graphs generated with different prefixes disjoint.
pub fn synthetic_rule_graph(cfg: &SyntheticConfig, prefix: &str) -> Result<KnowledgeGraph> {
    if cfg.entities < 3 || cfg.instances == 0 {
        return Err(Error::InvalidArgument(
            "synthetic graphs need at least 3 entities and 1 instance".into(),
        ));
    }
    let mut rng = substream(cfg.seed, "synthetic");
    let n = cfg.entities;
    let (target, first, second) = (0, 1, 2);
    let mut rel_names: Vec<String> = vec![SYNTHETIC_TARGET.into(), SYNTHETIC_FIRST.into(), SYNTHETIC_SECOND.into()];
    rel_names.extend((0..cfg.noise_relations).map(|i| format!("noise{i}")));
    let mut edges = BTreeSet::new();
    for _ in 0..cfg.instances {
        let picks = (0..n).choose_multiple(&mut rng, 3);
        let (x, z, y) = (picks[0], picks[1], picks[2]);
        edges.insert(Triple::new(x, first, z));
        edges.insert(Triple::new(z, second, y));
    }
    let noise = if cfg.noise_relations > 0 { cfg.noise_edges } else { 0 };
    for _ in 0..noise {
        let h = rng.gen_range(0..n);
        let mut t = rng.gen_range(0..n - 1);
        if t >= h {
            t += 1;
        }
        edges.insert(Triple::new(h, 3 + rng.gen_range(0..cfg.noise_relations), t));
    }
    let firsts: Vec<Triple> = edges.iter().copied().filter(|t| t.rel == first).collect();
    let seconds: Vec<Triple> = edges.iter().copied().filter(|t| t.rel == second).collect();
    for a in &firsts {
        for b in seconds.iter().filter(|b| b.head == a.tail) {
            if a.head != b.tail {
                edges.insert(Triple::new(a.head, target, b.tail));
            }
        }
    }
    let entities = Vocab::from_names((0..n).map(|i| format!("{prefix}{i}")));
    let relations = Vocab::from_names(rel_names);
    let g = KnowledgeGraph::from_triples(entities, relations, edges)?.0;
    let used: Vec<Triple> = g.triples().to_vec();
    Ok(g.compact(&used))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(n: usize) -> KnowledgeGraph {
        let entities = Vocab::from_names((0..n).map(|i| format!("e{i}")));
        let relations = Vocab::from_names(["a", "b"]);
        let triples = (0..n).map(|i| Triple::new(i, i % 2, (i + 1) % n));
        KnowledgeGraph::from_triples(entities, relations, triples).unwrap().0
    }

    #[test]
    fn split_counts_and_partition() {
        let g = ring(100);
        let (msg, test) = split_test_edges(&g, 0.1, &mut substream(1, "s")).unwrap();
        assert_eq!(test.len(), 10);
        assert_eq!(msg.num_triples(), 90);
        let used = msg.entities_used();
        for t in &test {
            assert!(!msg.contains(t));
            assert!(used.contains(&t.head) && used.contains(&t.tail));
        }
        assert!(split_test_edges(&g, 1.0, &mut substream(1, "s")).is_err());
    }

    #[test]
    fn pair_is_disjoint_and_contained() {
        let g = synthetic_rule_graph(
            &SyntheticConfig {
                entities: 300,
                instances: 300,
                ..Default::default()
            },
            "x",
        )
        .unwrap();
        let cfg = SamplerConfig {
            num_roots: 5,
            hops: 2,
            max_new_per_hop: 3,
            target_edges: 100,
            seed: 4,
        };
        let (train, test) = sample_inductive_pair(&g, &cfg, &SamplerConfig { seed: 5, ..cfg }).unwrap();
        let names = |g: &KnowledgeGraph| -> BTreeSet<String> {
            g.entities_used()
                .iter()
                .map(|&e| g.entities().name(e).unwrap().into())
                .collect()
        };
        assert!(names(&train).is_disjoint(&names(&test)));
        assert!(test.relations_used().is_subset(&train.relations_used()));
        assert!(train.num_triples() >= 100);
    }

    #[test]
    fn synthetic_rule_is_closed() {
        let g = synthetic_rule_graph(&SyntheticConfig::default(), "s").unwrap();
        let (t, f, s) = (0, 1, 2);
        for a in g.triples().iter().filter(|x| x.rel == f) {
            for b in g.triples().iter().filter(|x| x.rel == s && x.head == a.tail) {
                if a.head != b.tail {
                    assert!(g.contains(&Triple::new(a.head, t, b.tail)));
                }
            }
        }
        for x in g.triples().iter().filter(|x| x.rel == t) {
            let via = g.out_neighbors(x.head, f).unwrap();
            assert!(via.iter().any(|&z| g.contains(&Triple::new(z, s, x.tail))));
        }
    }
}
