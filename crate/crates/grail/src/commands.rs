//! The five pipeline commands. Each takes a plain argument struct so tests
//! can call them without going through the argument parser.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use grail_core::benchgen::{make_benchmark, SamplerConfig};
use grail_core::eval::{
    align_columns, auc_pr, ensemble_gain, evaluate_scorer, late_fusion, prepare_inductive, report_pairs, EvalReport,
    GrailScorer,
};
use grail_core::graph::{KnowledgeGraph, Triple};
use grail_core::logic::{report_text, verify_theorem1, VerifyConfig};
use grail_core::subgraph::EntityFeatures;
use grail_core::train::{train, Checkpoint, TrainData};

use crate::error::{CliError, CliResult};
use crate::io;
use crate::parallel::Rayon;
use crate::runconfig::RunConfig;

fn load_config(path: Option<&Path>, seed: Option<u64>) -> CliResult<RunConfig> {
    let cfg = match path {
        Some(p) => {
            RunConfig::parse(&io::read_text(p)?).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn pool(threads: usize) -> CliResult<Rayon> {
    if threads == 0 {
        return Err(CliError::config("--threads must be at least 1"));
    }
    Rayon::new(threads).map_err(|e| CliError::runtime(format!("thread pool: {e}")))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[derive(Clone, Debug)]
pub struct SplitArgs {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Names of the files written by [`cmd_split`].
pub const SPLIT_FILES: [&str; 5] = ["train.txt", "valid.txt", "test_graph.txt", "test.txt", "stats.tsv"];

/// Checks that the two graphs share no entity name and that every relation
/// of the test side occurs in the training side.
pub fn check_inductive(train: &KnowledgeGraph, test: &KnowledgeGraph) -> CliResult<()> {
    let names = |g: &KnowledgeGraph| -> BTreeSet<String> {
        g.entities_used()
            .into_iter()
            .filter_map(|e| g.entities().name(e).map(str::to_string))
            .collect()
    };
    let shared: Vec<String> = names(train).intersection(&names(test)).cloned().collect();
    if !shared.is_empty() {
        return Err(CliError::runtime(format!(
            "train and test graphs share {} entities, e.g. {}",
            shared.len(),
            shared[0]
        )));
    }
    let rels = |g: &KnowledgeGraph| -> BTreeSet<String> {
        g.relations_used()
            .into_iter()
            .filter_map(|r| g.relations().name(r).map(str::to_string))
            .collect()
    };
    let train_rels = rels(train);
    if let Some(r) = rels(test).iter().find(|r| !train_rels.contains(*r)) {
        return Err(CliError::runtime(format!(
            "test relation {r} never occurs in the train graph"
        )));
    }
    Ok(())
}

pub fn cmd_split(args: &SplitArgs) -> CliResult<()> {
    let cfg = load_config(args.config.as_deref(), args.seed)?;
    let g = io::read_graph(&args.input)?;
    let with_seed = |s: SamplerConfig| SamplerConfig {
        seed: cfg.split_seed,
        ..s
    };
    let bench = make_benchmark(
        &g,
        &with_seed(cfg.split_train),
        &with_seed(cfg.split_test),
        cfg.valid_fraction,
        cfg.test_fraction,
    )?;
    let full_train = bench
        .train
        .with_triples(bench.train.triples().iter().chain(&bench.valid).copied())?;
    let full_test = bench
        .ind_test_graph
        .with_triples(bench.ind_test_graph.triples().iter().chain(&bench.test).copied())?;
    check_inductive(&full_train, &full_test)?;

    let dir = &args.out_dir;
    io::write_graph(&dir.join(SPLIT_FILES[0]), &bench.train)?;
    io::write_triples(&dir.join(SPLIT_FILES[1]), &bench.train, &bench.valid)?;
    io::write_graph(&dir.join(SPLIT_FILES[2]), &bench.ind_test_graph)?;
    io::write_triples(&dir.join(SPLIT_FILES[3]), &bench.ind_test_graph, &bench.test)?;
    io::write_text(&dir.join(SPLIT_FILES[4]), &bench.stats_text())?;
    eprint!("{}", bench.stats_text());
    eprintln!(
        "split: {} valid and {} test edges written to {}",
        bench.valid.len(),
        bench.test.len(),
        dir.display()
    );
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainArgs {
    pub train: PathBuf,
    pub valid: Option<PathBuf>,
    pub config: Option<PathBuf>,
    /// Best checkpoint path; `<out>.last` and `<out>.loss.csv` are written
    /// beside it.
    pub out: PathBuf,
    pub from_checkpoint: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
}

/// Reads `path` as triples over `graph` and rebuilds the graph over any
/// entities that only the file mentions.
fn read_held_out(path: &Path, graph: KnowledgeGraph) -> CliResult<(KnowledgeGraph, Vec<Triple>)> {
    let (triples, entities, relations) = io::read_triples_over(path, &graph)?;
    if relations.len() != graph.num_relations() {
        return Err(CliError::runtime(format!(
            "{}: relation {} does not occur in the graph",
            path.display(),
            relations.names()[graph.num_relations()]
        )));
    }
    if entities.len() == graph.num_entities() {
        return Ok((graph, triples));
    }
    let (g, _) = KnowledgeGraph::from_triples(entities, relations, graph.triples().to_vec())?;
    Ok((g, triples))
}

fn loss_csv(ck: &Checkpoint) -> String {
    let mut out = String::from("epoch,loss,val_auc_pr\n");
    if let Some(st) = &ck.resume {
        for (i, loss) in st.losses.iter().enumerate() {
            let epoch = i + 1;
            let valid = st
                .valid_log
                .iter()
                .find(|(e, _)| *e == epoch)
                .map(|(_, m)| m.to_string())
                .unwrap_or_default();
            let _ = writeln!(out, "{epoch},{loss},{valid}");
        }
    }
    out
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<Checkpoint> {
    let run = load_config(args.config.as_deref(), args.seed)?;
    let graph = io::read_graph(&args.train)?;
    let (graph, valid) = match &args.valid {
        Some(p) => read_held_out(p, graph)?,
        None => (graph, Vec::new()),
    };
    let aux = match &args.features {
        Some(p) => Some(io::read_features(p, graph.entities())?),
        None => None,
    };
    let resume = match &args.from_checkpoint {
        Some(p) => Some(io::load_checkpoint(p)?),
        None => None,
    };
    let (gnn, mut tcfg) = match &resume {
        Some(ck) => (ck.gnn.clone(), ck.train.clone()),
        None => {
            let mut gnn = run.gnn.clone();
            gnn.input_dim = run.train.subgraph_spec().feature_dim(aux.as_ref());
            let r = graph.num_relations();
            if gnn.num_bases > r {
                eprintln!("train: gnn.num_bases {} clamped to the {r} relations", gnn.num_bases);
                gnn.num_bases = r.max(1);
            }
            (gnn, run.train.clone())
        }
    };
    if resume.is_some() {
        tcfg.epochs = run.train.epochs;
        eprintln!(
            "train: resuming to epoch {} with the checkpoint's settings",
            tcfg.epochs
        );
    }
    gnn.validate(graph.num_relations())
        .map_err(|e| CliError::config(e.to_string()))?;
    tcfg.validate().map_err(|e| CliError::config(e.to_string()))?;

    let exec = pool(args.threads)?;
    eprintln!(
        "train: {} triples, {} relations, {} valid, {} threads",
        graph.num_triples(),
        graph.num_relations(),
        valid.len(),
        exec.threads()
    );
    let data = TrainData {
        graph: &graph,
        valid: &valid,
        aux: aux.as_ref(),
    };
    let mut log = |e: &grail_core::train::EpochLog| match e.valid_auc_pr {
        Some(m) => eprintln!("epoch {:>3}  loss {:.6}  valid auc-pr {:.4}", e.epoch, e.loss, m),
        None => eprintln!("epoch {:>3}  loss {:.6}", e.epoch, e.loss),
    };
    let outcome = train(&data, &tcfg, &gnn, &exec, resume.as_ref(), &mut log)?;
    io::save_checkpoint(&args.out, &outcome.best)?;
    io::save_checkpoint(&sibling(&args.out, ".last"), &outcome.last)?;
    io::write_text(&sibling(&args.out, ".loss.csv"), &loss_csv(&outcome.last))?;
    eprintln!(
        "train: best epoch {} written to {}",
        outcome.best.epoch,
        args.out.display()
    );
    Ok(outcome.best)
}

#[derive(Clone, Debug)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Graph whose edges are used for message passing.
    pub graph: PathBuf,
    /// Held-out edges to score, named over `graph`.
    pub test: PathBuf,
    pub config: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub features: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
}

fn write_eval_files(dir: &Path, g: &KnowledgeGraph, report: &EvalReport) -> CliResult<()> {
    io::write_pairs(&dir.join("report.txt"), &report_pairs(report))?;
    let mut ranks = String::from("head,relation,tail,score,rank\n");
    for r in &report.records {
        let key = io::triple_key(g, &r.triple).replace('\t', ",");
        let _ = writeln!(ranks, "{key},{},{}", r.score, r.rank);
    }
    io::write_text(&dir.join("ranks.csv"), &ranks)?;
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (r, (neg, s)) in report.records.iter().zip(&report.auc_negatives) {
        scores.push((io::triple_key(g, &r.triple), r.score));
        labels.push((io::triple_key(g, &r.triple), 1u8));
        scores.push((io::triple_key(g, neg), *s));
        labels.push((io::triple_key(g, neg), 0u8));
    }
    io::write_keyed(&dir.join("scores.tsv"), &scores)?;
    io::write_keyed(&dir.join("labels.tsv"), &labels)
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<EvalReport> {
    let run = load_config(args.config.as_deref(), args.seed)?;
    let ck = io::load_checkpoint(&args.checkpoint)?;
    let graph = io::read_graph(&args.graph)?;
    let (graph, test) = read_held_out(&args.test, graph)?;
    let aux: Option<EntityFeatures> = match &args.features {
        Some(p) => Some(io::read_features(p, graph.entities())?),
        None => None,
    };
    let spec = ck.train.subgraph_spec();
    if spec.feature_dim(aux.as_ref()) != ck.gnn.input_dim {
        return Err(CliError::config(format!(
            "checkpoint expects {} input features, this run provides {}",
            ck.gnn.input_dim,
            spec.feature_dim(aux.as_ref())
        )));
    }
    let exec = pool(args.threads)?;
    let (message_graph, test) = prepare_inductive(&ck.relations, &graph, &test)?;
    let scorer = GrailScorer {
        graph: &message_graph,
        params: &ck.params,
        gnn: &ck.gnn,
        spec,
        aux: aux.as_ref(),
    };
    let report = evaluate_scorer(&scorer, &message_graph, &test, &run.eval, &exec)?;
    write_eval_files(&args.out_dir, &message_graph, &report)?;
    eprintln!(
        "eval: {} test edges, auc-pr {:.4}, hits@10 {:.4}, {} self-loops skipped",
        report.records.len(),
        report.auc_pr,
        report.hits_at_10,
        report.skipped_self_loops
    );
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct VerifyArgs {
    pub trials: usize,
    pub max_rule_len: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Fails with a runtime error when any pair disagrees with the oracle.
pub fn cmd_verify(args: &VerifyArgs) -> CliResult<grail_core::logic::VerifyReport> {
    let cfg = VerifyConfig {
        trials: args.trials,
        max_rule_len: args.max_rule_len,
        seed: args.seed,
        ..VerifyConfig::default()
    };
    if cfg.max_rule_len == 0 {
        return Err(CliError::config("--max-rule-len must be at least 1"));
    }
    let report = verify_theorem1(&cfg)?;
    let text = report_text(&report);
    if let Some(p) = &args.out {
        io::write_text(p, &text)?;
    }
    eprint!("{text}");
    if !report.disagreements.is_empty() || report.count_mismatches > 0 {
        return Err(CliError::runtime(format!(
            "{} disagreements and {} count mismatches",
            report.disagreements.len(),
            report.count_mismatches
        )));
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct EnsembleArgs {
    /// Test scores, one file per model.
    pub scores: Vec<PathBuf>,
    /// Validation scores in the same model order.
    pub valid_scores: Vec<PathBuf>,
    pub valid_labels: PathBuf,
    pub test_labels: Option<PathBuf>,
    pub out_dir: PathBuf,
}

fn model_name(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| p.display().to_string())
}

fn labelled(keys: &[String], labels: &[(String, bool)], what: &str) -> CliResult<Vec<bool>> {
    let (_, rows) = align_columns(&[
        keys.iter().map(|k| (k.clone(), 0.0)).collect(),
        labels.iter().map(|(k, l)| (k.clone(), *l as u8 as f64)).collect(),
    ])
    .map_err(|e| CliError::runtime(format!("{what}: {e}")))?;
    Ok(rows.iter().map(|r| r[1] == 1.0).collect())
}

fn split_by_label(scores: impl Iterator<Item = f64>, labels: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (s, &l) in scores.zip(labels) {
        if l {
            pos.push(s)
        } else {
            neg.push(s)
        }
    }
    (pos, neg)
}

/// Per-model and fused AUC-PR on the test labels, with the relative gain
/// of the fused scores over the best single model.
#[derive(Clone, Debug, PartialEq)]
pub struct GainTable {
    pub models: Vec<(String, f64)>,
    pub fused: f64,
    pub gain: f64,
}

impl GainTable {
    pub fn to_text(&self) -> String {
        let mut out = String::from("model\tauc_pr\n");
        for (m, a) in &self.models {
            let _ = writeln!(out, "{m}\t{a}");
        }
        let _ = writeln!(out, "fused\t{}\ngain\t{}", self.fused, self.gain);
        out
    }
}

pub fn cmd_ensemble(args: &EnsembleArgs) -> CliResult<Option<GainTable>> {
    if args.scores.is_empty() || args.scores.len() != args.valid_scores.len() {
        return Err(CliError::config(
            "give the same number (at least one) of --scores and --valid-scores files",
        ));
    }
    let read_all = |paths: &[PathBuf]| -> CliResult<Vec<Vec<(String, f64)>>> {
        paths.iter().map(|p| io::read_scores(p)).collect()
    };
    let (valid_keys, valid_rows) = align_columns(&read_all(&args.valid_scores)?)
        .map_err(|e| CliError::runtime(format!("validation scores: {e}")))?;
    let test_cols = read_all(&args.scores)?;
    let (test_keys, test_rows) =
        align_columns(&test_cols).map_err(|e| CliError::runtime(format!("test scores: {e}")))?;
    let valid_labels = labelled(&valid_keys, &io::read_labels(&args.valid_labels)?, "validation labels")?;
    let (fused, fusion) = late_fusion(&valid_rows, &valid_labels, &test_rows)?;

    let fused_rows: Vec<(String, f64)> = test_keys.iter().cloned().zip(fused.iter().copied()).collect();
    io::write_keyed(&args.out_dir.join("fused.tsv"), &fused_rows)?;
    let mut weights = String::from("model\tweight\tmean\tstd\n");
    for (i, p) in args.scores.iter().enumerate() {
        let _ = writeln!(
            weights,
            "{}\t{}\t{}\t{}",
            model_name(p),
            fusion.weights[i],
            fusion.mean[i],
            fusion.std[i]
        );
    }
    let _ = writeln!(weights, "bias\t{}\t\t", fusion.bias);
    io::write_text(&args.out_dir.join("weights.tsv"), &weights)?;

    let Some(test_labels) = &args.test_labels else {
        eprintln!("ensemble: no --test-labels, gain table skipped");
        return Ok(None);
    };
    let labels = labelled(&test_keys, &io::read_labels(test_labels)?, "test labels")?;
    let mut models = Vec::new();
    for (i, p) in args.scores.iter().enumerate() {
        let (pos, neg) = split_by_label(test_rows.iter().map(|r| r[i]), &labels);
        models.push((model_name(p), auc_pr(&pos, &neg)?));
    }
    let (pos, neg) = split_by_label(fused.iter().copied(), &labels);
    let fused_auc = auc_pr(&pos, &neg)?;
    let best = models.iter().map(|(_, a)| *a).fold(f64::NEG_INFINITY, f64::max);
    let table = GainTable {
        models,
        fused: fused_auc,
        gain: ensemble_gain(best, best, fused_auc)?,
    };
    io::write_text(&args.out_dir.join("gains.tsv"), &table.to_text())?;
    eprint!("{}", table.to_text());
    Ok(Some(table))
}
