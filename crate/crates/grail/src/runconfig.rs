//! Flat `key=value` run configuration shared by all commands.

use std::fmt::Write as _;

use grail_core::benchgen::SamplerConfig;
use grail_core::config::{gnn_pairs, parse_lines, set_gnn, set_train, train_pairs};
use grail_core::eval::EvalConfig;
use grail_core::model::GnnConfig;
use grail_core::train::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// `gnn.input_dim` is derived from the hop count and feature file.
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub split_train: SamplerConfig,
    pub split_test: SamplerConfig,
    pub split_seed: u64,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let sampler = SamplerConfig {
            num_roots: 10,
            hops: 3,
            max_new_per_hop: 50,
            target_edges: 5000,
            seed: 0,
        };
        Self {
            gnn: GnnConfig::new(1),
            train: TrainConfig::default(),
            split_train: sampler,
            split_test: SamplerConfig {
                target_edges: 2000,
                ..sampler
            },
            split_seed: 0,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            eval: EvalConfig::default(),
        }
    }
}

const DOCS: &[(&str, &str)] = &[
    ("gnn.layers", "message-passing layers"),
    ("gnn.hidden_dim", "node embedding width"),
    ("gnn.num_bases", "shared basis matrices (clamped to the relation count)"),
    ("gnn.attn_hidden", "attention MLP hidden width"),
    ("gnn.attention", "edge attention on/off"),
    ("gnn.readout", "jk | last | target"),
    ("gnn.edge_dropout", "per-layer edge drop rate during training"),
    (
        "gnn.in_neighbors",
        "aggregate over in-neighbors instead of out-neighbors",
    ),
    ("gnn.attention_floor", "zero attention below this value, or none"),
    ("train.margin", "hinge margin"),
    ("train.lr", "Adam learning rate"),
    ("train.l2", "L2 penalty on all parameters"),
    ("train.clip_norm", "global gradient norm cap"),
    ("train.epochs", "training epochs"),
    ("train.eval_every", "validation period in epochs"),
    ("train.batch_size", "positives per optimizer step"),
    ("train.neg_per_pos", "corruptions per positive"),
    ("train.hops", "subgraph radius k"),
    ("train.seed", "training seed"),
    ("train.mode", "enclosing | full_khop"),
    ("train.labels", "double_radius | constant"),
    ("train.cache", "extract positive subgraphs once"),
    ("train.deterministic", "force serial execution"),
    ("split.seed", "split seed"),
    ("split.train_roots", "roots per batch for the train graph"),
    ("split.train_hops", "expansion hops for the train graph"),
    ("split.train_max_new", "new neighbors per node per hop (train)"),
    ("split.train_target_edges", "approximate train graph size"),
    ("split.test_roots", "roots per batch for the inductive graph"),
    ("split.test_hops", "expansion hops for the inductive graph"),
    ("split.test_max_new", "new neighbors per node per hop (test)"),
    ("split.test_target_edges", "approximate inductive graph size"),
    ("split.valid_fraction", "train edges held out for validation"),
    ("split.test_fraction", "inductive edges held out for testing"),
    ("eval.num_negatives", "corruptions per test edge for ranking"),
    ("eval.seed", "evaluation seed"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .trim()
        .parse()
        .map_err(|_| CliError::config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = gnn_pairs(&self.gnn)
            .into_iter()
            .filter(|(k, _)| k != "gnn.input_dim")
            .collect();
        out.extend(train_pairs(&self.train));
        let s = |k: &str, v: String| (k.to_string(), v);
        out.extend([
            s("split.seed", self.split_seed.to_string()),
            s("split.train_roots", self.split_train.num_roots.to_string()),
            s("split.train_hops", self.split_train.hops.to_string()),
            s("split.train_max_new", self.split_train.max_new_per_hop.to_string()),
            s("split.train_target_edges", self.split_train.target_edges.to_string()),
            s("split.test_roots", self.split_test.num_roots.to_string()),
            s("split.test_hops", self.split_test.hops.to_string()),
            s("split.test_max_new", self.split_test.max_new_per_hop.to_string()),
            s("split.test_target_edges", self.split_test.target_edges.to_string()),
            s("split.valid_fraction", self.valid_fraction.to_string()),
            s("split.test_fraction", self.test_fraction.to_string()),
            s("eval.num_negatives", self.eval.num_negatives.to_string()),
            s("eval.seed", self.eval.seed.to_string()),
        ]);
        out
    }

    fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let cfg_err = |e: grail_core::Error| CliError::config(e.to_string());
        if key != "gnn.input_dim" && set_gnn(&mut self.gnn, key, value).map_err(cfg_err)? {
            return Ok(());
        }
        if set_train(&mut self.train, key, value).map_err(cfg_err)? {
            return Ok(());
        }
        match key {
            "split.seed" => self.split_seed = parse(key, value)?,
            "split.train_roots" => self.split_train.num_roots = parse(key, value)?,
            "split.train_hops" => self.split_train.hops = parse(key, value)?,
            "split.train_max_new" => self.split_train.max_new_per_hop = parse(key, value)?,
            "split.train_target_edges" => self.split_train.target_edges = parse(key, value)?,
            "split.test_roots" => self.split_test.num_roots = parse(key, value)?,
            "split.test_hops" => self.split_test.hops = parse(key, value)?,
            "split.test_max_new" => self.split_test.max_new_per_hop = parse(key, value)?,
            "split.test_target_edges" => self.split_test.target_edges = parse(key, value)?,
            "split.valid_fraction" => self.valid_fraction = parse(key, value)?,
            "split.test_fraction" => self.test_fraction = parse(key, value)?,
            "eval.num_negatives" => self.eval.num_negatives = parse(key, value)?,
            "eval.seed" => self.eval.seed = parse(key, value)?,
            _ => return Err(CliError::config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Defaults overridden by the lines of `text`. Unknown keys are errors.
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = Self::default();
        let lines = parse_lines(text).map_err(|e| CliError::config(e.to_string()))?;
        for (line, k, v) in lines {
            cfg.set(&k, &v)
                .map_err(|e| CliError::config(format!("line {line}: {e}")))?;
        }
        cfg.train.validate().map_err(|e| CliError::config(e.to_string()))?;
        for s in [&cfg.split_train, &cfg.split_test] {
            s.validate().map_err(|e| CliError::config(e.to_string()))?;
        }
        for f in [cfg.valid_fraction, cfg.test_fraction] {
            if !(f > 0.0 && f < 1.0) {
                return Err(CliError::config(format!("fraction {f} must lie in (0, 1)")));
            }
        }
        Ok(cfg)
    }

    /// Points every seed at `seed`; each stage still draws from its own
    /// named sub-stream.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.split_seed = seed;
        self.eval.seed = seed;
        self
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Help text listing every key with its default.
    pub fn help() -> String {
        let defaults = Self::default().pairs();
        let mut out = String::from("Config keys (key=value lines; # starts a comment):\n");
        for (k, v) in defaults {
            let doc = DOCS.iter().find(|(d, _)| *d == k).map_or("", |(_, d)| d);
            let _ = writeln!(out, "  {k:<26} default {v:<14} {doc}");
        }
        out
    }
}
