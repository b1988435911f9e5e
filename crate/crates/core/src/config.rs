//! `key=value` encoding of the model and training configurations.
//!
//! The same keys are used in checkpoint blobs and in run-configuration files.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{GnnConfig, Readout};
use crate::subgraph::{ExtractMode, LabelScheme};
use crate::train::TrainConfig;

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidArgument(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::InvalidArgument(format!(
            "{key}: expected a boolean, got {other:?}"
        ))),
    }
}

pub fn mode_name(m: ExtractMode) -> &'static str {
    match m {
        ExtractMode::Enclosing => "enclosing",
        ExtractMode::FullKhop => "full_khop",
    }
}

pub fn scheme_name(s: LabelScheme) -> &'static str {
    match s {
        LabelScheme::DoubleRadius => "double_radius",
        LabelScheme::Constant => "constant",
    }
}

pub fn gnn_pairs(c: &GnnConfig) -> Vec<(String, String)> {
    let floor = c.attention_floor.map_or("none".to_string(), |f| format!("{f}"));
    [
        ("gnn.layers", format!("{}", c.num_layers)),
        ("gnn.hidden_dim", format!("{}", c.hidden_dim)),
        ("gnn.num_bases", format!("{}", c.num_bases)),
        ("gnn.attn_hidden", format!("{}", c.attn_hidden)),
        ("gnn.attention", format!("{}", c.attention)),
        ("gnn.readout", c.readout.as_str().to_string()),
        ("gnn.edge_dropout", format!("{}", c.edge_dropout)),
        ("gnn.in_neighbors", format!("{}", c.aggregate_in_neighbors)),
        ("gnn.input_dim", format!("{}", c.input_dim)),
        ("gnn.attention_floor", floor),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Applies one key; `Ok(false)` when the key is not a model key.
pub fn set_gnn(c: &mut GnnConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "gnn.layers" => c.num_layers = parse(key, value)?,
        "gnn.hidden_dim" => c.hidden_dim = parse(key, value)?,
        "gnn.num_bases" => c.num_bases = parse(key, value)?,
        "gnn.attn_hidden" => c.attn_hidden = parse(key, value)?,
        "gnn.attention" => c.attention = parse_bool(key, value)?,
        "gnn.readout" => {
            c.readout = Readout::parse(value.trim())
                .ok_or_else(|| Error::InvalidArgument(format!("{key}: expected jk, last or target, got {value:?}")))?
        }
        "gnn.edge_dropout" => c.edge_dropout = parse(key, value)?,
        "gnn.in_neighbors" => c.aggregate_in_neighbors = parse_bool(key, value)?,
        "gnn.input_dim" => c.input_dim = parse(key, value)?,
        "gnn.attention_floor" => {
            c.attention_floor = match value.trim() {
                "none" => None,
                v => Some(parse(key, v)?),
            }
        }
        _ => return Ok(false),
    }
    Ok(true)
}

pub fn train_pairs(c: &TrainConfig) -> Vec<(String, String)> {
    [
        ("train.margin", format!("{}", c.margin)),
        ("train.lr", format!("{}", c.lr)),
        ("train.l2", format!("{}", c.l2)),
        ("train.clip_norm", format!("{}", c.clip_norm)),
        ("train.epochs", format!("{}", c.epochs)),
        ("train.eval_every", format!("{}", c.eval_every)),
        ("train.batch_size", format!("{}", c.batch_size)),
        ("train.neg_per_pos", format!("{}", c.neg_per_pos)),
        ("train.hops", format!("{}", c.hops)),
        ("train.seed", format!("{}", c.seed)),
        ("train.mode", mode_name(c.mode).to_string()),
        ("train.labels", scheme_name(c.scheme).to_string()),
        ("train.cache", format!("{}", c.cache_positives)),
        ("train.deterministic", format!("{}", c.deterministic)),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Applies one key; `Ok(false)` when the key is not a training key.
pub fn set_train(c: &mut TrainConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "train.margin" => c.margin = parse(key, value)?,
        "train.lr" => c.lr = parse(key, value)?,
        "train.l2" => c.l2 = parse(key, value)?,
        "train.clip_norm" => c.clip_norm = parse(key, value)?,
        "train.epochs" => c.epochs = parse(key, value)?,
        "train.eval_every" => c.eval_every = parse(key, value)?,
        "train.batch_size" => c.batch_size = parse(key, value)?,
        "train.neg_per_pos" => c.neg_per_pos = parse(key, value)?,
        "train.hops" => c.hops = parse(key, value)?,
        "train.seed" => c.seed = parse(key, value)?,
        "train.mode" => {
            c.mode = match value.trim() {
                "enclosing" => ExtractMode::Enclosing,
                "full_khop" => ExtractMode::FullKhop,
                v => {
                    return Err(Error::InvalidArgument(format!(
                        "{key}: expected enclosing or full_khop, got {v:?}"
                    )))
                }
            }
        }
        "train.labels" => {
            c.scheme = match value.trim() {
                "double_radius" => LabelScheme::DoubleRadius,
                "constant" => LabelScheme::Constant,
                v => {
                    return Err(Error::InvalidArgument(format!(
                        "{key}: expected double_radius or constant, got {v:?}"
                    )))
                }
            }
        }
        "train.cache" => c.cache_positives = parse_bool(key, value)?,
        "train.deterministic" => c.deterministic = parse_bool(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
/// Returns `(line number, key, value)` triples.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected key=value", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut g = GnnConfig::new(10);
        g.attention_floor = Some(1e-6);
        g.readout = Readout::TargetNode;
        let mut back = GnnConfig::new(1);
        for (k, v) in gnn_pairs(&g) {
            assert!(set_gnn(&mut back, &k, &v).unwrap());
        }
        assert_eq!(back, g);

        let t = TrainConfig {
            lr: 0.003,
            mode: ExtractMode::FullKhop,
            ..TrainConfig::default()
        };
        let mut back = TrainConfig::default();
        for (k, v) in train_pairs(&t) {
            assert!(set_train(&mut back, &k, &v).unwrap());
        }
        assert_eq!(back, t);
    }

    #[test]
    fn bad_values() {
        let mut g = GnnConfig::new(1);
        assert!(set_gnn(&mut g, "gnn.layers", "three").is_err());
        assert!(!set_gnn(&mut g, "gnn.bogus", "1").unwrap());
        let mut t = TrainConfig::default();
        assert!(set_train(&mut t, "train.mode", "sideways").is_err());
        assert!(parse_lines("a=1\nnonsense\n").is_err());
        assert_eq!(parse_lines("# c\n\n a = 2\n").unwrap()[0].1, "a");
    }
}
