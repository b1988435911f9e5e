//! Text and binary file formats.
//!
//! Triples, scores and labels are tab-separated lines; reports are
//! `key=value` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use grail_core::checkpoint;
use grail_core::graph::{KnowledgeGraph, Triple, Vocab};
use grail_core::subgraph::EntityFeatures;
use grail_core::train::Checkpoint;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn at(path: &Path) -> impl Fn(grail_core::Error) -> CliError + '_ {
    move |e| CliError::runtime(format!("{}: {e}", path.display()))
}

/// Reads a triple file into a fresh graph. Duplicate lines are dropped.
pub fn read_graph(path: &Path) -> CliResult<KnowledgeGraph> {
    let text = read_text(path)?;
    let (g, dups) = KnowledgeGraph::parse(&text).map_err(at(path))?;
    if dups > 0 {
        eprintln!("{}: dropped {dups} duplicate triples", path.display());
    }
    Ok(g)
}

/// Reads triples over the vocabularies of `base`, which are extended with
/// any new names. Returns the triples and the extended vocabularies.
pub fn read_triples_over(path: &Path, base: &KnowledgeGraph) -> CliResult<(Vec<Triple>, Vocab, Vocab)> {
    let text = read_text(path)?;
    let (g, _) =
        KnowledgeGraph::parse_with(&text, base.entities().clone(), base.relations().clone()).map_err(at(path))?;
    Ok((g.triples().to_vec(), g.entities().clone(), g.relations().clone()))
}

pub fn write_graph(path: &Path, g: &KnowledgeGraph) -> CliResult<()> {
    write_text(path, &g.to_lines())
}

pub fn write_triples(path: &Path, g: &KnowledgeGraph, triples: &[Triple]) -> CliResult<()> {
    let mut out = String::new();
    for t in triples {
        let _ = writeln!(out, "{}", triple_key(g, t));
    }
    write_text(path, &out)
}

/// `head<TAB>rel<TAB>tail` by name.
pub fn triple_key(g: &KnowledgeGraph, t: &Triple) -> String {
    let name = |v: &Vocab, i: usize| v.name(i).unwrap_or("?").to_string();
    format!(
        "{}\t{}\t{}",
        name(g.entities(), t.head),
        name(g.relations(), t.rel),
        name(g.entities(), t.tail)
    )
}

/// Reads `entity<TAB>x1,x2,...` lines (tabs between values also work). Entities unknown to `entities`
/// are skipped.
pub fn read_features(path: &Path, entities: &Vocab) -> CliResult<EntityFeatures> {
    let text = read_text(path)?;
    let mut feats: Option<EntityFeatures> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (name, rest) = line.split_once('\t').unwrap_or((line, ""));
        let values = rest
            .split([',', '\t'])
            .filter(|f| !f.trim().is_empty())
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::runtime(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let f = feats.get_or_insert_with(|| EntityFeatures::new(values.len()));
        if let Some(id) = entities.id(name) {
            f.insert(id, values).map_err(at(path))?;
        }
    }
    feats.ok_or_else(|| CliError::runtime(format!("{}: no feature rows", path.display())))
}

/// Reads `head<TAB>rel<TAB>tail<TAB>value` lines as `(key, value)` pairs.
pub fn read_keyed(path: &Path) -> CliResult<Vec<(String, String)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .rsplit_once('\t')
            .filter(|(k, _)| k.matches('\t').count() == 2)
            .ok_or_else(|| {
                CliError::runtime(format!("{}:{}: expected 4 tab-separated fields", path.display(), i + 1))
            })?;
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

pub fn read_scores(path: &Path) -> CliResult<Vec<(String, f64)>> {
    read_keyed(path)?
        .into_iter()
        .map(|(k, v)| {
            v.trim()
                .parse::<f64>()
                .map(|s| (k, s))
                .map_err(|_| CliError::runtime(format!("{}: bad score {v:?}", path.display())))
        })
        .collect()
}

pub fn read_labels(path: &Path) -> CliResult<Vec<(String, bool)>> {
    read_keyed(path)?
        .into_iter()
        .map(|(k, v)| match v.trim() {
            "1" => Ok((k, true)),
            "0" => Ok((k, false)),
            other => Err(CliError::runtime(format!(
                "{}: label must be 0 or 1, got {other:?}",
                path.display()
            ))),
        })
        .collect()
}

pub fn write_keyed<V: std::fmt::Display>(path: &Path, rows: &[(String, V)]) -> CliResult<()> {
    let mut out = String::new();
    for (k, v) in rows {
        let _ = writeln!(out, "{k}\t{v}");
    }
    write_text(path, &out)
}

pub fn write_pairs(path: &Path, pairs: &BTreeMap<String, String>) -> CliResult<()> {
    let mut out = String::new();
    for (k, v) in pairs {
        let _ = writeln!(out, "{k}={v}");
    }
    write_text(path, &out)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, checkpoint::encode(ck))
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    checkpoint::decode(&bytes).map_err(at(path))
}
