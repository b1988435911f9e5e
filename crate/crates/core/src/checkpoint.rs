//! Binary checkpoint format.
//!
//! ```text
//! "GRAILCK1"
//! u32 tensor count
//! per tensor: u16 name length, name, u8 rank, u32 dims[rank], f64 data
//! u32 blob length, key=value lines
//! ```
//!
//! All integers and reals are little-endian.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::config::{gnn_pairs, set_gnn, set_train, train_pairs};
use crate::error::{Error, Result};
use crate::graph::Vocab;
use crate::model::{GnnConfig, GnnParams};
use crate::tensor::Tensor;
use crate::train::{AdamState, Checkpoint, ResumeState, TrainConfig};

pub const MAGIC: &[u8; 8] = b"GRAILCK1";

const BEST: &str = "best/";
const ADAM_M: &str = "adam.m/";
const ADAM_V: &str = "adam.v/";

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(2);
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("none".to_string(), |v| format!("{v}"))
}

pub fn encode(ck: &Checkpoint) -> Vec<u8> {
    let mut tensors: Vec<(String, &Tensor)> = ck.params.named();
    let mut blob: Vec<(String, String)> = gnn_pairs(&ck.gnn);
    blob.extend(train_pairs(&ck.train));
    for (id, name) in ck.relations.names().iter().enumerate() {
        blob.push((format!("relation.{id}"), name.clone()));
    }
    blob.push(("epoch".into(), format!("{}", ck.epoch)));
    blob.push(("valid_metric".into(), fmt_opt(ck.valid_metric)));
    if let Some(st) = &ck.resume {
        let names: Vec<String> = ck.params.named().into_iter().map(|(n, _)| n).collect();
        for (n, t) in st.best.named() {
            tensors.push((format!("{BEST}{n}"), t));
        }
        for (n, t) in names.iter().zip(&st.adam.m) {
            tensors.push((format!("{ADAM_M}{n}"), t));
        }
        for (n, t) in names.iter().zip(&st.adam.v) {
            tensors.push((format!("{ADAM_V}{n}"), t));
        }
        blob.push(("adam.step".into(), format!("{}", st.adam.step)));
        blob.push(("best.epoch".into(), format!("{}", st.best_epoch)));
        blob.push(("best.metric".into(), fmt_opt(st.best_metric)));
        for (i, l) in st.losses.iter().enumerate() {
            blob.push((format!("loss.{}", i + 1), format!("{l}")));
        }
        for (e, m) in &st.valid_log {
            blob.push((format!("valid.{e}"), format!("{m}")));
        }
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        put_tensor(&mut out, name, t);
    }
    let mut text = String::new();
    for (k, v) in &blob {
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        core::str::from_utf8(self.take(n)?).map_err(|_| Error::Checkpoint("invalid UTF-8".into()))
    }
}

fn read_tensor(r: &mut Reader) -> Result<(String, Tensor)> {
    let len = r.u16()? as usize;
    let name = r.utf8(len)?.to_string();
    let rank = r.u8()?;
    let dims: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<_>>()?;
    let (rows, cols) = match dims.as_slice() {
        [] => (1, 1),
        [n] => (1, *n),
        [a, b] => (*a, *b),
        _ => return Err(Error::Checkpoint(format!("tensor {name} has rank {rank}"))),
    };
    let count = rows
        .checked_mul(cols)
        .filter(|&c| c.saturating_mul(8) <= r.bytes.len())
        .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
    let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<f64>>>()?;
    Ok((name, Tensor::from_vec(rows, cols, data)?))
}

fn get<'a>(blob: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    blob.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Checkpoint(format!("missing config key {key}")))
}

fn num<T: core::str::FromStr>(blob: &BTreeMap<String, String>, key: &str) -> Result<T> {
    get(blob, key)?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad value for {key}")))
}

fn opt(blob: &BTreeMap<String, String>, key: &str) -> Result<Option<f64>> {
    match get(blob, key)? {
        "none" => Ok(None),
        _ => num(blob, key).map(Some),
    }
}

fn indexed(blob: &BTreeMap<String, String>, prefix: &str) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (k, v) in blob {
        if let Some(rest) = k.strip_prefix(prefix) {
            let i: usize = rest.parse().map_err(|_| Error::Checkpoint(format!("bad key {k}")))?;
            out.push((i, v.clone()));
        }
    }
    out.sort_by_key(|(i, _)| *i);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = r.u32()? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let (name, t) = read_tensor(&mut r)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
    }
    let blob_len = r.u32()? as usize;
    let text = r.utf8(blob_len)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let mut blob = BTreeMap::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line {line:?}")))?;
        blob.insert(k.to_string(), v.to_string());
    }

    let mut gnn = GnnConfig::new(1);
    let mut train = TrainConfig::default();
    for (k, v) in &blob {
        if k.starts_with("gnn.") {
            set_gnn(&mut gnn, k, v)?;
        } else if k.starts_with("train.") {
            set_train(&mut train, k, v)?;
        }
    }
    let rel_entries = indexed(&blob, "relation.")?;
    if rel_entries.iter().enumerate().any(|(i, (id, _))| i != *id) {
        return Err(Error::Checkpoint("relation ids are not contiguous".into()));
    }
    let relations = Vocab::from_names(rel_entries.into_iter().map(|(_, n)| n));
    let r_count = relations.len();

    let mut groups: [BTreeMap<String, Tensor>; 4] = Default::default();
    for (name, t) in tensors {
        let (slot, key) = if let Some(n) = name.strip_prefix(BEST) {
            (1, n.to_string())
        } else if let Some(n) = name.strip_prefix(ADAM_M) {
            (2, n.to_string())
        } else if let Some(n) = name.strip_prefix(ADAM_V) {
            (3, n.to_string())
        } else {
            (0, name)
        };
        groups[slot].insert(key, t);
    }
    let [main, best, m, v] = groups;
    let params = GnnParams::from_named(&gnn, r_count, main)?;

    let resume = if blob.contains_key("adam.step") {
        let order: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
        let moments = |mut map: BTreeMap<String, Tensor>| -> Result<Vec<Tensor>> {
            order
                .iter()
                .zip(params.tensors())
                .map(|(n, p)| {
                    let t = map
                        .remove(n)
                        .ok_or_else(|| Error::Checkpoint(format!("missing moment for {n}")))?;
                    if t.shape() != p.shape() {
                        return Err(Error::Checkpoint(format!("moment {n} has wrong shape")));
                    }
                    Ok(t)
                })
                .collect()
        };
        let adam = AdamState {
            step: num(&blob, "adam.step")?,
            m: moments(m)?,
            v: moments(v)?,
        };
        let losses = indexed(&blob, "loss.")?
            .into_iter()
            .map(|(_, v)| v.parse().map_err(|_| Error::Checkpoint("bad loss value".into())))
            .collect::<Result<Vec<f64>>>()?;
        let valid_log = indexed(&blob, "valid.")?
            .into_iter()
            .map(|(e, v)| {
                v.parse()
                    .map(|m| (e, m))
                    .map_err(|_| Error::Checkpoint("bad validation value".into()))
            })
            .collect::<Result<Vec<(usize, f64)>>>()?;
        Some(ResumeState {
            adam,
            best: GnnParams::from_named(&gnn, r_count, best)?,
            best_epoch: num(&blob, "best.epoch")?,
            best_metric: opt(&blob, "best.metric")?,
            losses,
            valid_log,
        })
    } else {
        if !(best.is_empty() && m.is_empty() && v.is_empty()) {
            return Err(Error::Checkpoint("optimizer tensors without optimizer state".into()));
        }
        None
    };

    Ok(Checkpoint {
        gnn,
        train,
        relations,
        params,
        epoch: num(&blob, "epoch")?,
        valid_metric: opt(&blob, "valid_metric")?,
        resume,
    })
}
