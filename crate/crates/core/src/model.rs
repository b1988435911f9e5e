//! Attention-gated relational message passing and triplet scoring.
//!
//! Layer `k` updates every node `t` as
//!
//! ```text
//! h_t = ReLU(W_self h_t' + sum_r sum_{s in N_r(t)} mask * alpha(s, t, r, r_t) * W_r h_s')
//! W_r = sum_b a_rb V_b
//! alpha = sigmoid(A2 ReLU(A1 [h_s' ; h_t' ; e_r ; e_rt] + b1) + b2)
//! ```
//!
//! where `N_r(t)` holds the out-neighbors of `t` under `r` (or in-neighbors
//! when [`GnnConfig::aggregate_in_neighbors`] is set). Attention weights are
//! independent sigmoid gates, not a softmax.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::subgraph::LabeledSubgraph;
use crate::tensor::Tensor;

/// How the final score is read out of the node representations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Readout {
    /// Concatenate `[mean ; h_u ; h_v ; e_rt]` for every layer.
    #[default]
    JumpingKnowledge,
    /// `[mean ; h_u ; h_v ; e_rt]` of the last layer only.
    LastLayer,
    /// `W^T h_v` of the last layer.
    TargetNode,
}

impl Readout {
    pub fn as_str(self) -> &'static str {
        match self {
            Readout::JumpingKnowledge => "jk",
            Readout::LastLayer => "last",
            Readout::TargetNode => "target",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "jk" => Some(Readout::JumpingKnowledge),
            "last" => Some(Readout::LastLayer),
            "target" => Some(Readout::TargetNode),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_bases: usize,
    /// Width of the attention MLP's hidden layer.
    pub attn_hidden: usize,
    pub attention: bool,
    pub readout: Readout,
    pub edge_dropout: f64,
    pub aggregate_in_neighbors: bool,
    /// Width of the initial node features.
    pub input_dim: usize,
    /// Attention weights below this value become exact zeros.
    pub attention_floor: Option<f64>,
}

impl GnnConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            num_layers: 3,
            hidden_dim: 32,
            num_bases: 4,
            attn_hidden: 32,
            attention: true,
            readout: Readout::JumpingKnowledge,
            edge_dropout: 0.5,
            aggregate_in_neighbors: false,
            input_dim,
            attention_floor: None,
        }
    }

    pub fn validate(&self, num_relations: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if num_relations == 0 {
            return fail("at least one relation is required".into());
        }
        if self.num_layers == 0 || self.hidden_dim == 0 || self.attn_hidden == 0 || self.input_dim == 0 {
            return fail("layer count and widths must be at least 1".into());
        }
        if self.num_bases == 0 || self.num_bases > num_relations {
            return fail(format!(
                "basis count {} must lie in 1..={num_relations}",
                self.num_bases
            ));
        }
        if !(0.0..1.0).contains(&self.edge_dropout) {
            return fail(format!("edge dropout {} must lie in [0, 1)", self.edge_dropout));
        }
        Ok(())
    }

    /// Input width of layer `k` (0-based).
    pub fn layer_input(&self, k: usize) -> usize {
        if k == 0 {
            self.input_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn readout_dim(&self) -> usize {
        let block = 4 * self.hidden_dim;
        match self.readout {
            Readout::JumpingKnowledge => self.num_layers * block,
            Readout::LastLayer => block,
            Readout::TargetNode => self.hidden_dim,
        }
    }
}

/// Learnable tensors of one message-passing layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// `B x (d_in * d)`: row `b` is the flattened basis matrix `V_b`.
    pub basis: Tensor,
    /// `R x B` basis coefficients.
    pub coeff: Tensor,
    /// `d_in x d`
    pub self_weight: Tensor,
    /// `(2 d_in + 2 d) x attn_hidden`
    pub attn_w1: Tensor,
    pub attn_b1: Tensor,
    /// `attn_hidden x 1`
    pub attn_w2: Tensor,
    pub attn_b2: Tensor,
}

/// Every learnable tensor of the scoring network.
#[derive(Clone, Debug, PartialEq)]
pub struct GnnParams {
    pub layers: Vec<LayerParams>,
    /// `R x d` relation embeddings used inside attention.
    pub attn_rel_emb: Tensor,
    /// `R x d` target-relation embeddings used by the readout.
    pub rel_emb: Tensor,
    /// `readout_dim x 1`
    pub readout: Tensor,
}

fn glorot(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::from_vec(rows, cols, data).expect("sized above")
}

impl GnnParams {
    /// Glorot-uniform weights and zero biases.
    pub fn init(cfg: &GnnConfig, num_relations: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate(num_relations)?;
        let (d, b, r, ha) = (cfg.hidden_dim, cfg.num_bases, num_relations, cfg.attn_hidden);
        let mut layers = Vec::with_capacity(cfg.num_layers);
        for k in 0..cfg.num_layers {
            let din = cfg.layer_input(k);
            let attn_in = 2 * din + 2 * d;
            layers.push(LayerParams {
                basis: glorot(b, din * d, din, d, rng),
                coeff: glorot(r, b, r, b, rng),
                self_weight: glorot(din, d, din, d, rng),
                attn_w1: glorot(attn_in, ha, attn_in, ha, rng),
                attn_b1: Tensor::zeros(1, ha),
                attn_w2: glorot(ha, 1, ha, 1, rng),
                attn_b2: Tensor::zeros(1, 1),
            });
        }
        let n = cfg.readout_dim();
        Ok(Self {
            layers,
            attn_rel_emb: glorot(r, d, r, d, rng),
            rel_emb: glorot(r, d, r, d, rng),
            readout: glorot(n, 1, n, 1, rng),
        })
    }

    /// All tensors zero; every score is then exactly 0.
    pub fn zeros(cfg: &GnnConfig, num_relations: usize) -> Result<Self> {
        cfg.validate(num_relations)?;
        let (d, b, r, ha) = (cfg.hidden_dim, cfg.num_bases, num_relations, cfg.attn_hidden);
        let layers = (0..cfg.num_layers)
            .map(|k| {
                let din = cfg.layer_input(k);
                LayerParams {
                    basis: Tensor::zeros(b, din * d),
                    coeff: Tensor::zeros(r, b),
                    self_weight: Tensor::zeros(din, d),
                    attn_w1: Tensor::zeros(2 * din + 2 * d, ha),
                    attn_b1: Tensor::zeros(1, ha),
                    attn_w2: Tensor::zeros(ha, 1),
                    attn_b2: Tensor::zeros(1, 1),
                }
            })
            .collect();
        Ok(Self {
            layers,
            attn_rel_emb: Tensor::zeros(r, d),
            rel_emb: Tensor::zeros(r, d),
            readout: Tensor::zeros(cfg.readout_dim(), 1),
        })
    }

    pub fn num_relations(&self) -> usize {
        self.rel_emb.rows()
    }

    /// Tensors in canonical order with stable names.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{k}.basis"), &l.basis));
            out.push((format!("layer{k}.coeff"), &l.coeff));
            out.push((format!("layer{k}.self"), &l.self_weight));
            out.push((format!("layer{k}.attn.w1"), &l.attn_w1));
            out.push((format!("layer{k}.attn.b1"), &l.attn_b1));
            out.push((format!("layer{k}.attn.w2"), &l.attn_w2));
            out.push((format!("layer{k}.attn.b2"), &l.attn_b2));
        }
        out.push(("attn_rel_emb".into(), &self.attn_rel_emb));
        out.push(("rel_emb".into(), &self.rel_emb));
        out.push(("readout".into(), &self.readout));
        out
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.basis);
            out.push(&mut l.coeff);
            out.push(&mut l.self_weight);
            out.push(&mut l.attn_w1);
            out.push(&mut l.attn_b1);
            out.push(&mut l.attn_w2);
            out.push(&mut l.attn_b2);
        }
        out.push(&mut self.attn_rel_emb);
        out.push(&mut self.rel_emb);
        out.push(&mut self.readout);
        out
    }

    /// Rebuilds parameters from named tensors, checking every shape against
    /// a freshly sized template.
    pub fn from_named(cfg: &GnnConfig, num_relations: usize, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut template = Self::zeros(cfg, num_relations)?;
        let names: Vec<String> = template.named().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(template.tensors_mut()) {
            let t = tensors
                .remove(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
        }
        Ok(template)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn add_assign(&mut self, other: &GnnParams) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale_in_place(s);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors().iter().map(|t| t.norm_sq()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Registers every tensor on `tape` as a trainable leaf (or constant).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let mut put = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|l| BoundLayer {
                basis: put(&l.basis),
                coeff: put(&l.coeff),
                self_weight: put(&l.self_weight),
                attn_w1: put(&l.attn_w1),
                attn_b1: put(&l.attn_b1),
                attn_w2: put(&l.attn_w2),
                attn_b2: put(&l.attn_b2),
            })
            .collect();
        BoundParams {
            layers,
            attn_rel_emb: put(&self.attn_rel_emb),
            rel_emb: put(&self.rel_emb),
            readout: put(&self.readout),
        }
    }
}

#[derive(Clone, Debug)]
pub struct BoundLayer {
    pub basis: Var,
    pub coeff: Var,
    pub self_weight: Var,
    pub attn_w1: Var,
    pub attn_b1: Var,
    pub attn_w2: Var,
    pub attn_b2: Var,
}

/// [`GnnParams`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub layers: Vec<BoundLayer>,
    pub attn_rel_emb: Var,
    pub rel_emb: Var,
    pub readout: Var,
}

impl BoundParams {
    /// Vars in the same order as [`GnnParams::tensors`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend([
                l.basis,
                l.coeff,
                l.self_weight,
                l.attn_w1,
                l.attn_b1,
                l.attn_w2,
                l.attn_b2,
            ]);
        }
        out.extend([self.attn_rel_emb, self.rel_emb, self.readout]);
        out
    }

    /// Collects accumulated gradients into a [`GnnParams`]-shaped container.
    pub fn gradients(&self, tape: &Tape, like: &GnnParams) -> GnnParams {
        let mut grads = like.zeros_like();
        for (slot, v) in grads.tensors_mut().into_iter().zip(self.vars()) {
            if let Some(g) = tape.grad(v) {
                slot.add_assign(g);
            }
        }
        grads
    }
}

/// Per-layer 0/1 edge masks, one `E x 1` column per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMasks {
    layers: Vec<Tensor>,
}

impl EdgeMasks {
    pub fn ones(num_edges: usize, num_layers: usize) -> Self {
        Self {
            layers: (0..num_layers).map(|_| Tensor::filled(num_edges, 1, 1.0)).collect(),
        }
    }

    /// Drops each edge independently with probability `rate` in every layer.
    /// The target edge (if any) is always kept.
    pub fn sample(sub: &LabeledSubgraph, num_layers: usize, rate: f64, rng: &mut Rng) -> Self {
        let e = sub.subgraph().edges().len();
        let keep_target = sub.subgraph().target_edge();
        let layers = (0..num_layers)
            .map(|_| {
                let data = (0..e)
                    .map(|i| {
                        let draw: f64 = rng.gen();
                        if Some(i) == keep_target || draw >= rate {
                            1.0
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Tensor::from_vec(e, 1, data).expect("sized above")
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Tensor>) -> Self {
        Self { layers }
    }

    pub fn layer(&self, k: usize) -> Option<&Tensor> {
        self.layers.get(k)
    }
}

/// Edge endpoints arranged for aggregation.
struct Routing {
    /// Node receiving the message.
    target: Vec<usize>,
    /// Node sending the message.
    source: Vec<usize>,
    rel: Vec<usize>,
    by_rel: BTreeMap<usize, Vec<usize>>,
}

impl Routing {
    fn new(sub: &LabeledSubgraph, in_neighbors: bool) -> Self {
        let edges = sub.subgraph().edges();
        let mut r = Routing {
            target: Vec::with_capacity(edges.len()),
            source: Vec::with_capacity(edges.len()),
            rel: Vec::with_capacity(edges.len()),
            by_rel: BTreeMap::new(),
        };
        for (i, e) in edges.iter().enumerate() {
            let (t, s) = if in_neighbors { (e.dst, e.src) } else { (e.src, e.dst) };
            r.target.push(t);
            r.source.push(s);
            r.rel.push(e.rel);
            r.by_rel.entry(e.rel).or_default().push(i);
        }
        r
    }

    fn pick(&self, ids: &[usize], of: &[usize]) -> Vec<usize> {
        ids.iter().map(|&i| of[i]).collect()
    }
}

/// Output of a recorded forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Node representations after each layer.
    pub layers: Vec<Var>,
    pub score: Var,
}

fn check_params(p: &GnnParams, cfg: &GnnConfig) -> Result<()> {
    if p.layers.len() != cfg.num_layers {
        return Err(Error::InvalidArgument(format!(
            "parameters have {} layers, config expects {}",
            p.layers.len(),
            cfg.num_layers
        )));
    }
    Ok(())
}

/// Edge attention weights of one layer as an `E x 1` column.
fn attention_column(
    tape: &mut Tape,
    p: &BoundParams,
    layer: usize,
    h: Var,
    routing: &Routing,
    r_t: usize,
    cfg: &GnnConfig,
) -> Result<Var> {
    let e = routing.target.len();
    if !cfg.attention {
        return Ok(tape.constant(Tensor::filled(e, 1, 1.0)));
    }
    let l = &p.layers[layer];
    let din = tape.shape(h).1;
    let d = cfg.hidden_dim;
    let w_src = tape.slice_rows(l.attn_w1, 0, din)?;
    let w_dst = tape.slice_rows(l.attn_w1, din, din)?;
    let w_rel = tape.slice_rows(l.attn_w1, 2 * din, d)?;
    let w_tgt = tape.slice_rows(l.attn_w1, 2 * din + d, d)?;

    let from_src = tape.matmul(h, w_src)?;
    let from_src = tape.gather_rows(from_src, &routing.source)?;
    let from_dst = tape.matmul(h, w_dst)?;
    let from_dst = tape.gather_rows(from_dst, &routing.target)?;
    let from_rel = tape.matmul(p.attn_rel_emb, w_rel)?;
    let from_rel = tape.gather_rows(from_rel, &routing.rel)?;
    let target_emb = tape.slice_rows(p.attn_rel_emb, r_t, 1)?;
    let from_tgt = tape.matmul(target_emb, w_tgt)?;

    let pre = tape.add(from_src, from_dst)?;
    let pre = tape.add(pre, from_rel)?;
    let pre = tape.add(pre, from_tgt)?;
    let pre = tape.add(pre, l.attn_b1)?;
    let hidden = tape.relu(pre);
    let logit = tape.matmul(hidden, l.attn_w2)?;
    let logit = tape.add(logit, l.attn_b2)?;
    let alpha = tape.sigmoid(logit);
    Ok(match cfg.attention_floor {
        Some(floor) => tape.floor_to_zero(alpha, floor),
        None => alpha,
    })
}

fn layer_on_tape(
    tape: &mut Tape,
    p: &BoundParams,
    layer: usize,
    h: Var,
    routing: &Routing,
    r_t: usize,
    cfg: &GnnConfig,
    mask: Option<&Tensor>,
) -> Result<Var> {
    let l = &p.layers[layer];
    let (n, din) = tape.shape(h);
    let d = cfg.hidden_dim;
    let own = tape.matmul(h, l.self_weight)?;
    if routing.target.is_empty() {
        return Ok(tape.relu(own));
    }
    let mut alpha = attention_column(tape, p, layer, h, routing, r_t, cfg)?;
    if let Some(m) = mask {
        alpha = tape.apply_mask(alpha, m)?;
    }
    let per_rel = tape.matmul(l.coeff, l.basis)?;
    let mut total = own;
    for (&rel, ids) in &routing.by_rel {
        let w = tape.slice_rows(per_rel, rel, 1)?;
        let w = tape.reshape(w, din, d)?;
        let src = tape.gather_rows(h, &routing.pick(ids, &routing.source))?;
        let msg = tape.matmul(src, w)?;
        let gate = tape.gather_rows(alpha, ids)?;
        let msg = tape.mul(msg, gate)?;
        let msg = tape.scatter_add_rows(msg, &routing.pick(ids, &routing.target), n)?;
        total = tape.add(total, msg)?;
    }
    Ok(tape.relu(total))
}

/// Records the full scoring network for `sub` on `tape`.
pub fn forward(
    tape: &mut Tape,
    p: &BoundParams,
    sub: &LabeledSubgraph,
    cfg: &GnnConfig,
    masks: Option<&EdgeMasks>,
) -> Result<Forward> {
    if sub.feature_dim() != cfg.input_dim {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: sub.features().shape(),
            rhs: (sub.subgraph().num_nodes(), cfg.input_dim),
        });
    }
    if p.layers.len() != cfg.num_layers {
        return Err(Error::InvalidArgument("layer count mismatch".into()));
    }
    let s = sub.subgraph();
    let r_t = s.target_rel();
    let routing = Routing::new(sub, cfg.aggregate_in_neighbors);
    let mut h = tape.constant(sub.features().clone());
    let mut outputs = Vec::with_capacity(cfg.num_layers);
    for k in 0..cfg.num_layers {
        let mask = masks.and_then(|m| m.layer(k));
        h = layer_on_tape(tape, p, k, h, &routing, r_t, cfg, mask)?;
        outputs.push(h);
    }

    let score = match cfg.readout {
        Readout::TargetNode => {
            let hv = tape.slice_rows(h, s.target_v(), 1)?;
            tape.matmul(hv, p.readout)?
        }
        Readout::JumpingKnowledge | Readout::LastLayer => {
            let used: &[Var] = if cfg.readout == Readout::LastLayer {
                &outputs[outputs.len() - 1..]
            } else {
                &outputs
            };
            let target_emb = tape.slice_rows(p.rel_emb, r_t, 1)?;
            let mut parts = Vec::with_capacity(4 * used.len());
            for &hk in used {
                let pooled = tape.mean_rows(hk)?;
                let hu = tape.slice_rows(hk, s.target_u(), 1)?;
                let hv = tape.slice_rows(hk, s.target_v(), 1)?;
                parts.extend([pooled, hu, hv, target_emb]);
            }
            let joined = tape.concat(&parts)?;
            tape.matmul(joined, p.readout)?
        }
    };
    Ok(Forward { layers: outputs, score })
}

/// Score of a labeled subgraph with all edges kept.
pub fn score(sub: &LabeledSubgraph, params: &GnnParams, cfg: &GnnConfig) -> Result<f64> {
    check_params(params, cfg)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let out = forward(&mut tape, &bound, sub, cfg, None)?;
    Ok(tape.value(out.score).item())
}

/// Records the score on a fresh tape with trainable parameter leaves.
pub fn score_triplet(
    sub: &LabeledSubgraph,
    params: &GnnParams,
    cfg: &GnnConfig,
    masks: Option<&EdgeMasks>,
) -> Result<(Tape, BoundParams, Var)> {
    check_params(params, cfg)?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let out = forward(&mut tape, &bound, sub, cfg, masks)?;
    Ok((tape, bound, out.score))
}

/// Attention gate for one edge `s --r--> t` at layer `layer` (0-based).
/// Exactly 1 when attention is disabled.
pub fn attention_weight(
    h_s: &[f64],
    h_t: &[f64],
    r: usize,
    r_t: usize,
    layer: usize,
    params: &GnnParams,
    cfg: &GnnConfig,
) -> Result<f64> {
    check_params(params, cfg)?;
    let din = cfg.layer_input(layer.min(cfg.num_layers.saturating_sub(1)));
    if layer >= cfg.num_layers || h_s.len() != din || h_t.len() != din {
        return Err(Error::ShapeMismatch {
            op: "attention_weight",
            lhs: (1, h_s.len()),
            rhs: (1, din),
        });
    }
    let nr = params.num_relations();
    if r >= nr {
        return Err(Error::UnknownRelation(r));
    }
    if r_t >= nr {
        return Err(Error::UnknownRelation(r_t));
    }
    if !cfg.attention {
        return Ok(1.0);
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let mut rows = Vec::with_capacity(2 * din);
    rows.extend_from_slice(h_s);
    rows.extend_from_slice(h_t);
    let h = tape.constant(Tensor::from_vec(2, din, rows)?);
    let routing = Routing {
        target: alloc::vec![1],
        source: alloc::vec![0],
        rel: alloc::vec![r],
        by_rel: BTreeMap::new(),
    };
    let alpha = attention_column(&mut tape, &bound, layer, h, &routing, r_t, cfg)?;
    Ok(tape.value(alpha).item())
}

/// One message-passing layer applied to explicit node states.
pub fn layer_forward(
    sub: &LabeledSubgraph,
    h_prev: &Tensor,
    layer: usize,
    params: &GnnParams,
    cfg: &GnnConfig,
    mask: Option<&Tensor>,
) -> Result<Tensor> {
    check_params(params, cfg)?;
    let n = sub.subgraph().num_nodes();
    if layer >= cfg.num_layers || h_prev.shape() != (n, cfg.layer_input(layer)) {
        return Err(Error::ShapeMismatch {
            op: "layer_forward",
            lhs: h_prev.shape(),
            rhs: (n, cfg.layer_input(layer.min(cfg.num_layers.saturating_sub(1)))),
        });
    }
    let e = sub.subgraph().edges().len();
    if let Some(m) = mask {
        if m.shape() != (e, 1) {
            return Err(Error::ShapeMismatch {
                op: "layer_forward",
                lhs: m.shape(),
                rhs: (e, 1),
            });
        }
    }
    let routing = Routing::new(sub, cfg.aggregate_in_neighbors);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let h = tape.constant(h_prev.clone());
    let out = layer_on_tape(
        &mut tape,
        &bound,
        layer,
        h,
        &routing,
        sub.subgraph().target_rel(),
        cfg,
        mask,
    )?;
    Ok(tape.value(out).clone())
}
