//! Margin-based training with sampled corruptions and Adam.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::eval::auc_pr;
use crate::exec::{Executor, Serial};
use crate::graph::{KnowledgeGraph, Triple};
use crate::model::{self, EdgeMasks, GnnConfig, GnnParams};
use crate::rng::{indexed_substream, substream, Rng};
use crate::subgraph::{EntityFeatures, ExtractMode, LabelScheme, LabeledSubgraph, SubgraphSpec};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub margin: f64,
    pub lr: f64,
    pub l2: f64,
    pub clip_norm: f64,
    pub epochs: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub neg_per_pos: usize,
    pub hops: usize,
    pub seed: u64,
    pub mode: ExtractMode,
    pub scheme: LabelScheme,
    /// Extract every positive subgraph once up front.
    pub cache_positives: bool,
    /// Ignore the supplied executor and run serially.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            margin: 10.0,
            lr: 0.01,
            l2: 5e-4,
            clip_norm: 1000.0,
            epochs: 50,
            eval_every: 3,
            batch_size: 16,
            neg_per_pos: 1,
            hops: 3,
            seed: 0,
            mode: ExtractMode::Enclosing,
            scheme: LabelScheme::DoubleRadius,
            cache_positives: true,
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.margin >= 0.0) {
            return fail("margin must be non-negative");
        }
        if !(self.lr > 0.0) {
            return fail("learning rate must be positive");
        }
        if !(self.l2 >= 0.0) {
            return fail("l2 must be non-negative");
        }
        if !(self.clip_norm > 0.0) {
            return fail("clip norm must be positive");
        }
        if self.epochs == 0 || self.eval_every == 0 || self.batch_size == 0 || self.neg_per_pos == 0 {
            return fail("epochs, eval_every, batch_size and neg_per_pos must be at least 1");
        }
        if self.hops == 0 {
            return fail("hops must be at least 1");
        }
        Ok(())
    }

    pub fn subgraph_spec(&self) -> SubgraphSpec {
        SubgraphSpec {
            hops: self.hops,
            mode: self.mode,
            scheme: self.scheme,
        }
    }
}

/// Replaces the head or the tail (fair coin) with a uniform entity,
/// rejecting the unchanged triple and, unless `pos` is one, self-loops.
/// Other true triples are not filtered.
pub fn sample_negative(g: &KnowledgeGraph, pos: &Triple, rng: &mut Rng) -> Result<Triple> {
    let n = g.num_entities();
    if n < 2 {
        return Err(Error::TooFewEntities);
    }
    g.check_entity(pos.head)?;
    g.check_entity(pos.tail)?;
    loop {
        let e = rng.gen_range(0..n);
        let t = if rng.gen::<bool>() {
            Triple::new(e, pos.rel, pos.tail)
        } else {
            Triple::new(pos.head, pos.rel, e)
        };
        if t != *pos && (t.head != t.tail || pos.head == pos.tail) {
            return Ok(t);
        }
    }
}

/// `max(0, neg - pos + margin)`
pub fn hinge_loss(pos: f64, neg: f64, margin: f64) -> f64 {
    (neg - pos + margin).max(0.0)
}

/// Rescales all gradients together so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_gradients(grads: &mut [&mut Tensor], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::InvalidArgument("clip norm must be positive".into()));
    }
    let norm = libm::sqrt(grads.iter().map(|g| g.norm_sq()).sum::<f64>());
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_in_place(s);
        }
    }
    Ok(norm)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Added to the gradient as `l2 * param` before the moment updates.
    pub l2: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, l2: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            l2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        let zeros = |t: &&Tensor| Tensor::zeros(t.rows(), t.cols());
        Self {
            step: 0,
            m: params.iter().map(zeros).collect(),
            v: params.iter().map(zeros).collect(),
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[&Tensor], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape(),
                rhs: g.shape(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let gj = gj + cfg.l2 * *w;
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mh = m[j] / c1;
            let vh = v[j] / c2;
            *w -= cfg.lr * mh / (libm::sqrt(vh) + cfg.eps);
        }
    }
    Ok(())
}

/// Training inputs. `valid` holds held-out positives scored against the
/// training graph for model selection. Self-loops are skipped in both.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub graph: &'a KnowledgeGraph,
    pub valid: &'a [Triple],
    pub aux: Option<&'a EntityFeatures>,
}

/// Optimizer and selection state needed to continue a run exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ResumeState {
    pub adam: AdamState,
    pub best: GnnParams,
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    /// Mean per-pair loss of every finished epoch.
    pub losses: Vec<f64>,
    /// `(epoch, validation AUC-PR)` for every evaluation.
    pub valid_log: Vec<(usize, f64)>,
}

/// Parameters plus everything needed to interpret them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub gnn: GnnConfig,
    pub train: TrainConfig,
    pub relations: crate::graph::Vocab,
    pub params: GnnParams,
    pub epoch: usize,
    pub valid_metric: Option<f64>,
    pub resume: Option<ResumeState>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub valid_auc_pr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Best validation checkpoint (the last one when there is no validation set).
    pub best: Checkpoint,
    /// State after the final epoch, resumable.
    pub last: Checkpoint,
}

impl TrainOutcome {
    pub fn losses(&self) -> &[f64] {
        &self.last.resume.as_ref().expect("last carries resume state").losses
    }
}

struct Job {
    pos: usize,
    negatives: Vec<Triple>,
    mask_seed: u64,
}

fn example_gradient(
    job: &Job,
    positives: &[Triple],
    cache: &[LabeledSubgraph],
    data: &TrainData,
    spec: SubgraphSpec,
    params: &GnnParams,
    gnn: &GnnConfig,
    margin: f64,
) -> Result<(f64, GnnParams)> {
    let owned;
    let pos_sub = match cache.get(job.pos) {
        Some(s) => s,
        None => {
            owned = spec.extract(data.graph, &positives[job.pos], data.aux)?;
            &owned
        }
    };
    let mut mask_rng = Rng::seed_from_u64(job.mask_seed);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let masks = EdgeMasks::sample(pos_sub, gnn.num_layers, gnn.edge_dropout, &mut mask_rng);
    let pos_score = model::forward(&mut tape, &bound, pos_sub, gnn, Some(&masks))?.score;
    let mut total = None;
    for neg in &job.negatives {
        let neg_sub = spec.extract(data.graph, neg, data.aux)?;
        let masks = EdgeMasks::sample(&neg_sub, gnn.num_layers, gnn.edge_dropout, &mut mask_rng);
        let neg_score = model::forward(&mut tape, &bound, &neg_sub, gnn, Some(&masks))?.score;
        let diff = tape.scale(pos_score, -1.0);
        let diff = tape.add(neg_score, diff)?;
        let shift = tape.constant(Tensor::scalar(margin));
        let diff = tape.add(diff, shift)?;
        let loss = tape.hinge(diff);
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss)?,
        });
    }
    let total = total.expect("at least one negative");
    let value = tape.value(total).item();
    tape.backward(total)?;
    Ok((value, bound.gradients(&tape, params)))
}

/// Scores fixed validation pairs and returns their AUC-PR.
fn validation_auc<E: Executor>(subs: &[LabeledSubgraph], params: &GnnParams, gnn: &GnnConfig, exec: &E) -> Result<f64> {
    let scores = exec
        .map(subs, |s| model::score(s, params, gnn))
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;
    let (pos, neg): (Vec<_>, Vec<_>) = scores.chunks(2).map(|c| (c[0], c[1])).unzip();
    auc_pr(&pos, &neg)
}

/// Trains from scratch, or continues from `resume` (a `last` checkpoint).
pub fn train<E: Executor>(
    data: &TrainData,
    cfg: &TrainConfig,
    gnn: &GnnConfig,
    exec: &E,
    resume: Option<&Checkpoint>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    if cfg.deterministic {
        train_with(data, cfg, gnn, &Serial, resume, on_epoch)
    } else {
        train_with(data, cfg, gnn, exec, resume, on_epoch)
    }
}

fn train_with<E: Executor>(
    data: &TrainData,
    cfg: &TrainConfig,
    gnn: &GnnConfig,
    exec: &E,
    resume: Option<&Checkpoint>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let g = data.graph;
    if g.num_triples() == 0 {
        return Err(Error::EmptyGraph);
    }
    let num_rel = g.num_relations();
    gnn.validate(num_rel)?;
    let spec = cfg.subgraph_spec();
    let want = spec.feature_dim(data.aux);
    if gnn.input_dim != want {
        return Err(Error::InvalidArgument(format!(
            "model input width {} does not match feature width {want}",
            gnn.input_dim
        )));
    }
    let valid: Vec<Triple> = data.valid.iter().copied().filter(|t| t.head != t.tail).collect();
    for t in &valid {
        g.check_entity(t.head)?;
        g.check_entity(t.tail)?;
        g.check_relation(t.rel)?;
    }

    let (mut params, mut state, start) = match resume {
        Some(ck) => {
            let mut st = ck
                .resume
                .clone()
                .ok_or_else(|| Error::Checkpoint("checkpoint carries no optimizer state".into()))?;
            // a closing evaluation off the schedule belongs to the earlier run only
            st.valid_log.retain(|&(e, _)| e % cfg.eval_every == 0);
            if ck.gnn != *gnn || ck.relations != *g.relations() {
                return Err(Error::Checkpoint(
                    "checkpoint model or relations differ from this run".into(),
                ));
            }
            (ck.params.clone(), st, ck.epoch)
        }
        None => {
            let params = GnnParams::init(gnn, num_rel, &mut substream(cfg.seed, "init"))?;
            let adam = AdamState::new(&params.tensors());
            let best = params.clone();
            (
                params,
                ResumeState {
                    adam,
                    best,
                    best_epoch: 0,
                    best_metric: None,
                    losses: Vec::new(),
                    valid_log: Vec::new(),
                },
                0,
            )
        }
    };

    let positives: Vec<Triple> = g.triples().iter().copied().filter(|t| t.head != t.tail).collect();
    if positives.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let cache: Vec<LabeledSubgraph> = if cfg.cache_positives {
        exec.map(&positives, |t| spec.extract(g, t, data.aux))
            .into_iter()
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let valid_subs: Vec<LabeledSubgraph> = if valid.is_empty() {
        Vec::new()
    } else {
        let mut rng = substream(cfg.seed, "valid-negatives");
        let mut pairs = Vec::with_capacity(2 * valid.len());
        for t in &valid {
            pairs.push(*t);
            pairs.push(sample_negative(g, t, &mut rng)?);
        }
        exec.map(&pairs, |t| spec.extract(g, t, data.aux))
            .into_iter()
            .collect::<Result<_>>()?
    };

    let adam_cfg = AdamConfig::new(cfg.lr, cfg.l2);
    let pairs_per_epoch = (positives.len() * cfg.neg_per_pos) as f64;
    let mut closing: Option<(usize, f64)> = None;
    for epoch in start + 1..=cfg.epochs {
        let mut rng = indexed_substream(cfg.seed, "epoch", epoch as u64);
        let mut order: Vec<usize> = (0..positives.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut batch = batch.to_vec();
            batch.sort_unstable();
            let mut jobs = Vec::with_capacity(batch.len());
            for &i in &batch {
                let mut negatives = Vec::with_capacity(cfg.neg_per_pos);
                for _ in 0..cfg.neg_per_pos {
                    negatives.push(sample_negative(g, &positives[i], &mut rng)?);
                }
                jobs.push(Job {
                    pos: i,
                    negatives,
                    mask_seed: rng.gen(),
                });
            }
            let results = exec.map(&jobs, |job| {
                example_gradient(job, &positives, &cache, data, spec, &params, gnn, cfg.margin)
            });
            let mut grads = params.zeros_like();
            for r in results {
                let (loss, gr) = r?;
                epoch_loss += loss;
                grads.add_assign(&gr);
            }
            clip_gradients(&mut grads.tensors_mut(), cfg.clip_norm)?;
            adam_step(&mut params.tensors_mut(), &grads.tensors(), &mut state.adam, &adam_cfg)?;
        }
        if !params.is_finite() {
            return Err(Error::NonFinite(format!("parameters after epoch {epoch}")));
        }
        let loss = epoch_loss / pairs_per_epoch;
        state.losses.push(loss);

        let mut valid_auc_pr = None;
        let scheduled = epoch % cfg.eval_every == 0;
        if !valid_subs.is_empty() && (scheduled || epoch == cfg.epochs) {
            let auc = validation_auc(&valid_subs, &params, gnn, exec)?;
            valid_auc_pr = Some(auc);
            if scheduled {
                state.valid_log.push((epoch, auc));
                if state.best_metric.is_none_or(|b| auc > b) {
                    state.best_metric = Some(auc);
                    state.best_epoch = epoch;
                    state.best = params.clone();
                }
            } else {
                closing = Some((epoch, auc));
            }
        }
        if valid_subs.is_empty() {
            state.best_epoch = epoch;
            state.best = params.clone();
        }
        on_epoch(&EpochLog {
            epoch,
            loss,
            valid_auc_pr,
        });
    }

    // the closing evaluation competes for `best` but stays out of the
    // resumable selection state
    let (mut best_params, mut best_epoch, mut best_metric) = (&state.best, state.best_epoch, state.best_metric);
    if let Some((epoch, auc)) = closing {
        if best_metric.is_none_or(|b| auc > b) {
            (best_params, best_epoch, best_metric) = (&params, epoch, Some(auc));
        }
    }
    let best = Checkpoint {
        gnn: gnn.clone(),
        train: cfg.clone(),
        relations: g.relations().clone(),
        params: best_params.clone(),
        epoch: best_epoch,
        valid_metric: best_metric,
        resume: None,
    };
    state.valid_log.extend(closing);
    let last = Checkpoint {
        gnn: gnn.clone(),
        train: cfg.clone(),
        relations: g.relations().clone(),
        params,
        epoch: cfg.epochs.max(start),
        valid_metric: state.valid_log.last().map(|&(_, m)| m),
        resume: Some(state),
    };
    Ok(TrainOutcome { best, last })
}
