//! Self-supervised training loop and embedding export.
//!
//! One optimization step:
//! 1. encode every node, `H = PReLU(Â X W)`;
//! 2. BFS-sample a subgraph around each center of the batch;
//! 3. obtain a counterpart view of each subgraph (generation by default);
//! 4. draw negatives and subsample the anchors entering the OT loss;
//! 5. evaluate `lambda * L_wd + (1 - lambda) * L_gwd`, backpropagate, Adam.

use std::time::Instant;

use crate::config::{DistanceKind, TrainConfig};
use crate::contrastive::{build_pairs, contrastive_loss_on, Pool};
use crate::encoder::{propagate, EncoderParams, EncoderVars};
use crate::error::{GscError, Result};
use crate::generator::{GeneratorParams, GeneratorVars, Generator};
use crate::graph::{Graph, Split};
use crate::ot::{self, intra_distances_generated, intra_distances_sampled};
use crate::probe::{probe_on, ProbeConfig};
use crate::sampler::{bfs_sample, RngStream, Subgraph};
use crate::tensor::{read_checkpoint, write_checkpoint, Adam, NamedTensor, Tape, Tensor, Var};

// stream tags for RngStream::derive
const TAG_INIT: u64 = 1;
const TAG_ORDER: u64 = 2;
const TAG_SAMPLE: u64 = 3;
const TAG_PAIRS: u64 = 4;
const TAG_VIEW: u64 = 5;
const TAG_EXTRA: u64 = 6;

/// All learned parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub encoder: EncoderParams,
    pub generator: GeneratorParams,
}

const NAMES: [&str; 4] = ["encoder.weight", "encoder.prelu_slope", "generator.w_theta", "generator.w_phi"];

impl Model {
    pub fn init(in_dim: usize, dim: usize, seed: u64) -> Self {
        let mut rng = RngStream::derive(seed, &[TAG_INIT]);
        let encoder = EncoderParams::init(in_dim, dim, &mut rng);
        let generator = GeneratorParams::init(dim, &mut rng);
        Model { encoder, generator }
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.encoder.weight,
            &mut self.encoder.prelu_slope,
            &mut self.generator.w_theta,
            &mut self.generator.w_phi,
        ]
    }

    pub fn to_named(&self) -> Vec<NamedTensor> {
        let ts = [&self.encoder.weight, &self.encoder.prelu_slope, &self.generator.w_theta, &self.generator.w_phi];
        NAMES.iter().zip(ts).map(|(n, t)| NamedTensor { name: n.to_string(), tensor: t.clone() }).collect()
    }

    pub fn from_named(tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut slots: [Option<Tensor>; 4] = Default::default();
        for nt in tensors {
            let Some(i) = NAMES.iter().position(|n| *n == nt.name) else {
                return Err(GscError::Checkpoint(format!("unexpected tensor `{}`", nt.name)));
            };
            slots[i] = Some(nt.tensor.with_grad());
        }
        let [w, s, t, p] = slots.map(|s| s.ok_or_else(|| GscError::Checkpoint("missing tensor".into())));
        let model = Model {
            encoder: EncoderParams { weight: w?, prelu_slope: s? },
            generator: GeneratorParams { w_theta: t?, w_phi: p? },
        };
        let f = model.encoder.out_dim();
        if model.encoder.prelu_slope.numel() != 1
            || model.generator.w_theta.dims2() != (1, 2 * f)
            || model.generator.w_phi.dims2() != (f, f)
        {
            return Err(GscError::Checkpoint("inconsistent parameter shapes".into()));
        }
        Ok(model)
    }

    pub fn write(&self, w: impl std::io::Write) -> Result<()> {
        write_checkpoint(w, &self.to_named())
    }

    pub fn read(r: impl std::io::Read) -> Result<Self> {
        Self::from_named(read_checkpoint(r)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| GscError::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| GscError::io(path, e))?;
        Self::read(bytes.as_slice())
    }
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub total: f64,
    pub mean_dw_pos: f64,
    pub mean_dw_neg: f64,
    pub seconds: f64,
}

impl EpochMetrics {
    /// `epoch<TAB>l1<TAB>l2<TAB>total<TAB>mean_Dw_pos<TAB>mean_Dw_neg<TAB>seconds`
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.8}\t{:.3}",
            self.epoch, self.l1, self.l2, self.total, self.mean_dw_pos, self.mean_dw_neg, self.seconds
        )
    }
}

pub fn format_metrics_log(metrics: &[EpochMetrics]) -> String {
    metrics.iter().map(|m| m.log_line() + "\n").collect()
}

/// How the kept checkpoint was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Selection {
    ValidationAccuracy,
    TrainingLoss,
    Initial,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_model: Model,
    pub best_model: Model,
    pub best_epoch: usize,
    pub selection: Selection,
    pub metrics: Vec<EpochMetrics>,
    pub epoch_seconds: Vec<f64>,
}

/// A subgraph as it enters the loss: unit-norm node rows and its
/// intra-subgraph distance matrix, both on the step's tape.
#[derive(Clone, Copy, Debug)]
pub struct View {
    pub unit_rows: Var,
    pub intra: Var,
}

/// Everything a counterpart builder may read during one step.
pub struct StepContext<'a> {
    pub tape: &'a mut Tape,
    pub graph: &'a Graph,
    pub cfg: &'a TrainConfig,
    pub encoder: EncoderVars,
    pub generator: GeneratorVars,
    /// Node embeddings `N x F`.
    pub h: Var,
    /// Row-normalized `h`.
    pub unit_h: Var,
    pub rng: RngStream,
}

/// Produces the positive counterpart view of sampled subgraphs.
pub trait Counterpart {
    fn views(&mut self, ctx: &mut StepContext<'_>, subgraphs: &[&Subgraph]) -> Result<Vec<View>>;
}

/// Attention-interpolated generated subgraphs.
#[derive(Clone, Copy, Debug, Default)]
pub struct Generation;

impl Counterpart for Generation {
    fn views(&mut self, ctx: &mut StepContext<'_>, subgraphs: &[&Subgraph]) -> Result<Vec<View>> {
        let mut gen = Generator::new(ctx.tape, ctx.graph, ctx.h, ctx.generator, ctx.cfg.neighborhood)?;
        subgraphs
            .iter()
            .map(|s| {
                let out = gen.subgraph(ctx.tape, s)?;
                let intra = intra_distances_generated(ctx.tape, out.adjacency, ctx.cfg.tau)?;
                Ok(View { unit_rows: out.unit_rows, intra })
            })
            .collect()
    }
}

/// View of a sampled subgraph: its embedding rows and the 0/1 adjacency
/// distances.
pub fn sampled_view(tape: &mut Tape, unit_h: Var, s: &Subgraph, tau: f64) -> Result<View> {
    let unit_rows = tape.gather_rows(unit_h, &s.nodes)?;
    let intra = tape.constant(intra_distances_sampled(&s.adjacency, tau)?);
    Ok(View { unit_rows, intra })
}

/// Loss terms of one step, all on the step's tape.
#[derive(Clone, Debug)]
pub struct StepLoss {
    pub l1: Var,
    pub l2: Var,
    pub total: Var,
    pub dw_pos: Vec<f64>,
    pub dw_neg: Vec<f64>,
    pub plans_unconverged: usize,
}

/// Distances between two views: `(D_w, D_gw)` as one-element vars.
fn pair_distances(
    tape: &mut Tape,
    pairs: &[(View, View)],
    cfg: &TrainConfig,
) -> Result<(Vec<(Var, Var)>, usize)> {
    match cfg.distance {
        DistanceKind::Ot => {
            let costs = pairs
                .iter()
                .map(|(a, b)| ot::cost_from_unit_rows(tape, a.unit_rows, b.unit_rows, cfg.tau))
                .collect::<Result<Vec<_>>>()?;
            let plans = tape.sinkhorn_many(&costs, &cfg.sinkhorn(), cfg.plan_gradient)?;
            let unconverged = plans.iter().filter(|(_, p)| !p.converged).count();
            let mut out = Vec::with_capacity(pairs.len());
            for ((a, b), (cost, (plan, _))) in pairs.iter().zip(costs.into_iter().zip(plans)) {
                let tc = tape.mul(plan, cost)?;
                let dw = tape.sum(tc);
                let dgw = tape.gromov_wasserstein(a.intra, b.intra, plan)?;
                out.push((dw, dgw));
            }
            Ok((out, unconverged))
        }
        DistanceKind::Readout => {
            let mut out = Vec::with_capacity(pairs.len());
            for (a, b) in pairs {
                let ra = readout(tape, a.unit_rows)?;
                let rb = readout(tape, b.unit_rows)?;
                let c = ot::cost_from_unit_rows(tape, ra, rb, cfg.tau)?;
                let d = tape.sum(c);
                out.push((d, d));
            }
            Ok((out, 0))
        }
    }
}

/// Mean-pooled, re-normalized subgraph representation (`1 x F`).
fn readout(tape: &mut Tape, unit_rows: Var) -> Result<Var> {
    let k = tape.value(unit_rows).rows();
    let w = tape.constant(Tensor::filled(1, k, 1.0 / k as f64));
    let m = tape.matmul(w, unit_rows)?;
    Ok(tape.normalize_rows(m))
}

/// Builds the loss for a batch of centers on `tape` and returns its terms.
#[allow(clippy::too_many_arguments)]
pub fn step_loss(
    tape: &mut Tape,
    graph: &Graph,
    ax: Var,
    model_vars: (EncoderVars, GeneratorVars),
    centers: &[usize],
    cfg: &TrainConfig,
    stream: &[u64],
    counterpart: &mut dyn Counterpart,
) -> Result<StepLoss> {
    let (enc, gen) = model_vars;
    let h = enc.forward(tape, ax)?;
    let unit_h = tape.normalize_rows(h);

    let sampled = centers
        .iter()
        .map(|&c| {
            let tags: Vec<u64> = [&[TAG_SAMPLE], stream, &[c as u64]].concat();
            bfs_sample(graph, c, cfg.k, &mut RngStream::derive(cfg.seed, &tags))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut prng = RngStream::derive(cfg.seed, &[&[TAG_PAIRS], stream].concat());
    let batch = build_pairs(centers, cfg.negatives, &mut prng)?;
    let mut anchors: Vec<usize> = (0..centers.len()).collect();
    prng.shuffle(&mut anchors);
    anchors.truncate(cfg.ot_subsample);
    anchors.sort_unstable();

    // Counterparts needed: each anchor's positive(s) and generated negatives.
    let mut need: Vec<usize> = anchors.clone();
    for &a in &anchors {
        need.extend(batch.negatives[a].iter().filter(|n| n.pool == Pool::Generated).map(|n| n.index));
    }
    need.sort_unstable();
    need.dedup();
    let extra: Vec<Subgraph> = anchors
        .iter()
        .flat_map(|&a| (1..cfg.positives).map(move |p| (a, p)))
        .map(|(a, p)| {
            let tags: Vec<u64> = [&[TAG_EXTRA], stream, &[centers[a] as u64, p as u64]].concat();
            bfs_sample(graph, centers[a], cfg.k, &mut RngStream::derive(cfg.seed, &tags))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut requests: Vec<&Subgraph> = need.iter().map(|&i| &sampled[i]).collect();
    requests.extend(extra.iter());

    let views = {
        let mut ctx = StepContext {
            tape: &mut *tape,
            graph,
            cfg,
            encoder: enc,
            generator: gen,
            h,
            unit_h,
            rng: RngStream::derive(cfg.seed, &[&[TAG_VIEW], stream].concat()),
        };
        counterpart.views(&mut ctx, &requests)?
    };
    if views.len() != requests.len() {
        return Err(GscError::contract(format!("counterpart returned {} views for {} subgraphs", views.len(), requests.len())));
    }
    let counterpart_of = |i: usize| views[need.binary_search(&i).expect("requested above")];

    let mut sampled_views = vec![None; centers.len()];
    let mut sview = |tape: &mut Tape, i: usize| -> Result<View> {
        if let Some(v) = sampled_views[i] {
            return Ok(v);
        }
        let v = sampled_view(tape, unit_h, &sampled[i], cfg.tau)?;
        sampled_views[i] = Some(v);
        Ok(v)
    };

    let mut pairs = Vec::new();
    let mut is_positive = Vec::new();
    let mut owner = Vec::new();
    for (slot, &a) in anchors.iter().enumerate() {
        let anchor = sview(tape, a)?;
        pairs.push((anchor, counterpart_of(a)));
        is_positive.push(true);
        owner.push(slot);
        for p in 1..cfg.positives {
            let view = views[need.len() + slot * (cfg.positives - 1) + (p - 1)];
            pairs.push((anchor, view));
            is_positive.push(true);
            owner.push(slot);
        }
        for neg in &batch.negatives[a] {
            let other = match neg.pool {
                Pool::Sampled => sview(tape, neg.index)?,
                Pool::Generated => counterpart_of(neg.index),
            };
            pairs.push((anchor, other));
            is_positive.push(false);
            owner.push(slot);
        }
    }

    let (dists, plans_unconverged) = pair_distances(tape, &pairs, cfg)?;
    let n = anchors.len();
    let (mut pos_w, mut neg_w) = (vec![Vec::new(); n], vec![Vec::new(); n]);
    let (mut pos_gw, mut neg_gw) = (vec![Vec::new(); n], vec![Vec::new(); n]);
    let (mut dw_pos, mut dw_neg) = (Vec::new(), Vec::new());
    for ((&(dw, dgw), &pos), &slot) in dists.iter().zip(&is_positive).zip(&owner) {
        if pos {
            pos_w[slot].push(dw);
            pos_gw[slot].push(dgw);
            dw_pos.push(tape.item(dw));
        } else {
            neg_w[slot].push(dw);
            neg_gw[slot].push(dgw);
            dw_neg.push(tape.item(dw));
        }
    }
    let l1 = contrastive_loss_on(tape, &pos_w, &neg_w, cfg.tau)?;
    let l2 = contrastive_loss_on(tape, &pos_gw, &neg_gw, cfg.tau)?;
    let a = tape.scale(l1, cfg.lambda);
    let b = tape.scale(l2, 1.0 - cfg.lambda);
    let total = tape.add(a, b)?;
    Ok(StepLoss { l1, l2, total, dw_pos, dw_neg, plans_unconverged })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Trains with generated counterparts.
pub fn train(graph: &Graph, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(graph, cfg, &mut Generation)
}

/// Trains with a caller-supplied counterpart builder.
pub fn train_with(graph: &Graph, cfg: &TrainConfig, counterpart: &mut dyn Counterpart) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = graph.n_nodes();
    if n < 2 {
        return Err(GscError::contract("training needs at least two nodes"));
    }
    let ax_t = propagate(&graph.normalize_adjacency(), graph.features())?;
    let mut model = Model::init(graph.feature_dim(), cfg.dim, cfg.seed);
    let mut adam = Adam::new(cfg.lr);

    let val = match (&graph.labels, &graph.splits) {
        (Some(l), Some(s)) if s.contains(&Split::Val) && s.contains(&Split::Train) => Some((l, s)),
        _ => None,
    };
    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let selection = match (cfg.epochs, val.is_some()) {
        (0, _) => Selection::Initial,
        (_, true) => Selection::ValidationAccuracy,
        (_, false) => Selection::TrainingLoss,
    };

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..n).collect();
        RngStream::derive(cfg.seed, &[TAG_ORDER, epoch as u64]).shuffle(&mut order);
        let (mut l1s, mut l2s, mut totals, mut pos, mut neg) = (vec![], vec![], vec![], vec![], vec![]);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let mut tape = Tape::new();
            let ax = tape.constant(ax_t.clone());
            let enc = model.encoder.record(&mut tape);
            let gen = model.generator.record(&mut tape);
            let stream = [epoch as u64, step as u64];
            let loss = step_loss(&mut tape, graph, ax, (enc, gen), chunk, cfg, &stream, counterpart)?;
            let grads = tape.backward(loss.total)?;
            model.encoder.weight.grad = Some(grads.wrt(enc.weight));
            model.encoder.prelu_slope.grad = Some(grads.wrt(enc.prelu_slope));
            model.generator.w_theta.grad = Some(grads.wrt(gen.w_theta));
            model.generator.w_phi.grad = Some(grads.wrt(gen.w_phi));
            let mut params = model.tensors_mut();
            adam.step(&mut params)?;

            l1s.push(tape.item(loss.l1));
            l2s.push(tape.item(loss.l2));
            totals.push(tape.item(loss.total));
            pos.extend(loss.dw_pos);
            neg.extend(loss.dw_neg);
        }
        let seconds = started.elapsed().as_secs_f64();
        epoch_seconds.push(seconds);
        let m = EpochMetrics {
            epoch,
            l1: mean(&l1s),
            l2: mean(&l2s),
            total: mean(&totals),
            mean_dw_pos: mean(&pos),
            mean_dw_neg: mean(&neg),
            seconds: if cfg.log_timing { seconds } else { 0.0 },
        };
        let score = match val {
            Some((labels, splits)) => {
                let emb = embed_with(graph, &model)?;
                probe_on(&emb, labels, splits, Split::Val, &ProbeConfig::default())?.accuracy
            }
            None => -m.total,
        };
        if score > best.2 {
            best = (model.clone(), epoch, score);
        }
        metrics.push(m);
    }
    Ok(TrainOutcome {
        final_model: model,
        best_model: best.0,
        best_epoch: best.1,
        selection,
        metrics,
        epoch_seconds,
    })
}

/// Deterministic forward pass producing `N x F` embeddings.
pub fn embed_with(graph: &Graph, model: &Model) -> Result<Tensor> {
    if model.encoder.in_dim() != graph.feature_dim() {
        return Err(GscError::Checkpoint(format!(
            "checkpoint expects {} input features, graph has {}",
            model.encoder.in_dim(),
            graph.feature_dim()
        )));
    }
    crate::encoder::encode(&graph.normalize_adjacency(), graph.features(), &model.encoder)
}
