use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, Aggregator};
use super::matrix::{ScoreMatrix, ScoreMeta};
use crate::adapters::{attach, Edge, NodeCache, TrainMode};
use crate::backbone::{Backbone, Batch, NodeId};
use crate::error::{shape_err, Error, Result};
use crate::harness::task::Dataset;
use crate::harness::train::{evaluate_with, run_steps, TrainConfig};
use crate::numerics::tensor::gemm;
use crate::numerics::{rng, Tensor};
use crate::selection::CandidateMask;

/// Share of the training budget spent on head pretraining before scoring.
pub const HEAD_FRACTION: f64 = 0.025;

pub fn head_steps_for(budget: usize) -> usize {
    (budget as f64 * HEAD_FRACTION).round() as usize
}

/// `X^T G / batch_count` for `X`, `G` of shape `[.., d]` with equal row
/// counts: the gradient of a zero-initialized linear map from the node
/// holding `X` into the node receiving `G`, contracted over every token.
pub fn probe_gradient(x: &Tensor, g: &Tensor, batch_count: usize) -> Result<Tensor> {
    if x.shape().is_empty() || g.shape().is_empty() || x.rows() != g.rows() || batch_count == 0 {
        return Err(shape_err(
            "probe_gradient",
            format!("X {:?}, G {:?}, {batch_count} batches", x.shape(), g.shape()),
        ));
    }
    let (rows, dx, dg) = (x.rows(), x.last_dim(), g.last_dim());
    let mut out = vec![0.0; dx * dg];
    gemm(dx, rows, dg, x.data(), true, g.data(), false, &mut out, 0.0);
    let mut m = Tensor::new(vec![dx, dg], out)?;
    m.scale_in_place(1.0 / batch_count as f64);
    Ok(m)
}

/// Activations and activation gradients at every node, each flattened to
/// `[tokens, d_model]` and concatenated over batches.
#[derive(Clone, Debug)]
pub struct ProbeTrace {
    x: Vec<Tensor>,
    g: Vec<Tensor>,
    batches: usize,
    pub mean_loss: f64,
}

impl ProbeTrace {
    /// One forward and backward pass per batch through the bare backbone.
    /// Zero-initialized linear probes leave the forward pass unchanged, so
    /// no probe is actually inserted.
    pub fn capture(backbone: &Backbone, batches: &[Batch]) -> Result<Self> {
        if batches.is_empty() {
            return Err(Error::InvalidArgument("scoring needs at least one batch".into()));
        }
        let n = backbone.config.num_nodes();
        let d = backbone.config.d_model;
        let all: Vec<NodeId> = (0..n).map(NodeId).collect();
        let mut x = vec![Vec::new(); n];
        let mut g = vec![Vec::new(); n];
        let mut loss = 0.0;
        for batch in batches {
            let (l, trace) = backbone.backward_trace(batch, &all)?;
            loss += l;
            let grads = trace.gradients.expect("backward trace records gradients");
            for (i, (a, b)) in trace.activations.values().zip(grads.values()).enumerate() {
                x[i].extend_from_slice(a.data());
                g[i].extend_from_slice(b.data());
            }
        }
        let pack = |v: Vec<f64>| {
            let rows = v.len() / d;
            Tensor::new(vec![rows, d], v)
        };
        Ok(ProbeTrace {
            x: x.into_iter().map(pack).collect::<Result<_>>()?,
            g: g.into_iter().map(pack).collect::<Result<_>>()?,
            batches: batches.len(),
            mean_loss: loss / batches.len() as f64,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.x.len()
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn activations(&self, node: usize) -> &Tensor {
        &self.x[node]
    }

    pub fn gradients(&self, node: usize) -> &Tensor {
        &self.g[node]
    }

    /// Batch-averaged probe gradient for `edge`.
    pub fn gradient(&self, edge: Edge) -> Result<Tensor> {
        let (i, j) = (edge.src.0, edge.dst.0);
        if i >= self.num_nodes() || j >= self.num_nodes() {
            return Err(Error::OutOfRange(format!("edge {edge} outside {} nodes", self.num_nodes())));
        }
        probe_gradient(&self.x[i], &self.g[j], self.batches)
    }
}

/// Scores every candidate under each aggregator. Each probe matrix is formed
/// once, summarized, and dropped.
pub fn score_trace(
    trace: &ProbeTrace,
    candidates: &CandidateMask,
    aggregators: &[Aggregator],
    meta: &ScoreMeta,
) -> Result<Vec<ScoreMatrix>> {
    let n = trace.num_nodes();
    if candidates.n() != n {
        return Err(Error::OutOfRange(format!("candidate grid is {0}x{0}, model has {n} nodes", candidates.n())));
    }
    let edges = candidates.edges();
    let per_edge: Vec<Vec<f64>> = edges
        .par_iter()
        .map(|&e| {
            let m = trace.gradient(e)?;
            aggregators.iter().map(|&a| aggregate(a, &m)).collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    aggregators
        .iter()
        .enumerate()
        .map(|(k, agg)| {
            let mut values = vec![f64::NAN; n * n];
            for (e, v) in edges.iter().zip(&per_edge) {
                values[e.src.0 * n + e.dst.0] = v[k];
            }
            ScoreMatrix::new(values, candidates.clone(), ScoreMeta { aggregator: agg.kind, eta: agg.eta, ..meta.clone() })
        })
        .collect()
}

/// Score matrix of `backbone` (head already pretrained) over `batches`.
pub fn compute_score_matrix(
    backbone: &Backbone,
    batches: &[Batch],
    candidates: &CandidateMask,
    aggregator: Aggregator,
    head_steps: usize,
    seed: u64,
) -> Result<ScoreMatrix> {
    let trace = ProbeTrace::capture(backbone, batches)?;
    let meta = ScoreMeta {
        aggregator: aggregator.kind,
        eta: aggregator.eta,
        batches: batches.len(),
        batch_size: batches[0].size,
        head_steps,
        seed,
    };
    Ok(score_trace(&trace, candidates, &[aggregator], &meta)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadReport {
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Train only the classifier head of a frozen backbone for `n_steps`.
/// `cfg.steps` is replaced by `n_steps`.
pub fn pretrain_head(
    backbone: &Backbone,
    train: &Dataset,
    n_steps: usize,
    cfg: &TrainConfig,
    cache: Option<&NodeCache>,
) -> Result<(Backbone, HeadReport)> {
    if !backbone.is_frozen() {
        return Err(Error::InvalidArgument("head pretraining expects a frozen backbone".into()));
    }
    let mut model = attach(backbone, &[], cfg.seed)?;
    model.set_mode(TrainMode::LinearProbe);
    let cache = cache.filter(|c| c.fits(&model));
    let initial = evaluate_with(&model, train, cache)?.loss;
    if n_steps == 0 {
        return Ok((backbone.clone(), HeadReport { steps: 0, initial_loss: initial, final_loss: initial }));
    }
    let cfg = TrainConfig { steps: n_steps, warmup_steps: cfg.warmup_steps.min(n_steps), ..*cfg };
    run_steps(&mut model, &cfg, train, cache, |_, _| Ok(()))?;
    let final_loss = evaluate_with(&model, train, cache)?.loss;
    let mut out = model.backbone();
    out.freeze();
    Ok((out, HeadReport { steps: n_steps, initial_loss: initial, final_loss }))
}

/// `count` batches of `size` examples drawn without replacement from `data`
/// (with reshuffling when it runs out).
pub fn score_batches(data: &Dataset, count: usize, size: usize, seed: u64) -> Result<Vec<Batch>> {
    if data.is_empty() || size == 0 {
        return Err(Error::InvalidArgument("scoring batches need data and a positive size".into()));
    }
    let mut r = rng::substream(seed, "score/batches");
    let mut order: Vec<usize> = Vec::new();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut idx = Vec::with_capacity(size);
        while idx.len() < size {
            if order.is_empty() {
                order = (0..data.len()).collect();
                order.shuffle(&mut r);
            }
            idx.push(order.pop().expect("refilled above"));
        }
        out.push(data.batch(&idx));
    }
    Ok(out)
}
