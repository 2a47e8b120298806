use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::task::{Dataset, TaskData};
use crate::adapters::{attach, AdaptedModel, AdapterSpec, NodeCache, TrainMode};
use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::numerics::{cosine_warmup_lr, rng, LrSchedule, SgdMomentum, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Validation accuracy is recorded every `eval_every` steps; 0 disables it.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch_size: 64,
            base_lr: 1e-2,
            warmup_steps: 50,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            eval_every: 0,
        }
    }
}

pub const LR_GRID: [f64; 3] = [1e-3, 1e-2, 1e-1];

impl TrainConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        TrainConfig { seed, ..self }
    }

    pub fn with_lr(self, base_lr: f64) -> Self {
        TrainConfig { base_lr, ..self }
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.base_lr, self.steps, self.warmup_steps.min(self.steps))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    /// Mini-batch loss at every step.
    pub loss_curve: Vec<f64>,
    /// `(step, accuracy)` on the validation split.
    pub val_curve: Vec<(usize, f64)>,
    /// Mean loss over the whole training split after the last step.
    pub final_train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    /// Largest block-evaluation count of any step.
    pub max_step_block_evals: usize,
}

/// Endless shuffled epochs over `n` examples.
struct BatchOrder {
    rng: rng::Rng,
    order: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    fn new(n: usize, seed: u64) -> Self {
        BatchOrder { rng: rng::substream(seed, "train/order"), order: (0..n).collect(), pos: n }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Bare-backbone node values for every split of a task. Lets runs on a
/// frozen backbone skip the blocks their adapters cannot affect; results
/// match uncached training.
#[derive(Clone, Debug)]
pub struct TaskCache {
    pub train: NodeCache,
    pub val: NodeCache,
    pub test: NodeCache,
}

impl TaskCache {
    pub fn build(backbone: &Backbone, data: &TaskData) -> Result<Self> {
        let one = |d: &Dataset| NodeCache::build(backbone, &d.tokens, d.seq_len);
        Ok(TaskCache { train: one(&data.train)?, val: one(&data.val)?, test: one(&data.test)? })
    }

    fn usable_for(&self, model: &AdaptedModel) -> bool {
        self.train.fits(model)
    }
}

/// Train the currently trainable parameters of `model` with SGD momentum and
/// a warmed-up cosine schedule, then evaluate on every split.
pub fn fit(model: &mut AdaptedModel, cfg: &TrainConfig, data: &TaskData) -> Result<TrainMetrics> {
    fit_cached(model, cfg, data, None)
}

/// As [`fit`], reusing `cache` when it belongs to the model's frozen
/// backbone; a cache that does not match is ignored.
pub fn fit_cached(
    model: &mut AdaptedModel,
    cfg: &TrainConfig,
    data: &TaskData,
    cache: Option<&TaskCache>,
) -> Result<TrainMetrics> {
    let cache = cache.filter(|c| c.usable_for(model));
    let mut val_curve = Vec::new();
    let (loss_curve, max_evals) = run_steps(model, cfg, &data.train, cache.map(|c| &c.train), |step, m| {
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
            val_curve.push((step, evaluate_with(m, &data.val, cache.map(|c| &c.val))?.accuracy));
        }
        Ok(())
    })?;
    let train = evaluate_with(model, &data.train, cache.map(|c| &c.train)).map_err(|e| diverged(e, cfg.steps))?;
    let val = evaluate_with(model, &data.val, cache.map(|c| &c.val))?;
    let test = evaluate_with(model, &data.test, cache.map(|c| &c.test))?;
    Ok(TrainMetrics {
        loss_curve,
        val_curve,
        final_train_loss: train.loss,
        train_accuracy: train.accuracy,
        val_accuracy: val.accuracy,
        test_accuracy: test.accuracy,
        max_step_block_evals: max_evals,
    })
}

/// The optimization loop shared by every trainer. `after_step` sees the
/// 1-based step count and the updated model. Returns the per-step losses and
/// the largest per-step block-evaluation count.
pub(crate) fn run_steps(
    model: &mut AdaptedModel,
    cfg: &TrainConfig,
    train: &Dataset,
    cache: Option<&NodeCache>,
    mut after_step: impl FnMut(usize, &AdaptedModel) -> Result<()>,
) -> Result<(Vec<f64>, usize)> {
    if train.is_empty() || cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("training needs a nonempty split and batch size".into()));
    }
    let schedule = cfg.schedule()?;
    let need = model.cached_nodes_needed();
    let mut opt = SgdMomentum::new(model.params(), cfg.momentum, cfg.weight_decay);
    let mut order = BatchOrder::new(train.len(), cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut max_evals = 0;
    for step in 0..cfg.steps {
        let idx = order.next(cfg.batch_size);
        let batch = train.batch(&idx);
        let prefix = cache.map(|c| c.gather(&idx, need)).transpose()?;
        let res = match model.loss_and_grads_with(&batch, prefix.as_deref()) {
            Ok(r) if r.loss.is_finite() => r,
            Ok(_) | Err(Error::NonFinite { .. }) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        max_evals = max_evals.max(res.cost.total());
        losses.push(res.loss);
        let lr = cosine_warmup_lr(step, &schedule)?;
        opt.step(model.params_mut(), &res.grads, lr)?;
        after_step(step + 1, model)?;
    }
    Ok((losses, max_evals))
}

fn diverged(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::Diverged { step },
        e => e,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

const EVAL_CHUNK: usize = 256;

/// Mean cross-entropy and accuracy over a split; an empty split scores 0.
pub fn evaluate(model: &AdaptedModel, data: &Dataset) -> Result<Evaluation> {
    evaluate_with(model, data, None)
}

/// As [`evaluate`], starting from cached node values of `data`.
pub fn evaluate_with(model: &AdaptedModel, data: &Dataset, cache: Option<&NodeCache>) -> Result<Evaluation> {
    if data.is_empty() {
        return Ok(Evaluation { loss: 0.0, accuracy: 0.0 });
    }
    let need = model.cached_nodes_needed();
    let (mut loss, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..data.len()).collect();
    for (chunk, batch) in idx.chunks(EVAL_CHUNK).zip(data.chunks(EVAL_CHUNK)) {
        let prefix = cache.map(|c| c.gather(chunk, need)).transpose()?;
        let logits = model.logits_with(&batch, prefix.as_deref())?;
        let (l, c) = loss_and_hits(&logits, &batch.labels);
        loss += l;
        correct += c;
    }
    let n = data.len() as f64;
    Ok(Evaluation { loss: loss / n, accuracy: correct as f64 / n })
}

/// Summed cross-entropy and number of argmax hits for a `[batch, classes]`
/// logit matrix. Ties in the argmax go to the smallest class.
pub fn loss_and_hits(logits: &Tensor, labels: &[usize]) -> (f64, usize) {
    let c = logits.last_dim();
    let mut loss = 0.0;
    let mut hits = 0;
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        let (arg, max) = row.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        hits += usize::from(arg == y);
    }
    (loss, hits)
}

/// Outcome of one transfer run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub metrics: TrainMetrics,
}

/// Transfer `backbone` to `data`: a fresh head from `cfg.seed`, fresh
/// adapters at `specs`, then training in `mode`. The input backbone is not
/// modified.
pub fn train_transfer(
    backbone: &Backbone,
    specs: &[AdapterSpec],
    mode: TrainMode,
    cfg: &TrainConfig,
    data: &TaskData,
) -> Result<(AdaptedModel, TrainMetrics)> {
    train_transfer_cached(backbone, specs, mode, cfg, data, None)
}

pub fn train_transfer_cached(
    backbone: &Backbone,
    specs: &[AdapterSpec],
    mode: TrainMode,
    cfg: &TrainConfig,
    data: &TaskData,
    cache: Option<&TaskCache>,
) -> Result<(AdaptedModel, TrainMetrics)> {
    let mut base = backbone.clone();
    base.reset_head(rng::derive_seed(cfg.seed, "transfer/head"));
    let mut model = attach(&base, specs, rng::derive_seed(cfg.seed, "transfer/adapters"))?;
    model.set_mode(mode);
    let metrics = fit_cached(&mut model, cfg, data, cache)?;
    Ok((model, metrics))
}

/// Learning rate from `grid` with the best validation accuracy when training
/// `specs`; ties go to the earlier grid entry.
pub fn select_lr(
    backbone: &Backbone,
    specs: &[AdapterSpec],
    cfg: &TrainConfig,
    data: &TaskData,
    grid: &[f64],
) -> Result<(f64, Vec<(f64, Option<f64>)>)> {
    let mut trials = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lr in grid {
        let acc = train_transfer(backbone, specs, TrainMode::Adapters, &cfg.with_lr(lr), data)
            .ok()
            .map(|(_, m)| m.val_accuracy);
        if let Some(a) = acc {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((lr, a));
            }
        }
        trials.push((lr, acc));
    }
    best.map(|(lr, _)| (lr, trials))
        .ok_or_else(|| Error::InvalidArgument("every learning rate in the grid diverged".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::Edge;
    use crate::backbone::BackboneConfig;
    use crate::harness::task::{make_task, TaskSpec};

    fn tiny() -> (Backbone, TaskData) {
        let cfg = BackboneConfig { layers: 2, d_model: 8, heads: 2, d_ffn: 16, vocab: 32, seq_len: 16, num_classes: 8 };
        let mut b = Backbone::init(cfg, 1).unwrap();
        b.freeze();
        (b, make_task(&TaskSpec::position_probe(2, 5).with_splits(128, 32, 32)).unwrap())
    }

    fn short() -> TrainConfig {
        TrainConfig { steps: 30, batch_size: 16, base_lr: 0.05, warmup_steps: 3, ..TrainConfig::default() }
    }

    #[test]
    fn batch_order_covers_each_epoch() {
        let mut o = BatchOrder::new(10, 3);
        let mut seen = o.next(10);
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn hits_and_loss_from_logits() {
        let logits = Tensor::from_rows(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let (l, h) = loss_and_hits(&logits, &[1, 0]);
        assert_eq!(h, 1);
        let expect = 2f64.ln() + (1.0 + (-2f64).exp()).ln();
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_keeps_backbone_frozen() {
        let (b, data) = tiny();
        let specs = [AdapterSpec::bottleneck(Edge::new(1, 2), 4), AdapterSpec::bottleneck(Edge::new(4, 1), 4)];
        let before = b.frozen_block_bytes();
        let (m1, a) = train_transfer(&b, &specs, TrainMode::Adapters, &short(), &data).unwrap();
        let (_, c) = train_transfer(&b, &specs, TrainMode::Adapters, &short(), &data).unwrap();
        assert_eq!(a, c);
        assert_eq!(m1.frozen_block_bytes(), before);
        assert!(a.loss_curve.iter().all(|l| l.is_finite()));
        assert_ne!(m1.adapter_params(0)[3].tensor, Tensor::zeros(&[4, 8]));
    }

    #[test]
    fn linear_probe_touches_only_the_head() {
        let (b, data) = tiny();
        let specs = [AdapterSpec::bottleneck(Edge::new(1, 2), 4)];
        let (m, _) = train_transfer(&b, &specs, TrainMode::LinearProbe, &short(), &data).unwrap();
        assert!(m.adapter_params(0)[3].tensor.data().iter().all(|&v| v == 0.0));
        let (bare, metrics) = train_transfer(&b, &[], TrainMode::LinearProbe, &short(), &data).unwrap();
        assert_eq!(bare.backbone().params(), m.backbone().params());
        assert!(metrics.final_train_loss.is_finite());
    }

    #[test]
    fn full_finetune_moves_the_backbone() {
        let (b, data) = tiny();
        let (m, _) = train_transfer(&b, &[], TrainMode::FullFinetune, &short(), &data).unwrap();
        assert_ne!(m.frozen_block_bytes(), b.frozen_block_bytes());
    }

    #[test]
    fn cached_training_matches_uncached() {
        let (b, data) = tiny();
        let cache = TaskCache::build(&b, &data).unwrap();
        for specs in [
            vec![AdapterSpec::bottleneck(Edge::new(2, 3), 4)],
            vec![AdapterSpec::bottleneck(Edge::new(4, 1), 4), AdapterSpec::bottleneck(Edge::new(2, 2), 4)],
            vec![AdapterSpec::bottleneck(Edge::new(0, 0), 4)],
            vec![],
        ] {
            let (_, plain) = train_transfer(&b, &specs, TrainMode::Adapters, &short(), &data).unwrap();
            let (_, cached) =
                train_transfer_cached(&b, &specs, TrainMode::Adapters, &short(), &data, Some(&cache)).unwrap();
            for (x, y) in plain.loss_curve.iter().zip(&cached.loss_curve) {
                assert!((x - y).abs() < 1e-9, "{specs:?}: {x} vs {y}");
            }
            assert!((plain.final_train_loss - cached.final_train_loss).abs() < 1e-9);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let (b, data) = tiny();
        let cfg = TrainConfig { base_lr: 1e12, ..short() };
        let err = train_transfer(&b, &[], TrainMode::FullFinetune, &cfg, &data).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }
}
