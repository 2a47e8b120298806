use std::path::Path;

use serde::{Deserialize, Serialize};

use super::task::{make_task, TaskData, TaskSpec};
use super::train::{TaskCache, TrainConfig, LR_GRID};
use crate::adapters::{Activation, AdapterSpec, Edge, DEFAULT_RANK};
use crate::backbone::{Backbone, BackboneConfig, PretrainOptions};
use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::scoring::{
    head_steps_for, pretrain_head, score_batches, score_trace, Aggregator, AggregatorKind, HeadReport, ProbeTrace,
    ScoreMatrix, ScoreMeta, DEFAULT_ETA,
};
use crate::selection::{CandidateMask, Policy, DEFAULT_GAMMA};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdapterDefaults {
    pub rank: usize,
    pub activation: Activation,
    pub layer_norm: bool,
}

impl Default for AdapterDefaults {
    fn default() -> Self {
        AdapterDefaults { rank: DEFAULT_RANK, activation: Activation::Gelu, layer_norm: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSection {
    pub stride: usize,
    pub repeats: usize,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection { stride: 1, repeats: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreSection {
    pub aggregator: AggregatorKind,
    pub eta: f64,
    /// Head-pretraining steps; `None` uses 2.5% of `train.steps`.
    pub head_steps: Option<usize>,
    pub batches: usize,
    pub batch_size: usize,
}

impl Default for ScoreSection {
    fn default() -> Self {
        ScoreSection { aggregator: AggregatorKind::Srank, eta: DEFAULT_ETA, head_steps: None, batches: 4, batch_size: 128 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectSection {
    pub policy: Policy,
    pub n: usize,
    pub gamma: f64,
}

impl Default for SelectSection {
    fn default() -> Self {
        SelectSection { policy: Policy::Gga, n: 8, gamma: DEFAULT_GAMMA }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSection {
    pub samples: usize,
    pub n: usize,
    pub repeats: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection { samples: 20, n: 8, repeats: 3 }
    }
}

/// Everything a CLI run needs. Missing JSON fields take the defaults of
/// [`ExperimentConfig::default`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Master seed: backbone init and the base seed of every training run.
    pub seed: u64,
    pub backbone: BackboneConfig,
    /// Source task for backbone pretraining.
    pub source: TaskSpec,
    pub pretrain_steps: usize,
    pub pretrain: PretrainOptions,
    /// Target task for transfer.
    pub target: TaskSpec,
    pub train: TrainConfig,
    pub lr_grid: Vec<f64>,
    pub adapter: AdapterDefaults,
    pub sweep: SweepSection,
    pub score: ScoreSection,
    pub select: SelectSection,
    pub search: SearchSection,
    /// Worker threads for sweeps and searches; 0 uses every core.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            backbone: BackboneConfig::default(),
            source: TaskSpec::majority(100),
            pretrain_steps: 300,
            pretrain: PretrainOptions::default(),
            target: TaskSpec::pattern_count(7, 8, 200),
            train: TrainConfig::default(),
            lr_grid: LR_GRID.to_vec(),
            adapter: AdapterDefaults::default(),
            sweep: SweepSection::default(),
            score: ScoreSection::default(),
            select: SelectSection::default(),
            search: SearchSection::default(),
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    /// Short transfer runs sized so that a full 81-cell, 3-seed sweep fits
    /// in minutes on one core.
    pub fn quick() -> Self {
        ExperimentConfig {
            target: TaskSpec::pattern_count(7, 8, 200).with_splits(1024, 256, 512),
            train: TrainConfig { steps: 150, batch_size: 16, base_lr: 0.1, warmup_steps: 15, ..TrainConfig::default() },
            score: ScoreSection { batches: 4, batch_size: 64, ..ScoreSection::default() },
            ..Self::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copy with the master seed and the base training seed set to `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        ExperimentConfig { seed, train: self.train.with_seed(seed), ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        for (name, t) in [("source", &self.source), ("target", &self.target)] {
            t.validate()?;
            if (t.vocab, t.seq_len, t.num_classes) != (self.backbone.vocab, self.backbone.seq_len, self.backbone.num_classes) {
                return Err(Error::InvalidArgument(format!("{name} task shape does not match the backbone")));
            }
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|&lr| !(lr > 0.0)) {
            return Err(Error::InvalidArgument("lr_grid needs positive entries".into()));
        }
        Aggregator::new(self.score.aggregator, self.score.eta)?;
        Ok(())
    }

    pub fn template(&self) -> AdapterSpec {
        AdapterSpec {
            activation: self.adapter.activation,
            use_layer_norm: self.adapter.layer_norm,
            ..AdapterSpec::bottleneck(Edge::new(0, 0), self.adapter.rank)
        }
    }

    pub fn head_steps(&self) -> usize {
        self.score.head_steps.unwrap_or_else(|| head_steps_for(self.train.steps))
    }

    pub fn target_data(&self) -> Result<TaskData> {
        make_task(&self.target)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub head_steps: usize,
    pub batches: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreOutcome {
    /// One matrix per requested aggregator, in request order.
    pub matrices: Vec<ScoreMatrix>,
    pub head: HeadReport,
    /// Mean loss over the scoring batches.
    pub probe_loss: f64,
}

/// Scores every candidate for transferring `backbone` to `data`: a fresh
/// head drawn as in a transfer run, `head_steps` of head-only training, then
/// one probe trace shared by all aggregators.
pub fn score_task(
    backbone: &Backbone,
    data: &TaskData,
    candidates: &CandidateMask,
    aggregators: &[Aggregator],
    options: &ScoreOptions,
    train: &TrainConfig,
) -> Result<ScoreOutcome> {
    if !backbone.is_frozen() {
        return Err(Error::InvalidArgument("scoring expects a frozen backbone".into()));
    }
    let mut base = backbone.clone();
    base.reset_head(rng::derive_seed(options.seed, "transfer/head"));
    let cache = TaskCache::build(&base, data)?;
    let cfg = train.with_seed(options.seed);
    let (headed, head) = pretrain_head(&base, &data.train, options.head_steps, &cfg, Some(&cache.train))?;
    let batches = score_batches(&data.train, options.batches, options.batch_size, options.seed)?;
    let trace = ProbeTrace::capture(&headed, &batches)?;
    let meta = ScoreMeta {
        aggregator: AggregatorKind::Srank,
        eta: DEFAULT_ETA,
        batches: options.batches,
        batch_size: options.batch_size,
        head_steps: options.head_steps,
        seed: options.seed,
    };
    let matrices = score_trace(&trace, candidates, aggregators, &meta)?;
    Ok(ScoreOutcome { matrices, head, probe_loss: trace.mean_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::stride_candidates;

    #[test]
    fn partial_json_takes_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"seed": 4, "sweep": {"stride": 3}}"#).unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.sweep.stride, 3);
        assert_eq!(cfg.sweep.repeats, 3);
        assert_eq!(cfg.backbone, BackboneConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.head_steps(), 25);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let cfg = ExperimentConfig::quick().with_seed(9);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.seed, 9);
        let mut bad = cfg.clone();
        bad.target.num_classes = 4;
        bad.target.family = crate::harness::TaskFamily::Majority;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn score_task_covers_candidates_and_repeats() {
        let bcfg = BackboneConfig { layers: 1, d_model: 8, heads: 2, d_ffn: 16, vocab: 32, seq_len: 16, num_classes: 8 };
        let mut b = Backbone::init(bcfg, 0).unwrap();
        b.freeze();
        let data = make_task(&TaskSpec::position_probe(0, 1).with_splits(64, 16, 16)).unwrap();
        let aggs: Vec<Aggregator> = AggregatorKind::ALL.iter().map(|&k| k.into()).collect();
        let opts = ScoreOptions { head_steps: 3, batches: 2, batch_size: 8, seed: 1 };
        let mask = stride_candidates(3, 1).unwrap();
        let train = TrainConfig { warmup_steps: 0, ..TrainConfig::default() };
        let a = score_task(&b, &data, &mask, &aggs, &opts, &train).unwrap();
        assert_eq!(a.matrices.len(), 6);
        assert_eq!(a.matrices[5].meta.aggregator, AggregatorKind::Srank);
        assert_eq!(a.matrices[0].meta.head_steps, 3);
        assert_eq!(a.matrices[0].scored_edges().len(), 9);
        assert_eq!(a, score_task(&b, &data, &mask, &aggs, &opts, &train).unwrap());
    }
}
