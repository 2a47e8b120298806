use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{mean, std_dev};
use super::task::TaskData;
use super::train::{train_transfer_cached, TaskCache, TrainConfig};
use crate::adapters::{AdapterKind, AdapterSpec, Edge, TrainMode};
use crate::backbone::{site_of, Backbone, NodeSite, Site};
use crate::error::{Error, Result};
use crate::selection::CandidateMask;

/// Runs `f` over `jobs` on a pool of `threads` workers (0 picks the rayon
/// default). Output order follows input order regardless of scheduling.
pub(crate) fn run_pool<T, R, F>(threads: usize, jobs: Vec<T>, f: F) -> Result<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Send + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;
    Ok(pool.install(|| jobs.into_par_iter().map(f).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Seeds per edge: `train.seed, train.seed + 1, ..`.
    pub repeats: usize,
    /// Every run attaches one copy of this adapter at the swept edge.
    pub template: AdapterSpec,
    pub threads: usize,
}

impl SweepOptions {
    pub fn seeds(&self, cfg: &TrainConfig) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| cfg.seed + r).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub seed: u64,
    pub kind: String,
    pub message: String,
}

/// Outcomes of every run at one edge. Per-seed vectors cover the successful
/// runs only; the summary statistics are recomputed from them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub edge: Edge,
    pub kind: AdapterKind,
    /// Position of the written node: the input, or post-MHA / post-FFN of a block.
    pub dst_site: NodeSite,
    pub seeds: Vec<u64>,
    pub final_train_loss: Vec<f64>,
    pub test_accuracy: Vec<f64>,
    pub failures: Vec<CellFailure>,
    pub mean_test_accuracy: Option<f64>,
    pub std_test_accuracy: Option<f64>,
    pub mean_train_loss: Option<f64>,
    pub std_train_loss: Option<f64>,
}

impl SweepRecord {
    fn new(edge: Edge, layers: usize, runs: Vec<(u64, Result<(f64, f64)>)>) -> Result<Self> {
        let mut r = SweepRecord {
            edge,
            kind: edge.kind(),
            dst_site: site_of(edge.dst, layers)?,
            seeds: vec![],
            final_train_loss: vec![],
            test_accuracy: vec![],
            failures: vec![],
            mean_test_accuracy: None,
            std_test_accuracy: None,
            mean_train_loss: None,
            std_train_loss: None,
        };
        for (seed, run) in runs {
            match run {
                Ok((loss, acc)) => {
                    r.seeds.push(seed);
                    r.final_train_loss.push(loss);
                    r.test_accuracy.push(acc);
                }
                Err(e) => r.failures.push(CellFailure { seed, kind: e.kind().into(), message: e.to_string() }),
            }
        }
        if !r.seeds.is_empty() {
            r.mean_test_accuracy = Some(mean(&r.test_accuracy));
            r.std_test_accuracy = Some(std_dev(&r.test_accuracy));
            r.mean_train_loss = Some(mean(&r.final_train_loss));
            r.std_train_loss = Some(std_dev(&r.final_train_loss));
        }
        Ok(r)
    }
}

/// Trains one adapter at every candidate edge for `options.repeats` seeds.
/// A failing run is recorded in its cell and the sweep continues.
pub fn single_adapter_sweep(
    backbone: &Backbone,
    data: &TaskData,
    candidates: &CandidateMask,
    options: &SweepOptions,
    cfg: &TrainConfig,
) -> Result<Vec<SweepRecord>> {
    let layers = backbone.config.layers;
    if candidates.n() != backbone.config.num_nodes() {
        return Err(Error::OutOfRange(format!(
            "candidate grid is {0}x{0}, model has {1} nodes",
            candidates.n(),
            backbone.config.num_nodes()
        )));
    }
    let edges = candidates.edges();
    if edges.is_empty() || options.repeats == 0 {
        return Err(Error::InvalidArgument("sweep needs at least one candidate and one repeat".into()));
    }
    let cache = if backbone.is_frozen() { Some(TaskCache::build(backbone, data)?) } else { None };
    let seeds = options.seeds(cfg);
    let jobs: Vec<(Edge, u64)> = edges.iter().flat_map(|&e| seeds.iter().map(move |&s| (e, s))).collect();
    let outcomes = run_pool(options.threads, jobs, |(edge, seed)| {
        let spec = options.template.at(edge);
        let run = train_transfer_cached(backbone, &[spec], TrainMode::Adapters, &cfg.with_seed(seed), data, cache.as_ref())
            .map(|(_, m)| (m.final_train_loss, m.test_accuracy));
        (seed, run)
    })?;
    let mut outcomes = outcomes.into_iter();
    edges
        .iter()
        .map(|&e| SweepRecord::new(e, layers, outcomes.by_ref().take(seeds.len()).collect()))
        .collect()
}

/// Edges with the `k` best mean test accuracies, best first, ties to the
/// smallest edge. Cells without a successful run are skipped.
pub fn top_edges(records: &[SweepRecord], k: usize) -> Vec<Edge> {
    let mut scored: Vec<(Edge, f64)> = records.iter().filter_map(|r| Some((r.edge, r.mean_test_accuracy?))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(e, _)| e).collect()
}

/// Max minus min of the per-cell mean test accuracies.
pub fn accuracy_spread(records: &[SweepRecord]) -> Option<f64> {
    let means: Vec<f64> = records.iter().filter_map(|r| r.mean_test_accuracy).collect();
    let max = means.iter().copied().reduce(f64::max)?;
    let min = means.iter().copied().reduce(f64::min)?;
    Some(max - min)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: usize,
    pub runs: usize,
    pub failed_runs: usize,
    pub spread: Option<f64>,
    pub top3: Vec<Edge>,
    /// Mean of the cell means per adapter kind.
    pub by_kind: BTreeMap<String, f64>,
    /// Mean of the cell means by the site of the written node.
    pub by_dst_site: BTreeMap<String, f64>,
    /// Mean of the cell means by the block of the written node.
    pub by_dst_block: BTreeMap<String, f64>,
}

pub fn summarize(records: &[SweepRecord]) -> SweepSummary {
    let group = |key: &dyn Fn(&SweepRecord) -> String| {
        let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in records {
            if let Some(m) = r.mean_test_accuracy {
                acc.entry(key(r)).or_default().push(m);
            }
        }
        acc.into_iter().map(|(k, v)| (k, mean(&v))).collect()
    };
    let site_name = |s: &NodeSite| match s {
        NodeSite::Input => "input".to_string(),
        NodeSite::Block { site: Site::PostMha, .. } => "post_mha".into(),
        NodeSite::Block { site: Site::PostFfn, .. } => "post_ffn".into(),
    };
    let block_name = |s: &NodeSite| match s {
        NodeSite::Input => "input".to_string(),
        NodeSite::Block { layer, .. } => format!("block_{layer}"),
    };
    SweepSummary {
        cells: records.len(),
        runs: records.iter().map(|r| r.seeds.len() + r.failures.len()).sum(),
        failed_runs: records.iter().map(|r| r.failures.len()).sum(),
        spread: accuracy_spread(records),
        top3: top_edges(records, 3),
        by_kind: group(&|r| r.kind.as_str().to_string()),
        by_dst_site: group(&|r| site_name(&r.dst_site)),
        by_dst_block: group(&|r| block_name(&r.dst_site)),
    }
}
