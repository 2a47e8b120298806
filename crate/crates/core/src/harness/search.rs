use serde::{Deserialize, Serialize};

use super::stats::{mean, std_dev};
use super::sweep::{run_pool, CellFailure};
use super::task::TaskData;
use super::train::{train_transfer_cached, TaskCache, TrainConfig};
use crate::adapters::{AdapterSpec, Edge, TrainMode};
use crate::backbone::Backbone;
use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::selection::{positional_select, positional_sequential, random_select, CandidateMask, Position};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub samples: usize,
    pub num_adapters: usize,
    /// Seeds per placement: `train.seed, train.seed + 1, ..`.
    pub repeats: usize,
    pub template: AdapterSpec,
    pub threads: usize,
}

/// One placement set and its runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementOutcome {
    pub label: String,
    pub mode: TrainMode,
    pub edges: Vec<Edge>,
    pub seeds: Vec<u64>,
    pub test_accuracy: Vec<f64>,
    pub final_train_loss: Vec<f64>,
    pub failures: Vec<CellFailure>,
    pub mean_test_accuracy: Option<f64>,
    pub std_test_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub seed: u64,
    /// Sampled placements in draw order; the edge lists allow an exact re-run.
    pub samples: Vec<PlacementOutcome>,
    /// Sample indices by mean test accuracy, best first. Samples with no
    /// successful run come last.
    pub ranking: Vec<usize>,
    /// Best mean test accuracy over the samples, with the sample count it was
    /// taken over.
    pub max_mean_test_accuracy: Option<f64>,
    pub sample_count: usize,
    /// Fixed placements: last-k parallel, last-k sequential and linear probe.
    pub baselines: Vec<PlacementOutcome>,
}

impl SearchReport {
    pub fn baseline(&self, label: &str) -> Option<&PlacementOutcome> {
        self.baselines.iter().find(|b| b.label == label)
    }
}

/// Placement sets drawn for `random_search`, reproducible from `seed`.
pub fn sample_placements(candidates: &CandidateMask, samples: usize, num_adapters: usize, seed: u64) -> Result<Vec<Vec<Edge>>> {
    (0..samples)
        .map(|s| Ok(random_select(candidates, num_adapters, rng::derive_seed(seed, &format!("search/sample/{s}")))?.edges))
        .collect()
}

/// Trains `options.samples` random placements of `options.num_adapters`
/// adapters, plus the fixed baselines, and ranks the samples.
pub fn random_search(
    backbone: &Backbone,
    data: &TaskData,
    candidates: &CandidateMask,
    options: &SearchOptions,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<SearchReport> {
    let layers = backbone.config.layers;
    if options.samples == 0 || options.repeats == 0 || options.num_adapters == 0 {
        return Err(Error::InvalidArgument("random search needs samples, repeats and adapters".into()));
    }
    if candidates.n() != backbone.config.num_nodes() {
        return Err(Error::OutOfRange(format!("candidate grid does not match {} nodes", backbone.config.num_nodes())));
    }
    let placements = sample_placements(candidates, options.samples, options.num_adapters, seed)?;
    let k = options.num_adapters.min(2 * layers);
    let mut sets: Vec<(String, TrainMode, Vec<Edge>)> =
        placements.into_iter().enumerate().map(|(i, e)| (format!("sample_{i}"), TrainMode::Adapters, e)).collect();
    sets.push((format!("parallel_last_{k}"), TrainMode::Adapters, positional_select(Position::Last, k, layers)?.edges));
    sets.push((format!("sequential_last_{k}"), TrainMode::Adapters, positional_sequential(Position::Last, k, layers)?.edges));
    sets.push(("linear_probe".into(), TrainMode::LinearProbe, vec![]));

    let cache = if backbone.is_frozen() { Some(TaskCache::build(backbone, data)?) } else { None };
    let seeds: Vec<u64> = (0..options.repeats as u64).map(|r| cfg.seed + r).collect();
    let jobs: Vec<(usize, u64)> = (0..sets.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let runs = run_pool(options.threads, jobs, |(i, seed)| {
        let specs: Vec<AdapterSpec> = sets[i].2.iter().map(|&e| options.template.at(e)).collect();
        train_transfer_cached(backbone, &specs, sets[i].1, &cfg.with_seed(seed), data, cache.as_ref())
            .map(|(_, m)| (m.final_train_loss, m.test_accuracy))
    })?;

    let mut runs = runs.into_iter();
    let mut outcomes: Vec<PlacementOutcome> = sets
        .into_iter()
        .map(|(label, mode, edges)| {
            let mut o = PlacementOutcome {
                label,
                mode,
                edges,
                seeds: vec![],
                test_accuracy: vec![],
                final_train_loss: vec![],
                failures: vec![],
                mean_test_accuracy: None,
                std_test_accuracy: None,
            };
            for (&seed, run) in seeds.iter().zip(runs.by_ref()) {
                match run {
                    Ok((loss, acc)) => {
                        o.seeds.push(seed);
                        o.final_train_loss.push(loss);
                        o.test_accuracy.push(acc);
                    }
                    Err(e) => o.failures.push(CellFailure { seed, kind: e.kind().into(), message: e.to_string() }),
                }
            }
            if !o.seeds.is_empty() {
                o.mean_test_accuracy = Some(mean(&o.test_accuracy));
                o.std_test_accuracy = Some(std_dev(&o.test_accuracy));
            }
            o
        })
        .collect();
    let baselines = outcomes.split_off(options.samples);
    let mut ranking: Vec<usize> = (0..outcomes.len()).collect();
    let key = |i: usize| outcomes[i].mean_test_accuracy.unwrap_or(f64::NEG_INFINITY);
    ranking.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
    let max_mean_test_accuracy = outcomes.iter().filter_map(|o| o.mean_test_accuracy).reduce(f64::max);
    Ok(SearchReport { seed, sample_count: outcomes.len(), samples: outcomes, ranking, max_mean_test_accuracy, baselines })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::harness::task::{make_task, TaskSpec};

    #[test]
    fn placements_are_reproducible_and_unique() {
        let mask = CandidateMask::full(9);
        let a = sample_placements(&mask, 5, 8, 3).unwrap();
        assert_eq!(a, sample_placements(&mask, 5, 8, 3).unwrap());
        assert_ne!(a[0], a[1]);
        for p in &a {
            let u: std::collections::BTreeSet<_> = p.iter().collect();
            assert_eq!(u.len(), 8);
        }
    }

    #[test]
    fn tiny_search_ranks_every_sample() {
        let cfg = BackboneConfig { layers: 1, d_model: 8, heads: 2, d_ffn: 16, vocab: 32, seq_len: 16, num_classes: 8 };
        let mut b = Backbone::init(cfg, 0).unwrap();
        b.freeze();
        let data = make_task(&TaskSpec::position_probe(0, 1).with_splits(64, 16, 16)).unwrap();
        let train = TrainConfig { steps: 4, batch_size: 8, warmup_steps: 1, ..TrainConfig::default() };
        let opts = SearchOptions {
            samples: 3,
            num_adapters: 2,
            repeats: 1,
            template: AdapterSpec::bottleneck(Edge::new(0, 0), 2),
            threads: 1,
        };
        let r = random_search(&b, &data, &CandidateMask::full(3), &opts, &train, 7).unwrap();
        assert_eq!(r.samples.len(), 3);
        let mut sorted = r.ranking.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        let best = r.samples[r.ranking[0]].mean_test_accuracy;
        assert_eq!(best, r.max_mean_test_accuracy);
        assert_eq!(r.baseline("parallel_last_2").unwrap().edges, vec![Edge::new(0, 1), Edge::new(1, 2)]);
        assert!(r.baseline("linear_probe").unwrap().edges.is_empty());
        assert_eq!(r, random_search(&b, &data, &CandidateMask::full(3), &opts, &train, 7).unwrap());
    }
}
