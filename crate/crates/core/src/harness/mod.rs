//! Synthetic transfer tasks, training, sweeps, random search, rank
//! correlation and report files.

pub mod correlation;
pub mod experiment;
pub mod gradsuite;
pub mod report;
pub mod search;
pub mod stats;
pub mod sweep;
pub mod task;
pub mod train;

pub use correlation::{correlation_report, correlation_table, dataset_correlation_matrix, CorrelationReport, DatasetCorrelation, Rho, ScatterPoint};
pub use gradsuite::{run_gradient_suite, SuiteReport, SUITE_EPS, SUITE_TOL};
pub use experiment::{score_task, AdapterDefaults, ExperimentConfig, ScoreOptions, ScoreOutcome};
pub use report::{content_hash, write_json, write_manifest, RunManifest};
pub use search::{random_search, sample_placements, PlacementOutcome, SearchOptions, SearchReport};
pub use stats::{average_ranks, mean, spearman, std_dev};
pub use sweep::{accuracy_spread, single_adapter_sweep, summarize, top_edges, CellFailure, SweepOptions, SweepRecord, SweepSummary};
pub use task::{make_task, Dataset, SplitSizes, TaskData, TaskFamily, TaskSpec};
pub use train::{
    evaluate, evaluate_with, fit, fit_cached, select_lr, train_transfer, train_transfer_cached, Evaluation, RunOutcome,
    TaskCache, TrainConfig, TrainMetrics, LR_GRID,
};
