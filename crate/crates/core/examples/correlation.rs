//! Does the probe score predict which single placement trains best?
//! Sweep a small grid, score it, and rank-correlate the two.
//!
//! `cargo run --release --example correlation`

use adaptgraph::backbone::{pretrain_with, BackboneConfig};
use adaptgraph::harness::{correlation_table, score_task, single_adapter_sweep, ExperimentConfig, Rho, ScoreOptions, SweepOptions};
use adaptgraph::scoring::{Aggregator, AggregatorKind};
use adaptgraph::selection::CandidateMask;

fn main() -> adaptgraph::Result<()> {
    let mut cfg = ExperimentConfig::quick();
    cfg.backbone = BackboneConfig { layers: 2, d_model: 32, heads: 2, d_ffn: 64, ..BackboneConfig::default() };
    cfg.pretrain_steps = 200;
    cfg.train.steps = 80;
    let (backbone, _) = pretrain_with(cfg.backbone, &cfg.source, cfg.pretrain_steps, cfg.seed, &cfg.pretrain)?;
    let data = cfg.target_data()?;
    let mask = CandidateMask::full(cfg.backbone.num_nodes());

    let sweep = SweepOptions { repeats: 2, template: cfg.template(), threads: 0 };
    let records = single_adapter_sweep(&backbone, &data, &mask, &sweep, &cfg.train)?;
    let aggregators: Vec<Aggregator> =
        AggregatorKind::ALL.iter().map(|&k| Aggregator::new(k, cfg.score.eta)).collect::<Result<_, _>>()?;
    let options =
        ScoreOptions { head_steps: cfg.head_steps(), batches: cfg.score.batches, batch_size: cfg.score.batch_size, seed: 0 };
    let scores = score_task(&backbone, &data, &mask, &aggregators, &options, &cfg.train)?;

    let show = |r: &Rho| match r {
        Rho::Value(v) => format!("{v:+.3}"),
        Rho::Undefined(why) => format!("undefined ({why})"),
    };
    println!("{:<8} {:>14} {:>14}", "score", "rho(test acc)", "rho(train loss)");
    for report in correlation_table(&scores.matrices, &records)? {
        println!("{:<8} {:>14} {:>14}", report.aggregator, show(&report.rho_test_accuracy), show(&report.rho_train_loss));
    }
    Ok(())
}
