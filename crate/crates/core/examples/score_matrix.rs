//! Score every placement of a pretrained encoder for a new task from one
//! probe trace, under each aggregator.
//!
//! `cargo run --release --example score_matrix`

use adaptgraph::backbone::{pretrain_with, BackboneConfig};
use adaptgraph::harness::{score_task, ExperimentConfig, ScoreOptions};
use adaptgraph::scoring::{Aggregator, AggregatorKind};
use adaptgraph::selection::CandidateMask;

fn main() -> adaptgraph::Result<()> {
    let mut cfg = ExperimentConfig::quick();
    cfg.backbone = BackboneConfig { layers: 2, d_model: 32, heads: 2, d_ffn: 64, ..BackboneConfig::default() };
    cfg.pretrain_steps = 200;
    let (backbone, _) = pretrain_with(cfg.backbone, &cfg.source, cfg.pretrain_steps, cfg.seed, &cfg.pretrain)?;
    let data = cfg.target_data()?;

    let n = cfg.backbone.num_nodes();
    let aggregators: Vec<Aggregator> =
        AggregatorKind::ALL.iter().map(|&k| Aggregator::new(k, cfg.score.eta)).collect::<Result<_, _>>()?;
    let options =
        ScoreOptions { head_steps: cfg.head_steps(), batches: cfg.score.batches, batch_size: cfg.score.batch_size, seed: 0 };
    let outcome = score_task(&backbone, &data, &CandidateMask::full(n), &aggregators, &options, &cfg.train)?;
    println!(
        "head: {} steps, loss {:.3} -> {:.3}; probe loss {:.3}",
        outcome.head.steps, outcome.head.initial_loss, outcome.head.final_loss, outcome.probe_loss
    );

    for m in &outcome.matrices {
        println!("\n{} (row = src, column = dst)", m.meta.aggregator);
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:9.3e}", m.get(i, j).unwrap())).collect();
            println!("  {i}: {}", row.join(" "));
        }
    }
    let srank = outcome.matrices.last().unwrap();
    let dir = std::env::temp_dir().join("adaptgraph-example-scores");
    srank.write(&dir, "scores_srank")?;
    println!("\nsrank matrix written to {}", dir.display());
    Ok(())
}
