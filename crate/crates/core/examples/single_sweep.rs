//! Train one adapter at every placement of a small encoder and see how much
//! the position matters.
//!
//! `cargo run --release --example single_sweep`

use adaptgraph::backbone::{pretrain_with, BackboneConfig};
use adaptgraph::harness::{single_adapter_sweep, summarize, ExperimentConfig, SweepOptions};
use adaptgraph::selection::CandidateMask;

fn main() -> adaptgraph::Result<()> {
    let mut cfg = ExperimentConfig::quick();
    cfg.backbone = BackboneConfig { layers: 2, d_model: 32, heads: 2, d_ffn: 64, ..BackboneConfig::default() };
    cfg.pretrain_steps = 200;
    cfg.train.steps = 80;
    let (backbone, _) = pretrain_with(cfg.backbone, &cfg.source, cfg.pretrain_steps, cfg.seed, &cfg.pretrain)?;
    let data = cfg.target_data()?;

    let n = cfg.backbone.num_nodes();
    let options = SweepOptions { repeats: 2, template: cfg.template(), threads: 0 };
    let records = single_adapter_sweep(&backbone, &data, &CandidateMask::full(n), &options, &cfg.train)?;

    println!("mean test accuracy (row = src, column = dst)");
    for i in 0..n {
        let row: Vec<String> =
            records[i * n..(i + 1) * n].iter().map(|r| r.mean_test_accuracy.map_or(" --- ".into(), |a| format!("{a:.3}"))).collect();
        println!("  {i}: {}", row.join(" "));
    }
    let summary = summarize(&records);
    println!("\n{} cells, {} runs, {} failed", summary.cells, summary.runs, summary.failed_runs);
    println!("spread {:.3}", summary.spread.unwrap_or(f64::NAN));
    println!("top-3: {}", summary.top3.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" "));
    for (kind, acc) in &summary.by_kind {
        println!("  {kind:<11} {acc:.3}");
    }
    Ok(())
}
