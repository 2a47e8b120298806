//! Random multi-adapter placements against the positional baselines.
//!
//! `cargo run --release --example random_search`

use adaptgraph::backbone::{pretrain_with, BackboneConfig};
use adaptgraph::harness::{random_search, ExperimentConfig, PlacementOutcome, SearchOptions};
use adaptgraph::selection::CandidateMask;

fn main() -> adaptgraph::Result<()> {
    let mut cfg = ExperimentConfig::quick();
    cfg.backbone = BackboneConfig { layers: 2, d_model: 32, heads: 2, d_ffn: 64, ..BackboneConfig::default() };
    cfg.pretrain_steps = 200;
    cfg.train.steps = 80;
    let (backbone, _) = pretrain_with(cfg.backbone, &cfg.source, cfg.pretrain_steps, cfg.seed, &cfg.pretrain)?;
    let data = cfg.target_data()?;

    let options = SearchOptions { samples: 6, num_adapters: 4, repeats: 2, template: cfg.template(), threads: 0 };
    let mask = CandidateMask::full(cfg.backbone.num_nodes());
    let report = random_search(&backbone, &data, &mask, &options, &cfg.train, cfg.seed)?;

    println!("samples, best first:");
    for &k in &report.ranking {
        show(&report.samples[k]);
    }
    println!("baselines:");
    for b in &report.baselines {
        show(b);
    }
    Ok(())
}

fn show(p: &PlacementOutcome) {
    let edges: Vec<String> = p.edges.iter().map(|e| e.to_string()).collect();
    println!(
        "  {:<18} {:.3} +- {:.3}  {}",
        p.label,
        p.mean_test_accuracy.unwrap_or(f64::NAN),
        p.std_test_accuracy.unwrap_or(f64::NAN),
        edges.join(" ")
    );
}
