//! Pretrain a small encoder on the source task, save it, and load it back.
//!
//! `cargo run --release --example pretrain_backbone`

use adaptgraph::backbone::{load_checkpoint, pretrain_with, BackboneConfig};
use adaptgraph::harness::ExperimentConfig;

fn main() -> adaptgraph::Result<()> {
    let mut cfg = ExperimentConfig::quick();
    cfg.backbone = BackboneConfig { layers: 2, d_model: 32, heads: 2, d_ffn: 64, ..BackboneConfig::default() };
    cfg.pretrain_steps = 200;
    cfg.validate()?;

    let (backbone, report) = pretrain_with(cfg.backbone, &cfg.source, cfg.pretrain_steps, cfg.seed, &cfg.pretrain)?;
    println!("source task: {}", cfg.source.family.name());
    println!("train loss {:.3} -> {:.3}", report.initial_loss, report.final_loss);
    println!("test accuracy {:.3} (chance {:.3})", report.test_accuracy, report.chance);
    println!("frozen: {}", backbone.is_frozen());

    let dir = std::env::temp_dir().join("adaptgraph-example-backbone");
    adaptgraph::backbone::save_checkpoint(&backbone, &dir)?;
    let loaded = load_checkpoint(&dir)?;
    println!("checkpoint at {} reloads bit-identically: {}", dir.display(), loaded.frozen_block_bytes() == backbone.frozen_block_bytes());
    Ok(())
}
