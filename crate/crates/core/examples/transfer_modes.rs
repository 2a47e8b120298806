//! Transfer a pretrained encoder three ways: a linear probe, a GGA-selected
//! adapter set, and full fine-tuning.
//!
//! `cargo run --release --example transfer_modes`

use adaptgraph::adapters::TrainMode;
use adaptgraph::backbone::{pretrain_with, BackboneConfig};
use adaptgraph::harness::{score_task, train_transfer, ExperimentConfig, ScoreOptions};
use adaptgraph::scoring::Aggregator;
use adaptgraph::selection::{gga_select, CandidateMask, DiscountParams};

fn main() -> adaptgraph::Result<()> {
    let mut cfg = ExperimentConfig::quick();
    cfg.backbone = BackboneConfig { layers: 2, d_model: 32, heads: 2, d_ffn: 64, ..BackboneConfig::default() };
    cfg.pretrain_steps = 200;
    let (backbone, _) = pretrain_with(cfg.backbone, &cfg.source, cfg.pretrain_steps, cfg.seed, &cfg.pretrain)?;
    let data = cfg.target_data()?;

    let options =
        ScoreOptions { head_steps: cfg.head_steps(), batches: cfg.score.batches, batch_size: cfg.score.batch_size, seed: 0 };
    let mask = CandidateMask::full(cfg.backbone.num_nodes());
    let scores = score_task(&backbone, &data, &mask, &[Aggregator::srank(cfg.score.eta)?], &options, &cfg.train)?;
    let selection = gga_select(&scores.matrices[0], 4, DiscountParams::new(cfg.select.gamma)?)?;
    let specs = selection.to_specs(&cfg.template());
    println!("selected: {}", selection.edges.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" "));

    for (name, mode, specs) in [
        ("linear probe", TrainMode::LinearProbe, &[][..]),
        ("adapters", TrainMode::Adapters, &specs[..]),
        ("full fine-tune", TrainMode::FullFinetune, &[][..]),
    ] {
        let (model, m) = train_transfer(&backbone, specs, mode, &cfg.train, &data)?;
        println!(
            "{name:<15} {:>6} trainable  train loss {:.3}  test accuracy {:.3}",
            model.trainable_count(),
            m.final_train_loss,
            m.test_accuracy
        );
    }
    Ok(())
}
