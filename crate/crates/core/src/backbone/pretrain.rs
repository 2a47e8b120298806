use serde::{Deserialize, Serialize};

use super::config::BackboneConfig;
use super::model::Backbone;
use crate::adapters::{attach, TrainMode};
use crate::error::{Error, Result};
use crate::harness::task::{make_task, TaskSpec};
use crate::harness::train::{evaluate, fit, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    /// Mean training-split loss before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub test_accuracy: f64,
    pub chance: f64,
}

/// Source-task training options; `steps` and `seed` of `train` are
/// overridden by the call arguments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainOptions {
    pub train: TrainConfig,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            train: TrainConfig { base_lr: 0.05, batch_size: 32, warmup_steps: 100, ..TrainConfig::default() },
        }
    }
}

/// Train every backbone tensor end to end on `task` with default options,
/// then freeze all but the head.
pub fn pretrain_backbone(
    config: BackboneConfig,
    task: &TaskSpec,
    steps: usize,
    seed: u64,
) -> Result<(Backbone, PretrainReport)> {
    pretrain_with(config, task, steps, seed, &PretrainOptions::default())
}

pub fn pretrain_with(
    config: BackboneConfig,
    task: &TaskSpec,
    steps: usize,
    seed: u64,
    options: &PretrainOptions,
) -> Result<(Backbone, PretrainReport)> {
    if task.vocab != config.vocab || task.seq_len != config.seq_len || task.num_classes != config.num_classes {
        return Err(Error::InvalidArgument(format!(
            "task shape {}/{}/{} does not match backbone {}/{}/{}",
            task.vocab, task.seq_len, task.num_classes, config.vocab, config.seq_len, config.num_classes
        )));
    }
    let data = make_task(task)?;
    let init = Backbone::init(config, seed)?;
    let mut model = attach(&init, &[], seed)?;
    model.set_mode(TrainMode::FullFinetune);
    let initial = evaluate(&model, &data.train)?;
    let cfg = TrainConfig { steps, seed, warmup_steps: options.train.warmup_steps.min(steps), ..options.train };
    let (final_loss, test_accuracy) = if steps == 0 {
        (initial.loss, evaluate(&model, &data.test)?.accuracy)
    } else {
        let m = fit(&mut model, &cfg, &data)?;
        (m.final_train_loss, m.test_accuracy)
    };
    let mut backbone = model.backbone();
    backbone.freeze();
    let report = PretrainReport {
        steps,
        initial_loss: initial.loss,
        final_loss,
        test_accuracy,
        chance: 1.0 / config.num_classes as f64,
    };
    Ok((backbone, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (BackboneConfig, TaskSpec) {
        let cfg = BackboneConfig { layers: 1, d_model: 16, heads: 2, d_ffn: 32, ..BackboneConfig::default() };
        (cfg, TaskSpec::majority(4).with_splits(256, 32, 64))
    }

    #[test]
    fn zero_steps_gives_frozen_init() {
        let (cfg, task) = small();
        let (b, r) = pretrain_backbone(cfg, &task, 0, 7).unwrap();
        assert!(b.is_frozen());
        let mut init = Backbone::init(cfg, 7).unwrap();
        init.freeze();
        assert_eq!(b, init);
        assert_eq!(r.initial_loss, r.final_loss);
    }

    #[test]
    fn training_lowers_loss_and_is_reproducible() {
        let (cfg, task) = small();
        let (a, r) = pretrain_backbone(cfg, &task, 60, 7).unwrap();
        let (b, _) = pretrain_backbone(cfg, &task, 60, 7).unwrap();
        assert!(r.final_loss < r.initial_loss, "{r:?}");
        assert_eq!(a.frozen_block_bytes(), b.frozen_block_bytes());
    }

    #[test]
    fn mismatched_task_is_rejected() {
        let (cfg, task) = small();
        let task = TaskSpec { num_classes: 4, ..task };
        assert!(pretrain_backbone(cfg, &task, 1, 0).is_err());
    }
}
