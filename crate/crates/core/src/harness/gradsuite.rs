use serde::Serialize;

use crate::adapters::{attach, AdapterKind, AdapterSpec, Edge, TrainMode};
use crate::backbone::{Backbone, BackboneConfig, Batch};
use crate::error::Result;
use crate::numerics::{finite_difference_check, rng};

pub const SUITE_EPS: f64 = 1e-5;
pub const SUITE_TOL: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct CaseReport {
    pub name: String,
    pub kind: Option<AdapterKind>,
    pub tensors: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub eps: f64,
    pub tol: f64,
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.failures == 0)
    }
}

/// The model every case runs on: two blocks, width 8.
pub fn suite_backbone(seed: u64) -> Result<Backbone> {
    let cfg = BackboneConfig { layers: 2, d_model: 8, heads: 2, d_ffn: 16, vocab: 11, seq_len: 5, num_classes: 3 };
    Backbone::init(cfg, seed)
}

fn suite_batch(cfg: &BackboneConfig, seed: u64) -> Result<Batch> {
    use rand::Rng as _;
    let mut r = rng::substream(seed, "gradsuite/batch");
    let size = 3;
    let tokens = (0..size * cfg.seq_len).map(|_| r.random_range(0..cfg.vocab)).collect();
    let labels = (0..size).map(|_| r.random_range(0..cfg.num_classes)).collect();
    Batch::new(tokens, labels, cfg.seq_len)
}

/// One adapter per kind (plus the linear form), each with every parameter
/// moved off its zero-output initialization, and full fine-tuning of the
/// bare backbone. Checks every trainable coordinate by central differences.
pub fn run_gradient_suite(seed: u64, eps: f64, tol: f64) -> Result<SuiteReport> {
    let backbone = suite_backbone(seed)?;
    let batch = suite_batch(&backbone.config, seed)?;
    let cases: Vec<(&str, Vec<AdapterSpec>, TrainMode)> = vec![
        ("parallel", vec![AdapterSpec::bottleneck(Edge::new(1, 2), 3)], TrainMode::Adapters),
        ("sequential", vec![AdapterSpec::bottleneck(Edge::new(2, 2), 3)], TrainMode::Adapters),
        ("long_range", vec![AdapterSpec::bottleneck(Edge::new(0, 3), 3)], TrainMode::Adapters),
        ("recurrent", vec![AdapterSpec::bottleneck(Edge::new(4, 1), 3)], TrainMode::Adapters),
        ("linear_recurrent", vec![AdapterSpec::linear(Edge::new(3, 1))], TrainMode::Adapters),
        (
            "mixed",
            vec![
                AdapterSpec::bottleneck(Edge::new(0, 1), 2),
                AdapterSpec::bottleneck(Edge::new(3, 3), 2),
                AdapterSpec::bottleneck(Edge::new(4, 2), 2),
            ],
            TrainMode::Adapters,
        ),
        ("full_finetune", vec![], TrainMode::FullFinetune),
    ];
    let mut reports = Vec::with_capacity(cases.len());
    for (name, specs, mode) in cases {
        let mut model = attach(&backbone, &specs, seed)?;
        model.set_mode(mode);
        let mut r = rng::substream(seed, &format!("gradsuite/{name}"));
        for k in 0..model.num_adapters() {
            for p in model.adapter_params_mut(k) {
                let shift = rng::normal_tensor(&mut r, p.tensor.shape(), 0.3);
                p.tensor.add_assign(&shift)?;
            }
        }
        let report = finite_difference_check(|t, v| model.loss_on_tape(t, v, &batch), model.params(), eps, tol)?;
        reports.push(CaseReport {
            name: name.into(),
            kind: (specs.len() == 1).then(|| specs[0].edge.kind()),
            tensors: report.params.len(),
            coordinates: report.params.iter().map(|p| p.analytic.len()).sum(),
            max_rel_error: report.max_rel_error,
            failures: report.failures.len(),
        });
    }
    Ok(SuiteReport { eps, tol, cases: reports })
}
