mod common;

use adaptgraph::adapters::{adapter_apply, attach, AdapterKind, AdapterSpec, Edge, StepCost, TrainMode};
use adaptgraph::backbone::{BoundBackbone, NodeId};
use adaptgraph::numerics::Tape;
use common::*;

#[test]
fn zero_initialized_adapters_are_transparent() {
    let b = frozen_backbone(4, 1);
    let mut r = rng(10);
    for trial in 0..100 {
        let count = 1 + trial % 8;
        let specs = random_specs(4, count, &mut r, |_| true);
        let model = attach(&b, &specs, trial as u64).unwrap();
        let batch = random_batch(&b.config, 3, &mut r);
        let bare = b.forward_trace(&batch, &[]).unwrap().0;
        let adapted = model.logits(&batch).unwrap();
        assert!(adapted.max_abs_diff(&bare) <= 1e-12, "trial {trial}: {specs:?}");
    }
}

#[test]
fn planned_matches_direct_without_recurrent_edges() {
    let b = frozen_backbone(3, 2);
    let mut r = rng(11);
    for trial in 0..50 {
        let specs = random_specs(3, 1 + trial % 7, &mut r, |k| k != AdapterKind::Recurrent);
        let mut model = attach(&b, &specs, trial as u64).unwrap();
        perturb_adapters(&mut model, &mut r);
        let batch = random_batch(&b.config, 2, &mut r);
        let planned = model.logits(&batch).unwrap();
        let direct = direct_logits(&model, &batch);
        assert_eq!(planned.data(), direct.data(), "trial {trial}: {specs:?}");
        assert!(!model.plan().needs_first_pass);
    }
}

#[test]
fn recurrent_edge_reads_the_adapter_free_first_pass() {
    let b = frozen_backbone(2, 3);
    let mut r = rng(12);
    let spec = AdapterSpec::bottleneck(Edge::new(4, 1), 3);
    let mut model = attach(&b, &[spec], 0).unwrap();
    perturb_adapters(&mut model, &mut r);
    let batch = random_batch(&b.config, 2, &mut r);

    // pass 1: bare node 4; pass 2: node 1 gains A(node 4), the rest follows
    let (_, bare) = b.forward_trace(&batch, &[NodeId(4)]).unwrap();
    let a = adapter_apply(model.adapter_params(0), &spec, &bare.activations[&NodeId(4)]).unwrap();
    let mut tape = Tape::new();
    let bound = BoundBackbone::bind(&mut tape, &model.backbone(), false).unwrap();
    let x0 = bound.embed(&mut tape, &batch).unwrap();
    let f1 = bound.branch(&mut tape, 1, x0).unwrap();
    let z1 = tape.add(x0, f1).unwrap();
    let av = tape.constant(a).unwrap();
    let mut x = tape.add(z1, av).unwrap();
    for dst in 2..=4 {
        let f = bound.branch(&mut tape, dst, x).unwrap();
        x = tape.add(x, f).unwrap();
    }
    let logits = bound.classify(&mut tape, x).unwrap();
    let expect = tape.value(logits);
    let got = model.logits(&batch).unwrap();
    assert!(got.max_abs_diff(expect) <= 1e-12);
    assert_ne!(got.data(), b.forward_trace(&batch, &[]).unwrap().0.data());
}

#[test]
fn recurrent_sets_stay_within_the_cost_bound() {
    let b = frozen_backbone(4, 4);
    let mut r = rng(13);
    let bound = 3 * StepCost::baseline(4) / 2;
    let mut worst = 0;
    for trial in 0..50 {
        let mut specs = random_specs(4, 1 + trial % 6, &mut r, |k| k != AdapterKind::Recurrent);
        let rec = random_specs(4, 1 + trial % 3, &mut r, |k| k == AdapterKind::Recurrent);
        specs.retain(|s| rec.iter().all(|q| q.edge != s.edge));
        specs.extend(rec);
        for mode in [TrainMode::Adapters, TrainMode::FullFinetune] {
            let mut model = attach(&b, &specs, 0).unwrap();
            model.set_mode(mode);
            let cost = model.loss_and_grads(&random_batch(&b.config, 2, &mut r)).unwrap().cost;
            worst = worst.max(cost.total());
            assert!(cost.total() <= bound, "{cost:?} for {specs:?}");
        }
    }
    assert!(worst > StepCost::baseline(4));
}
