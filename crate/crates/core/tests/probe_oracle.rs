mod common;

use adaptgraph::adapters::{attach, AdapterSpec};
use adaptgraph::scoring::{probe_gradient, ProbeTrace};
use adaptgraph::numerics::Tensor;
use adaptgraph::selection::CandidateMask;
use common::*;

#[test]
fn probe_gradient_equals_autodiff_at_every_edge() {
    let b = frozen_backbone(2, 5);
    let mut r = rng(20);
    let batches: Vec<_> = (0..3).map(|_| random_batch(&b.config, 4, &mut r)).collect();
    let trace = ProbeTrace::capture(&b, &batches).unwrap();
    let edges = CandidateMask::full(5).edges();
    assert_eq!(edges.len(), 25);
    for e in edges {
        let model = attach(&b, &[AdapterSpec::linear(e)], 0).unwrap();
        let w = model.adapter_range(0).start;
        let mut mean = Tensor::zeros(&[8, 8]);
        for batch in &batches {
            mean.add_assign(model.loss_and_grads(batch).unwrap().grads[w].as_ref().unwrap()).unwrap();
        }
        mean.scale_in_place(1.0 / 3.0);
        let analytic = trace.gradient(e).unwrap();
        assert!(analytic.max_abs_diff(&mean) <= 1e-10, "edge {e}: {}", analytic.max_abs_diff(&mean));
    }
}

#[test]
fn single_token_outer_product() {
    let mut x = Tensor::zeros(&[1, 4]);
    x.data_mut()[0] = 1.0;
    let mut g = Tensor::zeros(&[1, 4]);
    g.data_mut()[1] = 1.0;
    let m = probe_gradient(&x, &g, 1).unwrap();
    let nonzero: Vec<usize> = (0..16).filter(|&k| m.data()[k] != 0.0).collect();
    assert_eq!(nonzero, vec![1]);
    assert_eq!(m.data()[1], 1.0);
}
