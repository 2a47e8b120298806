//! Independent reference implementations shared by the integration tests
//! and the acceptance runner.
#![allow(dead_code)]

use std::collections::BTreeSet;

use adaptgraph::adapters::params::apply_on_tape;
use adaptgraph::adapters::{Activation, AdaptedModel, AdapterForm, AdapterKind, AdapterSpec, Edge};
use adaptgraph::backbone::{Backbone, BackboneConfig, Batch, BoundBackbone};
use adaptgraph::numerics::{Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_config(layers: usize) -> BackboneConfig {
    BackboneConfig { layers, d_model: 8, heads: 2, d_ffn: 16, vocab: 13, seq_len: 6, num_classes: 4 }
}

pub fn frozen_backbone(layers: usize, seed: u64) -> Backbone {
    let mut b = Backbone::init(small_config(layers), seed).unwrap();
    b.freeze();
    b
}

pub fn random_batch(cfg: &BackboneConfig, size: usize, r: &mut ChaCha8Rng) -> Batch {
    let tokens = (0..size * cfg.seq_len).map(|_| r.random_range(0..cfg.vocab)).collect();
    let labels = (0..size).map(|_| r.random_range(0..cfg.num_classes)).collect();
    Batch::new(tokens, labels, cfg.seq_len).unwrap()
}

/// Random distinct edges with random adapter shapes. `allow` filters kinds.
pub fn random_specs(layers: usize, count: usize, r: &mut ChaCha8Rng, allow: impl Fn(AdapterKind) -> bool) -> Vec<AdapterSpec> {
    let n = 2 * layers + 1;
    let mut edges: Vec<Edge> =
        (0..n * n).map(|k| Edge::new(k / n, k % n)).filter(|e| allow(e.kind())).collect();
    edges.shuffle(r);
    edges
        .into_iter()
        .take(count)
        .map(|e| {
            if r.random_bool(0.2) {
                AdapterSpec::linear(e)
            } else {
                let activation = [Activation::Gelu, Activation::Relu, Activation::Identity][r.random_range(0..3)];
                AdapterSpec {
                    activation,
                    use_layer_norm: r.random_bool(0.5),
                    ..AdapterSpec::bottleneck(e, r.random_range(1..=6))
                }
            }
        })
        .collect()
}

/// Moves every adapter parameter off its initialization so adapters change
/// the output.
pub fn perturb_adapters(model: &mut AdaptedModel, r: &mut ChaCha8Rng) {
    for k in 0..model.num_adapters() {
        for p in model.adapter_params_mut(k) {
            for v in p.tensor.data_mut() {
                *v += r.random_range(-0.5..0.5);
            }
        }
    }
}

/// Single pass over the nodes with no schedule: each node is its residual
/// sum plus every adapter writing it, taken in spec order, then the
/// sequential adapters reading that sum. Valid only without recurrent edges.
pub fn direct_logits(model: &AdaptedModel, batch: &Batch) -> Tensor {
    let specs = model.specs();
    assert!(specs.iter().all(|s| s.edge.kind() != AdapterKind::Recurrent));
    let backbone = model.backbone();
    let mut tape = Tape::new();
    let bound = BoundBackbone::bind(&mut tape, &backbone, false).unwrap();
    let adapter_vars: Vec<Vec<_>> = (0..specs.len())
        .map(|k| model.adapter_params(k).iter().map(|p| tape.leaf(p.tensor.clone(), false).unwrap()).collect())
        .collect();
    let n = 2 * backbone.config.layers + 1;
    let mut nodes = Vec::with_capacity(n);
    for dst in 0..n {
        let mut z = if dst == 0 {
            bound.embed(&mut tape, batch).unwrap()
        } else {
            let f = bound.branch(&mut tape, dst, nodes[dst - 1]).unwrap();
            tape.add(nodes[dst - 1], f).unwrap()
        };
        for (k, s) in specs.iter().enumerate() {
            if s.edge.dst.0 == dst && s.edge.kind() != AdapterKind::Sequential {
                let a = apply_on_tape(&mut tape, s, &adapter_vars[k], nodes[s.edge.src.0]).unwrap();
                z = tape.add(z, a).unwrap();
            }
        }
        let mut x = z;
        for (k, s) in specs.iter().enumerate() {
            if s.edge.dst.0 == dst && s.edge.kind() == AdapterKind::Sequential {
                let a = apply_on_tape(&mut tape, s, &adapter_vars[k], z).unwrap();
                x = tape.add(x, a).unwrap();
            }
        }
        nodes.push(x);
    }
    let logits = bound.classify(&mut tape, nodes[n - 1]).unwrap();
    tape.value(logits).clone()
}

/// Step-by-step greedy selection written from the definition: at each step
/// every open cell's score is its original value times the discount of
/// every earlier pick.
pub fn gga_oracle(values: &[f64], open: &[bool], n: usize, picks: usize, gamma: f64) -> Vec<(usize, usize)> {
    let mut chosen: Vec<(usize, usize)> = Vec::new();
    let taken = |c: &Vec<(usize, usize)>, i, j| c.contains(&(i, j));
    for _ in 0..picks {
        let mut best: Option<((usize, usize), f64)> = None;
        for i in 0..n {
            for j in 0..n {
                if !open[i * n + j] || taken(&chosen, i, j) {
                    continue;
                }
                let mut s = values[i * n + j];
                for &(k, l) in &chosen {
                    let d = (i as i64 - k as i64).abs() + (j as i64 - l as i64).abs();
                    s *= 1.0 - gamma.powf(d as f64);
                }
                match best {
                    Some((_, b)) if s <= b => {}
                    _ => best = Some(((i, j), s)),
                }
            }
        }
        chosen.push(best.expect("enough open cells").0);
    }
    chosen
}

/// Rank by counting: `1 + #smaller + (#equal - 1) / 2`.
pub fn brute_ranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let less = xs.iter().filter(|&&y| y < x).count() as f64;
            let eq = xs.iter().filter(|&&y| y == x).count() as f64;
            1.0 + less + (eq - 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let (a, b) = (brute_ranks(xs), brute_ranks(ys));
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

pub fn distinct<T: Ord + Clone>(xs: &[T]) -> BTreeSet<T> {
    xs.iter().cloned().collect()
}

pub fn is_linear(s: &AdapterSpec) -> bool {
    s.form == AdapterForm::Linear
}
