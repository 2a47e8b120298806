//! The placement grid of a 4-block encoder: which edges are which kind, how
//! a mixed adapter set is scheduled, and what a training step costs.
//!
//! `cargo run --release --example adapter_graph`

use adaptgraph::adapters::{attach, build_pass_plan, classic_fraction, AdapterSpec, Edge, StepCost};
use adaptgraph::backbone::{site_of, Backbone, BackboneConfig, Batch, NodeId};

fn main() -> adaptgraph::Result<()> {
    let config = BackboneConfig::default();
    let n = config.num_nodes();

    println!("edge kinds on the {n}x{n} grid (row = src, column = dst):");
    for i in 0..n {
        let row: Vec<&str> = (0..n).map(|j| &Edge::new(i, j).kind().as_str()[..3]).collect();
        println!("  {i}: {}", row.join(" "));
    }
    println!("parallel and sequential cover {:.1}% of placements", 100.0 * classic_fraction(n));
    for j in [0, 1, 2, n - 1] {
        println!("node {j} is {:?}", site_of(NodeId(j), config.layers)?);
    }

    let specs = [
        AdapterSpec::bottleneck(Edge::new(1, 2), 8),
        AdapterSpec::bottleneck(Edge::new(4, 4), 8),
        AdapterSpec::bottleneck(Edge::new(0, 6), 8),
        AdapterSpec::bottleneck(Edge::new(7, 3), 8),
    ];
    let plan = build_pass_plan(&specs, config.layers)?;
    match plan.truncation {
        Some(t) => println!("\nfirst pass runs up to node {t}"),
        None => println!("\nsingle pass"),
    }
    for j in 0..n {
        let (f, r, s) = (&plan.forward_into[j], &plan.recurrent_into[j], &plan.sequential_at[j]);
        if !(f.is_empty() && r.is_empty() && s.is_empty()) {
            println!("  node {j}: forward {f:?} recurrent {r:?} sequential {s:?}");
        }
    }

    let mut backbone = Backbone::init(config, 0)?;
    backbone.freeze();
    let model = attach(&backbone, &specs, 0)?;
    let batch = Batch::new((0..4 * config.seq_len).map(|t| t % config.vocab).collect(), vec![0, 1, 2, 3], config.seq_len)?;
    let bare = backbone.forward_trace(&batch, &[])?.0;
    println!("\nzero-initialized adapters change the logits by {:.1e}", model.logits(&batch)?.max_abs_diff(&bare));
    let step = model.loss_and_grads(&batch)?;
    println!(
        "one step: {} block evaluations vs {} without adapters ({} trainable parameters)",
        step.cost.total(),
        StepCost::baseline(config.layers),
        model.trainable_count()
    );
    Ok(())
}
