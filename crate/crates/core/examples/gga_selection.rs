//! Greedy placement selection on a synthetic score grid, next to plain
//! top-N and random choice.
//!
//! `cargo run --release --example gga_selection`

use adaptgraph::scoring::{AggregatorKind, ScoreMatrix, ScoreMeta};
use adaptgraph::selection::{
    discount_field, gga_select_traced, random_select, topk_select, CandidateMask, DiscountParams,
};

fn main() -> adaptgraph::Result<()> {
    let n = 9;
    // two hot spots: a wide one around (6, 6) and a single cell at (1, 7)
    let values: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = ((k / n) as f64, (k % n) as f64);
            let wide = 10.0 - (i - 6.0).abs() - (j - 6.0).abs();
            if (k / n, k % n) == (1, 7) { 9.5 } else { wide.max(1.0) }
        })
        .collect();
    let meta = ScoreMeta { aggregator: AggregatorKind::Srank, eta: 0.01, batches: 0, batch_size: 0, head_steps: 0, seed: 0 };
    let scores = ScoreMatrix::new(values, CandidateMask::full(n), meta)?;

    println!("discount around (4, 4) with gamma 0.6, row 4: {:.3?}", &discount_field(n, (4, 4), 0.6)?[4 * n..5 * n]);

    let picks = 4;
    let top = topk_select(&scores, picks)?;
    println!("\ntop-{picks}:  {}", show(&top.edges));
    for gamma in [0.0, 0.3, 0.6, 0.9] {
        let sel = gga_select_traced(&scores, picks, DiscountParams::new(gamma)?)?;
        println!("gga {gamma:.1}: {}", show(&sel.edges));
    }
    println!("random: {}", show(&random_select(scores.mask(), picks, 7)?.edges));

    let sel = gga_select_traced(&scores, 2, DiscountParams::new(0.6)?)?;
    println!("\nscores left after the first pick (row 6):");
    let after: Vec<String> = sel.snapshots[1][6 * n..7 * n]
        .iter()
        .map(|v| v.map_or("  -  ".into(), |v| format!("{v:5.2}")))
        .collect();
    println!("  {}", after.join(" "));
    Ok(())
}

fn show(edges: &[adaptgraph::adapters::Edge]) -> String {
    edges.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(" ")
}
