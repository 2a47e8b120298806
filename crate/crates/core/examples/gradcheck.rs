//! Central-difference check of every analytic gradient, one case per edge
//! kind plus mixed and full fine-tuning.
//!
//! `cargo run --release --example gradcheck`

use adaptgraph::harness::{run_gradient_suite, SUITE_EPS, SUITE_TOL};

fn main() -> adaptgraph::Result<()> {
    let report = run_gradient_suite(0, SUITE_EPS, SUITE_TOL)?;
    println!("eps {:.0e}, tolerance {:.0e}", report.eps, report.tol);
    for case in &report.cases {
        println!(
            "{:<18} {:>3} tensors {:>5} coords  max rel error {:.2e}  failures {}",
            case.name, case.tensors, case.coordinates, case.max_rel_error, case.failures
        );
    }
    println!("{}", if report.passed() { "all gradients agree" } else { "gradient mismatch" });
    Ok(())
}
