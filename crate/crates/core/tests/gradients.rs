use adaptgraph::adapters::AdapterKind;
use adaptgraph::harness::{run_gradient_suite, SUITE_EPS, SUITE_TOL};

#[test]
fn every_adapter_kind_passes_central_differences() {
    let rep = run_gradient_suite(0, SUITE_EPS, SUITE_TOL).unwrap();
    for kind in [AdapterKind::Parallel, AdapterKind::Sequential, AdapterKind::LongRange, AdapterKind::Recurrent] {
        assert!(rep.cases.iter().any(|c| c.kind == Some(kind)), "{kind:?} not covered");
    }
    for c in &rep.cases {
        assert!(c.coordinates > 0);
        assert_eq!(c.failures, 0, "{} max rel error {}", c.name, c.max_rel_error);
    }
    assert!(rep.passed());
}

#[test]
fn suite_passes_for_other_seeds() {
    for seed in [1, 2] {
        assert!(run_gradient_suite(seed, SUITE_EPS, SUITE_TOL).unwrap().passed());
    }
}
