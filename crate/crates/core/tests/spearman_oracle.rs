mod common;

use adaptgraph::harness::{average_ranks, spearman};
use common::*;
use rand::Rng;

#[test]
fn matches_rank_then_pearson_with_ties() {
    let mut r = rng(40);
    let mut checked = 0;
    while checked < 100 {
        let n = r.random_range(2..40);
        // small integer range forces ties
        let xs: Vec<f64> = (0..n).map(|_| r.random_range(0..6) as f64).collect();
        let ys: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        assert_eq!(average_ranks(&xs), brute_ranks(&xs));
        let Ok(rho) = spearman(&xs, &ys) else { continue };
        assert!((rho - brute_spearman(&xs, &ys)).abs() <= 1e-12);
        checked += 1;
    }
}

#[test]
fn matches_without_ties() {
    let mut r = rng(41);
    for _ in 0..100 {
        let xs: Vec<f64> = (0..25).map(|_| r.random_range(0.0..1.0)).collect();
        let ys: Vec<f64> = (0..25).map(|_| r.random_range(0.0..1.0)).collect();
        assert!((spearman(&xs, &ys).unwrap() - brute_spearman(&xs, &ys)).abs() <= 1e-12);
    }
}
