use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mask::CandidateMask;
use crate::adapters::{AdapterSpec, Edge};
use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::scoring::ScoreMatrix;

pub const DEFAULT_GAMMA: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscountParams {
    pub gamma: f64,
}

impl DiscountParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        Ok(DiscountParams { gamma })
    }
}

impl Default for DiscountParams {
    fn default() -> Self {
        DiscountParams { gamma: DEFAULT_GAMMA }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Gga,
    Topk,
    Random,
    First,
    Last,
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Gga => "gga",
            Policy::Topk => "topk",
            Policy::Random => "random",
            Policy::First => "first",
            Policy::Last => "last",
        })
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gga" => Policy::Gga,
            "topk" => Policy::Topk,
            "random" => Policy::Random,
            "first" | "first_k" => Policy::First,
            "last" | "last_k" => Policy::Last,
            other => return Err(Error::InvalidArgument(format!("unknown selection policy {other:?}"))),
        })
    }
}

/// Chosen edges in pick order. Edges are unique.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub policy: Policy,
    pub edges: Vec<Edge>,
    /// Row-major scores as seen before each pick (GGA only). Masked and taken
    /// cells are `None`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<Vec<Option<f64>>>,
}

impl SelectionResult {
    /// One adapter per edge, shaped like `template`.
    pub fn to_specs(&self, template: &AdapterSpec) -> Vec<AdapterSpec> {
        self.edges.iter().map(|&e| template.at(e)).collect()
    }
}

/// `1 - gamma^(|i - k| + |j - l|)` over an `n x n` grid, row-major.
/// Zero at the center for every gamma, since `gamma^0 = 1`.
pub fn discount_field(n: usize, center: (usize, usize), gamma: f64) -> Result<Vec<f64>> {
    let (k, l) = center;
    if k >= n || l >= n {
        return Err(Error::OutOfRange(format!("center ({k}, {l}) outside a {n}x{n} grid")));
    }
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let d = i.abs_diff(k) + j.abs_diff(l);
            out.push(1.0 - gamma.powi(d as i32));
        }
    }
    Ok(out)
}

fn check_budget(n: usize, available: usize) -> Result<()> {
    if n > available {
        return Err(Error::InvalidArgument(format!("asked for {n} edges, only {available} candidates")));
    }
    Ok(())
}

/// Greedy argmax with multiplicative distance discounting. Ties go to the
/// smallest `(src, dst)`; taken cells are never revisited even when every
/// remaining score is non-positive.
pub fn gga_select(scores: &ScoreMatrix, n_pick: usize, discount: DiscountParams) -> Result<SelectionResult> {
    gga_impl(scores, n_pick, discount, false)
}

/// [`gga_select`] that also records the score grid before every pick.
pub fn gga_select_traced(scores: &ScoreMatrix, n_pick: usize, discount: DiscountParams) -> Result<SelectionResult> {
    gga_impl(scores, n_pick, discount, true)
}

fn gga_impl(scores: &ScoreMatrix, n_pick: usize, discount: DiscountParams, trace: bool) -> Result<SelectionResult> {
    let mask = scores.mask();
    let n = mask.n();
    check_budget(n_pick, mask.count())?;
    let mut s = scores.values().to_vec();
    let mut open: Vec<bool> = (0..n * n).map(|k| mask.contains(k / n, k % n)).collect();
    let mut edges = Vec::with_capacity(n_pick);
    let mut snapshots = Vec::new();
    for _ in 0..n_pick {
        if trace {
            snapshots.push(s.iter().zip(&open).map(|(&v, &o)| o.then_some(v)).collect());
        }
        // first strict maximum in row-major order is the lexicographic tie-break
        let mut best: Option<usize> = None;
        for k in 0..n * n {
            if open[k] && best.is_none_or(|b| s[k] > s[b]) {
                best = Some(k);
            }
        }
        let k = best.expect("budget checked against open cells");
        open[k] = false;
        edges.push(Edge::new(k / n, k % n));
        for (v, d) in s.iter_mut().zip(discount_field(n, (k / n, k % n), discount.gamma)?) {
            *v *= d;
        }
    }
    Ok(SelectionResult { policy: Policy::Gga, edges, snapshots })
}

/// The `n_pick` highest-scoring candidates, best first, ties to the smallest
/// `(src, dst)`.
pub fn topk_select(scores: &ScoreMatrix, n_pick: usize) -> Result<SelectionResult> {
    let mut cells = scores.scored_edges();
    check_budget(n_pick, cells.len())?;
    // scored_edges is row-major and the sort is stable
    cells.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(SelectionResult { policy: Policy::Topk, edges: cells.into_iter().take(n_pick).map(|c| c.0).collect(), snapshots: vec![] })
}

/// `n_pick` candidates drawn uniformly without replacement.
pub fn random_select(candidates: &CandidateMask, n_pick: usize, seed: u64) -> Result<SelectionResult> {
    let mut edges = candidates.edges();
    check_budget(n_pick, edges.len())?;
    edges.shuffle(&mut rng::substream(seed, "select/random"));
    edges.truncate(n_pick);
    Ok(SelectionResult { policy: Policy::Random, edges, snapshots: vec![] })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Position {
    First,
    Last,
}

/// The first or last `k` parallel edges `(i, i + 1)`, in node order.
pub fn positional_select(position: Position, k: usize, layers: usize) -> Result<SelectionResult> {
    let all: Vec<Edge> = (0..2 * layers).map(|i| Edge::new(i, i + 1)).collect();
    positional(position, k, all)
}

/// The first or last `k` sequential edges `(j, j)` over the block outputs
/// `1..=2L`, in node order.
pub fn positional_sequential(position: Position, k: usize, layers: usize) -> Result<SelectionResult> {
    let all: Vec<Edge> = (1..=2 * layers).map(|j| Edge::new(j, j)).collect();
    positional(position, k, all)
}

fn positional(position: Position, k: usize, all: Vec<Edge>) -> Result<SelectionResult> {
    check_budget(k, all.len())?;
    let (policy, edges) = match position {
        Position::First => (Policy::First, all[..k].to_vec()),
        Position::Last => (Policy::Last, all[all.len() - k..].to_vec()),
    };
    Ok(SelectionResult { policy, edges, snapshots: vec![] })
}
