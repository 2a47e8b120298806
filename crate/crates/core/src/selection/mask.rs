use serde::{Deserialize, Serialize};

use crate::adapters::Edge;
use crate::error::{Error, Result};

/// Cells `(src, dst)` of an `n x n` placement grid that may be scored and
/// selected, stored row-major (row = src, column = dst).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateMask {
    n: usize,
    cells: Vec<bool>,
}

impl CandidateMask {
    pub fn full(n: usize) -> Self {
        CandidateMask { n, cells: vec![true; n * n] }
    }

    pub fn empty(n: usize) -> Self {
        CandidateMask { n, cells: vec![false; n * n] }
    }

    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self> {
        let mut m = Self::empty(n);
        for e in edges {
            m.insert(*e)?;
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn insert(&mut self, e: Edge) -> Result<()> {
        let (i, j) = (e.src.0, e.dst.0);
        if i >= self.n || j >= self.n {
            return Err(Error::OutOfRange(format!("edge {e} outside a {n}x{n} grid", n = self.n)));
        }
        self.cells[i * self.n + j] = true;
        Ok(())
    }

    pub fn contains(&self, src: usize, dst: usize) -> bool {
        src < self.n && dst < self.n && self.cells[src * self.n + dst]
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// Candidate edges in row-major order.
    pub fn edges(&self) -> Vec<Edge> {
        (0..self.n * self.n).filter(|&k| self.cells[k]).map(|k| Edge::new(k / self.n, k % self.n)).collect()
    }
}

/// Cells whose row and column are both multiples of `stride`.
pub fn stride_candidates(n: usize, stride: usize) -> Result<CandidateMask> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be at least 1".into()));
    }
    let mut m = CandidateMask::empty(n);
    for i in (0..n).step_by(stride) {
        for j in (0..n).step_by(stride) {
            m.cells[i * n + j] = true;
        }
    }
    Ok(m)
}
