use std::fmt;

use serde::{Deserialize, Serialize};

use crate::backbone::NodeId;
use crate::error::{Error, Result};

/// Adapter placement: reads node `src`, writes node `dst`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
}

impl Edge {
    pub fn new(src: usize, dst: usize) -> Self {
        Edge { src: NodeId(src), dst: NodeId(dst) }
    }

    pub fn check(&self, layers: usize) -> Result<()> {
        let max = 2 * layers;
        if self.src.0 > max || self.dst.0 > max {
            return Err(Error::OutOfRange(format!("edge {self} outside nodes [0, {max}]")));
        }
        Ok(())
    }

    /// Kind of the edge; the kind is never stored separately.
    pub fn kind(&self) -> AdapterKind {
        let (s, d) = (self.src.0, self.dst.0);
        if s == d {
            AdapterKind::Sequential
        } else if s + 1 == d {
            AdapterKind::Parallel
        } else if s < d {
            AdapterKind::LongRange
        } else {
            AdapterKind::Recurrent
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.src, self.dst)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    Parallel,
    Sequential,
    LongRange,
    Recurrent,
}

impl AdapterKind {
    pub const ALL: [AdapterKind; 4] =
        [AdapterKind::Parallel, AdapterKind::Sequential, AdapterKind::LongRange, AdapterKind::Recurrent];

    pub fn as_str(&self) -> &'static str {
        match self {
            AdapterKind::Parallel => "parallel",
            AdapterKind::Sequential => "sequential",
            AdapterKind::LongRange => "long_range",
            AdapterKind::Recurrent => "recurrent",
        }
    }
}

pub fn classify_edge(edge: Edge, layers: usize) -> Result<AdapterKind> {
    edge.check(layers)?;
    Ok(edge.kind())
}

/// Share of the `n * n` placements covered by parallel and sequential edges.
pub fn classic_fraction(n: usize) -> f64 {
    (2 * n - 1) as f64 / (n * n) as f64
}
