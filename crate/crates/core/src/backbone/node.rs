use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a hidden state in `[0, 2L]`.
///
/// Node 0 is the encoder input; block `l` (0-based) writes node `2l + 1`
/// after its attention sub-layer and node `2l + 2` after its feed-forward
/// sub-layer. Values are the post-residual sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    PostMha,
    PostFfn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeSite {
    Input,
    Block { layer: usize, site: Site },
}

pub fn node_of(layer: usize, site: Site, layers: usize) -> Result<NodeId> {
    if layer >= layers {
        return Err(Error::OutOfRange(format!("layer {layer} not in [0, {layers})")));
    }
    Ok(NodeId(match site {
        Site::PostMha => 2 * layer + 1,
        Site::PostFfn => 2 * layer + 2,
    }))
}

pub fn site_of(node: NodeId, layers: usize) -> Result<NodeSite> {
    let n = node.0;
    if n > 2 * layers {
        return Err(Error::OutOfRange(format!("node {n} not in [0, {}]", 2 * layers)));
    }
    if n == 0 {
        return Ok(NodeSite::Input);
    }
    let layer = (n - 1) / 2;
    let site = if n % 2 == 1 { Site::PostMha } else { Site::PostFfn };
    Ok(NodeSite::Block { layer, site })
}
