use sha2::{Digest, Sha256};

use super::model::{AdaptedModel, TrainMode};
use crate::backbone::{Backbone, Batch, NodeId};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Adapter-free node values of a frozen backbone for every example of a
/// fixed dataset.
///
/// With the backbone frozen, every node before the first adapter
/// destination and every first-pass value equals the bare backbone's, so a
/// training step can start from the cached values instead of recomputing
/// them. The cache is tied to the frozen tensors by a digest.
#[derive(Clone, Debug)]
pub struct NodeCache {
    /// Per node, `[examples, seq_len, d_model]` flattened.
    nodes: Vec<Vec<f64>>,
    seq_len: usize,
    d_model: usize,
    examples: usize,
    digest: [u8; 32],
}

const BUILD_CHUNK: usize = 256;

fn digest(frozen: &[u8]) -> [u8; 32] {
    Sha256::digest(frozen).into()
}

impl NodeCache {
    /// Trace every node of `backbone` over `tokens` (rows of `seq_len`).
    pub fn build(backbone: &Backbone, tokens: &[usize], seq_len: usize) -> Result<Self> {
        let cfg = backbone.config;
        if seq_len != cfg.seq_len || tokens.len() % seq_len != 0 {
            return Err(Error::InvalidArgument(format!("{} tokens do not form rows of length {}", tokens.len(), cfg.seq_len)));
        }
        let examples = tokens.len() / seq_len;
        let all: Vec<NodeId> = (0..cfg.num_nodes()).map(NodeId).collect();
        let mut nodes = vec![Vec::with_capacity(tokens.len() * cfg.d_model); all.len()];
        for rows in tokens.chunks(BUILD_CHUNK * seq_len) {
            let size = rows.len() / seq_len;
            let batch = Batch { tokens: rows.to_vec(), labels: vec![0; size], size, seq_len };
            let (_, trace) = backbone.forward_trace(&batch, &all)?;
            for (slot, t) in nodes.iter_mut().zip(trace.activations.values()) {
                slot.extend_from_slice(t.data());
            }
        }
        Ok(NodeCache { nodes, seq_len, d_model: cfg.d_model, examples, digest: digest(&backbone.frozen_block_bytes()) })
    }

    pub fn examples(&self) -> usize {
        self.examples
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    /// Whether the cached values are valid for `model`: its backbone must be
    /// frozen in the current mode and equal to the one traced.
    pub fn fits(&self, model: &AdaptedModel) -> bool {
        model.mode() != TrainMode::FullFinetune && self.digest == digest(&model.frozen_block_bytes())
    }

    /// Values of nodes `0..count` for the examples at `indices`, each
    /// `[indices.len(), seq_len, d_model]`.
    pub fn gather(&self, indices: &[usize], count: usize) -> Result<Vec<Tensor>> {
        if let Some(bad) = indices.iter().find(|&&i| i >= self.examples) {
            return Err(Error::OutOfRange(format!("example {bad} not cached ({} cached)", self.examples)));
        }
        let row = self.seq_len * self.d_model;
        self.nodes[..count.min(self.nodes.len())]
            .iter()
            .map(|values| {
                let mut out = Vec::with_capacity(indices.len() * row);
                for &i in indices {
                    out.extend_from_slice(&values[i * row..(i + 1) * row]);
                }
                Tensor::new(vec![indices.len(), self.seq_len, self.d_model], out)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;

    #[test]
    fn cached_rows_match_direct_traces() {
        let cfg = BackboneConfig { layers: 2, d_model: 8, heads: 2, d_ffn: 16, vocab: 11, seq_len: 4, num_classes: 3 };
        let b = Backbone::init(cfg, 2).unwrap();
        let tokens: Vec<usize> = (0..40).map(|i| (i * 5 + 1) % 11).collect();
        let cache = NodeCache::build(&b, &tokens, 4).unwrap();
        assert_eq!(cache.examples(), 10);
        let got = cache.gather(&[7, 2], 5).unwrap();
        let mut rows = tokens[28..32].to_vec();
        rows.extend_from_slice(&tokens[8..12]);
        let batch = Batch::new(rows, vec![0, 0], 4).unwrap();
        let (_, trace) = b.forward_trace(&batch, &[NodeId(0), NodeId(4)]).unwrap();
        assert!(got[0].max_abs_diff(&trace.activations[&NodeId(0)]) < 1e-12);
        assert!(got[4].max_abs_diff(&trace.activations[&NodeId(4)]) < 1e-12);
        assert!(cache.gather(&[10], 1).is_err());
    }
}
