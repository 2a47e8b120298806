use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the encoder. `layers` blocks give `2 * layers + 1` addressable
/// hidden-state nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ffn: usize,
    pub vocab: usize,
    pub seq_len: usize,
    pub num_classes: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            layers: 4,
            d_model: 64,
            heads: 4,
            d_ffn: 128,
            vocab: 32,
            seq_len: 16,
            num_classes: 8,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("d_ffn", self.d_ffn),
            ("vocab", self.vocab),
            ("seq_len", self.seq_len),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("backbone {name} must be >= 1")));
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::InvalidArgument(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.heads
            )));
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        num_nodes(self.layers)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Hidden states of an `layers`-block encoder: the input plus a post-MHA and
/// a post-FFN state per block.
pub fn num_nodes(layers: usize) -> usize {
    2 * layers + 1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_counts() {
        assert_eq!(num_nodes(12), 25);
        assert_eq!(num_nodes(1), 3);
        assert_eq!(num_nodes(4), 9);
    }

    #[test]
    fn validation() {
        assert!(BackboneConfig::default().validate().is_ok());
        let bad = BackboneConfig { heads: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        let zero = BackboneConfig { vocab: 0, ..Default::default() };
        assert!(zero.validate().is_err());
    }
}
