//! Small pre-LN transformer encoder with addressable hidden-state nodes.

pub mod checkpoint;
pub mod config;
pub mod model;
pub mod node;
pub mod pretrain;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{num_nodes, BackboneConfig};
pub use model::{ActivationTrace, Backbone, Batch, BoundBackbone};
pub use node::{node_of, site_of, NodeId, NodeSite, Site};
pub use pretrain::{pretrain_backbone, pretrain_with, PretrainOptions, PretrainReport};
