//! Placement scores from probe gradients.
//!
//! A zero-initialized linear map `W` from node `i` into node `j` leaves the
//! forward pass untouched, and its gradient is `X_i^T G_j`, where `X_i` holds
//! the activations at `i` and `G_j` the loss gradients at `j`. One backward
//! pass through the bare backbone therefore scores every candidate edge. The
//! resulting `d x d` matrix is reduced to a scalar by an [`Aggregator`].

pub mod aggregate;
pub mod matrix;
pub mod probe;

pub use aggregate::{aggregate, singular_values, srank, Aggregator, AggregatorKind, DEFAULT_ETA};
pub use matrix::{ScoreMatrix, ScoreMeta};
pub use probe::{
    compute_score_matrix, head_steps_for, pretrain_head, probe_gradient, score_batches, score_trace, HeadReport,
    ProbeTrace, HEAD_FRACTION,
};
