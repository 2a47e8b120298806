//! Placement selectors over a score matrix, plus the candidate grid.

pub mod mask;
pub mod policy;

pub use mask::{stride_candidates, CandidateMask};
pub use policy::{
    discount_field, gga_select, gga_select_traced, positional_select, positional_sequential, random_select,
    topk_select, DiscountParams, Policy, Position, SelectionResult, DEFAULT_GAMMA,
};
