//! Adapter placement search for small transformer encoders.
//!
//! Hidden states of an `L`-block pre-LN encoder form the `2L + 1` nodes of
//! an adapter graph. An adapter is an edge `(src, dst)` that reads node
//! `src` and writes into node `dst`; edges that point backwards are run with
//! a two-pass forward. Placements are scored from the gradient of a
//! zero-initialized linear probe at every candidate edge and selected
//! greedily with a distance discount.

pub mod adapters;
pub mod backbone;
pub mod cli;
pub mod error;
pub mod harness;
pub mod numerics;
pub mod scoring;
pub mod selection;

pub use error::{Error, Result};
