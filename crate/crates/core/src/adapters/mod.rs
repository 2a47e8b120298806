//! Adapter placements on the hidden-state graph and their execution.
//!
//! An edge `(src, dst)` reads node `src` and adds the adapter output into
//! node `dst`. Parallel (`src = dst - 1`) and long-range (`src < dst - 1`)
//! adapters add into the residual sum that forms `dst`; sequential adapters
//! (`src = dst`) rewrite the node in place from its pre-adapter value;
//! recurrent adapters (`src > dst`) read the adapter-free value of `src`
//! from a first pass and add it at `dst` in the second.

pub mod cache;
pub mod edge;
pub mod model;
pub mod params;
pub mod plan;
pub mod spec;

pub use cache::NodeCache;
pub use edge::{classic_fraction, classify_edge, AdapterKind, Edge};
pub use model::{adapted_forward, attach, AdaptedModel, ForwardOutput, StepCost, StepResult, TrainMode};
pub use params::{adapter_apply, init_adapter_params};
pub use plan::{build_pass_plan, PassPlan};
pub use spec::{read_specs, specs_from_json, specs_to_json, Activation, AdapterForm, AdapterSpec, DEFAULT_RANK};
