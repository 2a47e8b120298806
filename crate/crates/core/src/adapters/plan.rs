use super::edge::AdapterKind;
use super::spec::AdapterSpec;
use crate::backbone::NodeId;
use crate::error::Result;

/// Execution schedule for a set of adapters.
///
/// Lists hold indices into the spec slice, in spec order. A first,
/// adapter-free pass is needed only when a recurrent edge exists, and it
/// stops at the deepest node any recurrent adapter reads.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PassPlan {
    pub needs_first_pass: bool,
    pub truncation: Option<NodeId>,
    /// Parallel and long-range adapters writing each node.
    pub forward_into: Vec<Vec<usize>>,
    /// Recurrent adapters writing each node.
    pub recurrent_into: Vec<Vec<usize>>,
    /// Sequential adapters at each node.
    pub sequential_at: Vec<Vec<usize>>,
}

pub fn build_pass_plan(specs: &[AdapterSpec], layers: usize) -> Result<PassPlan> {
    let n = 2 * layers + 1;
    let mut plan = PassPlan {
        needs_first_pass: false,
        truncation: None,
        forward_into: vec![Vec::new(); n],
        recurrent_into: vec![Vec::new(); n],
        sequential_at: vec![Vec::new(); n],
    };
    for (k, spec) in specs.iter().enumerate() {
        spec.edge.check(layers)?;
        let dst = spec.edge.dst.0;
        match spec.edge.kind() {
            AdapterKind::Parallel | AdapterKind::LongRange => plan.forward_into[dst].push(k),
            AdapterKind::Sequential => plan.sequential_at[dst].push(k),
            AdapterKind::Recurrent => {
                plan.recurrent_into[dst].push(k);
                plan.needs_first_pass = true;
                let src = spec.edge.src;
                plan.truncation = Some(plan.truncation.map_or(src, |t| t.max(src)));
            }
        }
    }
    Ok(plan)
}
