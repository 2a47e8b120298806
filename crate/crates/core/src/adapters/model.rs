use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use super::params::{apply_on_tape, init_adapter_params, param_count};
use super::plan::{build_pass_plan, PassPlan};
use super::spec::AdapterSpec;
use crate::backbone::model::{frozen_block_bytes, BoundBackbone, Layout};
use crate::backbone::{ActivationTrace, Backbone, BackboneConfig, Batch, NodeId};
use crate::error::{Error, Result};
use crate::numerics::rng;
use crate::numerics::{Parameter, Tape, Tensor, Var};

/// Which parameters a training run updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    /// Adapters and classifier head; backbone frozen.
    Adapters,
    /// Classifier head only.
    LinearProbe,
    /// Everything, adapters included.
    FullFinetune,
}

#[derive(Clone, Debug)]
struct AdapterSlot {
    spec: AdapterSpec,
    offset: usize,
    count: usize,
}

/// Block evaluations spent by one step. A forward evaluation is one call of
/// an attention or feed-forward sub-layer; a backward evaluation is one such
/// sub-layer receiving a gradient.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct StepCost {
    pub forward_block_evals: usize,
    pub backward_block_evals: usize,
}

impl StepCost {
    pub fn total(&self) -> usize {
        self.forward_block_evals + self.backward_block_evals
    }

    /// One full forward and backward pass of an adapter-free encoder.
    pub fn baseline(layers: usize) -> usize {
        4 * layers
    }
}

pub struct ForwardOutput {
    pub logits: Tensor,
    /// Second-pass node values.
    pub trace: ActivationTrace,
    /// Adapter-free first-pass values read by recurrent adapters.
    pub first_pass: BTreeMap<NodeId, Tensor>,
    pub cost: StepCost,
}

pub struct StepResult {
    pub loss: f64,
    /// Aligned with [`AdaptedModel::params`]; `None` for frozen entries.
    pub grads: Vec<Option<Tensor>>,
    pub cost: StepCost,
}

struct Recorded {
    logits: Var,
    nodes: Vec<Var>,
    first: BTreeMap<usize, Var>,
    forward_evals: usize,
}

const FIRST_PASS_REGION: u32 = 0;
const SECOND_PASS_REGION: u32 = 1000;

/// A backbone with adapters attached along graph edges.
#[derive(Clone, Debug)]
pub struct AdaptedModel {
    config: BackboneConfig,
    /// Backbone tensors in layout order, then each adapter's tensors.
    params: Vec<Parameter>,
    n_backbone: usize,
    slots: Vec<AdapterSlot>,
    plan: PassPlan,
    first_dst: usize,
    mode: TrainMode,
}

/// Attach freshly initialized adapters. The model starts in
/// [`TrainMode::Adapters`] and computes exactly the backbone's logits.
pub fn attach(backbone: &Backbone, specs: &[AdapterSpec], seed: u64) -> Result<AdaptedModel> {
    let config = backbone.config;
    let mut seen = HashSet::new();
    for spec in specs {
        spec.validate(config.layers)?;
        if !seen.insert(spec.edge) {
            return Err(Error::DuplicateEdge { src: spec.edge.src.0, dst: spec.edge.dst.0 });
        }
    }
    let mut params = backbone.params().to_vec();
    let n_backbone = params.len();
    let mut slots = Vec::with_capacity(specs.len());
    for (k, spec) in specs.iter().enumerate() {
        let mut r = rng::substream(seed, &format!("adapter/{k}"));
        let prefix = format!("adapter{k}.{}_{}", spec.edge.src, spec.edge.dst);
        let p = init_adapter_params(spec, config.d_model, &prefix, &mut r);
        debug_assert_eq!(p.len(), param_count(spec));
        slots.push(AdapterSlot { spec: *spec, offset: params.len(), count: p.len() });
        params.extend(p);
    }
    let plan = build_pass_plan(specs, config.layers)?;
    let first_dst = specs.iter().map(|s| s.edge.dst.0).min().unwrap_or(config.num_nodes());
    let mut model = AdaptedModel { config, params, n_backbone, slots, plan, first_dst, mode: TrainMode::Adapters };
    model.set_mode(TrainMode::Adapters);
    Ok(model)
}

/// Logits plus second-pass trace at every node.
pub fn adapted_forward(model: &AdaptedModel, batch: &Batch) -> Result<ForwardOutput> {
    model.forward(batch)
}

impl AdaptedModel {
    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn mode(&self) -> TrainMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: TrainMode) {
        let head_start = Layout::new(self.config.layers).head_start();
        for (i, p) in self.params.iter_mut().enumerate() {
            p.trainable = match mode {
                TrainMode::FullFinetune => true,
                TrainMode::Adapters => i >= head_start,
                TrainMode::LinearProbe => i >= head_start && i < self.n_backbone,
            };
        }
        self.mode = mode;
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn specs(&self) -> Vec<AdapterSpec> {
        self.slots.iter().map(|s| s.spec).collect()
    }

    pub fn num_adapters(&self) -> usize {
        self.slots.len()
    }

    pub fn adapter_params(&self, k: usize) -> &[Parameter] {
        let s = &self.slots[k];
        &self.params[s.offset..s.offset + s.count]
    }

    pub fn adapter_params_mut(&mut self, k: usize) -> &mut [Parameter] {
        let s = &self.slots[k];
        &mut self.params[s.offset..s.offset + s.count]
    }

    /// Index range of adapter `k` inside [`AdaptedModel::params`].
    pub fn adapter_range(&self, k: usize) -> std::ops::Range<usize> {
        let s = &self.slots[k];
        s.offset..s.offset + s.count
    }

    pub fn plan(&self) -> &PassPlan {
        &self.plan
    }

    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(|p| p.tensor.len()).sum()
    }

    /// The backbone part (including the current head) as a standalone model.
    pub fn backbone(&self) -> Backbone {
        let mut params = self.params[..self.n_backbone].to_vec();
        for p in &mut params {
            p.trainable = true;
        }
        Backbone::from_params(self.config, params).expect("layout is preserved")
    }

    pub fn frozen_block_bytes(&self) -> Vec<u8> {
        let head_start = Layout::new(self.config.layers).head_start();
        frozen_block_bytes(&self.params[..head_start])
    }

    /// Bind every tensor as a tape leaf, in [`AdaptedModel::params`] order.
    fn bind(&self, tape: &mut Tape, train: bool) -> Result<Vec<Var>> {
        self.params.iter().map(|p| tape.leaf(p.tensor.clone(), train && p.trainable)).collect()
    }

    fn record(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        batch: &Batch,
        watch: bool,
        prefix: Option<&[Tensor]>,
    ) -> Result<Recorded> {
        if vars.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "{} vars bound for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        if let Some(p) = prefix {
            if self.mode == TrainMode::FullFinetune {
                return Err(Error::InvalidArgument("cached node values require a frozen backbone".into()));
            }
            if p.len() < self.cached_nodes_needed() {
                return Err(Error::InvalidArgument(format!(
                    "{} cached nodes supplied, {} needed",
                    p.len(),
                    self.cached_nodes_needed()
                )));
            }
        }
        let bound = BoundBackbone::from_vars(self.config, vars[..self.n_backbone].to_vec());
        let adapter_vars = |k: usize| -> &[Var] {
            let s = &self.slots[k];
            &vars[s.offset..s.offset + s.count]
        };

        let n = self.config.num_nodes();
        let mut forward_evals = 0;
        let mut nodes: Vec<Var> = Vec::with_capacity(n);
        let mut first = BTreeMap::new();
        let needed: BTreeSet<usize> =
            self.plan.recurrent_into.iter().flatten().map(|&k| self.slots[k].spec.edge.src.0).collect();

        let e = match prefix {
            Some(p) => {
                for (i, value) in p.iter().enumerate().take(self.first_dst) {
                    nodes.push(tape.constant(value.clone())?);
                    if needed.contains(&i) {
                        first.insert(i, nodes[i]);
                    }
                }
                for &src in &needed {
                    if src >= self.first_dst {
                        first.insert(src, tape.constant(p[src].clone())?);
                    }
                }
                if self.first_dst == 0 {
                    Some(tape.constant(p[0].clone())?)
                } else {
                    None
                }
            }
            None => {
                let e = bound.embed(tape, batch)?;
                // Pass 1: adapter-free, no gradient, only as deep as needed.
                if let Some(trunc) = self.plan.truncation {
                    let mut x = e;
                    if needed.contains(&0) {
                        first.insert(0, tape.stop_gradient(x)?);
                    }
                    for dst in 1..=trunc.0 {
                        tape.set_region(Some(FIRST_PASS_REGION + dst as u32));
                        let f = bound.branch(tape, dst, x);
                        tape.set_region(None);
                        x = tape.add(x, f?)?;
                        forward_evals += 1;
                        if needed.contains(&dst) {
                            first.insert(dst, tape.stop_gradient(x)?);
                        }
                    }
                }
                Some(e)
            }
        };

        // Pass 2: every adapter.
        for dst in nodes.len()..n {
            let mut z = if dst == 0 {
                e.expect("embedding is bound when node 0 is computed")
            } else {
                tape.set_region(Some(SECOND_PASS_REGION + dst as u32));
                let f = bound.branch(tape, dst, nodes[dst - 1]);
                tape.set_region(None);
                forward_evals += 1;
                tape.add(nodes[dst - 1], f?)?
            };
            for &k in &self.plan.forward_into[dst] {
                let spec = &self.slots[k].spec;
                let a = apply_on_tape(tape, spec, adapter_vars(k), nodes[spec.edge.src.0])?;
                z = tape.add(z, a)?;
            }
            for &k in &self.plan.recurrent_into[dst] {
                let spec = &self.slots[k].spec;
                let a = apply_on_tape(tape, spec, adapter_vars(k), first[&spec.edge.src.0])?;
                z = tape.add(z, a)?;
            }
            let mut x = z;
            for &k in &self.plan.sequential_at[dst] {
                let a = apply_on_tape(tape, &self.slots[k].spec, adapter_vars(k), z)?;
                x = tape.add(x, a)?;
            }
            if watch {
                x = tape.watch(x)?;
            }
            nodes.push(x);
        }
        let logits = bound.classify(tape, nodes[n - 1])?;
        Ok(Recorded { logits, nodes, first, forward_evals })
    }

    /// Smallest node an adapter writes; `2L + 1` without adapters. Nodes
    /// before it hold bare-backbone values.
    pub fn first_affected_node(&self) -> usize {
        self.first_dst
    }

    /// How many leading nodes a [`NodeCache`](super::NodeCache) gather must
    /// supply for the cached entry points.
    pub fn cached_nodes_needed(&self) -> usize {
        let deepest_src = self.plan.truncation.map_or(0, |t| t.0 + 1);
        self.first_dst.max(deepest_src).max(1)
    }

    /// Full forward: logits, second-pass trace of every node and the
    /// first-pass values feeding recurrent adapters.
    pub fn forward(&self, batch: &Batch) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let rec = self.record(&mut tape, &vars, batch, false, None)?;
        let activations = rec.nodes.iter().enumerate().map(|(i, &v)| (NodeId(i), tape.value(v).clone())).collect();
        let first_pass = rec.first.iter().map(|(&i, &v)| (NodeId(i), tape.value(v).clone())).collect();
        Ok(ForwardOutput {
            logits: tape.value(rec.logits).clone(),
            trace: ActivationTrace { activations, gradients: None },
            first_pass,
            cost: StepCost { forward_block_evals: rec.forward_evals, backward_block_evals: 0 },
        })
    }

    pub fn logits(&self, batch: &Batch) -> Result<Tensor> {
        self.logits_with(batch, None)
    }

    /// As [`AdaptedModel::logits`], optionally starting from cached
    /// bare-backbone node values of this batch (see [`NodeCache`](super::NodeCache)).
    pub fn logits_with(&self, batch: &Batch, prefix: Option<&[Tensor]>) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let rec = self.record(&mut tape, &vars, batch, false, prefix)?;
        Ok(tape.value(rec.logits).clone())
    }

    /// Mean cross-entropy on `batch` and gradients of every trainable tensor.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<StepResult> {
        self.loss_and_grads_with(batch, None)
    }

    pub fn loss_and_grads_with(&self, batch: &Batch, prefix: Option<&[Tensor]>) -> Result<StepResult> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, true)?;
        let rec = self.record(&mut tape, &vars, batch, false, prefix)?;
        let loss = tape.cross_entropy(rec.logits, &batch.labels)?;
        let mut grads = tape.backward(loss)?;
        let backward_block_evals = grads.regions().len();
        let mut out = Vec::with_capacity(self.params.len());
        for (p, &var) in self.params.iter().zip(&vars) {
            out.push(p.trainable.then(|| grads.take(var).unwrap_or_else(|| Tensor::zeros(p.tensor.shape()))));
        }
        Ok(StepResult {
            loss: tape.value(loss).item(),
            grads: out,
            cost: StepCost { forward_block_evals: rec.forward_evals, backward_block_evals },
        })
    }

    /// Loss with second-pass activations and dL/dx at every node.
    pub fn backward_trace(&self, batch: &Batch) -> Result<(f64, ActivationTrace)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape, false)?;
        let rec = self.record(&mut tape, &vars, batch, true, None)?;
        let loss = tape.cross_entropy(rec.logits, &batch.labels)?;
        let mut grads = tape.backward(loss)?;
        let activations = rec.nodes.iter().enumerate().map(|(i, &v)| (NodeId(i), tape.value(v).clone())).collect();
        let gradients = rec
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &v)| (NodeId(i), grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))))
            .collect();
        Ok((tape.value(loss).item(), ActivationTrace { activations, gradients: Some(gradients) }))
    }

    /// Mean cross-entropy recorded on `tape` as a function of `vars`, which
    /// stand for [`AdaptedModel::params`] in order. Used by gradient checks.
    pub fn loss_on_tape(&self, tape: &mut Tape, vars: &[Var], batch: &Batch) -> Result<Var> {
        let rec = self.record(tape, vars, batch, false, None)?;
        tape.cross_entropy(rec.logits, &batch.labels)
    }
}
