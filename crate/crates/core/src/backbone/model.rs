use std::collections::BTreeMap;

use super::config::BackboneConfig;
use super::node::NodeId;
use crate::error::{Error, Result};
use crate::numerics::rng::{self, normal_tensor};
use crate::numerics::{Parameter, Tape, Tensor, Var};

const PER_BLOCK: usize = 16;

// offsets inside a block
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const BQ: usize = 3;
const WK: usize = 4;
const BK: usize = 5;
const WV: usize = 6;
const BV: usize = 7;
const WO: usize = 8;
const BO: usize = 9;
const LN2_G: usize = 10;
const LN2_B: usize = 11;
const W1: usize = 12;
const B1: usize = 13;
const W2: usize = 14;
const B2: usize = 15;

const BLOCK_NAMES: [&str; PER_BLOCK] = [
    "ln1.gain", "ln1.bias", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo",
    "attn.bo", "ln2.gain", "ln2.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2",
];

/// Position of every backbone tensor in the flat parameter list.
#[derive(Clone, Copy, Debug)]
pub struct Layout {
    layers: usize,
}

impl Layout {
    pub fn new(layers: usize) -> Self {
        Layout { layers }
    }
    pub fn tokens(&self) -> usize {
        0
    }
    pub fn positions(&self) -> usize {
        1
    }
    pub fn block(&self, layer: usize, offset: usize) -> usize {
        2 + layer * PER_BLOCK + offset
    }
    pub fn final_ln(&self) -> (usize, usize) {
        let base = 2 + self.layers * PER_BLOCK;
        (base, base + 1)
    }
    /// Index of the first head tensor; everything before it is the frozen body.
    pub fn head_start(&self) -> usize {
        4 + self.layers * PER_BLOCK
    }
    pub fn head(&self) -> (usize, usize) {
        (self.head_start(), self.head_start() + 1)
    }
    pub fn len(&self) -> usize {
        self.head_start() + 2
    }
    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A batch of token sequences with labels, stored row-major `[size, seq_len]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
    pub size: usize,
    pub seq_len: usize,
}

impl Batch {
    pub fn new(tokens: Vec<usize>, labels: Vec<usize>, seq_len: usize) -> Result<Self> {
        if seq_len == 0 || tokens.len() % seq_len != 0 || tokens.len() / seq_len != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} tokens and {} labels do not form rows of length {seq_len}",
                tokens.len(),
                labels.len()
            )));
        }
        Ok(Batch { size: labels.len(), tokens, labels, seq_len })
    }
}

/// Pre-LN transformer encoder with mean pooling and a linear classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    params: Vec<Parameter>,
}

impl Backbone {
    pub fn init(config: BackboneConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let BackboneConfig { layers, d_model: d, d_ffn: f, vocab, seq_len, .. } = config;
        let mut rng = rng::substream(seed, "backbone/init");
        let mut params = Vec::with_capacity(Layout::new(layers).len());
        params.push(Parameter::new("embed.tokens", normal_tensor(&mut rng, &[vocab, d], 1.0), true));
        params.push(Parameter::new("embed.positions", normal_tensor(&mut rng, &[seq_len, d], 1.0), true));
        let proj = 1.0 / (d as f64).sqrt();
        let out_scale = 1.0 / ((2 * layers) as f64).sqrt();
        for l in 0..layers {
            for (off, name) in BLOCK_NAMES.iter().enumerate() {
                let t = match off {
                    LN1_G | LN2_G => Tensor::filled(&[d], 1.0),
                    LN1_B | LN2_B | BQ | BK | BV | BO | B2 => Tensor::zeros(&[d]),
                    B1 => Tensor::zeros(&[f]),
                    WQ | WK | WV => normal_tensor(&mut rng, &[d, d], proj),
                    WO => normal_tensor(&mut rng, &[d, d], proj * out_scale),
                    W1 => normal_tensor(&mut rng, &[d, f], proj),
                    W2 => normal_tensor(&mut rng, &[f, d], out_scale / (f as f64).sqrt()),
                    _ => unreachable!(),
                };
                params.push(Parameter::new(format!("block{l}.{name}"), t, true));
            }
        }
        params.push(Parameter::new("final_ln.gain", Tensor::filled(&[d], 1.0), true));
        params.push(Parameter::new("final_ln.bias", Tensor::zeros(&[d]), true));
        let mut backbone = Backbone { config, params: Vec::new() };
        params.extend(backbone.fresh_head(seed));
        backbone.params = params;
        Ok(backbone)
    }

    fn fresh_head(&self, seed: u64) -> [Parameter; 2] {
        let (d, c) = (self.config.d_model, self.config.num_classes);
        let mut rng = rng::substream(seed, "backbone/head");
        [
            Parameter::new("head.weight", normal_tensor(&mut rng, &[d, c], 1.0 / (d as f64).sqrt()), true),
            Parameter::new("head.bias", Tensor::zeros(&[c]), true),
        ]
    }

    /// Assemble from an ordered parameter list (checkpoint loading).
    pub fn from_params(config: BackboneConfig, params: Vec<Parameter>) -> Result<Self> {
        config.validate()?;
        let probe = Backbone::init_shapes(config);
        if probe.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                probe.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in probe.iter().zip(&params) {
            if *name != p.name || shape.as_slice() != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.tensor.shape(),
                    name,
                    shape
                )));
            }
        }
        Ok(Backbone { config, params })
    }

    /// `(name, shape)` of every tensor in layout order.
    pub fn init_shapes(config: BackboneConfig) -> Vec<(String, Vec<usize>)> {
        let BackboneConfig { layers, d_model: d, d_ffn: f, vocab, seq_len, num_classes: c, .. } = config;
        let mut out = vec![
            ("embed.tokens".to_string(), vec![vocab, d]),
            ("embed.positions".to_string(), vec![seq_len, d]),
        ];
        for l in 0..layers {
            for (off, name) in BLOCK_NAMES.iter().enumerate() {
                let shape = match off {
                    B1 => vec![f],
                    W1 => vec![d, f],
                    W2 => vec![f, d],
                    WQ | WK | WV | WO => vec![d, d],
                    _ => vec![d],
                };
                out.push((format!("block{l}.{name}"), shape));
            }
        }
        out.push(("final_ln.gain".into(), vec![d]));
        out.push(("final_ln.bias".into(), vec![d]));
        out.push(("head.weight".into(), vec![d, c]));
        out.push(("head.bias".into(), vec![c]));
        out
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self.config.layers)
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Parameter> {
        self.params
    }

    /// Freeze everything except the classifier head.
    pub fn freeze(&mut self) {
        let head_start = self.layout().head_start();
        for (i, p) in self.params.iter_mut().enumerate() {
            p.trainable = i >= head_start;
        }
    }

    pub fn is_frozen(&self) -> bool {
        let head_start = self.layout().head_start();
        self.params[..head_start].iter().all(|p| !p.trainable)
    }

    /// Replace the classifier head with a fresh random one.
    pub fn reset_head(&mut self, seed: u64) {
        let (w, b) = self.layout().head();
        let [hw, hb] = self.fresh_head(seed);
        self.params[w] = hw;
        self.params[b] = hb;
    }

    /// Little-endian bytes of every non-head tensor, in layout order.
    pub fn frozen_block_bytes(&self) -> Vec<u8> {
        frozen_block_bytes(&self.params[..self.layout().head_start()])
    }

    /// Logits and recorded activations.
    pub fn forward_trace(&self, batch: &Batch, record: &[NodeId]) -> Result<(Tensor, ActivationTrace)> {
        self.check_record(record)?;
        let mut tape = Tape::new();
        let bound = BoundBackbone::bind(&mut tape, self, false)?;
        let (logits, nodes) = bound.forward(&mut tape, batch, record, false)?;
        let activations = nodes.iter().map(|(&n, &v)| (n, tape.value(v).clone())).collect();
        Ok((tape.value(logits).clone(), ActivationTrace { activations, gradients: None }))
    }

    /// Mean cross-entropy loss together with activations and their gradients
    /// at every recorded node. Backbone and head are held fixed.
    pub fn backward_trace(&self, batch: &Batch, record: &[NodeId]) -> Result<(f64, ActivationTrace)> {
        self.check_record(record)?;
        let mut tape = Tape::new();
        let bound = BoundBackbone::bind(&mut tape, self, false)?;
        let (logits, nodes) = bound.forward(&mut tape, batch, record, true)?;
        let loss = tape.cross_entropy(logits, &batch.labels)?;
        let mut grads = tape.backward(loss)?;
        let activations = nodes.iter().map(|(&n, &v)| (n, tape.value(v).clone())).collect();
        let gradients = nodes
            .iter()
            .map(|(&n, &v)| (n, grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))))
            .collect();
        Ok((tape.value(loss).item(), ActivationTrace { activations, gradients: Some(gradients) }))
    }

    fn check_record(&self, record: &[NodeId]) -> Result<()> {
        let n = self.config.num_nodes();
        match record.iter().find(|r| r.0 >= n) {
            Some(bad) => Err(Error::OutOfRange(format!("node {bad} not in [0, {}]", n - 1))),
            None => Ok(()),
        }
    }
}

pub(crate) fn frozen_block_bytes(params: &[Parameter]) -> Vec<u8> {
    let mut out = Vec::new();
    for p in params {
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Per-node activations `[batch, seq_len, d_model]` and, after a backward
/// trace, dL/dx at the same nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub activations: BTreeMap<NodeId, Tensor>,
    pub gradients: Option<BTreeMap<NodeId, Tensor>>,
}

/// Backbone tensors bound as tape leaves.
pub struct BoundBackbone {
    config: BackboneConfig,
    layout: Layout,
    vars: Vec<Var>,
}

impl BoundBackbone {
    /// Bind `backbone`; a tensor requires gradients when `train` is set and
    /// the parameter is marked trainable.
    pub fn bind(tape: &mut Tape, backbone: &Backbone, train: bool) -> Result<Self> {
        Self::bind_params(tape, backbone.config, backbone.params(), train)
    }

    pub fn bind_params(tape: &mut Tape, config: BackboneConfig, params: &[Parameter], train: bool) -> Result<Self> {
        let layout = Layout::new(config.layers);
        debug_assert_eq!(params.len(), layout.len());
        let vars = params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), train && p.trainable))
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundBackbone { config, layout, vars })
    }

    /// Use already-bound vars, one per backbone tensor in layout order.
    pub fn from_vars(config: BackboneConfig, vars: Vec<Var>) -> Self {
        let layout = Layout::new(config.layers);
        assert_eq!(vars.len(), layout.len(), "one var per backbone tensor");
        BoundBackbone { config, layout, vars }
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    fn block_var(&self, layer: usize, off: usize) -> Var {
        self.vars[self.layout.block(layer, off)]
    }

    /// Token plus position embedding: the value entering node 0.
    pub fn embed(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        if batch.seq_len != self.config.seq_len {
            return Err(Error::InvalidArgument(format!(
                "batch sequence length {} differs from model {}",
                batch.seq_len, self.config.seq_len
            )));
        }
        let tok = tape.embedding(self.vars[self.layout.tokens()], &batch.tokens, &[batch.size, batch.seq_len])?;
        tape.add(tok, self.vars[self.layout.positions()])
    }

    /// Residual branch writing node `dst` (1..=2L): attention for odd nodes,
    /// feed-forward for even nodes, both reading `LN(x)`.
    pub fn branch(&self, tape: &mut Tape, dst: usize, x: Var) -> Result<Var> {
        if dst == 0 || dst > 2 * self.config.layers {
            return Err(Error::OutOfRange(format!("node {dst} has no block")));
        }
        let layer = (dst - 1) / 2;
        if dst % 2 == 1 {
            self.attention(tape, layer, x)
        } else {
            self.feed_forward(tape, layer, x)
        }
    }

    fn attention(&self, tape: &mut Tape, l: usize, x: Var) -> Result<Var> {
        let heads = self.config.heads;
        let h = tape.layer_norm(x, Some((self.block_var(l, LN1_G), self.block_var(l, LN1_B))))?;
        let proj = |w: usize, b: usize, tape: &mut Tape| -> Result<Var> {
            let y = tape.matmul(h, self.block_var(l, w))?;
            let y = tape.add(y, self.block_var(l, b))?;
            tape.split_heads(y, heads)
        };
        let q = proj(WQ, BQ, tape)?;
        let k = proj(WK, BK, tape)?;
        let v = proj(WV, BV, tape)?;
        let scores = tape.batch_matmul(q, k, true)?;
        let scores = tape.scale(scores, 1.0 / (self.config.head_dim() as f64).sqrt())?;
        let attn = tape.softmax(scores)?;
        let ctx = tape.batch_matmul(attn, v, false)?;
        let ctx = tape.merge_heads(ctx, heads)?;
        let out = tape.matmul(ctx, self.block_var(l, WO))?;
        tape.add(out, self.block_var(l, BO))
    }

    fn feed_forward(&self, tape: &mut Tape, l: usize, x: Var) -> Result<Var> {
        let h = tape.layer_norm(x, Some((self.block_var(l, LN2_G), self.block_var(l, LN2_B))))?;
        let h = tape.matmul(h, self.block_var(l, W1))?;
        let h = tape.add(h, self.block_var(l, B1))?;
        let h = tape.gelu(h)?;
        let h = tape.matmul(h, self.block_var(l, W2))?;
        tape.add(h, self.block_var(l, B2))
    }

    /// Mean-pool the final node, apply the final layer norm and the head.
    pub fn classify(&self, tape: &mut Tape, x_final: Var) -> Result<Var> {
        let (g, b) = self.layout.final_ln();
        let pooled = tape.mean_tokens(x_final)?;
        let normed = tape.layer_norm(pooled, Some((self.vars[g], self.vars[b])))?;
        let (hw, hb) = self.layout.head();
        let logits = tape.matmul(normed, self.vars[hw])?;
        tape.add(logits, self.vars[hb])
    }

    /// Plain encoder pass. Recorded nodes are returned, passed through
    /// [`Tape::watch`] when `watch` is set so their gradients are captured.
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        record: &[NodeId],
        watch: bool,
    ) -> Result<(Var, BTreeMap<NodeId, Var>)> {
        let mut nodes = BTreeMap::new();
        let mut keep = |tape: &mut Tape, n: usize, x: Var| -> Result<Var> {
            if record.contains(&NodeId(n)) {
                let x = if watch { tape.watch(x)? } else { x };
                nodes.insert(NodeId(n), x);
                Ok(x)
            } else {
                Ok(x)
            }
        };
        let e = self.embed(tape, batch)?;
        let mut x = keep(tape, 0, e)?;
        for dst in 1..=2 * self.config.layers {
            let f = self.branch(tape, dst, x)?;
            let next = tape.add(x, f)?;
            x = keep(tape, dst, next)?;
        }
        let logits = self.classify(tape, x)?;
        Ok((logits, nodes))
    }
}
