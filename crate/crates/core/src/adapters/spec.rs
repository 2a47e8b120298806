use std::path::Path;

use serde::{Deserialize, Serialize};

use super::edge::Edge;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdapterForm {
    /// `alpha * act(LN(x) W_down) W_up`
    Bottleneck,
    /// `x W` with a full `d_model x d_model` matrix, no scale, no norm.
    Linear,
}

/// One adapter to place. Serialized as
/// `{"src":6,"dst":7,"rank":8,"act":"gelu","ln":true,"form":"bottleneck"}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "SpecWire", into = "SpecWire")]
pub struct AdapterSpec {
    pub edge: Edge,
    pub rank: usize,
    pub activation: Activation,
    pub use_layer_norm: bool,
    pub form: AdapterForm,
}

pub const DEFAULT_RANK: usize = 8;

impl AdapterSpec {
    pub fn bottleneck(edge: Edge, rank: usize) -> Self {
        AdapterSpec { edge, rank, activation: Activation::Gelu, use_layer_norm: true, form: AdapterForm::Bottleneck }
    }

    pub fn linear(edge: Edge) -> Self {
        AdapterSpec { edge, rank: 0, activation: Activation::Identity, use_layer_norm: false, form: AdapterForm::Linear }
    }

    /// Copy of `self` placed at `edge`.
    pub fn at(&self, edge: Edge) -> Self {
        AdapterSpec { edge, ..*self }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        self.edge.check(layers)?;
        if self.form == AdapterForm::Bottleneck && self.rank == 0 {
            return Err(Error::InvalidArgument(format!("adapter {} has rank 0", self.edge)));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct SpecWire {
    src: usize,
    dst: usize,
    #[serde(default = "default_rank")]
    rank: usize,
    #[serde(default = "default_act")]
    act: Activation,
    #[serde(default = "default_ln")]
    ln: bool,
    #[serde(default = "default_form")]
    form: AdapterForm,
}

fn default_rank() -> usize {
    DEFAULT_RANK
}
fn default_act() -> Activation {
    Activation::Gelu
}
fn default_ln() -> bool {
    true
}
fn default_form() -> AdapterForm {
    AdapterForm::Bottleneck
}

impl From<SpecWire> for AdapterSpec {
    fn from(w: SpecWire) -> Self {
        AdapterSpec {
            edge: Edge::new(w.src, w.dst),
            rank: w.rank,
            activation: w.act,
            use_layer_norm: w.ln,
            form: w.form,
        }
    }
}

impl From<AdapterSpec> for SpecWire {
    fn from(s: AdapterSpec) -> Self {
        SpecWire {
            src: s.edge.src.0,
            dst: s.edge.dst.0,
            rank: s.rank,
            act: s.activation,
            ln: s.use_layer_norm,
            form: s.form,
        }
    }
}

pub fn specs_to_json(specs: &[AdapterSpec]) -> Result<String> {
    Ok(serde_json::to_string_pretty(specs)?)
}

pub fn specs_from_json(text: &str) -> Result<Vec<AdapterSpec>> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_specs(path: &Path) -> Result<Vec<AdapterSpec>> {
    specs_from_json(&std::fs::read_to_string(path)?)
}
