//! Analytic gradients through the tape and a central-difference checker.

use serde::Serialize;

use super::optim::Parameter;
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Loss value, gradients of every trainable parameter (frozen ones are
/// `None`) and gradients at the watched nodes the computation returned.
#[derive(Debug)]
pub struct Evaluation {
    pub loss: f64,
    pub param_grads: Vec<Option<Tensor>>,
    pub tagged_grads: Vec<Tensor>,
}

/// Bind `params` as tape leaves (trainable ones require gradients), run
/// `computation`, and backpropagate from the scalar loss it returns.
///
/// The computation returns `(loss, tagged)`; each tagged var must come from
/// [`Tape::watch`] (or be otherwise differentiable) to receive a gradient.
pub fn evaluate_with_gradients<F>(params: &[Parameter], computation: F) -> Result<Evaluation>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<(Var, Vec<Var>)>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.leaf(p.tensor.clone(), p.trainable))
        .collect::<Result<Vec<_>>>()?;
    let (loss, tagged) = computation(&mut tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let param_grads = params
        .iter()
        .zip(&vars)
        .map(|(p, &v)| {
            p.trainable
                .then(|| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.tensor.shape())))
        })
        .collect();
    let tagged_grads = tagged
        .iter()
        .map(|&v| grads.take(v).unwrap_or_else(|| Tensor::zeros(tape.value(v).shape())))
        .collect();
    Ok(Evaluation { loss: tape.value(loss).item(), param_grads, tagged_grads })
}

/// Forward-only loss evaluation with the same binding as
/// [`evaluate_with_gradients`].
pub fn evaluate_loss<F>(params: &[Parameter], computation: F) -> Result<f64>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.leaf(p.tensor.clone(), false))
        .collect::<Result<Vec<_>>>()?;
    let loss = computation(&mut tape, &vars)?;
    Ok(tape.value(loss).item())
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_error: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradientReport {
    pub eps: f64,
    pub tol: f64,
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    /// `(parameter name, flat coordinate)` of every coordinate above `tol`.
    pub failures: Vec<(String, usize)>,
}

impl GradientReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compare tape gradients of every trainable parameter with central
/// differences `(f(w + eps) - f(w - eps)) / (2 eps)`, one coordinate at a time.
pub fn finite_difference_check<F>(loss_fn: F, params: &[Parameter], eps: f64, tol: f64) -> Result<GradientReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let eval = evaluate_with_gradients(params, |tape, vars| Ok((loss_fn(tape, vars)?, Vec::new())))?;
    let mut work = params.to_vec();
    let mut checks = Vec::new();
    let mut failures = Vec::new();
    let mut max_rel_error: f64 = 0.0;
    for (pi, p) in params.iter().enumerate() {
        let Some(analytic) = &eval.param_grads[pi] else { continue };
        let mut numeric = Vec::with_capacity(p.tensor.len());
        let mut rel = Vec::with_capacity(p.tensor.len());
        for ci in 0..p.tensor.len() {
            let orig = p.tensor.data()[ci];
            work[pi].tensor.data_mut()[ci] = orig + eps;
            let plus = evaluate_loss(&work, &loss_fn)?;
            work[pi].tensor.data_mut()[ci] = orig - eps;
            let minus = evaluate_loss(&work, &loss_fn)?;
            work[pi].tensor.data_mut()[ci] = orig;
            let n = (plus - minus) / (2.0 * eps);
            let e = relative_error(analytic.data()[ci], n);
            if e > tol {
                failures.push((p.name.clone(), ci));
            }
            max_rel_error = max_rel_error.max(e);
            numeric.push(n);
            rel.push(e);
        }
        checks.push(ParamCheck {
            name: p.name.clone(),
            analytic: analytic.data().to_vec(),
            numeric,
            rel_error: rel,
        });
    }
    Ok(GradientReport { eps, tol, params: checks, max_rel_error, failures })
}
