use super::spec::{Activation, AdapterForm, AdapterSpec};
use crate::error::{shape_err, Result};
use crate::numerics::rng::{uniform_tensor, Rng};
use crate::numerics::{Parameter, Tape, Tensor, Var};

/// Fresh parameters for `spec`, in apply order:
/// bottleneck `[ln.gain, ln.bias]? w_down, w_up, alpha`, linear `[w]`.
///
/// `w_down ~ U(-1/sqrt(d), 1/sqrt(d))`, `w_up = 0`, `alpha = 1`, layer-norm
/// gain 1 and bias 0; the linear form starts at `w = 0`. Either way the
/// adapter outputs exactly zero at initialization.
pub fn init_adapter_params(spec: &AdapterSpec, d_model: usize, prefix: &str, rng: &mut Rng) -> Vec<Parameter> {
    match spec.form {
        AdapterForm::Linear => vec![Parameter::new(format!("{prefix}.w"), Tensor::zeros(&[d_model, d_model]), true)],
        AdapterForm::Bottleneck => {
            let mut out = Vec::with_capacity(5);
            if spec.use_layer_norm {
                out.push(Parameter::new(format!("{prefix}.ln.gain"), Tensor::filled(&[d_model], 1.0), true));
                out.push(Parameter::new(format!("{prefix}.ln.bias"), Tensor::zeros(&[d_model]), true));
            }
            let bound = 1.0 / (d_model as f64).sqrt();
            out.push(Parameter::new(
                format!("{prefix}.w_down"),
                uniform_tensor(rng, &[d_model, spec.rank], bound),
                true,
            ));
            out.push(Parameter::new(format!("{prefix}.w_up"), Tensor::zeros(&[spec.rank, d_model]), true));
            out.push(Parameter::new(format!("{prefix}.alpha"), Tensor::filled(&[1], 1.0), true));
            out
        }
    }
}

pub fn param_count(spec: &AdapterSpec) -> usize {
    match spec.form {
        AdapterForm::Linear => 1,
        AdapterForm::Bottleneck if spec.use_layer_norm => 5,
        AdapterForm::Bottleneck => 3,
    }
}

/// Record the adapter on `tape`; `vars` are its parameters in apply order.
pub fn apply_on_tape(tape: &mut Tape, spec: &AdapterSpec, vars: &[Var], x: Var) -> Result<Var> {
    if vars.len() != param_count(spec) {
        return Err(shape_err("adapter_apply", format!("{} parameter tensors for {:?}", vars.len(), spec.form)));
    }
    match spec.form {
        AdapterForm::Linear => tape.matmul(x, vars[0]),
        AdapterForm::Bottleneck => {
            let (h, rest) = if spec.use_layer_norm {
                (tape.layer_norm(x, Some((vars[0], vars[1])))?, &vars[2..])
            } else {
                (x, vars)
            };
            let h = tape.matmul(h, rest[0])?;
            let h = match spec.activation {
                Activation::Gelu => tape.gelu(h)?,
                Activation::Relu => tape.relu(h)?,
                Activation::Identity => h,
            };
            let h = tape.matmul(h, rest[1])?;
            tape.mul_scalar(h, rest[2])
        }
    }
}

/// Evaluate the adapter on a concrete input whose last axis is `d_model`.
pub fn adapter_apply(params: &[Parameter], spec: &AdapterSpec, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|p| tape.constant(p.tensor.clone()))
        .collect::<Result<Vec<_>>>()?;
    let xv = tape.constant(x.clone())?;
    let out = apply_on_tape(&mut tape, spec, &vars, xv)?;
    Ok(tape.value(out).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::Edge;
    use crate::numerics::rng::{normal_tensor, substream};

    fn input() -> Tensor {
        normal_tensor(&mut substream(1, "x"), &[2, 3, 8], 1.0)
    }

    #[test]
    fn fresh_adapters_output_zero() {
        let mut rng = substream(0, "a");
        for spec in [AdapterSpec::bottleneck(Edge::new(1, 2), 4), AdapterSpec::linear(Edge::new(1, 2))] {
            let p = init_adapter_params(&spec, 8, "a", &mut rng);
            let y = adapter_apply(&p, &spec, &input()).unwrap();
            assert_eq!(y.shape(), &[2, 3, 8]);
            assert!(y.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_alpha_gives_zero_output() {
        let mut rng = substream(0, "b");
        let spec = AdapterSpec::bottleneck(Edge::new(1, 2), 4);
        let mut p = init_adapter_params(&spec, 8, "a", &mut rng);
        p[3].tensor = normal_tensor(&mut rng, &[4, 8], 1.0);
        p[4].tensor = Tensor::filled(&[1], 0.0);
        let y = adapter_apply(&p, &spec, &input()).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        p[4].tensor = Tensor::filled(&[1], 1.0);
        let y = adapter_apply(&p, &spec, &input()).unwrap();
        assert!(y.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn linear_form_is_a_projection() {
        let spec = AdapterSpec::linear(Edge::new(0, 0));
        let w = normal_tensor(&mut substream(2, "w"), &[8, 8], 1.0);
        let p = vec![Parameter::new("w", w.clone(), true)];
        let x = input();
        let y = adapter_apply(&p, &spec, &x).unwrap();
        let flat = x.clone().reshape(vec![6, 8]).unwrap();
        let expect = flat.matmul(&w).unwrap();
        assert!(y.reshape(vec![6, 8]).unwrap().max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn wrong_width_is_an_error() {
        let spec = AdapterSpec::bottleneck(Edge::new(1, 2), 4);
        let p = init_adapter_params(&spec, 8, "a", &mut substream(0, "c"));
        let x = Tensor::zeros(&[2, 5]);
        assert!(adapter_apply(&p, &spec, &x).is_err());
    }
}
