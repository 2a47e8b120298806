use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// A named tensor that is either trained or held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

impl Parameter {
    pub fn new(name: impl Into<String>, tensor: Tensor, trainable: bool) -> Self {
        Parameter { name: name.into(), tensor, trainable }
    }
}

/// SGD with heavy-ball momentum.
///
/// `v <- mu * v + g + wd * w`, then `w <- w - lr * v`. Frozen parameters are
/// skipped entirely.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    pub step: usize,
    velocities: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(params: &[Parameter], momentum: f64, weight_decay: f64) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            step: 0,
            velocities: params.iter().map(|p| Tensor::zeros(p.tensor.shape())).collect(),
        }
    }

    pub fn velocity(&self, i: usize) -> &Tensor {
        &self.velocities[i]
    }

    /// `grads[i]` belongs to `params[i]`; entries for frozen parameters are
    /// ignored and may be `None`.
    pub fn step(&mut self, params: &mut [Parameter], grads: &[Option<Tensor>], lr: f64) -> Result<()> {
        if params.len() != self.velocities.len() || grads.len() != params.len() {
            return Err(shape_err(
                "sgd_momentum_step",
                format!(
                    "{} params, {} grads, {} velocity slots",
                    params.len(),
                    grads.len(),
                    self.velocities.len()
                ),
            ));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.velocities) {
            if !p.trainable {
                continue;
            }
            if let Some(g) = g {
                if g.shape() != p.tensor.shape() || v.shape() != p.tensor.shape() {
                    return Err(shape_err(
                        "sgd_momentum_step",
                        format!("{}: grad {:?} vs param {:?}", p.name, g.shape(), p.tensor.shape()),
                    ));
                }
            }
        }
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.velocities.iter_mut()) {
            if !p.trainable {
                continue;
            }
            let vd = v.data_mut();
            let wd = p.tensor.data_mut();
            for i in 0..vd.len() {
                let gi = g.as_ref().map_or(0.0, |g| g.data()[i]);
                vd[i] = self.momentum * vd[i] + gi + self.weight_decay * wd[i];
                wd[i] -= lr * vd[i];
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Linear warmup from 0 to `base_lr`, then cosine decay to 0 at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: usize,
    pub warmup_steps: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: usize, warmup_steps: usize) -> Result<Self> {
        if !(base_lr >= 0.0 && base_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("base learning rate {base_lr} must be >= 0")));
        }
        if warmup_steps > total_steps {
            return Err(Error::InvalidArgument(format!(
                "warmup {warmup_steps} exceeds total steps {total_steps}"
            )));
        }
        Ok(LrSchedule { base_lr, total_steps, warmup_steps })
    }
}

pub fn cosine_warmup_lr(step: usize, schedule: &LrSchedule) -> Result<f64> {
    let LrSchedule { base_lr, total_steps, warmup_steps } = *schedule;
    if step > total_steps {
        return Err(Error::OutOfRange(format!("step {step} beyond schedule end {total_steps}")));
    }
    if step == total_steps {
        return Ok(0.0);
    }
    if step < warmup_steps {
        return Ok(base_lr * step as f64 / warmup_steps as f64);
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    Ok((base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(w: f64, trainable: bool) -> Parameter {
        Parameter::new("w", Tensor::new(vec![1], vec![w]).unwrap(), trainable)
    }

    #[test]
    fn momentum_steps_match_hand_values() {
        let mut params = vec![scalar_param(1.0, true)];
        let mut opt = SgdMomentum::new(&params, 0.9, 0.0);
        let g = vec![Some(Tensor::new(vec![1], vec![1.0]).unwrap())];
        opt.step(&mut params, &g, 0.1).unwrap();
        assert!((opt.velocity(0).item() - 1.0).abs() < 1e-15);
        assert!((params[0].tensor.item() - 0.9).abs() < 1e-15);
        opt.step(&mut params, &g, 0.1).unwrap();
        assert!((opt.velocity(0).item() - 1.9).abs() < 1e-15);
        assert!((params[0].tensor.item() - 0.71).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_weight() {
        let mut params = vec![scalar_param(0.37, true)];
        let mut opt = SgdMomentum::new(&params, 0.9, 0.0);
        opt.step(&mut params, &[Some(Tensor::zeros(&[1]))], 0.5).unwrap();
        assert_eq!(params[0].tensor.item(), 0.37);
    }

    #[test]
    fn frozen_params_are_untouched() {
        let mut params = vec![scalar_param(0.37, false)];
        let mut opt = SgdMomentum::new(&params, 0.9, 0.1);
        opt.step(&mut params, &[Some(Tensor::filled(&[1], 5.0))], 0.5).unwrap();
        assert_eq!(params[0].tensor.item().to_bits(), 0.37f64.to_bits());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![scalar_param(1.0, true)];
        let mut opt = SgdMomentum::new(&params, 0.9, 0.0);
        assert!(opt.step(&mut params, &[Some(Tensor::zeros(&[2]))], 0.1).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let s = LrSchedule::new(0.1, 1000, 50).unwrap();
        assert_eq!(cosine_warmup_lr(0, &s).unwrap(), 0.0);
        assert!((cosine_warmup_lr(50, &s).unwrap() - 0.1).abs() < 1e-15);
        assert!(cosine_warmup_lr(1000, &s).unwrap().abs() < 1e-12);
        assert!((cosine_warmup_lr(25, &s).unwrap() - 0.05).abs() < 1e-15);
        assert!(cosine_warmup_lr(1001, &s).is_err());
        for step in 0..=1000 {
            assert!(cosine_warmup_lr(step, &s).unwrap() >= 0.0);
        }
    }
}
