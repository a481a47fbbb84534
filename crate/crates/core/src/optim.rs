//! Adam optimizer with an inverse-time learning-rate schedule,
//! lr(t) = lr0 / (1 + decay * t).
//!
//! The schedule counter is the optimizer step by default; it can be switched
//! to epochs via [`DecayUnit`], in which case the trainer reports the current
//! epoch through [`AdamState::set_epoch`].

use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("parameter `{name}` has NaN gradient at element {element}")]
    NanGradient { name: String, element: usize },
    #[error("parameter `{name}`: gradient shape {got:?} does not match {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecayUnit {
    Step,
    Epoch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub decay: f64,
    pub decay_unit: DecayUnit,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            decay: 5e-4,
            decay_unit: DecayUnit::Step,
        }
    }
}

impl AdamHyper {
    pub fn validate(&self) -> Result<(), OptimError> {
        if self.lr0 <= 0.0 {
            return Err(OptimError::Invalid("lr0 must be positive".into()));
        }
        if !(0.0 < self.beta1 && self.beta1 < self.beta2 && self.beta2 < 1.0) {
            return Err(OptimError::Invalid(
                "betas must satisfy 0 < beta1 < beta2 < 1".into(),
            ));
        }
        if self.epsilon <= 0.0 {
            return Err(OptimError::Invalid("epsilon must be positive".into()));
        }
        if self.decay < 0.0 {
            return Err(OptimError::Invalid("decay must be nonnegative".into()));
        }
        Ok(())
    }
}

/// lr(t) = lr0 / (1 + decay * t).
pub fn lr_at(t: u64, hyper: &AdamHyper) -> f64 {
    hyper.lr0 / (1.0 + hyper.decay * t as f64)
}

/// First/second moment accumulators, parallel to the parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    epoch: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            step: 0,
            epoch: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    pub fn from_parts(step: u64, epoch: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        Self { step, epoch, m, v }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: u64) {
        self.epoch = epoch;
    }

    pub fn moments(&self) -> (&[Tensor], &[Tensor]) {
        (&self.m, &self.v)
    }

    fn schedule_index(&self, unit: DecayUnit) -> u64 {
        match unit {
            DecayUnit::Step => self.step,
            DecayUnit::Epoch => self.epoch,
        }
    }
}

/// One bias-corrected Adam update over a parameter list. The learning rate is
/// lr_at(schedule index before increment); epsilon sits outside the square
/// root: p -= lr * m_hat / (sqrt(v_hat) + eps).
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    names: &[&str],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), OptimError> {
    hyper.validate()?;
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), state.m.len());

    for (i, grad) in grads.iter().enumerate() {
        let name = names.get(i).copied().unwrap_or("<unnamed>");
        if grad.shape() != params[i].shape() {
            return Err(OptimError::ShapeMismatch {
                name: name.to_string(),
                expected: params[i].shape().to_vec(),
                got: grad.shape().to_vec(),
            });
        }
        if let Some(element) = grad.data().iter().position(|g| g.is_nan()) {
            return Err(OptimError::NanGradient {
                name: name.to_string(),
                element,
            });
        }
    }

    let lr = lr_at(state.schedule_index(hyper.decay_unit), hyper);
    let t = (state.step + 1) as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);

    for (i, grad) in grads.iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params[i].data_mut();
        for ((pj, mj), (vj, &g)) in p
            .iter_mut()
            .zip(m.iter_mut())
            .zip(v.iter_mut().zip(grad.data()))
        {
            *mj = hyper.beta1 * *mj + (1.0 - hyper.beta1) * g;
            *vj = hyper.beta2 * *vj + (1.0 - hyper.beta2) * g * g;
            let m_hat = *mj / bc1;
            let v_hat = *vj / bc2;
            *pj -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    state.step += 1;
    Ok(())
}
