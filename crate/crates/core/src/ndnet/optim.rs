use serde::{Deserialize, Serialize};

use super::mlp::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

/// Optimizer configuration plus any running state it needs.
///
/// Updates are pure: [`OptimizerState::step`] returns new parameters and a new
/// state, leaving both inputs untouched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerState {
            kind: OptimizerKind::Sgd,
            learning_rate,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            steps: 0,
        }
    }

    pub fn adam(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64, len: usize) -> Self {
        OptimizerState {
            kind: OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            },
            learning_rate,
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            steps: 0,
        }
    }

    /// Adam with the GAN defaults (lr 2e-4, beta1 0.5, beta2 0.999, eps 1e-8).
    pub fn gan_adam(len: usize) -> Self {
        Self::adam(2e-4, 0.5, 0.999, 1e-8, len)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Same kind and hyperparameters with the running state cleared.
    pub fn reset(&self) -> Self {
        let mut s = self.clone();
        s.first_moment.iter_mut().for_each(|v| *v = 0.0);
        s.second_moment.iter_mut().for_each(|v| *v = 0.0);
        s.steps = 0;
        s
    }

    pub fn step(&self, params: &ParamVector, grads: &ParamVector) -> Result<(ParamVector, OptimizerState)> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "gradient length {} does not match parameter length {}",
                grads.len(),
                params.len()
            )));
        }
        grads.check_finite()?;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd => {
                let mut next = params.clone();
                next.add_scaled(grads, -lr);
                Ok((next, self.clone()))
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if self.first_moment.len() != params.len() {
                    return Err(Error::invalid(format!(
                        "adam state sized for {} parameters, got {}",
                        self.first_moment.len(),
                        params.len()
                    )));
                }
                let t = self.steps + 1;
                let c1 = 1.0 - beta1.powi(t as i32);
                let c2 = 1.0 - beta2.powi(t as i32);
                let mut m = self.first_moment.clone();
                let mut v = self.second_moment.clone();
                let mut next = params.clone();
                for (((p, g), m), v) in next
                    .as_mut_slice()
                    .iter_mut()
                    .zip(grads.as_slice())
                    .zip(m.iter_mut())
                    .zip(v.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
                }
                Ok((
                    next,
                    OptimizerState {
                        kind: self.kind,
                        learning_rate: lr,
                        first_moment: m,
                        second_moment: v,
                        steps: t,
                    },
                ))
            }
        }
    }
}
