//! Adam optimizer over plain matrices.
//!
//! Parameter values live outside any tape; each training step binds them
//! onto a fresh tape, runs backward, and feeds the resulting gradients
//! here. First and second moment estimates are kept per parameter in
//! registration order, with bias correction `m / (1 - beta1^t)` and
//! `v / (1 - beta2^t)`.

use ndarray::Array2;

use super::{Tape, TensorId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers for one fixed list of parameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    hyper: AdamParams,
    first_moment: Vec<Array2<f64>>,
    second_moment: Vec<Array2<f64>>,
    step_count: u64,
}

impl OptimizerState {
    pub fn new(hyper: AdamParams, shapes: &[(usize, usize)]) -> Self {
        OptimizerState {
            hyper,
            first_moment: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            second_moment: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One Adam update, mutating `values` in place. `values` and `grads`
    /// must match the shapes given at construction, in the same order.
    pub fn step(&mut self, values: &mut [Array2<f64>], grads: &[&Array2<f64>]) -> Result<()> {
        if values.len() != self.first_moment.len() || grads.len() != values.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {} values and {} gradients",
                self.first_moment.len(),
                values.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamParams {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.hyper;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);

        for ((value, grad), (m, v)) in values
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(&mut self.second_moment))
        {
            if value.dim() != m.dim() || grad.dim() != m.dim() {
                return Err(Error::Contract(format!(
                    "optimizer slot shaped {:?}, got value {:?} and gradient {:?}",
                    m.dim(),
                    value.dim(),
                    grad.dim()
                )));
            }
            ndarray::Zip::from(&mut *m).and(*grad).for_each(|mi, &gi| {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
            });
            ndarray::Zip::from(&mut *v).and(*grad).for_each(|vi, &gi| {
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
            });
            ndarray::Zip::from(&mut *value)
                .and(&*m)
                .and(&*v)
                .for_each(|xi, &mi, &vi| {
                    let m_hat = mi / bias1;
                    let v_hat = vi / bias2;
                    *xi -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
                });
        }
        Ok(())
    }
}

/// Apply one Adam update to parameters living on a tape, reading each
/// gradient accumulated by the last backward pass and mutating the tape
/// values in place. Fails if any listed parameter has no gradient.
pub fn adam_step(tape: &mut Tape, params: &[TensorId], state: &mut OptimizerState) -> Result<()> {
    let grads: Vec<Array2<f64>> = params
        .iter()
        .map(|&p| {
            tape.grad(p).cloned().ok_or_else(|| {
                Error::Contract("adam step before backward: parameter has no gradient".into())
            })
        })
        .collect::<Result<_>>()?;
    let mut values: Vec<Array2<f64>> = params.iter().map(|&p| tape.value(p).clone()).collect();
    let grad_refs: Vec<&Array2<f64>> = grads.iter().collect();
    state.step(&mut values, &grad_refs)?;
    for (&p, value) in params.iter().zip(values) {
        tape.nodes[p.0].value = value;
    }
    Ok(())
}
