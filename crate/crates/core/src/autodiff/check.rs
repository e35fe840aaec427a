//! Central-difference verification of reverse-mode gradients.

use ndarray::Array2;

use super::{Tape, TensorId};
use crate::error::{Error, Result};

/// Builds a scalar loss on a fresh tape from parameter leaves bound in
/// the given order.
pub trait LossBuilder {
    fn build(&self, tape: &mut Tape, params: &[TensorId]) -> Result<TensorId>;
}

impl<F> LossBuilder for F
where
    F: Fn(&mut Tape, &[TensorId]) -> Result<TensorId>,
{
    fn build(&self, tape: &mut Tape, params: &[TensorId]) -> Result<TensorId> {
        self(tape, params)
    }
}

fn evaluate(builder: &impl LossBuilder, point: &[Array2<f64>]) -> Result<f64> {
    let mut tape = Tape::new();
    let params: Vec<TensorId> = point.iter().map(|p| tape.parameter(p.clone())).collect();
    let loss = builder.build(&mut tape, &params)?;
    if tape.value(loss).dim() != (1, 1) {
        return Err(Error::Contract(format!(
            "gradient check requires a scalar loss, got {:?}",
            tape.value(loss).dim()
        )));
    }
    Ok(tape.value(loss)[[0, 0]])
}

/// Compare reverse-mode gradients against central differences at `point`.
///
/// Returns the maximum over all parameter entries of
/// `|analytic - numeric| / max(1, |analytic|)` where
/// `numeric = (f(x + h) - f(x - h)) / (2h)`.
pub fn grad_check(
    builder: impl LossBuilder,
    point: &[Array2<f64>],
    step: f64,
) -> Result<f64> {
    grad_check_masked(builder, point, step, |_, _, _| true)
}

/// [`grad_check`] restricted to entries where `include(param, row, col)`
/// holds. Use this to skip coordinates sitting on a subgradient kink
/// (a relu input at exactly zero) where central differences are
/// meaningless.
pub fn grad_check_masked(
    builder: impl LossBuilder,
    point: &[Array2<f64>],
    step: f64,
    include: impl Fn(usize, usize, usize) -> bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let params: Vec<TensorId> = point.iter().map(|p| tape.parameter(p.clone())).collect();
    let loss = builder.build(&mut tape, &params)?;
    tape.backward(loss)?;
    let analytic: Vec<Array2<f64>> = params
        .iter()
        .map(|&p| {
            tape.grad(p)
                .cloned()
                .unwrap_or_else(|| Array2::zeros(tape.value(p).dim()))
        })
        .collect();

    let mut worst = 0.0_f64;
    let mut probe = point.to_vec();
    for (pi, analytic_grad) in analytic.iter().enumerate() {
        let (rows, cols) = analytic_grad.dim();
        for r in 0..rows {
            for c in 0..cols {
                if !include(pi, r, c) {
                    continue;
                }
                let original = probe[pi][[r, c]];
                probe[pi][[r, c]] = original + step;
                let plus = evaluate(&builder, &probe)?;
                probe[pi][[r, c]] = original - step;
                let minus = evaluate(&builder, &probe)?;
                probe[pi][[r, c]] = original;
                let numeric = (plus - minus) / (2.0 * step);
                let a = analytic_grad[[r, c]];
                let err = (a - numeric).abs() / a.abs().max(1.0);
                if err > worst {
                    worst = err;
                }
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn quadratic_matches_finite_differences() {
        let err = grad_check(
            |t: &mut Tape, p: &[TensorId]| Ok(t.squared_frobenius(p[0])),
            &[array![[1.0, -2.0], [0.5, 3.0]]],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-8, "err = {err}");
    }

    #[test]
    fn matmul_chain_matches() {
        let err = grad_check(
            |t: &mut Tape, p: &[TensorId]| {
                let y = t.matmul(p[0], p[1])?;
                let s = t.row_softmax(y);
                Ok(t.mean_all(s))
            },
            &[array![[0.3, -0.7], [1.2, 0.4]], array![[0.9, 0.1], [-0.5, 0.8]]],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn mask_skips_relu_kink() {
        // One entry exactly at the kink; excluded, the rest must agree.
        let point = array![[0.0, 1.0, -2.0]];
        let err = grad_check_masked(
            |t: &mut Tape, p: &[TensorId]| {
                let y = t.relu(p[0]);
                Ok(t.sum_all(y))
            },
            &[point],
            1e-5,
            |_, _, c| c != 0,
        )
        .unwrap();
        assert!(err < 1e-9, "err = {err}");
    }
}
