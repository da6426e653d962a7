//! Central finite-difference verification of tape gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Outcome of one gradient check.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max relative error per input, in input order.
    pub per_input: Vec<f64>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.per_input.iter().all(|e| *e < self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }

    /// Indices of inputs over tolerance.
    pub fn failures(&self) -> Vec<usize> {
        (0..self.per_input.len())
            .filter(|&i| self.per_input[i] >= self.tolerance)
            .collect()
    }
}

/// Relative error between two gradients: the largest entrywise deviation,
/// divided by the largest entry magnitude of either gradient.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0_f64, |m, x| m.max(x.abs()))
        .max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Check `program` at `inputs` with the default step and tolerance.
///
/// Every input is registered as a gradient-carrying leaf. The program must
/// return a scalar and be deterministic.
pub fn gradcheck<F>(inputs: &[Tensor], program: F) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    gradcheck_with(inputs, program, DEFAULT_STEP, DEFAULT_TOLERANCE)
}

pub fn gradcheck_with<F>(
    inputs: &[Tensor],
    program: F,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        Ok(program(&tape, &vars)?.item())
    };

    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs
        .iter()
        .map(|x| tape.leaf(x.clone().with_grad()))
        .collect();
    let loss = program(&tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v);
        let mut numeric = vec![0.0; inputs[i].len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = inputs[i].data()[j];
            probe[i].data_mut()[j] = orig + step;
            let up = eval(&probe)?;
            probe[i].data_mut()[j] = orig - step;
            let down = eval(&probe)?;
            probe[i].data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        per_input.push(relative_error(analytic.data(), &numeric));
    }
    Ok(GradCheckReport {
        per_input,
        tolerance,
    })
}
