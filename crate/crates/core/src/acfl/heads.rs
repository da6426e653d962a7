use rand::Rng;

use super::Channel;
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Learnable projections and regulatory factors for one
/// (target form, channel) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MimicHead {
    pub channel: Channel,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    /// `[1, L]`, entries in `[0, 1]`.
    pub beta: Tensor,
    pub beta_enabled: bool,
    /// How many times β has been updated from accuracies.
    pub beta_updates: usize,
}

impl MimicHead {
    /// Projections drawn with std `1/√d_r`; β starts at ones.
    pub fn init<R: Rng + ?Sized>(channel: Channel, d_r: usize, sources: usize, rng: &mut R) -> Self {
        let std = 1.0 / (d_r as f64).sqrt();
        Self {
            channel,
            w_q: Tensor::randn(&[d_r, d_r], std, rng),
            w_k: Tensor::randn(&[d_r, d_r], std, rng),
            w_v: Tensor::randn(&[d_r, d_r], std, rng),
            beta: Tensor::ones(&[1, sources]),
            beta_enabled: true,
            beta_updates: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn validate_beta(&self) -> Result<()> {
        if let Some(b) = self.beta.data().iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::Validation(format!("β entry {b} outside [0, 1]")));
        }
        Ok(())
    }

    pub fn register<'t>(&self, tape: &'t Tape, trainable: bool) -> HeadVars<'t> {
        let reg = |t: &Tensor| {
            if trainable {
                tape.leaf(t.clone().with_grad())
            } else {
                tape.constant(t.clone())
            }
        };
        HeadVars {
            w_q: reg(&self.w_q),
            w_k: reg(&self.w_k),
            w_v: reg(&self.w_v),
            beta: self.beta_enabled.then(|| tape.constant(self.beta.clone())),
        }
    }

    /// Named projection tensors, for optimizers and checkpoints.
    pub fn projections_mut(&mut self) -> [(&'static str, &mut Tensor); 3] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
        ]
    }

    pub fn projections(&self) -> [(&'static str, &Tensor); 3] {
        [("w_q", &self.w_q), ("w_k", &self.w_k), ("w_v", &self.w_v)]
    }
}

/// A head registered on a tape. `beta` is `None` when disabled.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars<'t> {
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
    pub beta: Option<Var<'t>>,
}
