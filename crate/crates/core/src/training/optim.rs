use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// SGD with momentum and L2 weight decay:
///
/// ```text
/// v ← μ·v + (g + λ·p)
/// p ← p − lr·v
/// ```
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Tensor>,
}

/// Scalar settings, for checkpoint metadata.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimizerState {
    /// Zero buffers mirroring every `(name, shape)`.
    pub fn new<'a>(
        params: impl IntoIterator<Item = (&'a str, &'a [usize])>,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
    ) -> Self {
        let buffers = params
            .into_iter()
            .map(|(n, s)| (n.to_string(), Tensor::zeros(s)))
            .collect();
        Self {
            lr,
            momentum,
            weight_decay,
            buffers,
        }
    }

    pub fn from_parts(settings: OptimizerSettings, buffers: BTreeMap<String, Tensor>) -> Self {
        Self {
            lr: settings.lr,
            momentum: settings.momentum,
            weight_decay: settings.weight_decay,
            buffers,
        }
    }

    pub fn settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn buffers(&self) -> &BTreeMap<String, Tensor> {
        &self.buffers
    }

    pub fn step(&mut self, name: &str, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        let buf = self
            .buffers
            .get_mut(name)
            .ok_or_else(|| Error::Config(format!("no optimizer buffer for {name}")))?;
        if buf.shape() != param.shape() || grad.shape() != param.shape() {
            return Err(Error::dim(
                "sgd_step",
                format!(
                    "{name}: param {:?}, grad {:?}, buffer {:?}",
                    param.shape(),
                    grad.shape(),
                    buf.shape()
                ),
            ));
        }
        let (mu, wd, lr) = (self.momentum, self.weight_decay, self.lr);
        for ((p, v), g) in param.data_mut().iter_mut().zip(buf.data_mut()).zip(grad.data()) {
            *v = mu * *v + (g + wd * *p);
            *p -= lr * *v;
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        for t in self.buffers.values_mut() {
            t.round_to_f32();
        }
    }
}
