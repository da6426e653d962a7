use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::acfl::AcflConfig;
use crate::error::{Error, Result};
use crate::gcn::BackboneConfig;
use crate::skeleton::{Form, SkeletonTopology};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// 1-based epochs after which the rate is multiplied by `lr_factor`.
    pub lr_drops: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Joint L2 norm cap on each model's gradient per step.
    #[serde(default)]
    pub grad_clip: Option<f64>,
    pub seed: u64,
    /// Directory holding `train.acds` and `test.acds`.
    pub dataset: PathBuf,
    /// Shared by every form; the `form` field is overridden per model.
    pub backbone: BackboneConfig,
    /// `None` trains single-form baselines.
    #[serde(default)]
    pub acfl: Option<AcflConfig>,
    #[serde(default = "SkeletonTopology::stick_figure")]
    pub topology: SkeletonTopology,
}

impl TrainConfig {
    /// 30 epochs, drops after 18 and 26, SGD momentum 0.9, decay 4e-4.
    pub fn desk_default(dataset: impl Into<PathBuf>, class_count: usize) -> Self {
        let topology = SkeletonTopology::stick_figure();
        Self {
            epochs: 30,
            batch_size: 16,
            lr: 0.1,
            lr_drops: vec![18, 26],
            lr_factor: 0.1,
            momentum: 0.9,
            weight_decay: 4e-4,
            grad_clip: Some(5.0),
            seed: 0,
            dataset: dataset.into(),
            backbone: BackboneConfig::desk_default(Form::Joint, 2, topology.points(), class_count),
            acfl: None,
            topology,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.lr_drops.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("LR drop epochs {:?} must be strictly increasing", self.lr_drops));
        }
        if self.lr_drops.iter().any(|&d| d >= self.epochs) {
            return bad(format!(
                "LR drop epochs {:?} must be < epochs ({})",
                self.lr_drops, self.epochs
            ));
        }
        for (name, x) in [
            ("lr", self.lr),
            ("lr_factor", self.lr_factor),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
        ] {
            if !(x.is_finite() && x >= 0.0) {
                return bad(format!("{name} = {x} must be finite and >= 0"));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("gradient clip {c} must be finite and > 0"));
            }
        }
        if self.momentum >= 1.0 {
            return bad(format!("momentum {} must be < 1", self.momentum));
        }
        self.backbone.validate()?;
        if self.backbone.points != self.topology.points() {
            return bad(format!(
                "backbone has {} points, topology has {}",
                self.backbone.points,
                self.topology.points()
            ));
        }
        if let Some(a) = &self.acfl {
            a.validate()?;
        }
        Ok(())
    }

    /// Learning rate in effect during 1-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.lr_drops.iter().filter(|&&d| epoch > d).count();
        self.lr * self.lr_factor.powi(passed as i32)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }
}

/// Per-component seeds derived from one root seed by fixed offsets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub data: u64,
    pub init: u64,
    pub shuffle: u64,
    pub heads: u64,
}

impl Seeds {
    pub fn derive(root: u64) -> Self {
        Self {
            data: root,
            init: root.wrapping_add(0x1000_0001),
            shuffle: root.wrapping_add(0x2000_0003),
            heads: root.wrapping_add(0x3000_0005),
        }
    }

    /// Backbone initialization seed for one form.
    pub fn init_for(&self, form: Form) -> u64 {
        self.init.wrapping_add(form.index() as u64 * 7919)
    }
}
