use std::collections::BTreeMap;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::skeleton::{Form, SkeletonTopology};

/// Symmetric-normalized adjacency `D^{-1/2} (A + I) D^{-1/2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    matrix: Rc<Tensor>,
}

impl AdjacencyMatrix {
    pub fn from_topology(topo: &SkeletonTopology) -> Self {
        let v = topo.points();
        let mut a = vec![0.0; v * v];
        for i in 0..v {
            a[i * v + i] = 1.0;
        }
        for (c, p) in topo.edges() {
            a[c * v + p] = 1.0;
            a[p * v + c] = 1.0;
        }
        let deg: Vec<f64> = (0..v).map(|i| a[i * v..(i + 1) * v].iter().sum()).collect();
        for i in 0..v {
            for j in 0..v {
                a[i * v + j] /= (deg[i] * deg[j]).sqrt();
            }
        }
        Self {
            matrix: Rc::new(Tensor::new(&[v, v], a).expect("square")),
        }
    }

    /// Caller-supplied matrix, used as is.
    pub fn from_matrix(m: Tensor) -> Result<Self> {
        let (r, c) = m.dims2()?;
        if r != c {
            return Err(Error::dim("adjacency", format!("{r}x{c} is not square")));
        }
        Ok(Self {
            matrix: Rc::new(m),
        })
    }

    pub fn identity(v: usize) -> Self {
        Self {
            matrix: Rc::new(Tensor::eye(v)),
        }
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub(crate) fn shared(&self) -> Rc<Tensor> {
        Rc::clone(&self.matrix)
    }

    pub fn points(&self) -> usize {
        self.matrix.shape()[0]
    }
}

/// Classification head squashing and matching loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    /// Elementwise sigmoid with per-class binary cross-entropy.
    #[default]
    SigmoidBce,
    /// Row softmax with categorical cross-entropy.
    SoftmaxCe,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    pub temporal_kernel: usize,
    /// Temporal stride of the first block in each stage.
    pub strides: Vec<usize>,
    pub form: Form,
    /// Coordinates per point in the joint form.
    pub base_channels: usize,
    pub points: usize,
    pub class_count: usize,
    #[serde(default)]
    pub output: OutputKind,
}

impl BackboneConfig {
    /// Quarter-width, single-block-per-stage echo of the reference network.
    pub fn desk_default(form: Form, base_channels: usize, points: usize, class_count: usize) -> Self {
        Self {
            widths: vec![16, 16, 32, 64],
            blocks: vec![1, 1, 1, 1],
            temporal_kernel: 5,
            strides: vec![2, 1, 2, 2],
            form,
            base_channels,
            points,
            class_count,
            output: OutputKind::SigmoidBce,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.form.channels(self.base_channels)
    }

    /// Semantic feature size `d`.
    pub fn feature_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn with_form(&self, form: Form) -> Self {
        Self {
            form,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.widths.is_empty() {
            return bad("no stages".into());
        }
        if self.widths.contains(&0) || self.widths.windows(2).any(|w| w[1] < w[0]) {
            return bad(format!("widths {:?} must be positive and nondecreasing", self.widths));
        }
        if self.blocks.len() != self.widths.len() || self.strides.len() != self.widths.len() {
            return bad("widths, blocks and strides must have one entry per stage".into());
        }
        if self.blocks.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        if self.temporal_kernel.is_multiple_of(2) {
            return bad(format!("temporal kernel {} must be odd", self.temporal_kernel));
        }
        if self.strides.iter().any(|s| !(1..=2).contains(s)) {
            return bad(format!("strides {:?} must be 1 or 2", self.strides));
        }
        if self.base_channels == 0 || self.points == 0 || self.class_count < 2 {
            return bad("channels, points and class count must be positive (>= 2 classes)".into());
        }
        Ok(())
    }

    /// `(stage, block, in, out, stride)` for every unit pair.
    pub fn units(&self) -> Vec<(usize, usize, usize, usize, usize)> {
        let mut out = Vec::new();
        let mut c_in = self.in_channels();
        for (s, (&w, &n)) in self.widths.iter().zip(&self.blocks).enumerate() {
            for b in 0..n {
                let stride = if b == 0 { self.strides[s] } else { 1 };
                out.push((s, b, c_in, w, stride));
                c_in = w;
            }
        }
        out
    }
}

pub(crate) fn gcn_name(stage: usize, block: usize) -> String {
    format!("stage{stage}.block{block}.gcn.weight")
}

pub(crate) fn tcn_name(stage: usize, block: usize) -> String {
    format!("stage{stage}.block{block}.tcn.kernel")
}

pub const STEM_GAMMA: &str = "stem.bn.gamma";
pub const STEM_BETA: &str = "stem.bn.beta";
pub const STEM_MEAN: &str = "stem.bn.running_mean";
pub const STEM_VAR: &str = "stem.bn.running_var";
pub const FC_WEIGHT: &str = "fc.weight";
pub const FC_BIAS: &str = "fc.bias";

/// Named parameter tensors of one backbone plus classifier.
///
/// Names are unique and iterate in sorted order. Running normalization
/// statistics live here too but are not trained.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Kaiming fan-in scaled unit weights, zero biases, identity stem.
    pub fn init<R: Rng + ?Sized>(cfg: &BackboneConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut tensors = BTreeMap::new();
        let feats = cfg.in_channels() * cfg.points;
        tensors.insert(STEM_GAMMA.into(), Tensor::ones(&[feats]));
        tensors.insert(STEM_BETA.into(), Tensor::zeros(&[feats]));
        tensors.insert(STEM_MEAN.into(), Tensor::zeros(&[feats]));
        tensors.insert(STEM_VAR.into(), Tensor::ones(&[feats]));
        let k = cfg.temporal_kernel;
        for (s, b, c_in, c_out, _) in cfg.units() {
            let std = (2.0 / c_in as f64).sqrt();
            tensors.insert(gcn_name(s, b), Tensor::randn(&[c_in, c_out], std, rng));
            let std = (2.0 / k as f64).sqrt();
            tensors.insert(tcn_name(s, b), Tensor::randn(&[c_out, k], std, rng));
        }
        let d = cfg.feature_dim();
        let std = (1.0 / d as f64).sqrt();
        tensors.insert(FC_WEIGHT.into(), Tensor::randn(&[d, cfg.class_count], std, rng));
        tensors.insert(FC_BIAS.into(), Tensor::zeros(&[cfg.class_count]));
        Ok(Self { tensors })
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        Self { tensors }
    }

    /// Check names and shapes against a configuration.
    pub fn check(&self, cfg: &BackboneConfig) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let reference = Self::init(cfg, &mut rng)?;
        if reference.tensors.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "parameter set has {} tensors, configuration needs {}",
                self.tensors.len(),
                reference.tensors.len()
            )));
        }
        for (name, t) in &reference.tensors {
            match self.tensors.get(name) {
                Some(mine) if mine.shape() == t.shape() => {}
                Some(mine) => {
                    return Err(Error::Config(format!(
                        "parameter {name} has shape {:?}, configuration needs {:?}",
                        mine.shape(),
                        t.shape()
                    )))
                }
                None => return Err(Error::Config(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Running statistics are state, not trainable parameters.
    pub fn is_buffer(name: &str) -> bool {
        name.ends_with(".running_mean") || name.ends_with(".running_var")
    }

    pub fn round_to_f32(&mut self) {
        for t in self.tensors.values_mut() {
            t.round_to_f32();
        }
    }

    pub fn into_map(self) -> BTreeMap<String, Tensor> {
        self.tensors
    }
}
