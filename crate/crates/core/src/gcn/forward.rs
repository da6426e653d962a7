use std::collections::BTreeMap;

use super::model::{
    gcn_name, tcn_name, AdjacencyMatrix, BackboneConfig, ModelParams, OutputKind, FC_BIAS,
    FC_WEIGHT, STEM_BETA, STEM_GAMMA, STEM_MEAN, STEM_VAR,
};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::skeleton::SkeletonSequence;

/// Running-statistics momentum: `running ← 0.9·running + 0.1·batch`.
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in the stem normalization.
    Train,
    /// Running statistics.
    Eval,
}

/// Parameters registered on a tape.
pub struct ParamVars<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> ParamVars<'t> {
    /// Register every tensor. Trainable tensors become gradient leaves when
    /// `trainable` is set; running statistics are always constants.
    pub fn register(params: &ModelParams, tape: &'t Tape, trainable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable && !ModelParams::is_buffer(name) {
                    tape.leaf(t.clone().with_grad())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Self { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'t>)> {
        self.vars.iter()
    }
}

/// Build from already registered nodes, e.g. leaves owned by a gradient check.
impl<'t> FromIterator<(String, Var<'t>)> for ParamVars<'t> {
    fn from_iter<I: IntoIterator<Item = (String, Var<'t>)>>(iter: I) -> Self {
        Self {
            vars: iter.into_iter().collect(),
        }
    }
}

/// Pair `(f, k)` for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutputs {
    /// Semantic feature, length `d`.
    pub f: Tensor,
    /// Categorical map, length `N`.
    pub k: Tensor,
}

/// Batched forward result.
pub struct ForwardOutput<'t> {
    /// `[B, d]`.
    pub feature: Var<'t>,
    /// `[B, N]`, pre-squash.
    pub logits: Var<'t>,
    /// `[B, N]`, squashed categorical maps.
    pub k: Var<'t>,
    /// Batch `(mean, var)` of the stem normalization in train mode.
    pub stem_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Stack `[M, T, V, C]` samples into `[B·M, C, T, V]`.
pub fn batch_input(samples: &[&Tensor]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::dim("batch_input", "empty batch"))?;
    if first.rank() != 4 {
        return Err(Error::dim("batch_input", format!("sample shape {:?}", first.shape())));
    }
    let s = first.shape();
    let (m, t, v, c) = (s[0], s[1], s[2], s[3]);
    let per = m * t * v * c;
    let mut out = vec![0.0; samples.len() * per];
    for (b, x) in samples.iter().enumerate() {
        if x.shape() != s {
            return Err(Error::dim(
                "batch_input",
                format!("sample {b} is {:?}, expected {s:?}", x.shape()),
            ));
        }
        let xd = x.data();
        for p in 0..m {
            let n = b * m + p;
            for ti in 0..t {
                for j in 0..v {
                    for ch in 0..c {
                        out[((n * c + ch) * t + ti) * v + j] = xd[((p * t + ti) * v + j) * c + ch];
                    }
                }
            }
        }
    }
    Tensor::new(&[samples.len() * m, c, t, v], out)
}

/// `relu(Â · x_t · W)` for every frame of `x: [N, C_in, T, V]`.
pub fn gcn_unit<'t>(x: Var<'t>, adj: &AdjacencyMatrix, w: Var<'t>) -> Result<Var<'t>> {
    Ok(x.spatial_aggregate(adj.shared())?.channel_mix(&w)?.relu())
}

/// Same-padded depthwise temporal convolution.
pub fn tcn_unit<'t>(x: Var<'t>, kernel: Var<'t>, stride: usize) -> Result<Var<'t>> {
    x.temporal_conv(&kernel, stride)
}

/// Stem normalization, GCN/TCN stages, global pooling, classifier.
pub fn forward<'t>(
    input: Var<'t>,
    persons: usize,
    params: &ParamVars<'t>,
    running: (&[f64], &[f64]),
    cfg: &BackboneConfig,
    adj: &AdjacencyMatrix,
    mode: Mode,
) -> Result<ForwardOutput<'t>> {
    let shape = input.shape();
    if shape.len() != 4 || shape[1] != cfg.in_channels() || shape[3] != cfg.points {
        return Err(Error::dim(
            "backbone",
            format!(
                "input {shape:?} for {} channels over {} points",
                cfg.in_channels(),
                cfg.points
            ),
        ));
    }
    let fixed = match mode {
        Mode::Train => None,
        Mode::Eval => Some(running),
    };
    let (mut x, stem_stats) =
        input.batch_norm(&params.get(STEM_GAMMA)?, &params.get(STEM_BETA)?, fixed)?;
    for (s, b, _, _, stride) in cfg.units() {
        x = gcn_unit(x, adj, params.get(&gcn_name(s, b))?)?;
        x = tcn_unit(x, params.get(&tcn_name(s, b))?, stride)?;
    }
    let feature = x.global_avg_pool(persons)?;
    let logits = feature
        .matmul(&params.get(FC_WEIGHT)?)?
        .add_row(&params.get(FC_BIAS)?)?;
    let k = match cfg.output {
        OutputKind::SigmoidBce => logits.sigmoid(),
        OutputKind::SoftmaxCe => logits.softmax_rows()?,
    };
    Ok(ForwardOutput {
        feature,
        logits,
        k,
        stem_stats,
    })
}

/// Classification loss matching the configured output squashing.
pub fn classification_loss<'t>(
    out: &ForwardOutput<'t>,
    labels: &[usize],
    cfg: &BackboneConfig,
) -> Result<Var<'t>> {
    match cfg.output {
        OutputKind::SigmoidBce => out.logits.bce_with_logits(labels),
        OutputKind::SoftmaxCe => out.logits.softmax_ce(labels),
    }
}

/// Evaluation-mode forward for a batch of samples, returning plain values
/// `(features [B, d], maps [B, N])`.
pub fn infer_batch(
    samples: &[&Tensor],
    params: &ModelParams,
    cfg: &BackboneConfig,
    adj: &AdjacencyMatrix,
) -> Result<(Tensor, Tensor)> {
    let persons = samples
        .first()
        .map(|s| s.shape()[0])
        .ok_or_else(|| Error::dim("infer_batch", "empty batch"))?;
    let tape = Tape::new();
    let input = tape.constant(batch_input(samples)?);
    let vars = ParamVars::register(params, &tape, false);
    let out = forward(input, persons, &vars, running_stats(params)?, cfg, adj, Mode::Eval)?;
    let f = out.feature.value().as_ref().clone();
    let k = out.k.value().as_ref().clone();
    Ok((f, k))
}

/// Stem running `(mean, var)` of a parameter set.
pub fn running_stats(params: &ModelParams) -> Result<(&[f64], &[f64])> {
    let get = |n: &str| {
        params
            .get(n)
            .map(|t| t.data())
            .ok_or_else(|| Error::Config(format!("missing parameter {n}")))
    };
    Ok((get(STEM_MEAN)?, get(STEM_VAR)?))
}

/// Evaluation-mode `(f, k)` for one sequence.
pub fn backbone_forward(
    seq: &SkeletonSequence,
    params: &ModelParams,
    cfg: &BackboneConfig,
    adj: &AdjacencyMatrix,
) -> Result<ModelOutputs> {
    if seq.form != cfg.form {
        return Err(Error::Form {
            expected: cfg.form.to_string(),
            found: seq.form.to_string(),
        });
    }
    let (f, k) = infer_batch(&[&seq.data], params, cfg, adj)?;
    let d = f.len();
    let n = k.len();
    Ok(ModelOutputs {
        f: f.reshape(&[d])?,
        k: k.reshape(&[n])?,
    })
}

/// Fold batch statistics into the running averages.
pub fn update_running_stats(params: &mut ModelParams, stats: &(Vec<f64>, Vec<f64>)) {
    for (name, batch) in [(STEM_MEAN, &stats.0), (STEM_VAR, &stats.1)] {
        if let Some(t) = params.get_mut(name) {
            for (r, b) in t.data_mut().iter_mut().zip(batch) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn classify(k: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in k.iter().enumerate().skip(1) {
        if x > k[best] {
            best = i;
        }
    }
    best
}
