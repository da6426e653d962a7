//! Cross-form mimicking.
//!
//! For a target representation set `E^t` and a source set `E^s` (rows are
//! skeleton forms):
//!
//! ```text
//! A   = softmax_rows( (E^t W_qᵀ)(E^s W_kᵀ)ᵀ / √d_r )
//! E^r = (A ⊗ β) E^s            β scales column j of A
//! Z   = sigmoid( (E^t − E^r) W_vᵀ )
//! E^c = Z ⊙ E^r
//! ℓ_d = ‖E^c_i − E^t_i‖²
//! ```
//!
//! and the objective `(1/L) Σ_i [ℓ_s,i + Σ_channels ℓ_d,i]`.

mod heads;

pub use heads::{HeadVars, MimicHead};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::skeleton::Form;

pub const BETA_EMA_DECAY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    /// Semantic feature `f`.
    Feature,
    /// Categorical map `k`.
    CategoricalMap,
}

impl Channel {
    pub const ALL: [Channel; 2] = [Channel::Feature, Channel::CategoricalMap];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Feature => "feature",
            Channel::CategoricalMap => "catmap",
        }
    }
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feature" | "f" => Ok(Channel::Feature),
            "catmap" | "k" => Ok(Channel::CategoricalMap),
            other => Err(Error::Validation(format!("unknown channel `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Target,
    Source,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AcflMode {
    /// Sources are the co-trained targets, detached.
    Online,
    /// Sources are pretrained, frozen single-form models.
    Offline,
}

/// Where the mimic loss sends gradient through `E^c`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientRouting {
    /// `E^c` carries gradient into `W_q`, `W_k`, `W_v`.
    #[default]
    Learnable,
    /// `E^c` is a constant; only the direct `E^t` term is trained.
    Detached,
}

/// Stacked per-form representations for one channel, `[L, d_r]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationSet {
    pub matrix: Tensor,
    pub channel: Channel,
    pub role: Role,
}

impl RepresentationSet {
    pub fn new(matrix: Tensor, channel: Channel, role: Role) -> Result<Self> {
        matrix.dims2()?;
        Ok(Self {
            matrix,
            channel,
            role,
        })
    }

    pub fn forms(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.matrix.shape()[1]
    }

    /// Checks `d_r` against the backbone's feature size or class count.
    pub fn check_width(&self, feature_dim: usize, class_count: usize) -> Result<()> {
        let want = match self.channel {
            Channel::Feature => feature_dim,
            Channel::CategoricalMap => class_count,
        };
        if self.width() != want {
            return Err(Error::dim(
                "representation_set",
                format!("{:?} width {} != {want}", self.channel, self.width()),
            ));
        }
        Ok(())
    }
}

/// Larger weights let the mimic terms swamp classification early on and
/// destabilize training of the small desk backbone.
pub const DEFAULT_MIMIC_WEIGHT: f64 = 0.03;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcflConfig {
    pub mode: AcflMode,
    pub channels: Vec<Channel>,
    /// One flag per source form (joint, bone, hybrid); `false` disables it.
    pub source_mask: Vec<bool>,
    pub beta_enabled: bool,
    /// Weight on the mimic terms, `DEFAULT_MIMIC_WEIGHT` unless overridden.
    pub mimic_weight: f64,
    #[serde(default)]
    pub routing: GradientRouting,
    /// Forms trained as targets in off-line mode. On-line mode always
    /// co-trains every form.
    #[serde(default = "all_forms")]
    pub targets: Vec<Form>,
}

fn all_forms() -> Vec<Form> {
    Form::ALL.to_vec()
}

impl AcflConfig {
    pub fn new(mode: AcflMode) -> Self {
        Self {
            mode,
            channels: Channel::ALL.to_vec(),
            source_mask: vec![true; Form::ALL.len()],
            beta_enabled: true,
            mimic_weight: DEFAULT_MIMIC_WEIGHT,
            routing: GradientRouting::Learnable,
            targets: all_forms(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("at least one mimic channel must be enabled".into()));
        }
        if self.source_mask.len() != Form::ALL.len() {
            return Err(Error::Config(format!(
                "source mask has {} entries, expected {}",
                self.source_mask.len(),
                Form::ALL.len()
            )));
        }
        if !self.source_mask.iter().any(|&m| m) {
            return Err(Error::Config("at least one source must be unmasked".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("at least one target form is required".into()));
        }
        if self.targets.iter().enumerate().any(|(i, t)| self.targets[..i].contains(t)) {
            return Err(Error::Config(format!("duplicate target forms {:?}", self.targets)));
        }
        if !(self.mimic_weight >= 0.0 && self.mimic_weight.is_finite()) {
            return Err(Error::Config(format!("mimic weight {}", self.mimic_weight)));
        }
        Ok(())
    }

    pub fn source_forms(&self) -> Vec<Form> {
        Form::ALL
            .iter()
            .copied()
            .filter(|f| self.source_mask[f.index()])
            .collect()
    }

    pub fn has_channel(&self, ch: Channel) -> bool {
        self.channels.contains(&ch)
    }
}

// ---- tape-level operations ----

/// Attention of target rows over source rows, `[L_t, L_s]`; masked source
/// columns are exactly zero.
pub fn attention<'t>(
    e_t: Var<'t>,
    e_s: Var<'t>,
    w_q: Var<'t>,
    w_k: Var<'t>,
    mask: Option<&[bool]>,
) -> Result<Var<'t>> {
    let d_t = e_t.shape()[1];
    let d_s = e_s.shape()[1];
    if d_t != d_s || w_q.shape() != [d_t, d_t] || w_k.shape() != [d_t, d_t] {
        return Err(Error::dim(
            "attention",
            format!(
                "E^t {:?}, E^s {:?}, W_q {:?}, W_k {:?}",
                e_t.shape(),
                e_s.shape(),
                w_q.shape(),
                w_k.shape()
            ),
        ));
    }
    let q = e_t.matmul(&w_q.t()?)?;
    let k = e_s.matmul(&w_k.t()?)?;
    let logits = q.matmul(&k.t()?)?.scale(1.0 / (d_t as f64).sqrt());
    match mask {
        Some(m) => logits.softmax_rows_masked(m),
        None => logits.softmax_rows(),
    }
}

/// `(A ⊗ β) E^s`; `beta = None` is the unscaled path.
pub fn reference<'t>(a: Var<'t>, beta: Option<Var<'t>>, e_s: Var<'t>) -> Result<Var<'t>> {
    match beta {
        Some(b) => a.mul_row(&b)?.matmul(&e_s),
        None => a.matmul(&e_s),
    }
}

/// `sigmoid((E^t − E^r) W_vᵀ)`.
pub fn gate<'t>(e_t: Var<'t>, e_r: Var<'t>, w_v: Var<'t>) -> Result<Var<'t>> {
    e_t.sub(&e_r)?.matmul(&w_v.t()?).map(|x| x.sigmoid())
}

/// `Z ⊙ E^r`.
pub fn complementary<'t>(z: Var<'t>, e_r: Var<'t>) -> Result<Var<'t>> {
    z.mul(&e_r)
}

/// Squared L2 distance, no length normalization.
pub fn mimic_loss<'t>(e_c: Var<'t>, e_t: Var<'t>) -> Result<Var<'t>> {
    let d = e_c.sub(&e_t)?;
    Ok(d.mul(&d)?.sum())
}

/// `(1/L) Σ_i [ce_i + Σ_ch mimic_i,ch]`.
pub fn total_loss<'t>(ce: &[Var<'t>], mimic: &[Vec<Var<'t>>]) -> Result<Var<'t>> {
    if ce.is_empty() || (!mimic.is_empty() && mimic.len() != ce.len()) {
        return Err(Error::Contract(format!(
            "{} classification terms, {} mimic groups",
            ce.len(),
            mimic.len()
        )));
    }
    let mut acc: Option<Var<'t>> = None;
    for (i, c) in ce.iter().enumerate() {
        let mut term = *c;
        if let Some(group) = mimic.get(i) {
            for m in group {
                term = term.add(m)?;
            }
        }
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    Ok(acc.expect("non-empty").scale(1.0 / ce.len() as f64))
}

/// Per-sample mimic loss for one head.
///
/// The copies of `e_t` used to build the attention and gate are detached,
/// so the gradient reaches the target only through the direct `‖E^c − E^t‖²`
/// term, and the head projections through `E^c` (unless routing is
/// `Detached`). Returns the loss and the attention row(s).
pub fn head_loss<'t>(
    head: &HeadVars<'t>,
    e_t: Var<'t>,
    e_s: Var<'t>,
    mask: Option<&[bool]>,
    routing: GradientRouting,
) -> Result<(Var<'t>, Var<'t>)> {
    let e_t_ref = e_t.detach();
    let a = attention(e_t_ref, e_s, head.w_q, head.w_k, mask)?;
    let e_r = reference(a, head.beta, e_s)?;
    let z = gate(e_t_ref, e_r, head.w_v)?;
    let mut e_c = complementary(z, e_r)?;
    if routing == GradientRouting::Detached {
        e_c = e_c.detach();
    }
    Ok((mimic_loss(e_c, e_t)?, a))
}

// ---- value-level operations ----

fn check_pair(e_t: &RepresentationSet, e_s: &RepresentationSet, head: &MimicHead) -> Result<()> {
    if e_t.channel != e_s.channel || e_t.channel != head.channel {
        return Err(Error::dim(
            "cross_form",
            format!("channels {:?}/{:?}/{:?}", e_t.channel, e_s.channel, head.channel),
        ));
    }
    if e_t.width() != head.width() || e_s.width() != head.width() {
        return Err(Error::dim(
            "cross_form",
            format!("d_r {} / {} for head of width {}", e_t.width(), e_s.width(), head.width()),
        ));
    }
    Ok(())
}

pub fn compute_attention(
    e_t: &RepresentationSet,
    e_s: &RepresentationSet,
    head: &MimicHead,
) -> Result<Tensor> {
    check_pair(e_t, e_s, head)?;
    let tape = Tape::new();
    let a = attention(
        tape.constant(e_t.matrix.clone()),
        tape.constant(e_s.matrix.clone()),
        tape.constant(head.w_q.clone()),
        tape.constant(head.w_k.clone()),
        None,
    )?;
    Ok(a.value().as_ref().clone())
}

pub fn compute_reference(a: &Tensor, e_s: &RepresentationSet, head: &MimicHead) -> Result<Tensor> {
    head.validate_beta()?;
    let (_, l) = a.dims2()?;
    if l != e_s.forms() || head.beta.len() != l {
        return Err(Error::dim(
            "compute_reference",
            format!("A {:?}, E^s {:?}, β {:?}", a.shape(), e_s.matrix.shape(), head.beta.shape()),
        ));
    }
    let tape = Tape::new();
    let beta = head.beta_enabled.then(|| tape.constant(head.beta.clone()));
    let r = reference(tape.constant(a.clone()), beta, tape.constant(e_s.matrix.clone()))?;
    Ok(r.value().as_ref().clone())
}

pub fn compute_gate(e_t: &Tensor, e_r: &Tensor, head: &MimicHead) -> Result<Tensor> {
    if e_t.shape() != e_r.shape() || e_t.dims2()?.1 != head.width() {
        return Err(Error::dim(
            "compute_gate",
            format!("E^t {:?}, E^r {:?}, W_v {:?}", e_t.shape(), e_r.shape(), head.w_v.shape()),
        ));
    }
    let tape = Tape::new();
    let z = gate(
        tape.constant(e_t.clone()),
        tape.constant(e_r.clone()),
        tape.constant(head.w_v.clone()),
    )?;
    Ok(z.value().as_ref().clone())
}

pub fn compute_complementary(z: &Tensor, e_r: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let c = complementary(tape.constant(z.clone()), tape.constant(e_r.clone()))?;
    Ok(c.value().as_ref().clone())
}

/// `‖a − b‖²` for two equal-length rows.
pub fn mimic_loss_value(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("mimic_loss", format!("{} vs {}", a.len(), b.len())));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Value form of the combined objective.
pub fn total_loss_value(ce: &[f64], mimic: &[Vec<f64>]) -> Result<f64> {
    if ce.is_empty() || (!mimic.is_empty() && mimic.len() != ce.len()) {
        return Err(Error::Contract("mismatched loss terms".into()));
    }
    let sum: f64 = ce
        .iter()
        .enumerate()
        .map(|(i, c)| c + mimic.get(i).map_or(0.0, |m| m.iter().sum::<f64>()))
        .sum();
    Ok(sum / ce.len() as f64)
}

fn check_accuracies(acc: &[f64]) -> Result<()> {
    if let Some(bad) = acc.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::Validation(format!("accuracy {bad} outside [0, 1]")));
    }
    Ok(())
}

/// One exponential-moving-average step `0.9·β + 0.1·acc`.
pub fn ema_beta(beta: &[f64], acc: &[f64]) -> Result<Vec<f64>> {
    check_accuracies(acc)?;
    if beta.len() != acc.len() {
        return Err(Error::dim("ema_beta", format!("{} vs {}", beta.len(), acc.len())));
    }
    Ok(beta
        .iter()
        .zip(acc)
        .map(|(b, a)| BETA_EMA_DECAY * b + (1.0 - BETA_EMA_DECAY) * a)
        .collect())
}

/// Update regulatory factors from per-source accuracies.
///
/// Offline: the first call fixes β; later calls leave it alone. Online: the
/// first call seeds β with the accuracies, later calls take an EMA step.
pub fn update_beta(head: &mut MimicHead, acc: &[f64], mode: AcflMode) -> Result<()> {
    check_accuracies(acc)?;
    if acc.len() != head.beta.len() {
        return Err(Error::dim(
            "update_beta",
            format!("{} accuracies for {} sources", acc.len(), head.beta.len()),
        ));
    }
    let next = match (mode, head.beta_updates) {
        (AcflMode::Offline, 0) | (AcflMode::Online, 0) => acc.to_vec(),
        (AcflMode::Offline, _) => return Ok(()),
        (AcflMode::Online, _) => ema_beta(head.beta.data(), acc)?,
    };
    head.beta = Tensor::new(&[1, acc.len()], next)?;
    head.beta_updates += 1;
    Ok(())
}
