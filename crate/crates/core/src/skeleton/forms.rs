use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SkeletonTopology;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Input form of a skeleton sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Joint,
    Bone,
    Hybrid,
}

impl Form {
    pub const ALL: [Form; 3] = [Form::Joint, Form::Bone, Form::Hybrid];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Form> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Form::Joint => "joint",
            Form::Bone => "bone",
            Form::Hybrid => "hybrid",
        }
    }

    /// Input channels for this form given the per-point coordinate count.
    pub fn channels(self, base: usize) -> usize {
        match self {
            Form::Hybrid => 2 * base,
            _ => base,
        }
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Form {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Form::Joint),
            "bone" => Ok(Form::Bone),
            "hybrid" => Ok(Form::Hybrid),
            other => Err(Error::Validation(format!("unknown form `{other}`"))),
        }
    }
}

/// One action sample: `data` is `[M, T, V, C]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSequence {
    pub data: Tensor,
    pub label: usize,
    pub form: Form,
}

impl SkeletonSequence {
    pub fn new(data: Tensor, label: usize, form: Form) -> Result<Self> {
        if data.rank() != 4 {
            return Err(Error::dim(
                "skeleton_sequence",
                format!("expected [M, T, V, C], got {:?}", data.shape()),
            ));
        }
        Ok(Self { data, label, form })
    }

    /// `[M, T, V, C]`.
    pub fn dims(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    fn expect_form(&self, form: Form) -> Result<()> {
        if self.form != form {
            return Err(Error::Form {
                expected: form.to_string(),
                found: self.form.to_string(),
            });
        }
        Ok(())
    }
}

/// Bone vectors `joint[v] − joint[parent(v)]`; the root bone is zero.
pub fn derive_bone(seq: &SkeletonSequence, topo: &SkeletonTopology) -> Result<SkeletonSequence> {
    seq.expect_form(Form::Joint)?;
    let [m, t, v, c] = seq.dims();
    if v != topo.points() {
        return Err(Error::dim(
            "derive_bone",
            format!("{v} points but topology has {}", topo.points()),
        ));
    }
    let x = seq.data.data();
    let mut out = vec![0.0; x.len()];
    for frame in 0..m * t {
        let base = frame * v * c;
        for p in 0..v {
            let q = topo.parent(p);
            if q == p {
                continue;
            }
            for ch in 0..c {
                out[base + p * c + ch] = x[base + p * c + ch] - x[base + q * c + ch];
            }
        }
    }
    SkeletonSequence::new(Tensor::new(seq.data.shape(), out)?, seq.label, Form::Bone)
}

/// Channel concatenation, joint channels first.
pub fn derive_hybrid(joint: &SkeletonSequence, bone: &SkeletonSequence) -> Result<SkeletonSequence> {
    joint.expect_form(Form::Joint)?;
    bone.expect_form(Form::Bone)?;
    let [m, t, v, cj] = joint.dims();
    let [m2, t2, v2, cb] = bone.dims();
    if (m, t, v) != (m2, t2, v2) {
        return Err(Error::dim(
            "derive_hybrid",
            format!("joint {:?} vs bone {:?}", joint.dims(), bone.dims()),
        ));
    }
    let c = cj + cb;
    let mut out = Vec::with_capacity(m * t * v * c);
    for (jp, bp) in joint.data.data().chunks(cj).zip(bone.data.data().chunks(cb)) {
        out.extend_from_slice(jp);
        out.extend_from_slice(bp);
    }
    SkeletonSequence::new(Tensor::new(&[m, t, v, c], out)?, joint.label, Form::Hybrid)
}

/// Linear interpolation along time to exactly `t_out` frames. The first and
/// last frames are kept.
pub fn resample_frames(seq: &SkeletonSequence, t_out: usize) -> Result<SkeletonSequence> {
    if t_out == 0 {
        return Err(Error::Validation("resample to zero frames".into()));
    }
    let [m, t, v, c] = seq.dims();
    if t == t_out {
        return Ok(seq.clone());
    }
    let frame = v * c;
    let x = seq.data.data();
    let mut out = vec![0.0; m * t_out * frame];
    for person in 0..m {
        for i in 0..t_out {
            let (lo, frac) = if t_out == 1 || t == 1 {
                (0, 0.0)
            } else {
                let num = i * (t - 1);
                let den = t_out - 1;
                (num / den, (num % den) as f64 / den as f64)
            };
            let hi = (lo + 1).min(t - 1);
            let a = &x[(person * t + lo) * frame..(person * t + lo + 1) * frame];
            let b = &x[(person * t + hi) * frame..(person * t + hi + 1) * frame];
            let dst = &mut out[(person * t_out + i) * frame..(person * t_out + i + 1) * frame];
            for k in 0..frame {
                dst[k] = a[k] + frac * (b[k] - a[k]);
            }
        }
    }
    SkeletonSequence::new(Tensor::new(&[m, t_out, v, c], out)?, seq.label, seq.form)
}
