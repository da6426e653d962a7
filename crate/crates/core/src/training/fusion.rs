use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::classify;
use crate::numerics::Tensor;
use crate::skeleton::Form;

/// Late-fusion stream sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StreamSet {
    /// Bone only.
    #[serde(rename = "1s")]
    One,
    /// Joint and bone.
    #[serde(rename = "2s")]
    Two,
    /// Joint, bone and hybrid.
    #[serde(rename = "3s")]
    Three,
}

impl StreamSet {
    pub fn forms(self) -> &'static [Form] {
        match self {
            StreamSet::One => &[Form::Bone],
            StreamSet::Two => &[Form::Joint, Form::Bone],
            StreamSet::Three => &Form::ALL,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            StreamSet::One => "1s",
            StreamSet::Two => "2s",
            StreamSet::Three => "3s",
        }
    }
}

impl std::str::FromStr for StreamSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1s" => Ok(StreamSet::One),
            "2s" => Ok(StreamSet::Two),
            "3s" => Ok(StreamSet::Three),
            other => Err(Error::Validation(format!("unknown stream set `{other}`"))),
        }
    }
}

/// Weighted sum of categorical maps per sample, then argmax.
///
/// `streams[s]` is `[n, N]`: one row per sample for stream `s`.
pub fn fuse_streams(streams: &[&Tensor], weights: &[f64]) -> Result<Vec<usize>> {
    let first = streams
        .first()
        .ok_or_else(|| Error::Contract("no streams to fuse".into()))?;
    if weights.len() != streams.len() {
        return Err(Error::Contract(format!(
            "{} weights for {} streams",
            weights.len(),
            streams.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::Contract(format!("fusion weight {w} must be nonnegative")));
    }
    let (n, classes) = first.dims2()?;
    for s in streams {
        if s.shape() != first.shape() {
            return Err(Error::Contract(format!(
                "stream shapes {:?} and {:?} differ",
                s.shape(),
                first.shape()
            )));
        }
    }
    let mut out = Vec::with_capacity(n);
    let mut fused = vec![0.0; classes];
    for i in 0..n {
        fused.iter_mut().for_each(|x| *x = 0.0);
        for (s, &w) in streams.iter().zip(weights) {
            for (f, &k) in fused.iter_mut().zip(s.row(i)) {
                *f += w * k;
            }
        }
        out.push(classify(&fused));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_self_fusion() {
        let k = Tensor::from_rows(&[vec![0.1, 0.7, 0.2], vec![0.5, 0.2, 0.3]]).unwrap();
        assert_eq!(fuse_streams(&[&k], &[1.0]).unwrap(), vec![1, 0]);
        assert_eq!(fuse_streams(&[&k, &k], &[1.0, 1.0]).unwrap(), vec![1, 0]);
    }

    #[test]
    fn mismatches_are_contract_errors() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[3, 3]);
        assert!(matches!(fuse_streams(&[&a, &b], &[1.0, 1.0]), Err(Error::Contract(_))));
        assert!(matches!(fuse_streams(&[&a], &[1.0, 1.0]), Err(Error::Contract(_))));
        assert!(matches!(fuse_streams(&[&a], &[-1.0]), Err(Error::Contract(_))));
    }
}
