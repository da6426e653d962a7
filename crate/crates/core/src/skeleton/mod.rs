//! Skeleton topology, joint/bone/hybrid forms, resampling, the synthetic
//! generator, and the dataset file format.

mod forms;
mod generator;
mod io;
mod topology;

use serde::{Deserialize, Serialize};

pub use forms::{derive_bone, derive_hybrid, resample_frames, Form, SkeletonSequence};
pub use generator::{generate_dataset, ClassPrimitive, GeneratorSpec, LimbRig, Oscillation};
pub use io::{
    decode_dataset, encode_dataset, load_dataset, save_dataset, write_atomic, DATASET_MAGIC,
    DATASET_VERSION,
};
pub use topology::SkeletonTopology;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train = 0,
    Test = 1,
}

/// Homogeneous collection of sequences of one form.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<SkeletonSequence>,
    pub class_count: usize,
    pub split: Split,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        samples: Vec<SkeletonSequence>,
        class_count: usize,
        split: Split,
        seed: u64,
    ) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Validation("dataset has no samples".into()))?;
        let (dims, form) = (first.dims(), first.form);
        for (i, s) in samples.iter().enumerate() {
            if s.dims() != dims || s.form != form {
                return Err(Error::Validation(format!(
                    "sample {i} is {:?}/{} but sample 0 is {dims:?}/{form}",
                    s.dims(),
                    s.form
                )));
            }
            if s.label >= class_count {
                return Err(Error::Validation(format!(
                    "sample {i} label {} >= class count {class_count}",
                    s.label
                )));
            }
        }
        Ok(Self {
            samples,
            class_count,
            split,
            seed,
        })
    }

    /// `[M, T, V, C]` shared by every sample.
    pub fn dims(&self) -> [usize; 4] {
        self.samples[0].dims()
    }

    pub fn form(&self) -> Form {
        self.samples[0].form
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Samples per class.
    pub fn class_support(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Same samples re-expressed in another form.
    pub fn to_form(&self, form: Form, topo: &SkeletonTopology) -> Result<Dataset> {
        if form == self.form() {
            return Ok(self.clone());
        }
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let bone = derive_bone(s, topo)?;
                match form {
                    Form::Bone => Ok(bone),
                    Form::Hybrid => derive_hybrid(s, &bone),
                    Form::Joint => unreachable!(),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(samples, self.class_count, self.split, self.seed)
    }
}

/// Per-channel standardization statistics (zero mean, unit variance).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Statistics over every person, frame and point of `ds`.
    pub fn fit(ds: &Dataset) -> Self {
        let c = ds.dims()[3];
        let mut sum = vec![0.0; c];
        let mut count = 0usize;
        for s in &ds.samples {
            for point in s.data.data().chunks(c) {
                for (a, x) in sum.iter_mut().zip(point) {
                    *a += x;
                }
                count += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; c];
        for s in &ds.samples {
            for point in s.data.data().chunks(c) {
                for ((a, x), m) in sq.iter_mut().zip(point).zip(&mean) {
                    *a += (x - m) * (x - m);
                }
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let sd = (s / count as f64).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        let c = ds.dims()[3];
        if c != self.mean.len() {
            return Err(Error::dim(
                "standardize",
                format!("{c} channels, statistics for {}", self.mean.len()),
            ));
        }
        let mut out = ds.clone();
        for s in &mut out.samples {
            for point in s.data.data_mut().chunks_mut(c) {
                for ((x, m), sd) in point.iter_mut().zip(&self.mean).zip(&self.std) {
                    *x = (*x - m) / sd;
                }
            }
        }
        Ok(out)
    }
}
