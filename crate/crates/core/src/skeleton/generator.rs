//! Seeded synthetic action generator.
//!
//! Each class is a tuple of oscillations, one per limb group. A sample poses
//! the stick figure by forward kinematics with per-bone angle offsets
//! `amplitude · sin(2π · frequency · u + phase)` for `u ∈ [0, 1]` along the
//! raw sequence, then adds a random global placement and Gaussian noise.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{resample_frames, Dataset, Form, SkeletonSequence, SkeletonTopology, Split};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Oscillation {
    /// Cycles per sequence.
    pub frequency: f64,
    /// Radians.
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrimitive {
    /// One oscillation per limb group.
    pub groups: Vec<Oscillation>,
}

/// Rest pose and limb grouping for the kinematic chain. Indexed by point;
/// root entries are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimbRig {
    /// Absolute bone direction at rest, radians.
    pub rest_angle: Vec<f64>,
    pub length: Vec<f64>,
    pub group: Vec<usize>,
    /// Direction multiplier for the group oscillation.
    pub sign: Vec<f64>,
}

impl LimbRig {
    pub fn stick_figure() -> Self {
        let down = -FRAC_PI_2;
        Self {
            rest_angle: vec![
                0.0,
                FRAC_PI_2,
                FRAC_PI_2,
                PI + PI / 4.0,
                down - 0.1,
                -PI / 4.0,
                down + 0.1,
                down - 0.3,
                down + 0.3,
            ],
            length: vec![0.0, 1.0, 0.35, 0.5, 0.45, 0.5, 0.45, 0.9, 0.9],
            group: vec![0, 0, 0, 1, 1, 2, 2, 3, 3],
            sign: vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0],
        }
    }

    pub fn group_count(&self) -> usize {
        self.group.iter().copied().max().map_or(0, |g| g + 1)
    }
}

/// Everything that determines the synthetic data, except the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub class_count: usize,
    pub classes: Vec<ClassPrimitive>,
    pub noise_std: f64,
    pub persons: usize,
    /// Inclusive range of raw sequence lengths before resampling.
    pub frames_raw: (usize, usize),
    /// Stored sequence length.
    pub frames: usize,
    pub topology: SkeletonTopology,
    pub rig: LimbRig,
    /// Half-width of the uniform global offset of the root.
    pub translation: f64,
    /// Global scale is uniform in `1 ± scale_jitter`.
    pub scale_jitter: f64,
    /// Relative std of per-sample amplitude perturbation.
    pub amplitude_jitter: f64,
    /// Std (radians) of per-sample phase perturbation.
    pub phase_jitter: f64,
}

impl GeneratorSpec {
    /// Default desk-scale setting on the nine-point stick figure, with class
    /// primitives drawn from `class_seed`.
    pub fn stick_figure(class_count: usize, class_seed: u64) -> Self {
        let rig = LimbRig::stick_figure();
        let mut rng = ChaCha8Rng::seed_from_u64(class_seed ^ 0x0C1A_55E5);
        let classes = (0..class_count)
            .map(|_| ClassPrimitive {
                groups: (0..rig.group_count())
                    .map(|_| Oscillation {
                        frequency: rng.random_range(0.5..2.5),
                        amplitude: rng.random_range(0.15..0.8),
                        phase: rng.random_range(0.0..TAU),
                    })
                    .collect(),
            })
            .collect();
        Self {
            class_count,
            classes,
            noise_std: 0.05,
            persons: 1,
            frames_raw: (20, 40),
            frames: 16,
            topology: SkeletonTopology::stick_figure(),
            rig,
            translation: 0.5,
            scale_jitter: 0.15,
            amplitude_jitter: 0.25,
            phase_jitter: 0.6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.class_count < 2 {
            return bad(format!("need at least 2 classes, got {}", self.class_count));
        }
        if self.classes.len() != self.class_count {
            return bad(format!(
                "{} class primitives for {} classes",
                self.classes.len(),
                self.class_count
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std {} must be >= 0", self.noise_std));
        }
        if self.persons != 1 {
            return bad(format!("only single-person generation is supported, got {}", self.persons));
        }
        let (lo, hi) = self.frames_raw;
        if lo < 2 || hi < lo || self.frames == 0 {
            return bad(format!("bad frame settings raw {lo}..={hi}, out {}", self.frames));
        }
        let v = self.topology.points();
        let rig = &self.rig;
        if [rig.rest_angle.len(), rig.length.len(), rig.group.len(), rig.sign.len()]
            .iter()
            .any(|&n| n != v)
        {
            return bad(format!("rig does not cover {v} points"));
        }
        let groups = rig.group_count();
        for (i, c) in self.classes.iter().enumerate() {
            if c.groups.len() != groups {
                return bad(format!("class {i} has {} oscillations, rig has {groups} groups", c.groups.len()));
            }
        }
        for i in 0..self.classes.len() {
            for j in i + 1..self.classes.len() {
                if self.classes[i] == self.classes[j] {
                    return bad(format!("classes {i} and {j} share identical primitives"));
                }
            }
        }
        Ok(())
    }

    fn sample_sequence(&self, class: usize, rng: &mut ChaCha8Rng) -> Result<SkeletonSequence> {
        let v = self.topology.points();
        let order = self.topology.topological_order();
        let root = self.topology.root();
        let rig = &self.rig;
        let unit = Normal::new(0.0, 1.0).expect("unit normal");

        let t_raw = rng.random_range(self.frames_raw.0..=self.frames_raw.1);
        let osc: Vec<Oscillation> = self.classes[class]
            .groups
            .iter()
            .map(|o| Oscillation {
                frequency: o.frequency,
                amplitude: o.amplitude * (1.0 + self.amplitude_jitter * unit.sample(rng)),
                phase: o.phase + self.phase_jitter * unit.sample(rng),
            })
            .collect();
        let offset = [
            rng.random_range(-self.translation..=self.translation),
            rng.random_range(-self.translation..=self.translation),
        ];
        let drift = [
            0.25 * self.translation * unit.sample(rng),
            0.25 * self.translation * unit.sample(rng),
        ];
        let scale = 1.0 + rng.random_range(-self.scale_jitter..=self.scale_jitter);

        let mut data = vec![0.0; t_raw * v * 2];
        let mut abs_angle = vec![0.0; v];
        let mut pos = vec![[0.0; 2]; v];
        for tau in 0..t_raw {
            let u = tau as f64 / (t_raw - 1) as f64;
            let theta: Vec<f64> = osc
                .iter()
                .map(|o| o.amplitude * (TAU * o.frequency * u + o.phase).sin())
                .collect();
            for &p in &order {
                if p == root {
                    abs_angle[p] = 0.0;
                    pos[p] = [offset[0] + drift[0] * u, offset[1] + drift[1] * u];
                    continue;
                }
                let q = self.topology.parent(p);
                let rest_rel = rig.rest_angle[p] - if q == root { 0.0 } else { rig.rest_angle[q] };
                abs_angle[p] = abs_angle[q] + rest_rel + rig.sign[p] * theta[rig.group[p]];
                let len = scale * rig.length[p];
                pos[p] = [
                    pos[q][0] + len * abs_angle[p].cos(),
                    pos[q][1] + len * abs_angle[p].sin(),
                ];
            }
            for p in 0..v {
                for ch in 0..2 {
                    data[(tau * v + p) * 2 + ch] = pos[p][ch] + self.noise_std * unit.sample(rng);
                }
            }
        }
        let raw = SkeletonSequence::new(Tensor::new(&[1, t_raw, v, 2], data)?, class, Form::Joint)?;
        let mut seq = resample_frames(&raw, self.frames)?;
        // Stored payloads are f32; keep memory and disk identical.
        seq.data.round_to_f32();
        Ok(seq)
    }
}

/// Balanced train/test split of `n_per_class` samples for every class.
/// Pure function of `(spec, seed, n_per_class, split_fraction)`.
pub fn generate_dataset(
    spec: &GeneratorSpec,
    seed: u64,
    n_per_class: usize,
    split_fraction: f64,
) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    if n_per_class < 2 {
        return Err(Error::Validation(format!("n_per_class {n_per_class} < 2")));
    }
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::Validation(format!("split fraction {split_fraction} outside (0, 1)")));
    }
    let n_train = ((n_per_class as f64 * split_fraction).round() as usize).clamp(1, n_per_class - 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::with_capacity(n_train * spec.class_count);
    let mut test = Vec::with_capacity((n_per_class - n_train) * spec.class_count);
    // Interleave classes so that any prefix is roughly balanced.
    for i in 0..n_per_class {
        for class in 0..spec.class_count {
            let seq = spec.sample_sequence(class, &mut rng)?;
            if i < n_train {
                train.push(seq);
            } else {
                test.push(seq);
            }
        }
    }
    Ok((
        Dataset::new(train, spec.class_count, Split::Train, seed)?,
        Dataset::new(test, spec.class_count, Split::Test, seed)?,
    ))
}
