//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export takes plain numbers and slices and returns a JSON string. The
//! `*_json` functions hold the logic so they can be tested natively.

use acfl_core::acfl::{attention, complementary, gate, reference, Channel, MimicHead};
use acfl_core::numerics::{Tape, Tensor};
use acfl_core::skeleton::{
    derive_bone, derive_hybrid, generate_dataset, resample_frames, GeneratorSpec, SkeletonSequence,
};
use acfl_core::training::fuse_streams;
use acfl_core::{Error, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js(r: Result<String>) -> std::result::Result<String, JsError> {
    r.map_err(|e| JsError::new(&e.to_string()))
}

/// `[T][V][C]` view of a single-person sequence.
fn frames(seq: &SkeletonSequence) -> Vec<Vec<Vec<f64>>> {
    let [_, t, v, c] = seq.dims();
    let d = seq.data.data();
    (0..t)
        .map(|ti| {
            (0..v)
                .map(|vi| d[(ti * v + vi) * c..(ti * v + vi + 1) * c].to_vec())
                .collect()
        })
        .collect()
}

#[derive(Serialize)]
struct SkeletonView {
    label: usize,
    parents: Vec<usize>,
    joint: Vec<Vec<Vec<f64>>>,
    bone: Vec<Vec<Vec<f64>>>,
    hybrid_channels: usize,
    resampled: Vec<Vec<Vec<f64>>>,
}

pub fn skeleton_json(
    classes: usize,
    class_seed: u64,
    seed: u64,
    class: usize,
    resample_to: usize,
) -> Result<String> {
    if class >= classes {
        return Err(Error::Validation(format!("class {class} of {classes}")));
    }
    let spec = GeneratorSpec::stick_figure(classes, class_seed);
    let (train, _) = generate_dataset(&spec, seed, 2, 0.5)?;
    let joint = &train.samples[class];
    let bone = derive_bone(joint, &spec.topology)?;
    let hybrid = derive_hybrid(joint, &bone)?;
    let view = SkeletonView {
        label: joint.label,
        parents: spec.topology.parents().to_vec(),
        joint: frames(joint),
        bone: frames(&bone),
        hybrid_channels: hybrid.dims()[3],
        resampled: frames(&resample_frames(joint, resample_to)?),
    };
    Ok(serde_json::to_string(&view)?)
}

/// One synthetic sample of `class` in joint, bone and hybrid form, plus the
/// joint form resampled to `resample_to` frames.
#[wasm_bindgen]
pub fn skeleton(
    classes: usize,
    class_seed: u64,
    seed: u64,
    class: usize,
    resample_to: usize,
) -> std::result::Result<String, JsError> {
    js(skeleton_json(classes, class_seed, seed, class, resample_to))
}

#[derive(Serialize)]
struct AttentionView {
    cosine: Vec<f64>,
    attention: Vec<f64>,
    weighted: Vec<f64>,
    reference: Vec<f64>,
    gate: Vec<f64>,
    complementary: Vec<f64>,
    target: Vec<f64>,
    mimic_loss: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Source row `l` is `s_l·E^t + √(1−s_l²)·noise_l`, so `similarity` sets how
/// close each source sits to the target. `keep[l] == 0` masks a source.
pub fn attention_json(
    seed: u64,
    d_r: usize,
    similarity: &[f64],
    beta: &[f64],
    keep: &[u8],
    use_beta: bool,
    identity_projections: bool,
) -> Result<String> {
    let l = similarity.len();
    if l == 0 || beta.len() != l || keep.len() != l {
        return Err(Error::Validation(format!(
            "{l} similarities, {} β, {} mask entries",
            beta.len(),
            keep.len()
        )));
    }
    if d_r == 0 {
        return Err(Error::Validation("d_r must be positive".into()));
    }
    if let Some(s) = similarity.iter().find(|s| !(-1.0..=1.0).contains(*s)) {
        return Err(Error::Validation(format!("similarity {s} outside [-1, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e_t = Tensor::randn(&[1, d_r], 1.0, &mut rng);
    let mut rows = Vec::with_capacity(l * d_r);
    for &s in similarity {
        let noise = Tensor::randn(&[d_r], 1.0, &mut rng);
        let r = (1.0 - s * s).max(0.0).sqrt();
        rows.extend(e_t.data().iter().zip(noise.data()).map(|(t, n)| s * t + r * n));
    }
    let e_s = Tensor::new(&[l, d_r], rows)?;
    let mut head = MimicHead::init(Channel::Feature, d_r, l, &mut rng);
    if identity_projections {
        head.w_q = Tensor::eye(d_r);
        head.w_k = Tensor::eye(d_r);
    }
    head.beta = Tensor::new(&[1, l], beta.to_vec())?;
    head.validate_beta()?;

    let mask: Vec<bool> = keep.iter().map(|&k| k != 0).collect();
    let tape = Tape::new();
    let t = tape.constant(e_t.clone());
    let s = tape.constant(e_s.clone());
    let a = attention(
        t,
        s,
        tape.constant(head.w_q.clone()),
        tape.constant(head.w_k.clone()),
        Some(&mask),
    )?;
    let b = use_beta.then(|| tape.constant(head.beta.clone()));
    let r = reference(a, b, s)?;
    let z = gate(t, r, tape.constant(head.w_v.clone()))?;
    let c = complementary(z, r)?;

    let a_row = a.value().data().to_vec();
    let weighted = if use_beta {
        a_row.iter().zip(beta).map(|(x, b)| x * b).collect()
    } else {
        a_row.clone()
    };
    let c_row = c.value().data().to_vec();
    let view = AttentionView {
        cosine: (0..l)
            .map(|i| cosine(e_t.data(), &e_s.data()[i * d_r..(i + 1) * d_r]))
            .collect(),
        attention: a_row,
        weighted,
        reference: r.value().data().to_vec(),
        gate: z.value().data().to_vec(),
        mimic_loss: c_row.iter().zip(e_t.data()).map(|(x, y)| (x - y) * (x - y)).sum(),
        complementary: c_row,
        target: e_t.data().to_vec(),
    };
    Ok(serde_json::to_string(&view)?)
}

/// Attention of one target row over `similarity.len()` sources, the
/// β-scaled reference, the gate and the complementary representation.
#[wasm_bindgen]
pub fn attention_explorer(
    seed: u64,
    d_r: usize,
    similarity: &[f64],
    beta: &[f64],
    keep: &[u8],
    use_beta: bool,
    identity_projections: bool,
) -> std::result::Result<String, JsError> {
    js(attention_json(seed, d_r, similarity, beta, keep, use_beta, identity_projections))
}

#[derive(Serialize)]
struct FusionView {
    per_stream: Vec<f64>,
    fused: f64,
}

/// Synthetic categorical maps: stream `s` scores the true class with a margin
/// of `signal[s]` over unit Gaussian noise.
pub fn fusion_json(seed: u64, samples: usize, classes: usize, signal: &[f64], weights: &[f64]) -> Result<String> {
    if samples == 0 || classes < 2 {
        return Err(Error::Validation(format!("{samples} samples, {classes} classes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<usize> = (0..samples).map(|i| i % classes).collect();
    let mut maps = Vec::with_capacity(signal.len());
    for &m in signal {
        let mut t = Tensor::randn(&[samples, classes], 1.0, &mut rng);
        for (i, &y) in labels.iter().enumerate() {
            t.data_mut()[i * classes + y] += m;
        }
        maps.push(t);
    }
    let acc = |pred: &[usize]| {
        pred.iter().zip(&labels).filter(|(p, y)| p == y).count() as f64 / samples as f64
    };
    let mut per_stream = Vec::with_capacity(maps.len());
    for m in &maps {
        per_stream.push(acc(&fuse_streams(&[m], &[1.0])?));
    }
    let refs: Vec<&Tensor> = maps.iter().collect();
    let fused = acc(&fuse_streams(&refs, weights)?);
    Ok(serde_json::to_string(&FusionView { per_stream, fused })?)
}

/// Accuracy of each stream alone and of their weighted late fusion.
#[wasm_bindgen]
pub fn fusion(
    seed: u64,
    samples: usize,
    classes: usize,
    signal: &[f64],
    weights: &[f64],
) -> std::result::Result<String, JsError> {
    js(fusion_json(seed, samples, classes, signal, weights))
}
