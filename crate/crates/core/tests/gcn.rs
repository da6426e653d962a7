use acfl_core::gcn::{
    backbone_forward, batch_input, classify, forward, gcn_unit, running_stats, tcn_unit,
    AdjacencyMatrix, BackboneConfig, Mode, ModelParams, OutputKind, ParamVars,
};
use acfl_core::numerics::{gradcheck, sigmoid, Tape, Tensor};
use acfl_core::skeleton::{Form, SkeletonSequence, SkeletonTopology};
use acfl_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `[N, C, T, V]` index.
fn at(shape: &[usize], n: usize, c: usize, t: usize, v: usize) -> usize {
    ((n * shape[1] + c) * shape[2] + t) * shape[3] + v
}

fn small_config(form: Form) -> BackboneConfig {
    BackboneConfig {
        widths: vec![3, 4],
        blocks: vec![1, 1],
        temporal_kernel: 3,
        strides: vec![1, 2],
        form,
        base_channels: 2,
        points: 5,
        class_count: 3,
        output: OutputKind::SigmoidBce,
    }
}

fn chain5() -> SkeletonTopology {
    SkeletonTopology::new(vec![0, 0, 1, 2, 1]).unwrap()
}

#[test]
fn adjacency_is_symmetric_normalized() {
    for topo in [SkeletonTopology::stick_figure(), chain5()] {
        let a = AdjacencyMatrix::from_topology(&topo);
        let m = a.matrix();
        let v = topo.points();
        for i in 0..v {
            for j in 0..v {
                assert_eq!(m.at2(i, j), m.at2(j, i));
                assert!(m.at2(i, j) >= 0.0);
            }
        }
        // Power iteration from a positive start converges to the Perron root.
        let mut x = vec![1.0; v];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let y: Vec<f64> = (0..v).map(|i| (0..v).map(|j| m.at2(i, j) * x[j]).sum()).collect();
            let norm = y.iter().map(|z| z * z).sum::<f64>().sqrt();
            lambda = norm / x.iter().map(|z| z * z).sum::<f64>().sqrt();
            x = y.iter().map(|z| z / norm).collect();
        }
        assert!(lambda <= 1.0 + 1e-9, "spectral radius {lambda}");
    }
}

#[test]
fn gcn_unit_cases() {
    let tape = Tape::new();
    let mut r = rng(1);
    let x = Tensor::uniform(&[2, 3, 4, 5], 0.0, 2.0, &mut r);
    let id = AdjacencyMatrix::identity(5);
    let y = gcn_unit(tape.constant(x.clone()), &id, tape.constant(Tensor::eye(3))).unwrap();
    assert_eq!(y.value().as_ref(), &x);

    let zero = gcn_unit(tape.constant(x.clone()), &id, tape.constant(Tensor::zeros(&[3, 4]))).unwrap();
    assert!(zero.value().data().iter().all(|&v| v == 0.0));

    let bad = gcn_unit(tape.constant(x), &id, tape.constant(Tensor::zeros(&[2, 4])));
    assert!(matches!(bad, Err(Error::Dimension { .. })));
}

#[test]
fn gcn_unit_matches_loop_oracle() {
    let mut r = rng(2);
    let shape = [2, 3, 4, 5];
    let x = Tensor::randn(&shape, 1.0, &mut r);
    let w = Tensor::randn(&[3, 2], 1.0, &mut r);
    let adj = AdjacencyMatrix::from_topology(&chain5());
    let tape = Tape::new();
    let y = gcn_unit(tape.constant(x.clone()), &adj, tape.constant(w.clone())).unwrap().value();
    let a = adj.matrix();
    let out_shape = [2, 2, 4, 5];
    for n in 0..2 {
        for o in 0..2 {
            for t in 0..4 {
                for v in 0..5 {
                    let mut s = 0.0;
                    for c in 0..3 {
                        for u in 0..5 {
                            s += a.at2(v, u) * x.data()[at(&shape, n, c, t, u)] * w.at2(c, o);
                        }
                    }
                    let got = y.data()[at(&out_shape, n, o, t, v)];
                    assert!((got - s.max(0.0)).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn stacked_identity_units_preserve_nonnegative_input() {
    let mut r = rng(3);
    let x = Tensor::uniform(&[1, 4, 6, 5], 0.0, 3.0, &mut r);
    let tape = Tape::new();
    let id = AdjacencyMatrix::identity(5);
    let mut h = tape.constant(x.clone());
    for _ in 0..4 {
        h = gcn_unit(h, &id, tape.constant(Tensor::eye(4))).unwrap();
    }
    assert_eq!(h.value().as_ref(), &x);
}

#[test]
fn tcn_unit_cases() {
    let mut r = rng(4);
    let shape = [2, 3, 16, 4];
    let x = Tensor::randn(&shape, 1.0, &mut r);
    let tape = Tape::new();
    let delta = Tensor::from_rows(&vec![vec![0.0, 1.0, 0.0]; 3]).unwrap();
    let y = tcn_unit(tape.constant(x.clone()), tape.constant(delta.clone()), 1).unwrap();
    assert_eq!(y.value().as_ref(), &x);

    let y2 = tcn_unit(tape.constant(x.clone()), tape.constant(delta), 2).unwrap();
    assert_eq!(y2.shape(), vec![2, 3, 8, 4]);

    let even = Tensor::zeros(&[3, 4]);
    assert!(matches!(
        tcn_unit(tape.constant(x.clone()), tape.constant(even), 1),
        Err(Error::Config(_))
    ));

    for stride in [1, 2] {
        let k = Tensor::randn(&[3, 5], 1.0, &mut r);
        let y = tcn_unit(tape.constant(x.clone()), tape.constant(k.clone()), stride).unwrap().value();
        let tout = 16usize.div_ceil(stride);
        let out_shape = [2, 3, tout, 4];
        for n in 0..2 {
            for c in 0..3 {
                for to in 0..tout {
                    for v in 0..4 {
                        let mut s = 0.0;
                        for j in 0..5 {
                            let ti = (to * stride + j) as isize - 2;
                            if (0..16).contains(&ti) {
                                s += k.at2(c, j) * x.data()[at(&shape, n, c, ti as usize, v)];
                            }
                        }
                        let got = y.data()[at(&out_shape, n, c, to, v)];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }
}

#[test]
fn backbone_shapes_and_form_check() {
    let topo = SkeletonTopology::stick_figure();
    let adj = AdjacencyMatrix::from_topology(&topo);
    for form in Form::ALL {
        let cfg = BackboneConfig::desk_default(form, 2, 9, 8);
        let params = ModelParams::init(&cfg, &mut rng(5)).unwrap();
        let c = form.channels(2);
        let seq = SkeletonSequence::new(Tensor::randn(&[1, 16, 9, c], 1.0, &mut rng(6)), 0, form).unwrap();
        let out = backbone_forward(&seq, &params, &cfg, &adj).unwrap();
        assert_eq!(out.f.shape(), &[64]);
        assert_eq!(out.k.shape(), &[8]);
        assert!(out.k.data().iter().all(|&k| k > 0.0 && k < 1.0));
        let again = backbone_forward(&seq, &params, &cfg, &adj).unwrap();
        assert_eq!(out, again);
    }
    let cfg = BackboneConfig::desk_default(Form::Bone, 2, 9, 8);
    let params = ModelParams::init(&cfg, &mut rng(5)).unwrap();
    let joint = SkeletonSequence::new(Tensor::zeros(&[1, 16, 9, 2]), 0, Form::Joint).unwrap();
    let err = backbone_forward(&joint, &params, &cfg, &adj).unwrap_err();
    assert!(matches!(err, Error::Form { .. }), "{err}");
}

#[test]
fn two_identical_persons_pool_like_one() {
    let cfg = small_config(Form::Joint);
    let adj = AdjacencyMatrix::from_topology(&chain5());
    let params = ModelParams::init(&cfg, &mut rng(7)).unwrap();
    let one = Tensor::randn(&[1, 8, 5, 2], 1.0, &mut rng(8));
    let mut both = one.data().to_vec();
    both.extend_from_slice(one.data());
    let two = Tensor::new(&[2, 8, 5, 2], both).unwrap();
    let a = backbone_forward(&SkeletonSequence::new(one, 0, Form::Joint).unwrap(), &params, &cfg, &adj).unwrap();
    let b = backbone_forward(&SkeletonSequence::new(two, 0, Form::Joint).unwrap(), &params, &cfg, &adj).unwrap();
    for (x, y) in a.f.data().iter().zip(b.f.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn backbone_gradcheck() {
    let cfg = small_config(Form::Joint);
    let adj = AdjacencyMatrix::from_topology(&chain5());
    for seed in 0..5 {
        let mut params = ModelParams::init(&cfg, &mut rng(seed)).unwrap();
        // Nonzero stem affine and running statistics so every path matters.
        let mut r = rng(seed + 100);
        for name in ["stem.bn.beta", "stem.bn.running_mean"] {
            let t = params.get_mut(name).unwrap();
            let s = t.shape().to_vec();
            *t = Tensor::randn(&s, 0.3, &mut r);
        }
        let xs: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[1, 8, 5, 2], 1.0, &mut r)).collect();
        let x = batch_input(&xs.iter().collect::<Vec<_>>()).unwrap();
        let names: Vec<String> = params
            .names()
            .filter(|n| !ModelParams::is_buffer(n))
            .cloned()
            .collect();
        let mut inputs: Vec<Tensor> = names.iter().map(|n| params.get(n).unwrap().clone()).collect();
        inputs.push(x);
        let labels = [0usize, 2, 1];
        for mode in [Mode::Train, Mode::Eval] {
            let report = gradcheck(&inputs, |tape, v| {
                let mut vars: Vec<(String, _)> =
                    names.iter().cloned().zip(v.iter().copied()).collect();
                for (n, t) in params.iter().filter(|(n, _)| ModelParams::is_buffer(n)) {
                    vars.push((n.clone(), tape.constant(t.clone())));
                }
                let pv: ParamVars = vars.into_iter().collect();
                let out = forward(v[names.len()], 1, &pv, running_stats(&params)?, &cfg, &adj, mode)?;
                let ce = out.logits.bce_with_logits(&labels)?;
                let f = out.feature.mul(&out.feature)?.sum().scale(0.1);
                ce.add(&f)
            })
            .unwrap();
            assert!(report.passed(), "seed {seed} {mode:?}: {report:?}");
        }
    }
}

#[test]
fn classify_cases() {
    assert_eq!(classify(&[0.0, 0.0, 1.0, 0.0]), 2);
    assert_eq!(classify(&[0.3; 5]), 0);
    let mut r = rng(9);
    for _ in 0..200 {
        let k: Vec<f64> = (0..8).map(|_| (r.random_range(0..5) as f64) * 0.25).collect();
        let mut best = 0;
        for i in 0..k.len() {
            if k[i] > k[best] {
                best = i;
            }
        }
        assert_eq!(classify(&k), best);
    }
}

proptest! {
    #[test]
    fn argmax_invariant_under_monotone_squash(logits in prop::collection::vec(-10.0f64..10.0, 2..12)) {
        let squashed: Vec<f64> = logits.iter().map(|&z| sigmoid(z)).collect();
        let cubed: Vec<f64> = logits.iter().map(|&z| z * z * z + z).collect();
        prop_assert_eq!(classify(&logits), classify(&squashed));
        prop_assert_eq!(classify(&logits), classify(&cubed));
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..50) {
        let cfg = small_config(Form::Hybrid);
        let adj = AdjacencyMatrix::from_topology(&chain5());
        let params = ModelParams::init(&cfg, &mut rng(seed)).unwrap();
        let x = Tensor::randn(&[1, 8, 5, 4], 1.0, &mut rng(seed + 1));
        let seq = SkeletonSequence::new(x, 0, Form::Hybrid).unwrap();
        let a = backbone_forward(&seq, &params, &cfg, &adj).unwrap();
        let b = backbone_forward(&seq, &params, &cfg, &adj).unwrap();
        prop_assert_eq!(a, b);
    }
}
