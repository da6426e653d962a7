use std::collections::BTreeMap;

use acfl_core::acfl::{AcflConfig, AcflMode, Channel};
use acfl_core::skeleton::{generate_dataset, Dataset, Form, GeneratorSpec, SkeletonSequence};
use acfl_core::training::{
    evaluate, fuse_streams, init_checkpoint, map_seeds, params_hash, per_class_csv, per_class_report,
    read_metrics, train_acfl_offline_on, train_acfl_online_on, train_sfrl_on, write_report, write_run,
    Checkpoint, FormEval, PreparedData, RunMode, RunOutput, RunSpec, TrainConfig, HARD_CLASSES,
};
use acfl_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn data(seed: u64, per_class: usize) -> PreparedData {
    let spec = GeneratorSpec::stick_figure(8, 0);
    let (train, test) = generate_dataset(&spec, seed, per_class, 0.75).unwrap();
    let cfg = TrainConfig::desk_default("unused", 8);
    PreparedData::new(train, test, &cfg.topology).unwrap()
}

/// A few epochs on a small set, for behavior rather than accuracy.
fn quick(seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk_default("unused", 8);
    cfg.seed = seed;
    cfg.epochs = 3;
    cfg.lr_drops = vec![2];
    cfg
}

fn offline(cfg: &TrainConfig) -> TrainConfig {
    let mut a = AcflConfig::new(AcflMode::Offline);
    a.targets = vec![Form::Joint];
    TrainConfig {
        acfl: Some(a),
        ..cfg.clone()
    }
}

fn online(cfg: &TrainConfig) -> TrainConfig {
    TrainConfig {
        acfl: Some(AcflConfig::new(AcflMode::Online)),
        ..cfg.clone()
    }
}

fn metrics_bytes(out: &RunOutput) -> Vec<u8> {
    let mut v = Vec::new();
    for r in &out.metrics.epochs {
        serde_json::to_writer(&mut v, r).unwrap();
        v.push(b'\n');
    }
    v
}

#[test]
fn lr_schedule_under_defaults() {
    let cfg = TrainConfig::desk_default("d", 8);
    assert_eq!(cfg.lr_at(1), 0.1);
    assert_eq!(cfg.lr_at(18), 0.1);
    assert!((cfg.lr_at(19) - 0.01).abs() < 1e-15);
    assert!((cfg.lr_at(26) - 0.01).abs() < 1e-15);
    assert!((cfg.lr_at(27) - 0.001).abs() < 1e-15);
}

#[test]
fn config_validation() {
    let ok = TrainConfig::desk_default("d", 8);
    ok.validate().unwrap();
    for bad in [
        TrainConfig { epochs: 0, ..ok.clone() },
        TrainConfig { batch_size: 0, ..ok.clone() },
        TrainConfig { lr_drops: vec![26, 18], ..ok.clone() },
        TrainConfig { lr_drops: vec![30], ..ok.clone() },
        TrainConfig { momentum: 1.0, ..ok.clone() },
        TrainConfig { lr: f64::NAN, ..ok.clone() },
        TrainConfig { grad_clip: Some(0.0), ..ok.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
    let seeds = ok.seeds();
    let all = [seeds.data, seeds.init, seeds.shuffle, seeds.heads];
    for i in 0..4 {
        for j in 0..i {
            assert_ne!(all[i], all[j]);
        }
    }
}

#[test]
fn sfrl_is_deterministic_and_checkpoints_round_trip() {
    let d = data(3, 8);
    let cfg = quick(3);
    let a = train_sfrl_on(&cfg, &d, &[Form::Joint, Form::Bone]).unwrap();
    let b = train_sfrl_on(&cfg, &d, &[Form::Joint, Form::Bone]).unwrap();
    assert_eq!(metrics_bytes(&a), metrics_bytes(&b));
    assert_eq!(a.metrics.evaluations, b.metrics.evaluations);

    let dir = tempfile::tempdir().unwrap();
    for (form, ck) in &a.checkpoints {
        assert_eq!(ck.encode().unwrap(), b.checkpoints[form].encode().unwrap());
        let path = dir.path().join(format!("{form}.ckpt"));
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.encode().unwrap(), ck.encode().unwrap());

        let (_, test) = d.raw(*form);
        let before = evaluate(ck, test).unwrap();
        let after = evaluate(&back, test).unwrap();
        assert_eq!(before.eval, after.eval);
        assert_eq!(before.maps, after.maps);
        assert_eq!(&before.eval, &a.metrics.evaluations[form]);
        assert_eq!(before.maps, a.test_maps[form]);
    }
}

#[test]
fn sfrl_rejects_acfl_section() {
    let d = data(0, 4);
    let err = train_sfrl_on(&online(&quick(0)), &d, &[Form::Joint]).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    let err = train_acfl_online_on(&offline(&quick(0)), &d).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn offline_freezes_sources_and_fixes_beta() {
    let d = data(4, 8);
    let cfg = quick(4);
    let sources = train_sfrl_on(&cfg, &d, &Form::ALL).unwrap();
    let before: BTreeMap<Form, String> =
        sources.checkpoints.iter().map(|(f, c)| (*f, params_hash(&c.params))).collect();
    let out = train_acfl_offline_on(&offline(&cfg), &d, &sources.checkpoints).unwrap();
    let after: BTreeMap<Form, String> =
        sources.checkpoints.iter().map(|(f, c)| (*f, params_hash(&c.params))).collect();
    assert_eq!(before, after);
    assert_eq!(out.source_hashes, before);

    let first = &out.metrics.epochs[0];
    assert!(first.loss_d_feature > 0.0);
    assert!(first.loss_d_catmap > 0.0);

    let source_acc: Vec<f64> = Form::ALL.iter().map(|f| sources.metrics.evaluations[f].accuracy).collect();
    assert!(!out.importance.is_empty());
    for rec in &out.importance {
        assert_eq!(rec.target_form, Form::Joint);
        assert_eq!(rec.beta, source_acc);
        let s: f64 = rec.a_row.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
    assert_eq!(out.checkpoints.keys().copied().collect::<Vec<_>>(), vec![Form::Joint]);
}

#[test]
fn offline_without_source_names_the_form() {
    let d = data(0, 4);
    let cfg = quick(0);
    let mut sources = train_sfrl_on(&TrainConfig { epochs: 1, lr_drops: vec![], ..cfg.clone() }, &d, &[Form::Joint, Form::Hybrid])
        .unwrap()
        .checkpoints;
    let err = train_acfl_offline_on(&offline(&cfg), &d, &sources).unwrap_err();
    match err {
        Error::Config(m) => assert!(m.contains("bone"), "{m}"),
        other => panic!("{other}"),
    }
    // Masking the missing source makes the run legal.
    let mut masked = offline(&cfg);
    masked.acfl.as_mut().unwrap().source_mask = vec![true, false, true];
    let out = train_acfl_offline_on(&masked, &d, &sources).unwrap();
    assert!(out.importance.iter().all(|r| r.a_row[1] == 0.0));
    sources.remove(&Form::Hybrid);
    assert!(matches!(train_acfl_offline_on(&masked, &d, &sources), Err(Error::Config(_))));
}

#[test]
fn online_beta_follows_train_accuracy() {
    let d = data(5, 8);
    let cfg = online(&TrainConfig { epochs: 4, lr_drops: vec![], ..quick(5) });
    let out = train_acfl_online_on(&cfg, &d).unwrap();
    let mut beta: Option<Vec<f64>> = None;
    for rec in &out.metrics.epochs {
        let acc: Vec<f64> = Form::ALL.iter().map(|f| rec.acc_train[f]).collect();
        let next = match &beta {
            None => acc,
            Some(b) => b.iter().zip(&acc).map(|(b, a)| 0.9 * b + 0.1 * a).collect(),
        };
        // Final state is stored at single precision.
        let want: Vec<f64> = if rec.epoch == cfg.epochs {
            next.iter().map(|&b| b as f32 as f64).collect()
        } else {
            next.clone()
        };
        let logged: Vec<_> = out.importance.iter().filter(|r| r.epoch == rec.epoch).collect();
        assert_eq!(logged.len(), Form::ALL.len() * Channel::ALL.len());
        for r in logged {
            for (x, y) in r.beta.iter().zip(&want) {
                assert!((x - y).abs() < 1e-15, "epoch {}", rec.epoch);
            }
        }
        beta = Some(next);
    }
}

#[test]
fn online_self_only_mask_runs() {
    let d = data(6, 4);
    let mut cfg = online(&TrainConfig { epochs: 2, lr_drops: vec![], ..quick(6) });
    cfg.acfl.as_mut().unwrap().source_mask = vec![true, false, false];
    let out = train_acfl_online_on(&cfg, &d).unwrap();
    assert_eq!(out.metrics.epochs.len(), 2);
    for rec in &out.importance {
        assert_eq!(rec.a_row[1], 0.0);
        assert_eq!(rec.a_row[2], 0.0);
        assert!((rec.a_row[0] - 1.0).abs() < 1e-12);
    }
    assert!(out.metrics.epochs.iter().all(|r| r.loss_total.is_finite()));
}

#[test]
fn logged_total_decomposes() {
    let d = data(7, 6);
    let cfg = online(&quick(7));
    let w = cfg.acfl.as_ref().unwrap().mimic_weight;
    let out = train_acfl_online_on(&cfg, &d).unwrap();
    for r in &out.metrics.epochs {
        let recomputed = r.loss_s + w * (r.loss_d_feature + r.loss_d_catmap);
        assert!((r.loss_total - recomputed).abs() < 1e-9, "{} vs {recomputed}", r.loss_total);
        assert!(r.acc_train.values().chain(r.acc_test.values()).all(|a| (0.0..=1.0).contains(a)));
    }
    let sfrl = train_sfrl_on(&quick(7), &d, &[Form::Bone]).unwrap();
    for r in &sfrl.metrics.epochs {
        assert_eq!(r.loss_d_feature, 0.0);
        assert_eq!(r.loss_total, r.loss_s);
    }
}

#[test]
fn random_init_is_near_chance() {
    let d = data(0, 40);
    let cfg = TrainConfig::desk_default("unused", 8);
    for seed in 0..20 {
        let (_, test) = d.raw(Form::Joint);
        let st = d.form(Form::Joint).standardizer.clone();
        let ck = init_checkpoint(&cfg.backbone, &cfg.topology, Form::Joint, st, seed).unwrap();
        let acc = evaluate(&ck, test).unwrap().eval.accuracy;
        assert!((0.05..=0.35).contains(&acc), "seed {seed}: {acc}");
    }
}

fn relabel(ds: &Dataset, labels: &[usize]) -> Dataset {
    let samples = ds
        .samples
        .iter()
        .zip(labels)
        .map(|(s, &y)| SkeletonSequence::new(s.data.clone(), y, s.form).unwrap())
        .collect();
    Dataset::new(samples, ds.class_count, ds.split, ds.seed).unwrap()
}

#[test]
fn evaluation_accounting() {
    let d = data(8, 8);
    let out = train_sfrl_on(&quick(8), &d, &[Form::Hybrid]).unwrap();
    let ck = &out.checkpoints[&Form::Hybrid];
    let (_, test) = d.raw(Form::Hybrid);
    let res = evaluate(ck, test).unwrap();

    let own = relabel(test, &res.predictions);
    assert_eq!(evaluate(ck, &own).unwrap().eval.accuracy, 1.0);

    let n = test.samples.len() as f64;
    let weighted: f64 = res
        .eval
        .per_class
        .iter()
        .filter_map(|c| c.accuracy.map(|a| a * c.support as f64 / n))
        .sum();
    assert!((weighted - res.eval.accuracy).abs() < 1e-9);
}

#[test]
fn report_matches_final_accuracy() {
    let d = data(9, 6);
    let cfg = quick(9);
    let out = train_sfrl_on(&cfg, &d, &[Form::Joint]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let spec = RunSpec {
        mode: RunMode::Sfrl,
        forms: vec![Form::Joint],
        train: cfg,
        sources: None,
    };
    write_run(dir.path(), &spec, &out).unwrap();
    let metrics = read_metrics(dir.path()).unwrap();
    assert_eq!(metrics, out.metrics.epochs);
    let final_acc = metrics.last().unwrap().acc_test[&Form::Joint];

    let rep = dir.path().join("rep");
    write_report(dir.path(), &rep, Some(Form::Joint)).unwrap();
    let csv = std::fs::read_to_string(rep.join("per_class.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("class,support,accuracy"));
    let (mut num, mut den) = (0.0, 0.0);
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        let support: f64 = cols[1].parse().unwrap();
        if cols[2] != "NA" {
            num += cols[2].parse::<f64>().unwrap() * support;
        }
        den += support;
    }
    assert!((num / den - final_acc).abs() < 1e-9);
    assert!(matches!(write_report(dir.path(), &rep, Some(Form::Bone)), Err(Error::Validation(_))));
}

#[test]
fn report_edge_cases() {
    let labels: Vec<usize> = (0..8).flat_map(|c| [c, c]).collect();
    let perfect = FormEval::from_predictions(Form::Joint, &labels, &labels, 8).unwrap();
    let rep = per_class_report(&perfect);
    assert!(rep.rows.iter().all(|r| r.accuracy == Some(1.0)));

    let missing = FormEval::from_predictions(Form::Joint, &[0, 1, 1], &[0, 1, 1], 3).unwrap();
    let rep = per_class_report(&missing);
    assert_eq!(rep.rows.last().unwrap().accuracy, None);
    assert!(!rep.hard_classes.contains(&2));
    assert!(per_class_csv(&rep).ends_with("2,0,NA\n"));
}

#[test]
fn map_seeds_keeps_order() {
    let seeds: Vec<u64> = (0..12).collect();
    let out: Vec<u64> = map_seeds(&seeds, |s| Ok(s * s)).into_iter().map(|r| r.unwrap()).collect();
    assert_eq!(out, seeds.iter().map(|s| s * s).collect::<Vec<_>>());
}

#[test]
fn sfrl_fits_default_training_set() {
    let d = data(0, 40);
    let mut cfg = TrainConfig::desk_default("unused", 8);
    cfg.seed = 0;
    let out = train_sfrl_on(&cfg, &d, &[Form::Joint]).unwrap();
    let last = out.metrics.final_epoch().unwrap();
    assert_eq!(last.epoch, 30);
    assert!(last.acc_train[&Form::Joint] > 0.9, "{:?}", last.acc_train);
}

proptest! {
    #[test]
    fn lr_follows_drop_count(lr in 1e-4f64..1.0, factor in 0.01f64..1.0, drops in prop::collection::btree_set(1usize..40, 0..4), epoch in 1usize..41) {
        let cfg = TrainConfig {
            lr,
            lr_factor: factor,
            lr_drops: drops.iter().copied().collect(),
            epochs: 41,
            ..TrainConfig::desk_default("d", 8)
        };
        let mut want = lr;
        for &d in &drops {
            if epoch > d {
                want *= factor;
            }
        }
        prop_assert!((cfg.lr_at(epoch) - want).abs() <= 1e-15 * lr);
    }

    #[test]
    fn hard_classes_match_sort_oracle(seed in 0u64..5000, classes in 2usize..25) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<usize> = (0..200).map(|_| r.random_range(0..classes)).collect();
        let preds: Vec<usize> = labels
            .iter()
            .map(|&y| if r.random_bool(0.6) { y } else { r.random_range(0..classes) })
            .collect();
        let eval = FormEval::from_predictions(Form::Bone, &preds, &labels, classes).unwrap();
        let mut oracle: Vec<(f64, usize)> = Vec::new();
        for c in 0..classes {
            let support = labels.iter().filter(|&&y| y == c).count();
            if support > 0 {
                let hit = labels.iter().zip(&preds).filter(|(&y, &p)| y == c && p == c).count();
                oracle.push((hit as f64 / support as f64, c));
            }
        }
        oracle.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<usize> = oracle.iter().take(HARD_CLASSES).map(|x| x.1).collect();
        prop_assert_eq!(per_class_report(&eval).hard_classes, want);
    }

    #[test]
    fn fusion_identity_and_scaling(seed in 0u64..5000, w in 0.1f64..10.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let maps = acfl_core::numerics::Tensor::uniform(&[20, 6], 0.0, 1.0, &mut r);
        let own: Vec<usize> = (0..20).map(|i| acfl_core::gcn::classify(maps.row(i))).collect();
        prop_assert_eq!(fuse_streams(&[&maps], &[1.0]).unwrap(), own.clone());
        prop_assert_eq!(fuse_streams(&[&maps, &maps], &[w, w]).unwrap(), own);
    }
}
