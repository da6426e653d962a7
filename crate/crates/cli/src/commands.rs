use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use acfl_core::acfl::{AcflConfig, AcflMode};
use acfl_core::skeleton::{generate_dataset, write_atomic, Dataset, Form, GeneratorSpec};
use acfl_core::training::{
    evaluate, fuse_streams, load_checkpoints, load_splits, map_seeds, per_class_csv,
    per_class_report, save_splits, train_acfl_offline_on, train_acfl_online_on, train_sfrl_on,
    write_report, write_run, FormEval, PreparedData, RunMode, RunSpec, TrainConfig,
    PER_CLASS_FILE,
};
use acfl_core::{Error, Result};
use serde::Serialize;
use serde_json::Value;

use crate::args::{EvalArgs, FuseArgs, GenDataArgs, ReportArgs, SplitArg, TrainArgs};

pub const GENERATOR_FILE: &str = "generator.json";
pub const EVAL_FILE: &str = "eval.json";
pub const FUSION_FILE: &str = "fusion.json";

/// Recursively overlay `patch` onto `base`; objects merge, everything else
/// replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn overlay<T: Serialize + serde::de::DeserializeOwned>(base: &T, path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(serde_json::from_value(serde_json::to_value(base)?)?);
    };
    let mut patch: Value = serde_json::from_slice(&fs::read(path)?)?;
    // A run's `config.json` nests the training config under `train`.
    if let Some(train) = patch.get_mut("train") {
        patch = train.take();
    }
    let mut v = serde_json::to_value(base)?;
    merge(&mut v, patch);
    Ok(serde_json::from_value(v)?)
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

#[derive(Serialize)]
struct GeneratorRecord<'a> {
    seed: u64,
    per_class: usize,
    split: f64,
    spec: &'a GeneratorSpec,
}

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let base = GeneratorSpec::stick_figure(a.classes, a.class_seed);
    let mut spec = overlay(&base, a.config.as_deref())?;
    if let Some(n) = a.noise_std {
        spec.noise_std = n;
    }
    let (train, test) = generate_dataset(&spec, a.seed, a.per_class, a.split)?;
    fs::create_dir_all(&a.out)?;
    save_splits(&a.out, &train, &test)?;
    let record = GeneratorRecord {
        seed: a.seed,
        per_class: a.per_class,
        split: a.split,
        spec: &spec,
    };
    write_atomic(&a.out.join(GENERATOR_FILE), &pretty(&record)?)?;
    println!(
        "wrote {} train / {} test samples to {}",
        train.samples.len(),
        test.samples.len(),
        a.out.display()
    );
    Ok(())
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::Validation(format!("seed range `{s}` is not `a..b` or `a..=b`"));
    let (lo, hi, inclusive) = if let Some((lo, hi)) = s.split_once("..=") {
        (lo, hi, true)
    } else if let Some((lo, hi)) = s.split_once("..") {
        (lo, hi, false)
    } else {
        return Err(bad());
    };
    let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
    let seeds: Vec<u64> = if inclusive { (lo..=hi).collect() } else { (lo..hi).collect() };
    if seeds.is_empty() {
        return Err(Error::Validation(format!("seed range `{s}` is empty")));
    }
    Ok(seeds)
}

fn build_config(a: &TrainArgs, mode: RunMode) -> Result<TrainConfig> {
    let placeholder = a.data.clone().unwrap_or_default();
    let mut cfg = overlay(&TrainConfig::desk_default(placeholder, 8), a.config.as_deref())?;
    if let Some(d) = &a.data {
        cfg.dataset = d.clone();
    }
    if cfg.dataset.as_os_str().is_empty() {
        return Err(Error::Config("no dataset: pass --data or set `dataset` in --config".into()));
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
        if a.lr_drops.is_none() {
            cfg.lr_drops.retain(|&d| d < e);
        }
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(d) = &a.lr_drops {
        cfg.lr_drops = d.clone();
    }
    if let Some(m) = a.momentum {
        cfg.momentum = m;
    }
    if let Some(w) = a.weight_decay {
        cfg.weight_decay = w;
    }
    if let Some(c) = a.grad_clip {
        cfg.grad_clip = (c > 0.0).then_some(c);
    }
    if let Some(l) = a.loss {
        cfg.backbone.output = l.into();
    }

    let acfl_mode = match mode {
        RunMode::Sfrl => None,
        RunMode::AcflOnline => Some(AcflMode::Online),
        RunMode::AcflOffline => Some(AcflMode::Offline),
    };
    let touched = a.channels.is_some()
        || a.mask_sources.is_some()
        || a.no_beta
        || a.mimic_weight.is_some()
        || a.routing.is_some();
    match acfl_mode {
        None => {
            if touched {
                return Err(Error::Config("cross-form flags need an acfl mode".into()));
            }
            cfg.acfl = None;
        }
        Some(m) => {
            let mut acfl = cfg.acfl.take().unwrap_or_else(|| AcflConfig::new(m));
            acfl.mode = m;
            if let Some(c) = &a.channels {
                acfl.channels = c.clone();
            }
            if let Some(masked) = &a.mask_sources {
                acfl.source_mask = Form::ALL.iter().map(|f| !masked.contains(f)).collect();
            }
            if a.no_beta {
                acfl.beta_enabled = false;
            }
            if let Some(w) = a.mimic_weight {
                acfl.mimic_weight = w;
            }
            if let Some(r) = a.routing {
                acfl.routing = r.into();
            }
            if let Some(f) = &a.forms {
                if m == AcflMode::Online && f.len() != Form::ALL.len() {
                    return Err(Error::Config("on-line training always co-trains every form".into()));
                }
                acfl.targets = f.clone();
            }
            cfg.acfl = Some(acfl);
        }
    }
    Ok(cfg)
}

/// Source directory for one seed: `<dir>/seed-<s>` when it exists.
fn sources_for(dir: &Path, seed: u64, many: bool) -> PathBuf {
    let nested = dir.join(format!("seed-{seed}"));
    if many && nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mode = a.run_mode();
    let base = build_config(&a, mode)?;
    let (train, test) = load_splits(&base.dataset)?;
    let mut base = base;
    base.backbone.class_count = train.class_count;
    let data = PreparedData::new(train, test, &base.topology)?;

    let forms: Vec<Form> = match mode {
        RunMode::Sfrl => a.forms.clone().unwrap_or_else(|| Form::ALL.to_vec()),
        RunMode::AcflOnline => Form::ALL.to_vec(),
        RunMode::AcflOffline => base.acfl.as_ref().expect("set above").targets.clone(),
    };
    if mode == RunMode::AcflOffline && a.sources.is_none() {
        let first = base.acfl.as_ref().expect("set above").source_forms()[0];
        return Err(Error::Config(format!(
            "missing source checkpoint for form `{first}`: pass --sources"
        )));
    }

    let seeds = match &a.seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![base.seed],
    };
    let many = a.seeds.is_some();
    let job = |seed: u64| -> Result<String> {
        let cfg = TrainConfig { seed, ..base.clone() };
        let dir = if many { a.out.join(format!("seed-{seed}")) } else { a.out.clone() };
        let sources = a.sources.as_ref().map(|s| sources_for(s, seed, many));
        let out = match mode {
            RunMode::Sfrl => train_sfrl_on(&cfg, &data, &forms)?,
            RunMode::AcflOnline => train_acfl_online_on(&cfg, &data)?,
            RunMode::AcflOffline => {
                let src_dir = sources.as_ref().expect("checked above");
                let need = cfg.acfl.as_ref().expect("set above").source_forms();
                let cks = load_checkpoints(src_dir, &need)?;
                train_acfl_offline_on(&cfg, &data, &cks)?
            }
        };
        let spec = RunSpec {
            mode,
            forms: forms.clone(),
            train: cfg,
            sources,
        };
        write_run(&dir, &spec, &out)?;
        let accs: Vec<String> = out
            .metrics
            .evaluations
            .iter()
            .map(|(f, e)| format!("{f} {:.4}", e.accuracy))
            .collect();
        Ok(format!("seed {seed} ({}): test accuracy {} -> {}", mode.name(), accs.join(", "), dir.display()))
    };
    let mut first_err = None;
    for r in map_seeds(&seeds, job) {
        match r {
            Ok(line) => println!("{line}"),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn split_in_form(data: &Path, split: SplitArg, form: Form, ck: &acfl_core::training::Checkpoint) -> Result<Dataset> {
    let (train, test) = load_splits(data)?;
    let ds = match split {
        SplitArg::Train => train,
        SplitArg::Test => test,
    };
    ds.to_form(form, &ck.meta.topology)
}

#[derive(Serialize)]
struct EvalRecord {
    #[serde(flatten)]
    eval: FormEval,
    predictions: Vec<usize>,
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ck = acfl_core::training::Checkpoint::load(&a.checkpoint)?;
    let ds = split_in_form(&a.data, a.split, ck.form(), &ck)?;
    let res = evaluate(&ck, &ds)?;
    fs::create_dir_all(&a.out)?;
    let report = per_class_report(&res.eval);
    write_atomic(&a.out.join(PER_CLASS_FILE), per_class_csv(&report).as_bytes())?;
    println!("{} accuracy {:.4} on {} samples", ck.form(), res.eval.accuracy, ds.samples.len());
    let record = EvalRecord {
        eval: res.eval,
        predictions: res.predictions,
    };
    write_atomic(&a.out.join(EVAL_FILE), &pretty(&record)?)?;
    Ok(())
}

#[derive(Serialize)]
struct FusionRecord {
    streams: String,
    forms: Vec<Form>,
    weights: Vec<f64>,
    per_form: BTreeMap<Form, f64>,
    fused: f64,
    predictions: Vec<usize>,
}

pub fn fuse(a: FuseArgs) -> Result<()> {
    let forms = a.streams.forms();
    let weights = a.weights.clone().unwrap_or_else(|| vec![1.0; forms.len()]);
    if weights.len() != forms.len() {
        return Err(Error::Validation(format!(
            "{} weights for {} streams",
            weights.len(),
            forms.len()
        )));
    }
    let mut maps = Vec::new();
    let mut per_form = BTreeMap::new();
    let mut labels = Vec::new();
    for &form in forms {
        let ck = a
            .runs
            .iter()
            .find_map(|r| load_checkpoints(r, &[form]).ok())
            .and_then(|mut m| m.remove(&form))
            .ok_or_else(|| Error::Config(format!("no checkpoint for form `{form}` in the given runs")))?;
        let ds = split_in_form(&a.data, SplitArg::Test, form, &ck)?;
        let res = evaluate(&ck, &ds)?;
        per_form.insert(form, res.eval.accuracy);
        labels = ds.labels();
        maps.push(res.maps);
    }
    let refs: Vec<_> = maps.iter().collect();
    let predictions = fuse_streams(&refs, &weights)?;
    let hits = predictions.iter().zip(&labels).filter(|(p, y)| p == y).count();
    let fused = hits as f64 / labels.len() as f64;
    let record = FusionRecord {
        streams: a.streams.name().into(),
        forms: forms.to_vec(),
        weights,
        per_form,
        fused,
        predictions,
    };
    fs::create_dir_all(&a.out)?;
    write_atomic(&a.out.join(FUSION_FILE), &pretty(&record)?)?;
    println!("{} fusion accuracy {fused:.4}", a.streams.name());
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let out = a.out.clone().unwrap_or_else(|| a.run.clone());
    let report = write_report(&a.run, &out, a.form)?;
    for (form, table) in &report.forms {
        println!(
            "{form}: accuracy {:.4}, hardest classes {:?}",
            table.accuracy, table.hard_classes
        );
    }
    Ok(())
}
