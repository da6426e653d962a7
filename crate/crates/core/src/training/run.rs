use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::engine::RunOutput;
use super::metrics::{per_class_csv, per_class_report, ClassReport, EpochRecord, RunMetrics};
use crate::error::{Error, Result};
use crate::skeleton::{write_atomic, Form};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const IMPORTANCE_FILE: &str = "importance.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.json";
pub const PER_CLASS_FILE: &str = "per_class.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    Sfrl,
    AcflOnline,
    AcflOffline,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            RunMode::Sfrl => "sfrl",
            RunMode::AcflOnline => "acfl-online",
            RunMode::AcflOffline => "acfl-offline",
        }
    }
}

/// The `config.json` of a run: enough to repeat it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub mode: RunMode,
    pub forms: Vec<Form>,
    pub train: TrainConfig,
    /// Off-line runs: where the source checkpoints came from.
    #[serde(default)]
    pub sources: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: RunMode,
    pub seed: u64,
    pub metrics: RunMetrics,
    pub source_hashes: BTreeMap<Form, String>,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub mode: RunMode,
    pub seed: u64,
    pub final_epoch: Option<EpochRecord>,
    pub forms: BTreeMap<Form, ClassReport>,
}

pub fn checkpoint_path(run: &Path, form: Form) -> PathBuf {
    run.join(CHECKPOINT_DIR).join(format!("{form}.ckpt"))
}

fn json_lines<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

/// Write config copy, metrics, importance weights, checkpoints, summary and
/// the per-class report into `dir`.
pub fn write_run(dir: &Path, spec: &RunSpec, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(CONFIG_FILE), &pretty(spec)?)?;
    write_atomic(&dir.join(METRICS_FILE), &json_lines(&out.metrics.epochs)?)?;
    write_atomic(&dir.join(IMPORTANCE_FILE), &json_lines(&out.importance)?)?;
    for (form, ck) in &out.checkpoints {
        ck.save(&checkpoint_path(dir, *form))?;
    }
    let summary = RunSummary {
        mode: spec.mode,
        seed: spec.train.seed,
        metrics: out.metrics.clone(),
        source_hashes: out.source_hashes.clone(),
    };
    write_atomic(&dir.join(SUMMARY_FILE), &pretty(&summary)?)?;
    write_report(dir, dir, None)?;
    Ok(())
}

pub fn read_spec(dir: &Path) -> Result<RunSpec> {
    Ok(serde_json::from_slice(&fs::read(dir.join(CONFIG_FILE))?)?)
}

pub fn read_summary(dir: &Path) -> Result<RunSummary> {
    Ok(serde_json::from_slice(&fs::read(dir.join(SUMMARY_FILE))?)?)
}

pub fn read_metrics(dir: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(dir.join(METRICS_FILE))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn build_report(summary: &RunSummary) -> Report {
    Report {
        mode: summary.mode,
        seed: summary.seed,
        final_epoch: summary.metrics.epochs.last().cloned(),
        forms: summary
            .metrics
            .evaluations
            .iter()
            .map(|(f, e)| (*f, per_class_report(e)))
            .collect(),
    }
}

/// Write `report.json` and `per_class.csv` for `form` (default: the first
/// evaluated form) from the run in `run`, into `out`.
pub fn write_report(run: &Path, out: &Path, form: Option<Form>) -> Result<Report> {
    let summary = read_summary(run)?;
    let report = build_report(&summary);
    let form = match form {
        Some(f) => f,
        None => *report
            .forms
            .keys()
            .next()
            .ok_or_else(|| Error::Validation("run has no evaluations".into()))?,
    };
    let table = report.forms.get(&form).ok_or_else(|| {
        Error::Validation(format!("run has no evaluation for form `{form}`"))
    })?;
    fs::create_dir_all(out)?;
    write_atomic(&out.join(PER_CLASS_FILE), per_class_csv(table).as_bytes())?;
    write_atomic(&out.join(REPORT_FILE), &pretty(&report)?)?;
    Ok(report)
}

/// Checkpoints for `forms` from a directory holding either `<form>.ckpt`
/// files or a run's `checkpoints/` subdirectory.
pub fn load_checkpoints(dir: &Path, forms: &[Form]) -> Result<BTreeMap<Form, Checkpoint>> {
    let mut out = BTreeMap::new();
    for &form in forms {
        let candidates = [checkpoint_path(dir, form), dir.join(format!("{form}.ckpt"))];
        let path = candidates.iter().find(|p| p.is_file()).ok_or_else(|| {
            Error::Config(format!(
                "missing source checkpoint for form `{form}` under {}",
                dir.display()
            ))
        })?;
        let ck = Checkpoint::load(path)?;
        if ck.form() != form {
            return Err(Error::Config(format!(
                "{} holds a {} model, expected {form}",
                path.display(),
                ck.form()
            )));
        }
        out.insert(form, ck);
    }
    Ok(out)
}
