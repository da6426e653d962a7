use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::acfl::Channel;
use crate::error::{Error, Result};
use crate::skeleton::Form;

/// Classes flagged as hard in a per-class report.
pub const HARD_CLASSES: usize = 10;

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss_s: f64,
    pub loss_d_feature: f64,
    pub loss_d_catmap: f64,
    pub loss_total: f64,
    pub acc_train: BTreeMap<Form, f64>,
    pub acc_test: BTreeMap<Form, f64>,
}

/// One line of `importance.jsonl`: mean attention of a target over its
/// sources on the test split, and the regulatory factors in effect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRecord {
    pub epoch: usize,
    pub target_form: Form,
    pub channel: Channel,
    #[serde(rename = "A_row")]
    pub a_row: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub support: usize,
    pub correct: usize,
    /// `None` when the class has no test samples.
    pub accuracy: Option<f64>,
}

/// Accuracy of one model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormEval {
    pub form: Form,
    pub accuracy: f64,
    pub per_class: Vec<ClassAccuracy>,
}

impl FormEval {
    pub fn from_predictions(
        form: Form,
        predictions: &[usize],
        labels: &[usize],
        class_count: usize,
    ) -> Result<Self> {
        if predictions.len() != labels.len() || labels.is_empty() {
            return Err(Error::Contract(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut support = vec![0usize; class_count];
        let mut correct = vec![0usize; class_count];
        for (&p, &y) in predictions.iter().zip(labels) {
            if y >= class_count {
                return Err(Error::Validation(format!("label {y} >= {class_count}")));
            }
            support[y] += 1;
            if p == y {
                correct[y] += 1;
            }
        }
        let per_class = (0..class_count)
            .map(|c| ClassAccuracy {
                class: c,
                support: support[c],
                correct: correct[c],
                accuracy: (support[c] > 0).then(|| correct[c] as f64 / support[c] as f64),
            })
            .collect();
        let total: usize = correct.iter().sum();
        Ok(Self {
            form,
            accuracy: total as f64 / labels.len() as f64,
            per_class,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochRecord>,
    /// Final test-split evaluation of every trained model.
    pub evaluations: BTreeMap<Form, FormEval>,
    pub wall_clock_secs: f64,
}

impl RunMetrics {
    pub fn final_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub class: usize,
    pub support: usize,
    pub accuracy: Option<f64>,
    pub hard: bool,
}

/// Per-class accuracies sorted ascending; absent classes come last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub form: Form,
    pub accuracy: f64,
    pub rows: Vec<ReportRow>,
    /// Up to ten lowest-accuracy classes, hardest first.
    pub hard_classes: Vec<usize>,
}

pub fn per_class_report(eval: &FormEval) -> ClassReport {
    let mut present: Vec<&ClassAccuracy> =
        eval.per_class.iter().filter(|c| c.accuracy.is_some()).collect();
    present.sort_by(|a, b| {
        a.accuracy
            .partial_cmp(&b.accuracy)
            .expect("finite")
            .then(a.class.cmp(&b.class))
    });
    let hard_classes: Vec<usize> = present.iter().take(HARD_CLASSES).map(|c| c.class).collect();
    let rows = present
        .iter()
        .copied()
        .chain(eval.per_class.iter().filter(|c| c.accuracy.is_none()))
        .map(|c| ReportRow {
            class: c.class,
            support: c.support,
            accuracy: c.accuracy,
            hard: hard_classes.contains(&c.class),
        })
        .collect();
    ClassReport {
        form: eval.form,
        accuracy: eval.accuracy,
        rows,
        hard_classes,
    }
}

/// `class,support,accuracy` with `NA` for absent classes.
pub fn per_class_csv(report: &ClassReport) -> String {
    let mut s = String::from("class,support,accuracy\n");
    for r in &report.rows {
        match r.accuracy {
            Some(a) => writeln!(s, "{},{},{a}", r.class, r.support),
            None => writeln!(s, "{},{},NA", r.class, r.support),
        }
        .expect("write to string");
    }
    s
}
