use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::gcn::BackboneConfig;
use crate::skeleton::{load_dataset, save_dataset, Dataset, Form, SkeletonTopology, Split, Standardizer};

pub const TRAIN_FILE: &str = "train.acds";
pub const TEST_FILE: &str = "test.acds";

pub fn split_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join(TRAIN_FILE), dir.join(TEST_FILE))
}

pub fn save_splits(dir: &Path, train: &Dataset, test: &Dataset) -> Result<()> {
    let (a, b) = split_paths(dir);
    save_dataset(train, &a)?;
    save_dataset(test, &b)
}

/// Joint-form train and test splits from a dataset directory.
pub fn load_splits(dir: &Path) -> Result<(Dataset, Dataset)> {
    let (a, b) = split_paths(dir);
    let train = load_dataset(&a)?;
    let test = load_dataset(&b)?;
    if train.split != Split::Train || test.split != Split::Test {
        return Err(Error::Config(format!("{} has its splits swapped", dir.display())));
    }
    Ok((train, test))
}

/// One form of both splits, standardized with training statistics.
#[derive(Clone, Debug)]
pub struct FormSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub standardizer: Standardizer,
}

/// Every form of a joint-form dataset, aligned sample by sample.
#[derive(Clone, Debug)]
pub struct PreparedData {
    raw: BTreeMap<Form, (Dataset, Dataset)>,
    forms: BTreeMap<Form, FormSplit>,
    pub class_count: usize,
}

impl PreparedData {
    pub fn new(train: Dataset, test: Dataset, topo: &SkeletonTopology) -> Result<Self> {
        for ds in [&train, &test] {
            if ds.form() != Form::Joint {
                return Err(Error::Config(format!(
                    "datasets must be stored in joint form, found {}",
                    ds.form()
                )));
            }
        }
        if train.dims() != test.dims() || train.class_count != test.class_count {
            return Err(Error::Config(format!(
                "train {:?}/{} and test {:?}/{} disagree",
                train.dims(),
                train.class_count,
                test.dims(),
                test.class_count
            )));
        }
        if train.dims()[2] != topo.points() {
            return Err(Error::Config(format!(
                "dataset has {} points, topology has {}",
                train.dims()[2],
                topo.points()
            )));
        }
        let mut raw = BTreeMap::new();
        let mut forms = BTreeMap::new();
        for form in Form::ALL {
            let tr = train.to_form(form, topo)?;
            let te = test.to_form(form, topo)?;
            let standardizer = Standardizer::fit(&tr);
            forms.insert(
                form,
                FormSplit {
                    train: standardizer.apply(&tr)?,
                    test: standardizer.apply(&te)?,
                    standardizer,
                },
            );
            raw.insert(form, (tr, te));
        }
        Ok(Self {
            raw,
            forms,
            class_count: train.class_count,
        })
    }

    pub fn load(dir: &Path, topo: &SkeletonTopology) -> Result<Self> {
        let (train, test) = load_splits(dir)?;
        Self::new(train, test, topo)
    }

    pub fn form(&self, form: Form) -> &FormSplit {
        &self.forms[&form]
    }

    /// Unstandardized samples of one form.
    pub fn raw(&self, form: Form) -> (&Dataset, &Dataset) {
        let (a, b) = &self.raw[&form];
        (a, b)
    }

    /// Both splits of `form` under someone else's input statistics.
    pub fn restandardize(&self, form: Form, st: &Standardizer) -> Result<(Dataset, Dataset)> {
        let (a, b) = self.raw(form);
        Ok((st.apply(a)?, st.apply(b)?))
    }

    pub fn train_labels(&self) -> Vec<usize> {
        self.forms[&Form::Joint].train.labels()
    }

    pub fn test_labels(&self) -> Vec<usize> {
        self.forms[&Form::Joint].test.labels()
    }

    /// `[M, T, V, C]` of the joint form.
    pub fn joint_dims(&self) -> [usize; 4] {
        self.forms[&Form::Joint].train.dims()
    }

    /// Configuration error unless `cfg` can consume this data.
    pub fn check_backbone(&self, cfg: &BackboneConfig) -> Result<()> {
        let [_, _, v, c] = self.joint_dims();
        if cfg.points != v || cfg.base_channels != c || cfg.class_count != self.class_count {
            return Err(Error::Config(format!(
                "backbone expects {} points × {} coordinates and {} classes; dataset has {v} × {c} and {}",
                cfg.points, cfg.base_channels, cfg.class_count, self.class_count
            )));
        }
        Ok(())
    }
}
