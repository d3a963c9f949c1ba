use std::path::{Path, PathBuf};

use crate::voxform::MipVariant;

/// File locations inside a work directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn cohort_dir(&self) -> PathBuf {
        self.root.join("cohort")
    }

    pub fn manifest(&self) -> PathBuf {
        self.cohort_dir().join("manifest.csv")
    }

    pub fn volume(&self, subject: &str) -> PathBuf {
        self.cohort_dir().join(format!("{subject}.lvol"))
    }

    pub fn volume_meta(&self, subject: &str) -> PathBuf {
        self.cohort_dir().join(format!("{subject}.json"))
    }

    pub fn mips_dir(&self, v: MipVariant) -> PathBuf {
        self.root.join("mips").join(v.tag())
    }

    pub fn model_dir(&self, v: MipVariant) -> PathBuf {
        self.root.join("models").join(v.tag())
    }

    pub fn fold_checkpoint(&self, v: MipVariant, fold: usize) -> PathBuf {
        self.model_dir(v).join(format!("fold{fold}.ckpt"))
    }

    pub fn train_summary(&self, v: MipVariant) -> PathBuf {
        self.model_dir(v).join("train.json")
    }

    pub fn finetune_dir(&self, from: MipVariant, to: MipVariant) -> PathBuf {
        self.root.join("models").join(format!("{}_ft_{}", from.tag(), to.tag()))
    }

    pub fn finetune_checkpoint(&self, from: MipVariant, to: MipVariant) -> PathBuf {
        self.finetune_dir(from, to).join("model.ckpt")
    }

    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn raw_features(&self) -> PathBuf {
        self.features_dir().join("raw.bin")
    }

    pub fn clusters_dir(&self) -> PathBuf {
        self.root.join("clusters")
    }

    pub fn assignments(&self) -> PathBuf {
        self.clusters_dir().join("assignments.csv")
    }

    pub fn cluster_summary(&self) -> PathBuf {
        self.clusters_dir().join("summary.json")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn repro_dir(&self) -> PathBuf {
        self.root.join("repro")
    }

    pub fn errors(&self, command: &str) -> PathBuf {
        self.root.join("errors").join(format!("{command}.csv"))
    }

    pub fn relative<'a>(&self, p: &'a Path) -> &'a Path {
        p.strip_prefix(&self.root).unwrap_or(p)
    }
}
