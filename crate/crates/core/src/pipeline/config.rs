use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;
use crate::autoenc::TrainConfig;
use crate::cluster::{ClusterConfig, ReproConfig};
use crate::seed;
use crate::voxform::MipVariant;

const DT: MipVariant = MipVariant { dilated: true, trachea_included: true };
const DNT: MipVariant = MipVariant { dilated: true, trachea_included: false };
const NDT: MipVariant = MipVariant { dilated: false, trachea_included: true };
const NDNT: MipVariant = MipVariant { dilated: false, trachea_included: false };

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_per_class: usize,
    /// Edge length of the cubic synthetic volume grid.
    pub volume_dim: usize,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self { n_per_class: 50, volume_dim: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub mip_size: usize,
    pub variants: Vec<MipVariant>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { mip_size: 256, variants: vec![DT, DNT, NDT, NDNT] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// One cross-validated model set per variant.
    pub variants: Vec<MipVariant>,
    /// `init_seed` and `fold_seed` are replaced by seeds derived from the
    /// root seed.
    pub config: TrainConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { variants: vec![DT], config: TrainConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSection {
    /// Variant whose best fold model is fine-tuned.
    pub from: MipVariant,
    /// Variant of the stacks it is fine-tuned on.
    pub variant: MipVariant,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self { from: DT, variant: DNT }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    /// Best fold model of `finetune.from`.
    Trained,
    /// Output of the finetune command.
    Finetuned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodeSection {
    pub source: ModelSource,
    pub variant: MipVariant,
}

impl Default for EncodeSection {
    fn default() -> Self {
        Self { source: ModelSource::Finetuned, variant: DNT }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// (training variant, evaluation variant) pairs.
    pub pairs: Vec<(MipVariant, MipVariant)>,
    /// Score the ground truth against itself instead of model output.
    pub identity_model: bool,
    pub threshold: f32,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self { pairs: vec![(DT, DT), (DT, NDT)], identity_model: false, threshold: 0.5 }
    }
}

/// Everything a run depends on. Paths and thread count do not enter the
/// config hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub work_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub cohort: CohortConfig,
    pub preprocess: PreprocessConfig,
    pub train: TrainSection,
    pub finetune: FinetuneSection,
    pub encode: EncodeSection,
    /// `seed` is replaced by the derived `louvain` seed.
    pub cluster: ClusterConfig,
    /// `seed` is replaced by the derived `subsets` seed.
    pub reproduce: ReproConfig,
    pub evaluate: EvaluateSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            work_dir: PathBuf::from("work"),
            jobs: 0,
            cohort: CohortConfig::default(),
            preprocess: PreprocessConfig::default(),
            train: TrainSection::default(),
            finetune: FinetuneSection::default(),
            encode: EncodeSection::default(),
            cluster: ClusterConfig::default(),
            reproduce: ReproConfig::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

/// Independent random streams derived from the root seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub synth: u64,
    pub init: u64,
    pub folds: u64,
    pub louvain: u64,
    pub subsets: u64,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Usage(format!("{}: {e}", path.display())))
    }

    /// Applies `dotted.path=value` overrides; the value is parsed as JSON and
    /// taken as a string if that fails.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, PipelineError> {
        let mut v = serde_json::to_value(self).map_err(|e| PipelineError::Usage(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o.split_once('=').ok_or_else(|| PipelineError::Usage(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            let mut slot = &mut v;
            for part in key.split('.') {
                slot = slot
                    .as_object_mut()
                    .and_then(|m| m.get_mut(part))
                    .ok_or_else(|| PipelineError::Usage(format!("unknown config key {key:?}")))?;
            }
            *slot = value;
        }
        serde_json::from_value(v).map_err(|e| PipelineError::Usage(format!("invalid override: {e}")))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Seeds {
        Seeds {
            synth: seed::named(self.seed, "synth"),
            init: seed::named(self.seed, "init"),
            folds: seed::named(self.seed, "folds"),
            louvain: seed::named(self.seed, "louvain"),
            subsets: seed::named(self.seed, "subsets"),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = self.seeds();
        TrainConfig { init_seed: s.init, fold_seed: s.folds, ..self.train.config.clone() }
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig { seed: self.seeds().louvain, ..self.cluster.clone() }
    }

    pub fn repro_config(&self) -> ReproConfig {
        ReproConfig { seed: self.seeds().subsets, ..self.reproduce.clone() }
    }

    /// SHA-256 (hex) of the canonical JSON of the config with `work_dir`
    /// and `jobs` blanked.
    pub fn hash(&self) -> String {
        let canon = Self { work_dir: PathBuf::new(), jobs: 0, ..self.clone() };
        let bytes = serde_json::to_vec(&canon).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.cohort.n_per_class == 0 {
            return Err(PipelineError::Usage("cohort.n_per_class must be at least 1".into()));
        }
        if self.cohort.volume_dim < 16 {
            return Err(PipelineError::Usage("cohort.volume_dim must be at least 16".into()));
        }
        if self.preprocess.mip_size < 16 || !self.preprocess.mip_size.is_power_of_two() {
            return Err(PipelineError::Usage("preprocess.mip_size must be a power of two >= 16".into()));
        }
        Ok(())
    }
}
