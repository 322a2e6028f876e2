//! The experiment configuration document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use mmf_core::field::FieldConfig;
use mmf_core::meanflow::suite::OracleSuiteConfig;
use mmf_core::sampler::EvalConfig;
use mmf_core::tasks::TaskSpec;
use mmf_core::trainer::TrainConfig;

use crate::error::{CliError, CliResult};

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2, 3, 4]
}

fn default_variance_window() -> usize {
    2000
}

/// Settings of `mmf ablation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Each seed drives field init and the training streams of every variant.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Number of final log rows entering `loss_variance`.
    #[serde(default = "default_variance_window")]
    pub variance_window: usize,
    /// Warmup length of the curriculum variant. Defaults to the warmup of
    /// `train.schedule` if it is one, else an eighth of `train.total_steps`.
    #[serde(default)]
    pub warmup_steps: Option<u64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: default_seeds(),
            variance_window: default_variance_window(),
            warmup_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSpec,
    pub field: FieldConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub diagnose: OracleSuiteConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

fn nested(prefix: &str) -> impl Fn(mmf_core::Error) -> CliError + '_ {
    move |e| match e.nested(prefix) {
        mmf_core::Error::Config(m) => CliError::Config(m),
        other => CliError::Config(other.to_string()),
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the dotted path of the offending key.
    pub fn parse(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                CliError::Config(e.inner().to_string())
            } else {
                CliError::Config(format!("{path}: {}", e.inner()))
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.task.validate().map_err(nested("task"))?;
        self.field.validate().map_err(nested("field"))?;
        if self.field.input_dim != self.task.dim() {
            return Err(CliError::Config(format!(
                "field.input_dim: {} does not match the task dimension {}",
                self.field.input_dim,
                self.task.dim()
            )));
        }
        self.train.validate().map_err(nested("train"))?;
        self.eval.validate().map_err(nested("eval"))?;
        if self.diagnose.samples == 0 || self.diagnose.dim == 0 {
            return Err(CliError::Config(
                "diagnose.samples: samples and dim must be positive".into(),
            ));
        }
        if !(self.diagnose.min_gap > 0.0 && self.diagnose.min_gap < 0.5) {
            return Err(CliError::Config(format!(
                "diagnose.min_gap: must lie in (0, 0.5), got {}",
                self.diagnose.min_gap
            )));
        }
        if self.ablation.seeds.is_empty() {
            return Err(CliError::Config("ablation.seeds: must not be empty".into()));
        }
        if self.ablation.variance_window < 2 {
            return Err(CliError::Config("ablation.variance_window: must be at least 2".into()));
        }
        if self.ablation.warmup_steps == Some(0) {
            return Err(CliError::Config("ablation.warmup_steps: must be positive".into()));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(CliError::Config("output_dir: must not be empty".into()));
        }
        Ok(())
    }

    /// Sorted-key compact JSON; parsing it back yields an equal config.
    pub fn canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    /// SHA-256 of [`Self::canonical_json`], lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `--seed` sets both the field initialization seed and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.field.seed = seed;
        self
    }
}
