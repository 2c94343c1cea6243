//! Experiment configuration: a JSON file with flag overrides on top.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use typegraph::labelgraph::PropagationVariant;
use typegraph::matching::Interaction;
use typegraph::model::ModelConfig;
use typegraph::trainer::{config_hash, TrainConfig};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    /// Type vocabulary TSV (`name<TAB>general|fine|ultra`).
    pub types: Option<PathBuf>,
    /// Whitespace-separated embedding text file.
    pub embeddings: Option<PathBuf>,
    pub embedding_dim: usize,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataPaths,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Decision threshold for `eval` and `predict`.
    pub threshold: f64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataPaths {
                embedding_dim: 300,
                ..DataPaths::default()
            },
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            threshold: 0.5,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

/// Flags shared by every config-driven subcommand.
#[derive(Clone, Debug, Default, clap::Args)]
pub struct Overrides {
    /// Experiment config (JSON). Relative paths inside it resolve against
    /// the file's directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<PropagationVariant>,
    #[arg(long)]
    pub no_propagation: bool,
    #[arg(long)]
    pub no_word_affinity: bool,
    /// Replace mention/context matching with plain concatenation.
    #[arg(long)]
    pub no_interaction: bool,
    #[arg(long)]
    pub residual: bool,
    /// Load checkpoints even when their graph fingerprint differs.
    #[arg(long)]
    pub force: bool,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<PropagationVariant, String> {
    s.parse()
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        resolve(&mut cfg.data.types);
        resolve(&mut cfg.data.embeddings);
        resolve(&mut cfg.data.train);
        resolve(&mut cfg.data.dev);
        resolve(&mut cfg.data.test);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    /// Config file (or defaults) with the command-line overrides applied,
    /// then validated.
    pub fn resolve(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = o.seed {
            cfg.train.seed = s;
        }
        if let Some(t) = o.threshold {
            cfg.threshold = t;
        }
        if let Some(v) = o.variant {
            cfg.model.variant = v;
        }
        if o.no_propagation {
            cfg.model.propagation = false;
        }
        if o.no_word_affinity {
            cfg.model.word_affinity = false;
        }
        if o.no_interaction {
            cfg.model.interaction = Interaction::Concat;
        }
        if o.residual {
            cfg.model.residual = true;
        }
        if let Some(d) = &o.output_dir {
            cfg.output_dir = d.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(CliError::Validation(format!("threshold = {} not in [0, 1]", self.threshold)));
        }
        if self.data.embedding_dim == 0 {
            return Err(CliError::Validation("data.embedding_dim must be positive".into()));
        }
        self.model.validate().map_err(|e| CliError::Validation(format!("model: {e}")))?;
        self.train.validate().map_err(|e| CliError::Validation(format!("train: {e}")))?;
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_value())
    }

    pub fn require<'a>(&self, field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Validation(format!("missing config field `data.{field}`")))
    }
}
