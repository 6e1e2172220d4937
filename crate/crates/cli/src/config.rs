//! Run configuration: one TOML file plus flag overrides; flags win.

use std::path::Path;

use serde::Deserialize;

use hin_core::corpus::SynthSpec;
use hin_core::model::{AblationFlags, ModelConfig};
use hin_core::train::TrainConfig;
use hin_core::{HinError, Result};

/// Top-level structure of a run-spec file. Every field is optional;
/// omitted fields fall back to library defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub synth: SynthSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d_w: Option<usize>,
    pub d_t: Option<usize>,
    pub d_c: Option<usize>,
    pub d_dist: Option<usize>,
    pub hidden: Option<usize>,
    pub subspaces: Option<usize>,
    pub subspace_dim: Option<usize>,
    pub relations: Option<usize>,
    pub dropout: Option<f64>,
    pub coref_buckets: Option<usize>,
    pub freeze_word_embeddings: Option<bool>,
    pub ablation: Option<AblationFlags>,
}

impl ModelSection {
    /// Fold this section over a base configuration. `relations` and
    /// `freeze_word_embeddings` stay as written here when given; the
    /// caller resolves them from corpus context otherwise.
    pub fn apply(&self, mut cfg: ModelConfig) -> ModelConfig {
        if let Some(v) = self.d_w {
            cfg.d_w = v;
        }
        if let Some(v) = self.d_t {
            cfg.d_t = v;
        }
        if let Some(v) = self.d_c {
            cfg.d_c = v;
        }
        if let Some(v) = self.d_dist {
            cfg.d_dist = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(v) = self.subspaces {
            cfg.subspaces = v;
        }
        if let Some(v) = self.subspace_dim {
            cfg.subspace_dim = Some(v);
        }
        if let Some(v) = self.relations {
            cfg.relations = v;
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.coref_buckets {
            cfg.coref_buckets = v;
        }
        if let Some(v) = self.freeze_word_embeddings {
            cfg.freeze_word_embeddings = v;
        }
        if let Some(v) = self.ablation {
            cfg.ablation = v;
        }
        cfg
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub epsilon: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub negative_keep: Option<f64>,
    pub clip_norm: Option<f64>,
}

impl TrainSection {
    pub fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.beta1 {
            cfg.beta1 = v;
        }
        if let Some(v) = self.beta2 {
            cfg.beta2 = v;
        }
        if let Some(v) = self.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.negative_keep {
            cfg.negative_keep = v;
        }
        if let Some(v) = self.clip_norm {
            cfg.clip_norm = Some(v);
        }
        cfg
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub documents: Option<usize>,
    pub entities_per_doc: Option<usize>,
    pub relation_count: Option<usize>,
    pub sentences_per_doc: Option<usize>,
    pub vocab_size: Option<usize>,
}

impl SynthSection {
    pub fn apply(&self, mut spec: SynthSpec) -> SynthSpec {
        if let Some(v) = self.documents {
            spec.documents = v;
        }
        if let Some(v) = self.entities_per_doc {
            spec.entities_per_doc = v;
        }
        if let Some(v) = self.relation_count {
            spec.relation_count = v;
        }
        if let Some(v) = self.sentences_per_doc {
            spec.sentences_per_doc = v;
        }
        if let Some(v) = self.vocab_size {
            spec.vocab_size = v;
        }
        spec
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| HinError::io(&display, e))?;
        toml::from_str(&text)
            .map_err(|e| HinError::invalid("config file", format!("{display}: {e}")))
    }

    /// Whether this run's model section pinned the relation count.
    pub fn explicit_relations(&self) -> Option<usize> {
        self.model.relations
    }
}
