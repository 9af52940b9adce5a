//! Run configuration: one JSON file with model / train / tr / decode / data
//! sections. Every field has a default, so a config may be as sparse as `{}`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SplitSpec;
use crate::decoding::DecodeConfig;
use crate::error::{Result, TasdError};
use crate::model::TasatgConfig;
use crate::reconstruction::TrConfig;
use crate::table::TableSchema;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub h: usize,
    pub n_layers: usize,
    pub view_len: usize,
    pub max_seq_len: usize,
    #[serde(rename = "M_max")]
    pub m_max: usize,
    #[serde(rename = "N_max")]
    pub n_max: usize,
    pub tr_hidden: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d: 64,
            h: 4,
            n_layers: 2,
            view_len: 4,
            max_seq_len: 128,
            m_max: 8,
            n_max: 8,
            tr_hidden: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Minimum corpus count for a word to enter the vocabulary.
    pub min_count: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { lr: 3e-5, epochs: 20, patience: 5, seed: 0, min_count: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// JSON-lines dataset path; commands that need data require it.
    pub path: Option<String>,
    pub totto_filter: bool,
    pub split: SplitSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub tr: TrConfig,
    pub decode: DecodeConfig,
    pub data: DataSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| TasdError::io(path.display().to_string(), e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| TasdError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.d == 0 || m.h == 0 || !m.d.is_multiple_of(m.h) {
            return Err(TasdError::Config(format!("d={} must be a positive multiple of h={}", m.d, m.h)));
        }
        if m.n_layers == 0 || m.view_len == 0 || m.m_max == 0 || m.n_max == 0 {
            return Err(TasdError::Config("n_layers, view_len, M_max, N_max must be positive".into()));
        }
        if m.max_seq_len < 2 {
            return Err(TasdError::Config("max_seq_len must be at least 2".into()));
        }
        if m.tr_hidden == Some(0) {
            return Err(TasdError::Config("tr_hidden must be positive when set".into()));
        }
        if !(self.train.lr.is_finite() && self.train.lr > 0.0) {
            return Err(TasdError::Config(format!("lr must be positive, got {}", self.train.lr)));
        }
        if self.train.epochs == 0 {
            return Err(TasdError::Config("epochs must be positive".into()));
        }
        if self.train.min_count == 0 {
            return Err(TasdError::Config("min_count must be positive".into()));
        }
        self.tr.validate()?;
        self.decode.validate()?;
        if self.decode.max_len > m.max_seq_len {
            return Err(TasdError::Config(format!(
                "decode.max_len {} exceeds model.max_seq_len {}",
                self.decode.max_len, m.max_seq_len
            )));
        }
        Ok(())
    }

    /// Assembles the full model config once the vocabulary and schema are
    /// known. The reconstruction MLP is attached only when TR is enabled.
    pub fn model_config(&self, vocab_size: usize, schema: TableSchema) -> TasatgConfig {
        TasatgConfig {
            d: self.model.d,
            h: self.model.h,
            n_layers: self.model.n_layers,
            view_len: self.model.view_len,
            max_seq_len: self.model.max_seq_len,
            vocab_size,
            m_max: self.model.m_max,
            n_max: self.model.n_max,
            schema,
            seed: self.train.seed,
            tr_hidden: if self.tr.enabled {
                Some(self.tr.hidden.unwrap_or(self.model.d))
            } else {
                None
            },
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| TasdError::Config(e.to_string()))?;
        fs::write(path, text).map_err(|e| TasdError::io(path.display().to_string(), e))?;
        Ok(())
    }
}
