//! Application config shared by the CLI commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{AnnotateError, Annotators};
use crate::corpus::SynthConfig;
use crate::model::EncoderConfig;
use crate::pipeline::{OverrideTable, PipelineError};
use crate::train::TrainConfig;
use crate::typesys::{load_taxonomy, Taxonomy, TaxonomyError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("taxonomy {}: {source}", path.display())]
    Taxonomy {
        path: PathBuf,
        #[source]
        source: TaxonomyError,
    },
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Overrides(#[from] PipelineError),
}

/// Corpus files for training and evaluation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

/// Every section is optional. Unset paths fall back to the bundled
/// taxonomy, rules and gazetteers; unset `overrides` uses
/// [`OverrideTable::default_map`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub taxonomy: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub gazetteer_dir: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub overrides: Option<BTreeMap<String, String>>,
    pub data: DataPaths,
    pub synth: SynthConfig,
}

impl AppConfig {
    /// Parses `path`; relative paths inside are taken from the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Json {
            path: path.to_owned(),
            source,
        })?;
        cfg.resolve(path.parent().unwrap_or(Path::new("")));
        Ok(cfg)
    }

    /// Small embeddings, small batches and a long patience, sized for the
    /// generated corpus.
    pub fn synthetic() -> Self {
        Self {
            encoder: EncoderConfig {
                word_dim: 32,
                hidden: 32,
                att_hidden: 32,
                ..Default::default()
            },
            train: TrainConfig {
                batch_size: 8,
                max_epochs: 200,
                patience: 30,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(q) = p {
                if q.is_relative() {
                    *q = base.join(&*q);
                }
            }
        };
        fix(&mut self.taxonomy);
        fix(&mut self.rules);
        fix(&mut self.gazetteer_dir);
        fix(&mut self.embeddings);
        fix(&mut self.data.train);
        fix(&mut self.data.dev);
        fix(&mut self.data.test);
    }

    pub fn taxonomy(&self) -> Result<Taxonomy, ConfigError> {
        match &self.taxonomy {
            Some(p) => load_taxonomy(p).map_err(|source| ConfigError::Taxonomy {
                path: p.clone(),
                source,
            }),
            None => Ok(Taxonomy::builtin()),
        }
    }

    pub fn annotators(&self) -> Result<Annotators, ConfigError> {
        Ok(Annotators::load(self.rules.as_deref(), self.gazetteer_dir.as_deref())?)
    }

    pub fn override_table(&self, tax: &Taxonomy) -> Result<OverrideTable, ConfigError> {
        let map = self.overrides.clone().unwrap_or_else(OverrideTable::default_map);
        Ok(OverrideTable::new(map, tax)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let cfg: AppConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, AppConfig::default());
        assert_eq!(cfg.taxonomy().unwrap().labels(), Taxonomy::builtin().labels());
        assert!(cfg.override_table(&Taxonomy::builtin()).unwrap().target("EMAIL_ADDRESS").is_some());
    }

    #[test]
    fn unknown_sections_are_rejected() {
        assert!(serde_json::from_str::<AppConfig>(r#"{"encodr": {}}"#).is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"taxonomy": "t.json", "data": {"train": "/abs/train.jsonl"}, "overrides": {}}"#).unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.taxonomy.as_deref(), Some(dir.path().join("t.json").as_path()));
        assert_eq!(cfg.data.train.as_deref(), Some(Path::new("/abs/train.jsonl")));
        assert!(cfg.override_table(&Taxonomy::builtin()).unwrap().target("EMAIL_ADDRESS").is_none());
        assert!(matches!(cfg.taxonomy(), Err(ConfigError::Taxonomy { .. })));
    }
}
