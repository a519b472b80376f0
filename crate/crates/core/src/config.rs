//! Run configuration: a flat JSON file, overridden by command-line flags.
//! The only value taken from the environment is the entity-linking token.

use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytics::{GroupBy, Thresholds};
use crate::models::ModelConfig;

pub const TOKEN_ENV: &str = "TAGME_TOKEN";
pub const RESOLVED_FILE: &str = "resolved_config.json";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    /// GloVe-style text file.
    pub embeddings: Option<PathBuf>,
    pub embedding_dim: usize,
    /// One stopword per line; the bundled English list when unset.
    pub stopwords: Option<PathBuf>,
    pub stemmer: String,
    pub min_tokens: usize,
    pub rho_min: f64,
    /// Per-class sample size for relevance training; all gold labels when unset.
    pub per_class: Option<usize>,
    pub folds: usize,
    pub polarity_folds: usize,
    /// Concurrent folds during evaluation.
    pub parallelism: usize,
    pub tagme_endpoint: String,
    pub link_parallelism: usize,
    pub moral_threshold: f64,
    pub gate_on_presence: bool,
    pub group_by: GroupBy,
    pub window: usize,
    /// Read from the environment, never written out.
    #[serde(skip)]
    pub tagme_token: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            embeddings: None,
            embedding_dim: crate::preprocess::DEFAULT_DIM,
            stopwords: None,
            stemmer: "english".to_string(),
            min_tokens: crate::corpus::DEFAULT_MIN_TOKENS,
            rho_min: crate::entitylink::DEFAULT_RHO_MIN,
            per_class: None,
            folds: 10,
            polarity_folds: 5,
            parallelism: 4,
            tagme_endpoint: "https://tagme.d4science.org/tagme".to_string(),
            link_parallelism: 4,
            moral_threshold: 0.5,
            gate_on_presence: false,
            group_by: GroupBy::Stance,
            window: 6,
            tagme_token: None,
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid with `path` when given, plus the token from the environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
                    path: p.to_path_buf(),
                    source,
                })?
            }
            None => RunConfig::default(),
        };
        config.tagme_token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.embedding_dim == 0 {
            return bad("embedding_dim must be positive");
        }
        if self.min_tokens == 0 {
            return bad("min_tokens must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.rho_min) {
            return bad("rho_min must lie in [0, 1]");
        }
        if self.folds < 2 || self.polarity_folds < 2 {
            return bad("fold counts must be at least 2");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.parallelism == 0 || self.link_parallelism == 0 {
            return bad("parallelism must be at least 1");
        }
        self.stemmer
            .parse::<crate::preprocess::StemmerKind>()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            moral: self.moral_threshold,
            gate_on_presence: self.gate_on_presence,
        }
    }

    /// Writes the configuration next to a run's outputs so the run can be repeated with `--config`.
    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf, ConfigError> {
        let path = dir.join(RESOLVED_FILE);
        let io_err = |source| ConfigError::Io {
            path: path.clone(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(io_err)?;
        let json = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(&path, json + "\n").map_err(io_err)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_file_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"hidden_size": 16, "seed": 3, "rho_min": 0.2, "group_by": "page_stance"}"#).unwrap();
        let c = RunConfig::load(Some(&p)).unwrap();
        assert_eq!(c.model.hidden_size, 16);
        assert_eq!(c.model.seed, 3);
        assert_eq!(c.model.epochs, 10);
        assert_eq!(c.rho_min, 0.2);
        assert_eq!(c.group_by, GroupBy::PageStance);
        c.validate().unwrap();
    }

    #[test]
    fn resolved_config_reloads_identically_without_token() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.per_class = Some(700);
        c.tagme_token = Some("secret".into());
        let p = c.write_resolved(dir.path()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(!text.contains("secret"));
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(json["entity_K"], 1000);
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, RunConfig { tagme_token: None, ..c });
    }

    #[test]
    fn validation_rejects_bad_values() {
        let c = RunConfig {
            rho_min: 1.5,
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
        let c = RunConfig {
            stemmer: "klingon".into(),
            ..RunConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
