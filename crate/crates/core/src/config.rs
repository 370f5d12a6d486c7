//! Run configuration, read from TOML. Every key is optional; unknown keys
//! are rejected.
//!
//! ```toml
//! seed = 13
//! workers = 0          # 0 = all available cores
//!
//! [train]
//! hidden1 = 150
//! hidden2 = 32
//!
//! [relations]
//! top_k = 7
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data_io::{Schema, SynthGrammar, DEFAULT_CLASSES, DEFAULT_RELATIONS};
use crate::encoding::{DEFAULT_BUCKETS, DEFAULT_DIM, DEFAULT_HASH_SEED};
use crate::error::{Error, Result};
use crate::relations::DEFAULT_TOP_K;
use crate::tagger::{DEFAULT_JOIN_THRESHOLD, DEFAULT_WEIGHT_GRID};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerConfig {
    /// Members scoring below `mean − prune_sigma·σ` are pruned.
    pub prune_sigma: f64,
    pub join_threshold: f64,
    pub weight_grid: Vec<f64>,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            prune_sigma: 1.0,
            join_threshold: DEFAULT_JOIN_THRESHOLD,
            weight_grid: DEFAULT_WEIGHT_GRID.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelationsConfig {
    pub top_k: usize,
    pub prune_sigma: f64,
}

impl Default for RelationsConfig {
    fn default() -> Self {
        RelationsConfig {
            top_k: DEFAULT_TOP_K,
            prune_sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    /// Word-vector text file; its header overrides `dim`.
    pub path: Option<PathBuf>,
    pub dim: usize,
    pub hash_buckets: usize,
    pub hash_seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            path: None,
            dim: DEFAULT_DIM,
            hash_buckets: DEFAULT_BUCKETS,
            hash_seed: DEFAULT_HASH_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemaConfig {
    pub classes: Vec<String>,
    pub relations: Vec<String>,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        SchemaConfig {
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            relations: DEFAULT_RELATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub noise_rate: f64,
    /// TOML grammar file replacing the built-in grammar.
    pub grammar: Option<PathBuf>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_train: 600,
            n_dev: 100,
            n_test: 100,
            noise_rate: 0.1,
            grammar: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub workers: usize,
    pub train: TrainConfig,
    pub tagger: TaggerConfig,
    pub relations: RelationsConfig,
    pub embedding: EmbeddingConfig,
    pub schema: SchemaConfig,
    pub synth: SynthConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 13,
            workers: 0,
            train: TrainConfig::default(),
            tagger: TaggerConfig::default(),
            relations: RelationsConfig::default(),
            embedding: EmbeddingConfig::default(),
            schema: SchemaConfig::default(),
            synth: SynthConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.schema()?;
        for (name, v) in [
            ("tagger.prune_sigma", self.tagger.prune_sigma),
            ("relations.prune_sigma", self.relations.prune_sigma),
        ] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        if !(0.0..=1.0).contains(&self.tagger.join_threshold) {
            return Err(Error::Config("tagger.join_threshold must lie in [0, 1]".into()));
        }
        if self.tagger.weight_grid.is_empty() || self.tagger.weight_grid.iter().any(|&w| !(w.is_finite() && w > 0.0)) {
            return Err(Error::Config("tagger.weight_grid must be non-empty and positive".into()));
        }
        if self.relations.top_k > self.schema.relations.len() {
            return Err(Error::Config(format!(
                "relations.top_k {} exceeds the {} relation types",
                self.relations.top_k,
                self.schema.relations.len()
            )));
        }
        if self.embedding.dim == 0 || self.embedding.hash_buckets == 0 {
            return Err(Error::Config("embedding dim and hash_buckets must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.synth.noise_rate) {
            return Err(Error::Config(format!(
                "synth.noise_rate must lie in [0, 1), got {}",
                self.synth.noise_rate
            )));
        }
        Ok(())
    }

    pub fn schema(&self) -> Result<Schema> {
        Schema::new(self.schema.classes.clone(), self.schema.relations.clone())
    }

    /// The grammar file if configured, else the built-in grammar, with this
    /// config's noise rate.
    pub fn grammar(&self) -> Result<SynthGrammar> {
        let mut g = match &self.synth.grammar {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => SynthGrammar::default(),
        };
        g.noise_rate = self.synth.noise_rate;
        Ok(g)
    }

    /// Worker threads, resolving 0 to the number of available cores.
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}
