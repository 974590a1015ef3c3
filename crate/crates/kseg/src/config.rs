//! Experiment configuration file (JSON).
//!
//! ```json
//! {
//!   "output_dir": "runs",
//!   "dataset": { "subjects": 20, "split_seed": 7, "phantom": { "extents": [16, 16, 16], "task": "skull_strip" } },
//!   "train": { "epochs": 10, "batch_size": 4, "seed": 1 },
//!   "grid": [ { "arch": "TransformerEncoder", "domain": "KToSpatial", "layers": 2, "width": 64 } ]
//! }
//! ```
//!
//! `output_dir` is resolved against the config file's directory. Omitting
//! `grid` selects [`default_grid`]. The environment variable `KSEG_SEED`
//! replaces every seed in the file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use kseg_core::data::{AugmentConfig, PhantomParams, Task};
use kseg_core::models::{Activation, Architecture, ModelSpec, PositionalEncoding};
use kseg_core::pipeline::{spec_for, AdamParams, DomainConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SEED_ENV: &str = "KSEG_SEED";

/// Bands used by the positional-encoding half of each ablation pair.
pub const DEFAULT_PE_BANDS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub subjects: usize,
    /// Per-subject phantoms use `phantom.seed` mixed with the subject index.
    #[serde(default)]
    pub phantom: PhantomParams,
    #[serde(default = "AugmentConfig::disabled")]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub split_seed: u64,
}

fn default_epochs() -> usize {
    20
}

fn default_batch() -> usize {
    4
}

fn default_lr() -> f64 {
    1e-3
}

fn default_patience() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainDefaults {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl Default for TrainDefaults {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: default_lr(),
            adam: AdamParams::default(),
            seed: 0,
            patience: default_patience(),
            max_steps: None,
        }
    }
}

fn default_heads() -> usize {
    4
}

fn default_latents() -> usize {
    8
}

/// One run of the grid. Token count and feature widths follow from the
/// dataset extents and the domain.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridEntry {
    pub arch: Architecture,
    pub domain: DomainConfig,
    pub layers: usize,
    pub width: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_latents")]
    pub latents: usize,
    #[serde(default)]
    pub pe: PositionalEncoding,
    #[serde(default)]
    pub activation: Activation,
}

impl GridEntry {
    pub fn new(arch: Architecture, domain: DomainConfig) -> Self {
        Self {
            arch,
            domain,
            layers: 2,
            width: 64,
            heads: default_heads(),
            latents: default_latents(),
            pe: PositionalEncoding::None,
            activation: Activation::default(),
        }
    }

    /// First 16 hex digits of the SHA-256 of the entry's JSON form.
    pub fn config_id(&self) -> String {
        let json = serde_json::to_string(self).expect("entry serialises");
        Sha256::digest(json.as_bytes())[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn pe_enabled(&self) -> bool {
        self.pe != PositionalEncoding::None
    }

    pub fn model_spec(&self, dataset: &DatasetConfig) -> ModelSpec {
        let p = &dataset.phantom;
        ModelSpec {
            heads: self.heads,
            latents: self.latents,
            pe: self.pe,
            activation: self.activation,
            ..spec_for(self.arch, self.domain, p.extents, p.task.classes(), self.layers, self.width)
        }
    }

    /// `key=value` filter; keys are `arch`, `domain`, `pe` (`on`/`off`),
    /// `layers`, `width` and `config_id`.
    pub fn matches(&self, key: &str, value: &str) -> Result<bool> {
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| CliError::Config(format!("filter {key}={v}: not a number")))
        };
        Ok(match key {
            "arch" => self.arch.name().eq_ignore_ascii_case(value),
            "domain" => self.domain.name().eq_ignore_ascii_case(value),
            "pe" => match value {
                "on" | "true" | "fourier" => self.pe_enabled(),
                "off" | "false" | "none" => !self.pe_enabled(),
                _ => return Err(CliError::Config(format!("filter pe={value}: expected on or off"))),
            },
            "layers" => self.layers == parse(value)?,
            "width" => self.width == parse(value)?,
            "config_id" => self.config_id() == value,
            _ => return Err(CliError::Config(format!("unknown filter key {key:?}"))),
        })
    }
}

/// Every architecture in every domain, plus Fourier-PE twins of the two
/// attention models in KToK.
pub fn default_grid() -> Vec<GridEntry> {
    let mut grid = Vec::new();
    for arch in Architecture::ALL {
        for domain in DomainConfig::ALL {
            grid.push(GridEntry::new(arch, domain));
        }
    }
    for arch in [Architecture::TransformerEncoder, Architecture::PerceiverIo] {
        grid.push(GridEntry {
            pe: PositionalEncoding::Fourier {
                bands: DEFAULT_PE_BANDS,
            },
            ..GridEntry::new(arch, DomainConfig::KToK)
        });
    }
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub train: TrainDefaults,
    #[serde(default = "default_grid")]
    pub grid: Vec<GridEntry>,
}

/// Parsed `key=value` filters.
pub fn parse_filters(raw: &[String]) -> Result<Vec<(String, String)>> {
    raw.iter()
        .map(|f| {
            f.split_once('=')
                .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
                .ok_or_else(|| CliError::Config(format!("filter {f:?} is not key=value")))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Reads `path`, applies `KSEG_SEED` and resolves `output_dir`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not a u64")))?;
            cfg.override_seed(seed);
        }
        if cfg.output_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn override_seed(&mut self, seed: u64) {
        self.dataset.phantom.seed = seed;
        self.dataset.split_seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.subjects < 10 {
            return Err(CliError::Config(format!(
                "need at least 10 subjects, got {}",
                self.dataset.subjects
            )));
        }
        let e = self.dataset.phantom.extents;
        if e.iter().any(|&x| x < 8) || e[2] % 2 != 0 {
            return Err(CliError::Config(format!(
                "extents {e:?}: every axis needs at least 8 voxels and the last must be even"
            )));
        }
        let mut ids = HashSet::new();
        for e in &self.grid {
            if !ids.insert(e.config_id()) {
                return Err(CliError::Config(format!("duplicate grid entry {e:?}")));
            }
            e.model_spec(&self.dataset).validate()?;
        }
        self.train_config(self.grid.first().unwrap_or(&GridEntry::new(Architecture::Mlp, DomainConfig::SpatialToSpatial)))
            .validate(self.dataset.phantom.extents)?;
        Ok(())
    }

    pub fn task(&self) -> Task {
        self.dataset.phantom.task
    }

    pub fn train_config(&self, entry: &GridEntry) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            model: entry.model_spec(&self.dataset),
            domain: entry.domain,
            task: self.task(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            adam: t.adam,
            seed: t.seed,
            patience: t.patience,
            max_steps: t.max_steps,
            augment: self.dataset.augment.clone(),
        }
    }

    /// Grid entries passing every filter.
    pub fn select(&self, filters: &[(String, String)]) -> Result<Vec<GridEntry>> {
        let mut out = Vec::new();
        for e in &self.grid {
            let mut keep = true;
            for (k, v) in filters {
                keep &= e.matches(k, v)?;
            }
            if keep {
                out.push(e.clone());
            }
        }
        Ok(out)
    }

    pub fn data_dir(&self) -> PathBuf {
        self.output_dir.join("data")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.output_dir.join("runs")
    }
}
