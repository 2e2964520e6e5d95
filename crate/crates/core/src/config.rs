//! Run configuration read from a sectioned TOML file.
//!
//! ```toml
//! seed = 7
//!
//! [schedule]
//! gamma = 1.5
//!
//! [solver]
//! num_steps = 30
//!
//! [train]
//! steps = 2000
//!
//! [data]
//! clean_dir = "corpus/clean"
//! ```
//!
//! Missing keys take their defaults; unknown keys are rejected. Relative
//! paths are resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::score::{ModelConfig, TrainConfig};
use crate::prompt::EditCommand;
use crate::sde::SdeSchedule;
use crate::sim::TaskMix;
use crate::solver::SolverConfig;
use crate::{Error, Result};

/// Which manifest entries a model is trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskFilter {
    #[default]
    All,
    Enhance,
    Edit,
}

impl TaskFilter {
    pub fn accepts(self, cmd: &EditCommand) -> bool {
        match self {
            TaskFilter::All => true,
            TaskFilter::Enhance => cmd.action().is_enhancement(),
            TaskFilter::Edit => !cmd.action().is_enhancement(),
        }
    }
}

impl std::str::FromStr for TaskFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(TaskFilter::All),
            "enhance" => Ok(TaskFilter::Enhance),
            "edit" => Ok(TaskFilter::Edit),
            _ => Err(Error::Config(format!("unknown task {s:?}; expected all, enhance or edit"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Clean speech corpus; a synthetic one is generated when absent.
    pub clean_dir: Option<PathBuf>,
    /// Labelled noise corpus (`<label>_NNN.wav`).
    pub noise_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub n_pairs: usize,
    pub mix: TaskMix,
    pub task: TaskFilter,
    /// Sizes of the generated corpora.
    pub synth_clean: usize,
    pub synth_noise_per_label: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            clean_dir: None,
            noise_dir: None,
            manifest: None,
            n_pairs: 200,
            mix: TaskMix::default(),
            task: TaskFilter::All,
            synth_clean: 40,
            synth_noise_per_label: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub schedule: SdeSchedule,
    pub solver: SolverConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let data = &mut cfg.data;
        for p in [&mut data.clean_dir, &mut data.noise_dir, &mut data.manifest].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config("a seed is required (config `seed` or --seed)".into()))
    }

    pub fn validate(&self) -> Result<()> {
        self.seed()?;
        self.schedule.validate()?;
        self.solver.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}
