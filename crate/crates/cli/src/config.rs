use std::path::{Path, PathBuf};

use hintreg::data::{Benchmark, SubsetConfig};
use hintreg::experiments::{Model, ProbeConfig, Protocol};
use hintreg::{Error, HintConfig, Result, TrainSchedule};
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "HINTREG_DATA_DIR";

/// Model, benchmark and file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub model: Model,
    pub benchmark: Benchmark,
    /// Directory holding synthesized benchmarks, one subdirectory each.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// Epochs between resumable training snapshots.
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_checkpoint_every() -> usize {
    10
}

/// Grid of a `tables` study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudySection {
    /// Training subset sizes; 0 means the whole training split.
    pub subset_sizes: Vec<usize>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            subset_sizes: vec![1000, 3000, 5000, 0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub hint: HintConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset: Option<SubsetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads `path` and applies the data directory override from the
    /// environment.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingInput(vec![path.to_path_buf()]));
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let Some(dir) = std::env::var_os(DATA_DIR_ENV) {
            config.experiment.data_dir = PathBuf::from(dir);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.hint.validate()?;
        self.schedule.validate(&self.hint)?;
        if let Some(s) = &self.study {
            if s.subset_sizes.is_empty() {
                return Err(Error::Config("study.subset_sizes is empty".into()));
            }
        }
        if let Some(p) = &self.protocol {
            if p.repeats < 3 {
                return Err(Error::Config(format!("protocol.repeats must be at least 3, got {}", p.repeats)));
            }
            p.optimizer.validate()?;
        }
        Ok(())
    }

    pub fn benchmark_dir(&self) -> PathBuf {
        self.experiment.data_dir.join(self.experiment.benchmark.to_string())
    }
}
