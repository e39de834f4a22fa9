//! Run configuration: one TOML document with a section per module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::control::{CuConfig, TrainingWheels, WheelsMode};
use crate::envs::exp1::{Exp1Config, Exp1Variant};
use crate::envs::exp2::Exp2Config;
use crate::envs::fixtures::FixtureConfig;
use crate::envs::PuConfig;
use crate::error::{Error, Result};
use crate::network::RuntimeConfig;
use crate::optim::OptimizerConfig;
use crate::tape::TapeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    #[default]
    Exp1,
    Exp2,
    Fixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub window: u64,
    /// Windowed reward that counts as reaching the target in the summary.
    pub reward_threshold: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { window: 1000, reward_threshold: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnapshotConfig {
    pub enabled: bool,
    pub every: u64,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        SnapshotConfig { enabled: true, every: 10_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Stop once the held-out mse of a PU drops below this.
    pub threshold: f64,
    /// Training samples per PU.
    pub budget: u64,
    pub optimizer: OptimizerConfig,
    pub eval_samples: usize,
    pub eval_every: u64,
    /// Load parameters from here instead of training.
    pub params: Option<PathBuf>,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            threshold: 1e-4,
            budget: 50_000,
            optimizer: OptimizerConfig::adam(3e-3),
            eval_samples: 1000,
            eval_every: 1000,
            params: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentId,
    /// Experiment 1 only.
    pub variant: Exp1Variant,
    pub seed: u64,
    pub iterations: u64,
    pub cu: CuConfig,
    pub pu: PuConfig,
    pub tape: TapeConfig,
    pub exp1: Exp1Config,
    pub exp2: Exp2Config,
    pub fixture: FixtureConfig,
    pub wheels: TrainingWheels,
    pub pretrain: PretrainConfig,
    pub metrics: MetricsConfig,
    pub snapshot: SnapshotConfig,
    pub runtime: RuntimeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            experiment: ExperimentId::Exp1,
            variant: Exp1Variant::Base,
            seed: 0,
            iterations: 30_000,
            cu: CuConfig::default(),
            pu: PuConfig::default(),
            tape: TapeConfig::default(),
            exp1: Exp1Config::default(),
            exp2: Exp2Config::default(),
            fixture: FixtureConfig::default(),
            wheels: TrainingWheels::default(),
            pretrain: PretrainConfig::default(),
            metrics: MetricsConfig::default(),
            snapshot: SnapshotConfig::default(),
            runtime: RuntimeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Set a dotted key such as `cu.gamma=0.8`. The value is parsed as TOML
    /// and falls back to a bare string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment.split_once('=').ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.to_string()),
        };
        let mut doc = toml::Value::try_from(&*self).map_err(|e| Error::config(e.to_string()))?;
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Error::config(format!("bad override key {key:?}")));
        }
        let mut cur = &mut doc;
        for p in &parts[..parts.len() - 1] {
            let table = cur.as_table_mut().ok_or_else(|| Error::config(format!("override key {key:?} does not name a section")))?;
            cur = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        }
        let table = cur.as_table_mut().ok_or_else(|| Error::config(format!("override key {key:?} does not name a section")))?;
        table.insert(parts[parts.len() - 1].to_string(), value);
        *self = doc.try_into().map_err(|e: toml::de::Error| Error::config(format!("override {key}: {e}")))?;
        Ok(())
    }

    /// Apply the settings a variant implies and validate everything. Fixtures
    /// always run with the script driving and CU learning off.
    pub fn resolve(mut self) -> Result<Self> {
        match self.experiment {
            ExperimentId::Exp1 if self.variant == Exp1Variant::TrainingWheels => self.wheels.enabled = true,
            ExperimentId::Fixture => {
                self.wheels.enabled = true;
                self.wheels.mode = WheelsMode::Drive;
                self.wheels.active_until = self.iterations;
                self.cu.train = false;
            }
            _ => {}
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.cu.validate()?;
        self.pu.optimizer.validate()?;
        self.tape.validate()?;
        self.exp1.validate()?;
        self.exp2.validate()?;
        self.fixture.validate()?;
        self.pretrain.optimizer.validate()?;
        if self.metrics.window == 0 {
            return Err(Error::config("metrics.window must be at least 1"));
        }
        if self.snapshot.enabled && self.snapshot.every == 0 {
            return Err(Error::config("snapshot.every must be at least 1"));
        }
        if self.pu.hidden.contains(&0) || self.fixture.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        if self.experiment != ExperimentId::Exp1 && self.variant != Exp1Variant::Base {
            return Err(Error::config("variant only applies to exp1"));
        }
        if !(self.pretrain.threshold > 0.0) || self.pretrain.eval_samples == 0 || self.pretrain.eval_every == 0 {
            return Err(Error::config("pretrain threshold, eval_samples and eval_every must be positive"));
        }
        Ok(())
    }
}
