use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{DatasetSpec, PartitionMode};
use crate::aggregation::AggregationScheme;
use crate::nn::ModelSpec;
use crate::profiler::DeviceProfile;
use crate::soft::SoftTrainPolicy;
use crate::{presets, Error, Result, SCHEMA_VERSION};

/// Collaboration scheme of a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Everyone trains the full model; the server waits for the slowest device.
    Sync,
    /// Devices push whenever they finish; the server blends each update in.
    Async,
    /// Soft-training with a plain uniform average.
    StOnly,
    /// Soft-training with mask-aware, weighted aggregation.
    Elfish,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Sync, Scheme::Async, Scheme::StOnly, Scheme::Elfish];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Sync => "sync",
            Scheme::Async => "async",
            Scheme::StOnly => "st_only",
            Scheme::Elfish => "elfish",
        }
    }

    pub fn soft_trains(self) -> bool {
        matches!(self, Scheme::StOnly | Scheme::Elfish)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" => Ok(Scheme::Sync),
            "async" => Ok(Scheme::Async),
            "st_only" | "st-only" => Ok(Scheme::StOnly),
            "elfish" => Ok(Scheme::Elfish),
            _ => Err(Error::InvalidConfig(format!("unknown scheme {s:?} (sync, async, st_only, elfish)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceRole {
    #[default]
    Capable,
    Straggler,
}

/// A preset name or an inline layer list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Inline(ModelSpec),
}

impl Default for ModelChoice {
    fn default() -> Self {
        ModelChoice::Preset("lenet-mnist".into())
    }
}

impl ModelChoice {
    pub fn resolve(&self) -> Result<ModelSpec> {
        match self {
            ModelChoice::Preset(name) => presets::by_name(name).ok_or_else(|| {
                Error::InvalidConfig(format!("unknown model preset {name:?} (one of {:?})", presets::NAMES))
            }),
            ModelChoice::Inline(spec) => {
                spec.validate()?;
                Ok(spec.clone())
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub role: DeviceRole,
    /// Hardware parameters; the Jetson Nano profile when absent.
    #[serde(default)]
    pub profile: Option<DeviceProfile>,
    /// Rescales the compute bandwidth so the full model takes this long per cycle.
    #[serde(default)]
    pub full_cycle_seconds: Option<f64>,
    /// Full-model workload over the per-cycle workload budget. Above 1 the
    /// workload budget binds.
    #[serde(default)]
    pub workload_ratio: Option<f64>,
    /// Full-model memory over the main-memory budget. Above 1 the memory
    /// budget binds.
    #[serde(default)]
    pub memory_ratio: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalTraining {
    pub minibatch_size: u64,
    pub epochs_per_cycle: u64,
    pub lr: f64,
    pub weight_bytes: u64,
    pub activation_bytes: u64,
    /// Mini-batches per cycle used by the cost model instead of the count
    /// implied by the shard size.
    pub profiled_minibatch_count: Option<u64>,
}

impl Default for LocalTraining {
    fn default() -> Self {
        Self {
            minibatch_size: 32,
            epochs_per_cycle: 1,
            lr: 0.05,
            weight_bytes: 4,
            activation_bytes: 4,
            profiled_minibatch_count: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsyncConfig {
    /// Per missed aggregation event.
    pub staleness_discount: f64,
    /// Mixing weight of a fresh update; `1 / devices` when absent.
    pub base_mix: Option<f64>,
}

impl Default for AsyncConfig {
    fn default() -> Self {
        Self { staleness_discount: 0.7, base_mix: None }
    }
}

fn schema() -> u32 {
    SCHEMA_VERSION
}
fn window() -> usize {
    20
}
fn one() -> usize {
    1
}

/// A complete experiment description, ingested from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetConfig {
    #[serde(default = "schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub model: ModelChoice,
    pub devices: Vec<DeviceConfig>,
    pub scheme: Scheme,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub partition: PartitionMode,
    /// Aggregation events for sync, st_only and elfish; for async the run
    /// lasts as long as this many reference periods.
    pub rounds: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub local: LocalTraining,
    /// Weighting used by sync and elfish (st_only always averages uniformly).
    #[serde(default)]
    pub aggregation: AggregationScheme,
    #[serde(default)]
    pub policy: SoftTrainPolicy,
    #[serde(default, rename = "async")]
    pub asynchronous: AsyncConfig,
    /// Per-cycle time budget of every device; the slowest capable device's
    /// full-model cycle when absent.
    #[serde(default)]
    pub time_budget_seconds: Option<f64>,
    /// Stop once the simulated clock passes this point.
    #[serde(default)]
    pub horizon_seconds: Option<f64>,
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    #[serde(default = "window")]
    pub trailing_window: usize,
    /// Worker threads for local training; 1 runs everything inline.
    #[serde(default = "one")]
    pub threads: usize,
}

impl FleetConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.devices.is_empty() {
            return Err(Error::InvalidConfig("fleet needs at least one device".into()));
        }
        if self.rounds == 0 {
            return Err(Error::InvalidConfig("rounds must be >= 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::InvalidConfig("threads must be >= 1".into()));
        }
        let l = &self.local;
        if l.minibatch_size == 0 || l.epochs_per_cycle == 0 || !(l.lr > 0.0 && l.lr.is_finite()) {
            return Err(Error::InvalidConfig("local training needs positive batch size, epochs and lr".into()));
        }
        let a = &self.asynchronous;
        if !(a.staleness_discount > 0.0 && a.staleness_discount <= 1.0) {
            return Err(Error::InvalidConfig("async staleness_discount must be in (0, 1]".into()));
        }
        if a.base_mix.is_some_and(|m| !(0.0..=1.0).contains(&m)) {
            return Err(Error::InvalidConfig("async base_mix must be in [0, 1]".into()));
        }
        for (i, d) in self.devices.iter().enumerate() {
            for (what, v) in [
                ("full_cycle_seconds", d.full_cycle_seconds),
                ("workload_ratio", d.workload_ratio),
                ("memory_ratio", d.memory_ratio),
            ] {
                if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                    return Err(Error::InvalidConfig(format!("device {i}: {what} must be positive")));
                }
            }
            if let Some(p) = &d.profile {
                p.validate()?;
            }
        }
        for (what, v) in [("time_budget_seconds", self.time_budget_seconds), ("horizon_seconds", self.horizon_seconds)] {
            if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidConfig(format!("{what} must be positive")));
            }
        }
        if self.target_accuracy.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
            return Err(Error::InvalidConfig("target_accuracy must be in [0, 1]".into()));
        }
        if self.trailing_window == 0 {
            return Err(Error::InvalidConfig("trailing_window must be >= 1".into()));
        }
        self.policy.validate()?;
        self.model.resolve()?;
        Ok(())
    }
}
