use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use edgefl::nn::ModelSpec;
use edgefl::profiler::{
    fit_device_params, keep_fraction_sweep, model_time, read_measurements, write_sweep_csv, ConsumptionEstimate,
    DeviceFit, DeviceProfile, SweepRow, TrainConfig,
};
use edgefl::sim::ModelChoice;
use edgefl::soft::{solve_mask_budget, MaskBudget, SoftTrainPolicy};
use edgefl::SCHEMA_VERSION;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn schema() -> u32 {
    SCHEMA_VERSION
}

/// Model, device and training loop for the single-device commands.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DeviceJob {
    #[serde(default = "schema")]
    schema_version: u32,
    #[serde(default)]
    model: ModelChoice,
    /// Jetson Nano parameters when absent.
    #[serde(default)]
    device: Option<DeviceProfile>,
    /// 391 mini-batches of 128 when absent.
    #[serde(default)]
    train: Option<TrainConfig>,
    /// Rescale compute bandwidth so the full model takes this long.
    #[serde(default)]
    full_cycle_seconds: Option<f64>,
    #[serde(default)]
    policy: SoftTrainPolicy,
}

struct Resolved {
    spec: ModelSpec,
    device: DeviceProfile,
    train: TrainConfig,
    policy: SoftTrainPolicy,
}

fn load_job(path: &Path) -> Result<Resolved, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
    let job: DeviceJob = serde_json::from_str(&text).map_err(|e| CliError::input(path, e))?;
    if job.schema_version != SCHEMA_VERSION {
        return Err(CliError::input(
            path,
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", job.schema_version),
        ));
    }
    // An empty inline model is allowed here: its cost is the fixed overhead.
    let spec = match &job.model {
        ModelChoice::Inline(s) if s.layers.is_empty() => s.clone(),
        other => other.resolve().map_err(|e| CliError::input(path, e))?,
    };
    let train = job.train.unwrap_or_else(TrainConfig::jetson_cifar10);
    train.validate().map_err(|e| CliError::input(path, e))?;
    let mut device = job.device.unwrap_or_else(DeviceProfile::jetson_nano);
    device.validate().map_err(|e| CliError::input(path, e))?;
    if let Some(secs) = job.full_cycle_seconds {
        device = device.calibrated_to(&spec, &train, secs).map_err(|e| CliError::input(path, e))?;
    }
    job.policy.validate().map_err(|e| CliError::input(path, e))?;
    Ok(Resolved { spec, device, train, policy: job.policy })
}

fn create_out(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))
}

fn write(path: PathBuf, text: &str) -> Result<(), CliError> {
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct ConsumptionReport<'a> {
    schema_version: u32,
    spec: &'a ModelSpec,
    device: &'a DeviceProfile,
    train: &'a TrainConfig,
    full: ConsumptionEstimate,
    sweep: Vec<SweepRow>,
}

pub fn profile(config: &Path, out: &Path) -> Result<(), CliError> {
    let r = load_job(config)?;
    let full = model_time(&r.spec, &r.spec.neuron_counts(), &r.device, &r.train)?;
    let sweep = keep_fraction_sweep(&r.spec, &r.device, &r.train)?;
    create_out(out)?;
    let mut csv_bytes = Vec::new();
    write_sweep_csv(&mut csv_bytes, &sweep)?;
    write(out.join("sweep.csv"), &String::from_utf8(csv_bytes).expect("csv is utf-8"))?;
    let report = ConsumptionReport { schema_version: SCHEMA_VERSION, spec: &r.spec, device: &r.device, train: &r.train, full, sweep };
    write(out.join("consumption.json"), &serde_json::to_string_pretty(&report)?)
}

#[derive(Serialize)]
struct BudgetReport<'a> {
    schema_version: u32,
    spec: &'a ModelSpec,
    device: &'a DeviceProfile,
    train: &'a TrainConfig,
    policy: &'a SoftTrainPolicy,
    budget: MaskBudget,
}

pub fn budget(config: &Path, out: &Path) -> Result<(), CliError> {
    let r = load_job(config)?;
    if r.spec.layers.is_empty() {
        return Err(CliError::input(config, "mask budgets need at least one layer"));
    }
    let budget = solve_mask_budget(&r.spec, &r.device, &r.train, &r.policy)?;
    create_out(out)?;
    let report =
        BudgetReport { schema_version: SCHEMA_VERSION, spec: &r.spec, device: &r.device, train: &r.train, policy: &r.policy, budget };
    write(out.join("budget.json"), &serde_json::to_string_pretty(&report)?)
}

/// Device template and the models referenced by a measurement log.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitJob {
    #[serde(default = "schema")]
    schema_version: u32,
    /// Supplies memory capacity and budgets; its bandwidths are refitted.
    #[serde(default)]
    device: Option<DeviceProfile>,
    #[serde(default)]
    train: Option<TrainConfig>,
    /// `spec-id` column value to model.
    specs: BTreeMap<String, ModelChoice>,
}

#[derive(Serialize)]
struct FitOutput {
    schema_version: u32,
    #[serde(flatten)]
    fit: DeviceFit,
}

pub fn fit(config: &Path, measurements: &Path, out: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(config).map_err(|e| CliError::input(config, e))?;
    let job: FitJob = serde_json::from_str(&text).map_err(|e| CliError::input(config, e))?;
    if job.schema_version != SCHEMA_VERSION {
        return Err(CliError::input(config, format!("schema_version {} is not supported", job.schema_version)));
    }
    let specs = job
        .specs
        .iter()
        .map(|(id, m)| m.resolve().map(|s| (id.clone(), s)))
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::input(config, e))?;
    let file = fs::File::open(measurements).map_err(|e| CliError::input(measurements, e))?;
    let rows = read_measurements(file, &specs).map_err(|e| CliError::input(measurements, e))?;
    let train = job.train.unwrap_or_else(TrainConfig::jetson_cifar10);
    let template = job.device.unwrap_or_else(DeviceProfile::jetson_nano);
    let fit = fit_device_params(&rows, &train, &template)?;
    create_out(out)?;
    write(out.join("fit.json"), &serde_json::to_string_pretty(&FitOutput { schema_version: SCHEMA_VERSION, fit })?)
}
