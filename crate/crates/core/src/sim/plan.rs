use serde::{Deserialize, Serialize};

use super::config::{DeviceRole, FleetConfig};
use crate::nn::ModelSpec;
use crate::profiler::{model_time, DeviceProfile, TrainConfig};
use crate::soft::{solve_mask_budget, MaskBudget};
use crate::{Error, Result};

/// Budgets, mask sizes and cycle times of one device before any training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevicePlan {
    pub device: usize,
    pub name: Option<String>,
    pub role: DeviceRole,
    /// Profile with the fleet's budgets applied.
    pub profile: DeviceProfile,
    pub train: TrainConfig,
    pub full_cycle_seconds: f64,
    pub budget: MaskBudget,
    /// Cycle time of the sub-model this device actually trains.
    pub planned_cycle_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FleetPlan {
    /// Time budget handed to every device.
    pub reference_period: f64,
    pub devices: Vec<DevicePlan>,
}

impl FleetPlan {
    /// Aggregation period of a synchronous round: the slowest planned cycle.
    pub fn period(&self) -> f64 {
        self.devices.iter().map(|d| d.planned_cycle_seconds).fold(0.0, f64::max)
    }
}

/// Per-device cost-model configuration: shard-derived mini-batch count
/// unless the config pins one.
pub fn device_train_configs(cfg: &FleetConfig, shard_sizes: &[usize]) -> Vec<TrainConfig> {
    let l = &cfg.local;
    shard_sizes
        .iter()
        .map(|&n| TrainConfig {
            minibatch_size: l.minibatch_size,
            minibatch_count: l
                .profiled_minibatch_count
                .unwrap_or_else(|| (n as u64).div_ceil(l.minibatch_size).max(1) * l.epochs_per_cycle),
            weight_bytes: l.weight_bytes,
            activation_bytes: l.activation_bytes,
        })
        .collect()
}

/// Calibrates every device, derives the shared time budget and, for the
/// soft-training schemes, solves each device's mask budget.
pub fn plan_fleet(cfg: &FleetConfig, spec: &ModelSpec, trains: &[TrainConfig]) -> Result<FleetPlan> {
    if trains.len() != cfg.devices.len() {
        return Err(Error::Shape(format!("{} train configs for {} devices", trains.len(), cfg.devices.len())));
    }
    let full = spec.neuron_counts();
    let mut calibrated = Vec::with_capacity(cfg.devices.len());
    for (i, (d, t)) in cfg.devices.iter().zip(trains).enumerate() {
        t.validate()?;
        let mut p = d.profile.unwrap_or_else(DeviceProfile::jetson_nano);
        let raw = model_time(spec, &full, &p, t)?;
        if let Some(r) = d.memory_ratio {
            p.main_memory_capacity = raw.memory / r;
        }
        if let Some(secs) = d.full_cycle_seconds {
            p = p
                .calibrated_to(spec, t, secs)
                .map_err(|e| Error::InvalidConfig(format!("device {i}: {e}")))?;
            p.workload_capacity = p.compute_bandwidth;
        }
        let full_time = model_time(spec, &full, &p, t)?.time;
        calibrated.push((p, full_time, raw.workload));
    }

    let reference_period = match cfg.time_budget_seconds {
        Some(b) => b,
        None => {
            let capable: Vec<f64> = cfg
                .devices
                .iter()
                .zip(&calibrated)
                .filter(|(d, _)| d.role == DeviceRole::Capable)
                .map(|(_, c)| c.1)
                .collect();
            if capable.is_empty() {
                calibrated.iter().map(|c| c.1).fold(f64::INFINITY, f64::min)
            } else {
                capable.into_iter().fold(0.0, f64::max)
            }
        }
    };

    let mut devices = Vec::with_capacity(cfg.devices.len());
    for (i, ((d, t), (mut p, full_time, workload))) in cfg.devices.iter().zip(trains).zip(calibrated).enumerate() {
        p.time_budget = reference_period;
        if let Some(r) = d.workload_ratio {
            p.workload_capacity = workload / (r * reference_period);
        }
        let budget = if cfg.scheme.soft_trains() {
            solve_mask_budget(spec, &p, t, &cfg.policy).map_err(|e| match e {
                Error::Infeasible(mut inf) => {
                    inf.device = Some(i);
                    Error::Infeasible(inf)
                }
                other => other,
            })?
        } else {
            let e = model_time(spec, &full, &p, t)?;
            MaskBudget {
                usage: crate::soft::Usage { time: e.time, memory: e.memory, workload: e.workload },
                ..MaskBudget::full(spec)
            }
        };
        let planned = budget.usage.time;
        devices.push(DevicePlan {
            device: i,
            name: d.name.clone(),
            role: d.role,
            profile: p,
            train: *t,
            full_cycle_seconds: full_time,
            budget,
            planned_cycle_seconds: planned,
        });
    }
    Ok(FleetPlan { reference_period, devices })
}
