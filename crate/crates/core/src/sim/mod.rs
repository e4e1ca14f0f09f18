//! Federated-learning simulator on a simulated clock: the profiler's time
//! model decides how long each local cycle takes, so runs are reproducible
//! and fast regardless of the host.

mod config;
mod data;
mod log;
mod plan;
mod run;

pub use config::{AsyncConfig, DeviceConfig, DeviceRole, FleetConfig, LocalTraining, ModelChoice, Scheme};
pub use data::{gaussian_blobs, load_idx_pair, partition_data, Dataset, DatasetSpec, PartitionMode, Split};
pub use log::{reaches_no_later, trailing_stats, CycleRecord, ExperimentLog, RunSummary, UpdateRecord};
pub use plan::{device_train_configs, plan_fleet, DevicePlan, FleetPlan};
pub use run::{evaluate_global, run_experiment, run_experiment_on};
