//! Training-consumption profiling: workload, memory and time of a training
//! cycle per neuron and per (partially kept) model, plus device fitting.

mod cost;
mod fit;
mod io;

pub use cost::{
    keep_counts_for_fraction, keep_fraction_sweep, model_time, neuron_memory, neuron_time, neuron_workload,
    ConsumptionEstimate, DeviceProfile, LayerConsumption, SweepRow, TrainConfig,
};
pub use fit::{fit_device_params, DeviceFit, FitReport, Measurement};
pub use io::{read_measurements, write_sweep_csv, SweepCsvRow};
