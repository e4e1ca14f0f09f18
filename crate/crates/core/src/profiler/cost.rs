//! Per-neuron and whole-model training consumption.
//!
//! Units: workload in FLOPs (multiply-accumulates, doubled for the backward
//! pass), memory in bytes, time in seconds, bandwidths in bytes/s and FLOP/s.
//! Decimal prefixes throughout (1 GB = 1e9 bytes, 1 MB = 1e6 bytes).

use serde::{Deserialize, Serialize};

use crate::nn::{LayerSpec, ModelSpec};
use crate::{Error, Result};

/// Training-loop shape of one cycle.
///
/// `weight_bytes` / `activation_bytes` are bytes per stored value: the usual
/// 32-bit floats are 4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub minibatch_size: u64,
    pub minibatch_count: u64,
    pub weight_bytes: u64,
    pub activation_bytes: u64,
}

impl TrainConfig {
    /// CIFAR-10 sized epoch measured on a Jetson Nano: 391 mini-batches of 128.
    pub fn jetson_cifar10() -> Self {
        Self { minibatch_size: 128, minibatch_count: 391, weight_bytes: 4, activation_bytes: 4 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minibatch_size == 0 || self.minibatch_count == 0 {
            return Err(Error::InvalidConfig("mini-batch size and count must be positive".into()));
        }
        for b in [self.weight_bytes, self.activation_bytes] {
            if ![2, 4, 8].contains(&b) {
                return Err(Error::InvalidConfig(format!("value width {b} bytes is not one of 2, 4, 8")));
            }
        }
        Ok(())
    }

    pub fn with_minibatch_count(self, minibatch_count: u64) -> Self {
        Self { minibatch_count, ..self }
    }
}

/// Fitted hardware parameters of a device together with its budgets.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    /// Average compute bandwidth, FLOP/s.
    pub compute_bandwidth: f64,
    /// Main memory to processor bandwidth, bytes/s.
    pub mem_bandwidth: f64,
    /// Secondary to main memory bandwidth, bytes/s.
    pub secondary_mem_bandwidth: f64,
    /// Main memory available for weights and feature maps, bytes.
    pub main_memory_capacity: f64,
    /// Workload budget rate, FLOP/s. The per-cycle amount is this times `time_budget`.
    pub workload_capacity: f64,
    /// Per-cycle wall-time budget, seconds.
    pub time_budget: f64,
    /// Fixed per-cycle overhead (data loading, compilation), seconds.
    pub fixed_overhead: f64,
}

impl DeviceProfile {
    /// The Jetson Nano parameters used for VGG-13 accuracy checks. Budgets
    /// are set so they never bind: 4 GB of memory, a workload rate equal to
    /// the compute bandwidth and a one-day time budget.
    pub fn jetson_nano() -> Self {
        Self {
            compute_bandwidth: 2.8e9,
            mem_bandwidth: 25e9,
            secondary_mem_bandwidth: 870e6,
            main_memory_capacity: 4e9,
            workload_capacity: 2.8e9,
            time_budget: 86_400.0,
            fixed_overhead: 2.3 * 60.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("compute_bandwidth", self.compute_bandwidth),
            ("mem_bandwidth", self.mem_bandwidth),
            ("secondary_mem_bandwidth", self.secondary_mem_bandwidth),
            ("main_memory_capacity", self.main_memory_capacity),
            ("workload_capacity", self.workload_capacity),
            ("time_budget", self.time_budget),
            ("fixed_overhead", self.fixed_overhead),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("device {name} must be positive and finite, got {v}")));
            }
        }
        if self.secondary_mem_bandwidth > self.mem_bandwidth {
            return Err(Error::InvalidConfig(
                "secondary memory bandwidth exceeds main memory bandwidth".into(),
            ));
        }
        Ok(())
    }

    /// Per-cycle workload budget in FLOPs.
    pub fn workload_budget(&self) -> f64 {
        self.workload_capacity * self.time_budget
    }

    /// Copy of `self` whose compute bandwidth makes the full model take
    /// exactly `cycle_seconds` under `cfg`.
    pub fn calibrated_to(&self, spec: &ModelSpec, cfg: &TrainConfig, cycle_seconds: f64) -> Result<Self> {
        let probe = model_time(spec, &spec.neuron_counts(), self, cfg)?;
        let non_compute = probe.time - probe.workload / self.compute_bandwidth;
        let compute_time = cycle_seconds - non_compute;
        if !(compute_time > 0.0) || probe.workload <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "cycle time {cycle_seconds:.3} s does not exceed the {non_compute:.3} s of memory and overhead time"
            )));
        }
        Ok(Self { compute_bandwidth: probe.workload / compute_time, ..*self })
    }
}

/// FLOPs to train one neuron of `layer` for a cycle:
/// `2 * N_b * m_b * r * s * n_prev * h * w`.
pub fn neuron_workload(layer: &LayerSpec, cfg: &TrainConfig) -> f64 {
    2.0 * cfg.minibatch_count as f64
        * cfg.minibatch_size as f64
        * (layer.kernel_rows * layer.kernel_cols) as f64
        * layer.input_channels as f64
        * layer.input_area() as f64
}

/// Bytes held while training one neuron of `layer` on one mini-batch:
/// weights plus gradients, plus the mini-batch's feature maps.
pub fn neuron_memory(layer: &LayerSpec, cfg: &TrainConfig) -> f64 {
    let weights = cfg.weight_bytes as f64 * (layer.kernel_rows * layer.kernel_cols) as f64 * layer.input_channels as f64;
    2.0 * weights + cfg.minibatch_size as f64 * cfg.activation_bytes as f64 * layer.input_area() as f64
}

fn check_bandwidths(dev: &DeviceProfile) -> Result<()> {
    if !(dev.compute_bandwidth > 0.0 && dev.mem_bandwidth > 0.0) {
        return Err(Error::InvalidArgument("compute and memory bandwidths must be positive".into()));
    }
    Ok(())
}

/// Seconds to train one neuron: `W / C_cpu + N_b * M / V_mc`.
pub fn neuron_time(layer: &LayerSpec, dev: &DeviceProfile, cfg: &TrainConfig) -> Result<f64> {
    check_bandwidths(dev)?;
    Ok(neuron_workload(layer, cfg) / dev.compute_bandwidth
        + cfg.minibatch_count as f64 * neuron_memory(layer, cfg) / dev.mem_bandwidth)
}

/// One layer's share of a [`ConsumptionEstimate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConsumption {
    pub kept: usize,
    pub workload: f64,
    pub memory: f64,
    pub time: f64,
}

/// Whole-model consumption of one training cycle.
///
/// `workload` and `memory` are sums of the per-layer entries. `time` equals
/// the sum of per-layer times plus `spill_time` (secondary-memory traffic
/// once the model outgrows main memory) plus `overhead`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionEstimate {
    pub workload: f64,
    pub memory: f64,
    pub time: f64,
    pub spill_time: f64,
    pub overhead: f64,
    pub layers: Vec<LayerConsumption>,
}

/// Consumption of the sub-model keeping `keep_counts[i]` neurons of layer `i`.
///
/// Input channels of each kept layer follow the previous layer's kept count.
/// An empty model costs only the fixed overhead.
pub fn model_time(
    spec: &ModelSpec,
    keep_counts: &[usize],
    dev: &DeviceProfile,
    cfg: &TrainConfig,
) -> Result<ConsumptionEstimate> {
    check_bandwidths(dev)?;
    if keep_counts.len() != spec.layers.len() {
        return Err(Error::Shape(format!(
            "{} keep counts for a {}-layer model",
            keep_counts.len(),
            spec.layers.len()
        )));
    }
    for (i, (l, &k)) in spec.layers.iter().zip(keep_counts).enumerate() {
        if k == 0 || k > l.neurons {
            return Err(Error::InvalidArgument(format!("layer {i}: keep count {k} outside [1, {}]", l.neurons)));
        }
    }
    let layers: Vec<LayerConsumption> = spec
        .kept_layers(keep_counts)
        .iter()
        .map(|l| {
            let k = l.neurons as f64;
            let workload = k * neuron_workload(l, cfg);
            let memory = k * neuron_memory(l, cfg);
            LayerConsumption {
                kept: l.neurons,
                workload,
                memory,
                time: workload / dev.compute_bandwidth + cfg.minibatch_count as f64 * memory / dev.mem_bandwidth,
            }
        })
        .collect();
    let workload: f64 = layers.iter().map(|l| l.workload).sum();
    let memory: f64 = layers.iter().map(|l| l.memory).sum();
    let nb = cfg.minibatch_count as f64;
    let spill = (memory - dev.main_memory_capacity).max(0.0);
    let spill_time = if spill > 0.0 { nb * spill / dev.secondary_mem_bandwidth } else { 0.0 };
    let time = workload / dev.compute_bandwidth + nb * memory / dev.mem_bandwidth + spill_time + dev.fixed_overhead;
    Ok(ConsumptionEstimate { workload, memory, time, spill_time, overhead: dev.fixed_overhead, layers })
}

/// Keep counts for a uniform neuron percentage: every hidden layer keeps
/// `round(fraction * n)` neurons (at least one); the output layer keeps all
/// classes.
pub fn keep_counts_for_fraction(spec: &ModelSpec, fraction: f64) -> Vec<usize> {
    let last = spec.layers.len().saturating_sub(1);
    spec.layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if i == last {
                l.neurons
            } else {
                ((fraction * l.neurons as f64).round() as usize).clamp(1, l.neurons)
            }
        })
        .collect()
}

/// One row of a keep-fraction sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub keep_fraction: f64,
    pub keep_counts: Vec<usize>,
    pub estimate: ConsumptionEstimate,
}

/// Estimates at 100%, 90%, ..., 10% of the neurons.
pub fn keep_fraction_sweep(spec: &ModelSpec, dev: &DeviceProfile, cfg: &TrainConfig) -> Result<Vec<SweepRow>> {
    (1..=10)
        .rev()
        .map(|tenth| {
            let keep_fraction = tenth as f64 / 10.0;
            let keep_counts = keep_counts_for_fraction(spec, keep_fraction);
            let estimate = model_time(spec, &keep_counts, dev, cfg)?;
            Ok(SweepRow { keep_fraction, keep_counts, estimate })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn first_vgg_layer() -> LayerSpec {
        LayerSpec::conv(64, 3, 3, 32, 32)
    }

    #[test]
    fn workload_example() {
        // 2 * 391 * 128 * 9 * 3 * 1024
        assert_eq!(neuron_workload(&first_vgg_layer(), &TrainConfig::jetson_cifar10()), 2_767_454_208.0);
    }

    #[test]
    fn workload_zero_batches_and_linearity() {
        let l = first_vgg_layer();
        let cfg = TrainConfig::jetson_cifar10();
        assert_eq!(neuron_workload(&l, &cfg.with_minibatch_count(0)), 0.0);
        let doubled = TrainConfig { minibatch_size: 256, ..cfg };
        assert_eq!(neuron_workload(&l, &doubled), 2.0 * neuron_workload(&l, &cfg));
    }

    #[test]
    fn memory_example_and_terms() {
        let l = first_vgg_layer();
        let cfg = TrainConfig::jetson_cifar10();
        assert_eq!(neuron_memory(&l, &cfg), 216.0 + 524_288.0);
        let no_batch = TrainConfig { minibatch_size: 0, ..cfg };
        assert_eq!(neuron_memory(&l, &no_batch), 2.0 * 4.0 * 9.0 * 3.0);
    }

    #[test]
    fn time_example() {
        let t = neuron_time(&first_vgg_layer(), &DeviceProfile::jetson_nano(), &TrainConfig::jetson_cifar10()).unwrap();
        let expected = 2_767_454_208.0 / 2.8e9 + 391.0 * 524_504.0 / 25e9;
        assert!((t - expected).abs() < 1e-12);
        assert!((t - 0.9966).abs() < 5e-5);
    }

    #[test]
    fn zero_bandwidth_rejected() {
        let dev = DeviceProfile { compute_bandwidth: 0.0, ..DeviceProfile::jetson_nano() };
        assert!(neuron_time(&first_vgg_layer(), &dev, &TrainConfig::jetson_cifar10()).is_err());
    }

    #[test]
    fn empty_model_costs_only_overhead() {
        let spec = ModelSpec { layers: vec![], class_count: 0 };
        let e = model_time(&spec, &[], &DeviceProfile::jetson_nano(), &TrainConfig::jetson_cifar10()).unwrap();
        assert_eq!(e.time, 138.0);
        assert_eq!(e.workload, 0.0);
    }

    #[test]
    fn no_spill_when_model_fits() {
        let spec = ModelSpec::new(vec![LayerSpec::conv(8, 3, 3, 8, 8), LayerSpec::dense(2, 8, 8, 8)], 2).unwrap();
        let e = model_time(&spec, &[8, 2], &DeviceProfile::jetson_nano(), &TrainConfig::jetson_cifar10()).unwrap();
        assert_eq!(e.spill_time, 0.0);
        let tight = DeviceProfile { main_memory_capacity: 1.0, ..DeviceProfile::jetson_nano() };
        let e2 = model_time(&spec, &[8, 2], &tight, &TrainConfig::jetson_cifar10()).unwrap();
        assert!(e2.spill_time > 0.0);
        assert!((e2.time - e.time - e2.spill_time).abs() < 1e-9);
    }

    #[test]
    fn keep_counts_validated() {
        let spec = ModelSpec::new(vec![LayerSpec::dense(2, 3, 1, 1)], 2).unwrap();
        let dev = DeviceProfile::jetson_nano();
        let cfg = TrainConfig::jetson_cifar10();
        assert!(model_time(&spec, &[0], &dev, &cfg).is_err());
        assert!(model_time(&spec, &[3], &dev, &cfg).is_err());
        assert!(model_time(&spec, &[1, 1], &dev, &cfg).is_err());
    }

    #[test]
    fn calibration_hits_target() {
        let spec = ModelSpec::new(vec![LayerSpec::conv(8, 3, 3, 8, 8), LayerSpec::dense(2, 8, 8, 8)], 2).unwrap();
        let cfg = TrainConfig::jetson_cifar10();
        let dev = DeviceProfile { fixed_overhead: 1.0, ..DeviceProfile::jetson_nano() };
        let cal = dev.calibrated_to(&spec, &cfg, 50.0).unwrap();
        let t = model_time(&spec, &spec.neuron_counts(), &cal, &cfg).unwrap().time;
        assert!((t - 50.0).abs() < 1e-9);
        assert!(dev.calibrated_to(&spec, &cfg, 0.5).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::jetson_cifar10().validate().is_ok());
        assert!(TrainConfig { weight_bytes: 32, ..TrainConfig::jetson_cifar10() }.validate().is_err());
        assert!(DeviceProfile::jetson_nano().validate().is_ok());
        let bad = DeviceProfile { secondary_mem_bandwidth: 1e12, ..DeviceProfile::jetson_nano() };
        assert!(bad.validate().is_err());
    }
}
