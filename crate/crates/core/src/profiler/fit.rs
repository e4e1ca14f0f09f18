use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::cost::{model_time, DeviceProfile, TrainConfig};
use crate::nn::ModelSpec;
use crate::{Error, Result};

/// One observed training cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub spec: ModelSpec,
    pub keep_counts: Vec<usize>,
    pub observed_seconds: f64,
    pub observed_bytes: f64,
}

/// How well the fitted profile explains the measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub measurements: usize,
    pub time_rmse_seconds: f64,
    pub max_time_rel_error: f64,
    pub mean_time_accuracy: f64,
    /// Mean relative error of the memory model against observed bytes
    /// (NaN when no measurement reports bytes).
    pub mean_memory_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceFit {
    pub profile: DeviceProfile,
    pub report: FitReport,
}

/// Least-squares fit of `1/C_cpu`, `1/V_mc`, `1/V_sm` and `O_T` to observed
/// cycle times.
///
/// The model time is linear in those four unknowns once workload and memory
/// are fixed by the specs, so this is an ordinary linear least-squares
/// problem. `template` supplies the main-memory capacity (which decides the
/// spill term) and the budgets; its bandwidths and overhead are replaced.
pub fn fit_device_params(
    measurements: &[Measurement],
    cfg: &TrainConfig,
    template: &DeviceProfile,
) -> Result<DeviceFit> {
    const UNKNOWNS: usize = 4;
    if measurements.len() < UNKNOWNS {
        return Err(Error::InsufficientMeasurements(format!(
            "{} measurements, need at least {UNKNOWNS}",
            measurements.len()
        )));
    }
    let nb = cfg.minibatch_count as f64;
    // Unit bandwidths leave the raw workload/memory totals in the estimate.
    let unit = DeviceProfile {
        compute_bandwidth: 1.0,
        mem_bandwidth: 1.0,
        secondary_mem_bandwidth: 1.0,
        fixed_overhead: 0.0,
        ..*template
    };
    let n = measurements.len();
    let mut a = DMatrix::<f64>::zeros(n, UNKNOWNS);
    let mut b = DVector::<f64>::zeros(n);
    let mut predicted_bytes = Vec::with_capacity(n);
    for (row, m) in measurements.iter().enumerate() {
        let e = model_time(&m.spec, &m.keep_counts, &unit, cfg)?;
        a[(row, 0)] = e.workload;
        a[(row, 1)] = nb * e.memory;
        a[(row, 2)] = nb * (e.memory - template.main_memory_capacity).max(0.0);
        a[(row, 3)] = 1.0;
        b[row] = m.observed_seconds;
        predicted_bytes.push(e.memory);
    }

    let scales: Vec<f64> = (0..UNKNOWNS).map(|c| a.column(c).norm()).collect();
    if let Some(c) = scales.iter().position(|&s| s == 0.0) {
        return Err(Error::InsufficientMeasurements(format!(
            "column {c} of the design matrix is all zero (no measurement exercises {})",
            UNKNOWN_NAMES[c]
        )));
    }
    for (c, s) in scales.iter().enumerate() {
        a.column_mut(c).scale_mut(1.0 / s);
    }
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= smax * 1e-9 {
        return Err(Error::InsufficientMeasurements(format!(
            "design matrix is rank deficient (condition {:.3e})",
            smax / smin
        )));
    }
    let x = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::InsufficientMeasurements(format!("least-squares solve failed: {e}")))?;
    let params: Vec<f64> = (0..UNKNOWNS).map(|c| x[c] / scales[c]).collect();
    if let Some(c) = params.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
        return Err(Error::InsufficientMeasurements(format!(
            "fitted {} is not positive ({:.3e}); measurements do not constrain it",
            UNKNOWN_NAMES[c], params[c]
        )));
    }
    let profile = DeviceProfile {
        compute_bandwidth: 1.0 / params[0],
        mem_bandwidth: 1.0 / params[1],
        secondary_mem_bandwidth: 1.0 / params[2],
        fixed_overhead: params[3],
        ..*template
    };

    let fitted = &a * &x;
    let mut sq = 0.0;
    let mut max_rel = 0.0f64;
    let mut rel_sum = 0.0;
    for (i, m) in measurements.iter().enumerate() {
        let err = fitted[i] - m.observed_seconds;
        sq += err * err;
        let rel = err.abs() / m.observed_seconds.abs().max(f64::MIN_POSITIVE);
        max_rel = max_rel.max(rel);
        rel_sum += rel;
    }
    let with_bytes: Vec<f64> = measurements
        .iter()
        .zip(&predicted_bytes)
        .filter(|(m, _)| m.observed_bytes > 0.0)
        .map(|(m, p)| (p - m.observed_bytes).abs() / m.observed_bytes)
        .collect();
    let mean_memory_rel_error = if with_bytes.is_empty() {
        f64::NAN
    } else {
        with_bytes.iter().sum::<f64>() / with_bytes.len() as f64
    };
    Ok(DeviceFit {
        profile,
        report: FitReport {
            measurements: n,
            time_rmse_seconds: (sq / n as f64).sqrt(),
            max_time_rel_error: max_rel,
            mean_time_accuracy: 1.0 - rel_sum / n as f64,
            mean_memory_rel_error,
        },
    })
}

const UNKNOWN_NAMES: [&str; 4] = [
    "1/compute_bandwidth",
    "1/mem_bandwidth",
    "1/secondary_mem_bandwidth",
    "fixed_overhead",
];
