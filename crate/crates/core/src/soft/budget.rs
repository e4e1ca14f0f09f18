use std::fmt;

use serde::{Deserialize, Serialize};

use super::SoftTrainPolicy;
use crate::nn::ModelSpec;
use crate::profiler::{model_time, DeviceProfile, TrainConfig};
use crate::Result;

/// How the global mask fraction is split across layers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerWeighting {
    /// Layers with a larger share of the training time mask a larger fraction.
    #[default]
    TimeShare,
    /// Every maskable layer masks the same fraction.
    Uniform,
}

/// Resource usage of one candidate sub-model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub time: f64,
    pub memory: f64,
    pub workload: f64,
}

impl Usage {
    fn violations(&self, limit: &Usage) -> Vec<Violation> {
        let mut v = Vec::new();
        for (what, used, cap) in [
            ("time", self.time, limit.time),
            ("memory", self.memory, limit.memory),
            ("workload", self.workload, limit.workload),
        ] {
            if used > cap {
                v.push(Violation { constraint: what.to_string(), used, limit: cap });
            }
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: String,
    pub used: f64,
    pub limit: f64,
}

/// No grid point satisfies the budgets, not even the most heavily masked one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Infeasible {
    /// Fleet index of the device, when known.
    #[serde(default)]
    pub device: Option<usize>,
    pub keep_counts: Vec<usize>,
    pub violations: Vec<Violation>,
}

impl fmt::Display for Infeasible {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(d) = self.device {
            write!(f, "device {d}: ")?;
        }
        write!(f, "most-masked sub-model {:?} still violates", self.keep_counts)?;
        for (i, v) in self.violations.iter().enumerate() {
            let sep = if i == 0 { " " } else { ", " };
            write!(f, "{sep}{} ({:.6e} > {:.6e})", v.constraint, v.used, v.limit)?;
        }
        Ok(())
    }
}

impl std::error::Error for Infeasible {}

/// Result of the mask-budget search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskBudget {
    /// Global mask fraction `P`.
    pub global_fraction: f64,
    /// Per-layer fraction `P^i = min(alpha^i * P, cap)`.
    pub layer_fractions: Vec<f64>,
    /// Per-layer weights `alpha^i` (0 for layers that are never masked).
    pub layer_weights: Vec<f64>,
    /// Neurons per layer that join training.
    pub keep_counts: Vec<usize>,
    /// Usage of the kept sub-model.
    pub usage: Usage,
}

impl MaskBudget {
    /// Budget that keeps every neuron.
    pub fn full(spec: &ModelSpec) -> Self {
        let n = spec.layers.len();
        Self {
            global_fraction: 0.0,
            layer_fractions: vec![0.0; n],
            layer_weights: vec![0.0; n],
            keep_counts: spec.neuron_counts(),
            usage: Usage { time: 0.0, memory: 0.0, workload: 0.0 },
        }
    }

    pub fn kept_fraction(&self, spec: &ModelSpec) -> f64 {
        self.keep_counts.iter().sum::<usize>() as f64 / spec.total_neurons() as f64
    }
}

/// Layer weights: `alpha^i` proportional to each maskable layer's share of
/// `layer_cost`, scaled so that `sum_i alpha^i * P * n^i / sum_i n^i = P`
/// over the maskable layers.
pub fn layer_weights(neurons: &[usize], maskable: &[bool], layer_cost: &[f64], mode: LayerWeighting) -> Vec<f64> {
    let idx: Vec<usize> = (0..neurons.len()).filter(|&i| maskable[i]).collect();
    let mut alpha = vec![0.0; neurons.len()];
    if idx.is_empty() {
        return alpha;
    }
    let total_cost: f64 = idx.iter().map(|&i| layer_cost[i]).sum();
    let raw: Vec<f64> = idx
        .iter()
        .map(|&i| match mode {
            LayerWeighting::Uniform => 1.0,
            LayerWeighting::TimeShare if total_cost > 0.0 => layer_cost[i] / total_cost * idx.len() as f64,
            LayerWeighting::TimeShare => 1.0,
        })
        .collect();
    let total_neurons: f64 = idx.iter().map(|&i| neurons[i] as f64).sum();
    let weighted: f64 = idx.iter().zip(&raw).map(|(&i, r)| r * neurons[i] as f64).sum();
    for (&i, r) in idx.iter().zip(&raw) {
        alpha[i] = if weighted > 0.0 { r * total_neurons / weighted } else { 1.0 };
    }
    alpha
}

/// Neurons kept when `fraction` of a layer of `n` is masked: the integer
/// part of `fraction * n` is masked, so at least one neuron stays while
/// `fraction < 1`.
pub fn keep_count(n: usize, fraction: f64) -> usize {
    let masked = (fraction * n as f64 + 1e-9).floor() as usize;
    n - masked.min(n.saturating_sub(1))
}

/// Grid search shared by [`solve_mask_budget`] and abstract cost models.
///
/// Scans `P = 0, step, 2*step, ...` and returns the first point whose kept
/// sub-model satisfies `limit` under `usage`. Feasibility is monotone in
/// `P`, so the first hit is grid-minimal.
pub fn solve_on_grid<F>(
    neurons: &[usize],
    maskable: &[bool],
    layer_cost: &[f64],
    policy: &SoftTrainPolicy,
    limit: Usage,
    mut usage: F,
) -> Result<MaskBudget>
where
    F: FnMut(&[usize]) -> Result<Usage>,
{
    policy.validate()?;
    let alpha = layer_weights(neurons, maskable, layer_cost, policy.layer_weighting);
    let min_alpha = alpha
        .iter()
        .zip(maskable)
        .filter(|(_, &m)| m)
        .map(|(a, _)| *a)
        .fold(f64::INFINITY, f64::min);
    // Past this point every maskable layer sits at the cap.
    let saturation = if min_alpha.is_finite() && min_alpha > 0.0 { policy.p_cap / min_alpha } else { 0.0 };
    let last_step = (saturation / policy.p_step).ceil() as usize + 1;

    let mut last = None;
    for k in 0..=last_step {
        let p = k as f64 * policy.p_step;
        let fractions: Vec<f64> = alpha.iter().map(|a| (a * p).min(policy.p_cap)).collect();
        let keep: Vec<usize> = neurons.iter().zip(&fractions).map(|(&n, &f)| keep_count(n, f)).collect();
        if last.as_ref().is_some_and(|(prev, _): &(Vec<usize>, Usage)| prev == &keep) {
            continue;
        }
        let u = usage(&keep)?;
        if u.violations(&limit).is_empty() {
            return Ok(MaskBudget {
                global_fraction: p,
                layer_fractions: fractions,
                layer_weights: alpha,
                keep_counts: keep,
                usage: u,
            });
        }
        last = Some((keep, u));
    }
    let (keep_counts, u) = last.expect("grid has at least one point");
    Err(Infeasible { device: None, violations: u.violations(&limit), keep_counts }.into())
}

/// Smallest grid fraction `P` whose kept sub-model meets the device's time,
/// memory and per-cycle workload budgets. The output layer is never masked.
pub fn solve_mask_budget(
    spec: &ModelSpec,
    dev: &DeviceProfile,
    cfg: &TrainConfig,
    policy: &SoftTrainPolicy,
) -> Result<MaskBudget> {
    let neurons = spec.neuron_counts();
    let full = model_time(spec, &neurons, dev, cfg)?;
    let layer_cost: Vec<f64> = full.layers.iter().map(|l| l.time).collect();
    let mut maskable = vec![true; neurons.len()];
    if let Some(last) = maskable.last_mut() {
        *last = false;
    }
    let limit = Usage { time: dev.time_budget, memory: dev.main_memory_capacity, workload: dev.workload_budget() };
    solve_on_grid(&neurons, &maskable, &layer_cost, policy, limit, |keep| {
        let e = model_time(spec, keep, dev, cfg)?;
        Ok(Usage { time: e.time, memory: e.memory, workload: e.workload })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Error;

    #[test]
    fn keep_count_masks_integer_part() {
        assert_eq!(keep_count(4, 0.0), 4);
        assert_eq!(keep_count(4, 0.24), 4);
        assert_eq!(keep_count(4, 0.25), 3);
        assert_eq!(keep_count(4, 0.9), 1);
        assert_eq!(keep_count(1, 0.9), 1);
        assert_eq!(keep_count(10, 0.9), 1);
    }

    #[test]
    fn uniform_weights_are_one() {
        let a = layer_weights(&[4, 4, 2], &[true, true, false], &[1.0, 5.0, 3.0], LayerWeighting::Uniform);
        assert_eq!(a, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn time_share_weights_preserve_global_fraction() {
        let n = [10, 30, 5];
        let a = layer_weights(&n, &[true, true, false], &[1.0, 3.0, 9.0], LayerWeighting::TimeShare);
        assert!(a[1] > a[0]);
        assert_eq!(a[2], 0.0);
        let p = 0.2;
        let masked: f64 = (0..2).map(|i| a[i] * p * n[i] as f64).sum();
        assert!((masked / 40.0 - p).abs() < 1e-12);
    }

    #[test]
    fn reports_infeasible_skeleton() {
        let policy = SoftTrainPolicy::default();
        let limit = Usage { time: 0.5, memory: 1e9, workload: 1e9 };
        let err = solve_on_grid(&[4, 4], &[true, true], &[1.0, 1.0], &policy, limit, |k| {
            Ok(Usage { time: k.iter().sum::<usize>() as f64, memory: 0.0, workload: 0.0 })
        })
        .unwrap_err();
        match err {
            Error::Infeasible(inf) => {
                assert_eq!(inf.keep_counts, vec![1, 1]);
                assert_eq!(inf.violations[0].constraint, "time");
            }
            other => panic!("unexpected {other}"),
        }
    }
}
