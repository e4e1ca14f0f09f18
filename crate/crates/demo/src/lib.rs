//! Browser bindings: keep-fraction sweep, mask-budget solve and the
//! convergence-bound curve. Each export takes plain numbers and returns a
//! JSON string for the page to draw.

use edgefl::aggregation::{convergence_bound, BoundParams};
use edgefl::nn::ModelSpec;
use edgefl::presets;
use edgefl::profiler::{keep_fraction_sweep, model_time, DeviceProfile, TrainConfig};
use edgefl::soft::{solve_mask_budget, SoftTrainPolicy};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn preset(name: &str) -> Result<ModelSpec, String> {
    presets::by_name(name).ok_or_else(|| format!("unknown model {name:?}; one of {:?}", presets::NAMES))
}

#[derive(Serialize)]
struct SweepPoint {
    keep_percent: f64,
    minutes: f64,
    compute_minutes: f64,
    memory_mb: f64,
    gflop: f64,
}

/// Cost of training `model` on a device with the given compute rate and
/// memory capacity, at 100%, 90%, ..., 10% of the neurons.
pub fn sweep_json(model: &str, gflops: f64, memory_mb: f64) -> Result<String, String> {
    let spec = preset(model)?;
    let dev = DeviceProfile {
        compute_bandwidth: gflops * 1e9,
        workload_capacity: gflops * 1e9,
        main_memory_capacity: memory_mb * 1e6,
        ..DeviceProfile::jetson_nano()
    };
    dev.validate().map_err(|e| e.to_string())?;
    let rows = keep_fraction_sweep(&spec, &dev, &TrainConfig::jetson_cifar10()).map_err(|e| e.to_string())?;
    let points: Vec<SweepPoint> = rows
        .iter()
        .map(|r| SweepPoint {
            keep_percent: 100.0 * r.keep_fraction,
            minutes: r.estimate.time / 60.0,
            compute_minutes: r.estimate.workload / dev.compute_bandwidth / 60.0,
            memory_mb: r.estimate.memory / 1e6,
            gflop: r.estimate.workload / 1e9,
        })
        .collect();
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct BudgetView {
    feasible: bool,
    message: String,
    global_fraction: f64,
    full_minutes: f64,
    planned_minutes: f64,
    neurons: Vec<usize>,
    kept: Vec<usize>,
}

/// Mask budget for a straggler whose full-model cycle takes
/// `full_minutes`, asked to finish within `budget_minutes`.
pub fn budget_json(model: &str, full_minutes: f64, budget_minutes: f64) -> Result<String, String> {
    let spec = preset(model)?;
    let train = TrainConfig::jetson_cifar10();
    let base = DeviceProfile { time_budget: budget_minutes * 60.0, ..DeviceProfile::jetson_nano() };
    base.validate().map_err(|e| e.to_string())?;
    let mut dev = base.calibrated_to(&spec, &train, full_minutes * 60.0).map_err(|e| e.to_string())?;
    dev.workload_capacity = dev.compute_bandwidth;
    let full = model_time(&spec, &spec.neuron_counts(), &dev, &train).map_err(|e| e.to_string())?;
    let neurons = spec.neuron_counts();
    let view = match solve_mask_budget(&spec, &dev, &train, &SoftTrainPolicy::default()) {
        Ok(b) => BudgetView {
            feasible: true,
            message: format!("mask {:.0}% of the grid, cycle {:.1} min", 100.0 * b.global_fraction, b.usage.time / 60.0),
            global_fraction: b.global_fraction,
            full_minutes: full.time / 60.0,
            planned_minutes: b.usage.time / 60.0,
            neurons,
            kept: b.keep_counts,
        },
        Err(edgefl::Error::Infeasible(inf)) => BudgetView {
            feasible: false,
            message: inf.to_string(),
            global_fraction: f64::NAN,
            full_minutes: full.time / 60.0,
            planned_minutes: f64::NAN,
            neurons,
            kept: inf.keep_counts,
        },
        Err(e) => return Err(e.to_string()),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct BoundPoint {
    alpha: f64,
    beta: f64,
    bound: f64,
    variance_coefficient: f64,
}

/// Contraction factor and bound over `steps` evenly spaced alphas in (0, 1].
pub fn bound_json(step_size: f64, strong_convexity: f64, rounds: u32, steps: u32) -> Result<String, String> {
    let p = BoundParams {
        smoothness: 1.0 / (2.0 * step_size.max(f64::MIN_POSITIVE)),
        strong_convexity,
        step_size,
        variance_1: 0.5,
        variance_2: 0.5,
        rounds,
        initial_gap: 5.0,
        variance_constant: 1.0,
    };
    let steps = steps.max(1);
    let points = (1..=steps)
        .map(|k| {
            let alpha = k as f64 / steps as f64;
            convergence_bound(&p, alpha).map(|r| BoundPoint {
                alpha,
                beta: r.beta,
                bound: r.bound,
                variance_coefficient: r.variance_coefficient,
            })
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn profile_sweep(model: &str, gflops: f64, memory_mb: f64) -> Result<String, JsValue> {
    sweep_json(model, gflops, memory_mb).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn mask_budget(model: &str, full_minutes: f64, budget_minutes: f64) -> Result<String, JsValue> {
    budget_json(model, full_minutes, budget_minutes).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn bound_curve(step_size: f64, strong_convexity: f64, rounds: u32, steps: u32) -> Result<String, JsValue> {
    bound_json(step_size, strong_convexity, rounds, steps).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn model_names() -> String {
    presets::NAMES.join(",")
}
