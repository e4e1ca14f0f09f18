use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{FleetConfig, Scheme};
use super::data::{partition_data, Dataset, Split};
use super::log::{summarise, CycleRecord, ExperimentLog, UpdateRecord};
use super::plan::{device_train_configs, plan_fleet, FleetPlan};
use crate::aggregation::{aggregate, async_apply, compute_alphas, weighted_average, AggregationScheme, DeviceUpdate};
use crate::nn::{predict, ModelSpec, SgdConfig, WeightState};
use crate::soft::{soft_train_cycle, ContributionMap, CycleOutput, LocalData};
use crate::{Error, Result, SCHEMA_VERSION};

/// Top-1 accuracy of `weights` on `test`.
pub fn evaluate_global(spec: &ModelSpec, weights: &WeightState, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let pred = predict(spec, weights, &test.inputs)?;
    let hits = pred.iter().zip(&test.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / test.len() as f64)
}

/// Loads the configured dataset (relative paths resolve against `base`)
/// and runs the experiment.
pub fn run_experiment(cfg: &FleetConfig, base: &Path) -> Result<ExperimentLog> {
    cfg.validate()?;
    let split = cfg.dataset.load(base)?;
    run_experiment_on(cfg, &split)
}

struct DeviceState {
    rng: ChaCha8Rng,
    contrib: Option<ContributionMap>,
    shard: Vec<usize>,
}

/// Runs the experiment on already loaded data.
pub fn run_experiment_on(cfg: &FleetConfig, split: &Split) -> Result<ExperimentLog> {
    cfg.validate()?;
    let spec = cfg.model.resolve()?;
    if spec.input_len() != split.train.sample_len() || spec.input_len() != split.test.sample_len() {
        return Err(Error::InvalidConfig(format!(
            "model expects {} inputs per sample, dataset has {}",
            spec.input_len(),
            split.train.sample_len()
        )));
    }
    if split.train.classes > spec.class_count || split.test.labels.iter().any(|&l| l >= spec.class_count) {
        return Err(Error::InvalidConfig("dataset has more classes than the model outputs".into()));
    }
    let shards = partition_data(&split.train.labels, cfg.devices.len(), cfg.partition, cfg.seed)?;
    let sizes: Vec<usize> = shards.iter().map(Vec::len).collect();
    let plan = plan_fleet(cfg, &spec, &device_train_configs(cfg, &sizes))?;
    let mut devices: Vec<DeviceState> = shards
        .into_iter()
        .enumerate()
        .map(|(i, shard)| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64 + 1);
            DeviceState { rng, contrib: None, shard }
        })
        .collect();
    let global = WeightState::init(&spec, cfg.seed);
    let records = match cfg.scheme {
        Scheme::Async => run_async(cfg, &spec, split, &plan, &mut devices, global)?,
        _ => run_rounds(cfg, &spec, split, &plan, &mut devices, global)?,
    };
    let summary = summarise(&records, cfg.target_accuracy, cfg.trailing_window);
    Ok(ExperimentLog {
        schema_version: SCHEMA_VERSION,
        scheme: cfg.scheme,
        aggregation: match cfg.scheme {
            Scheme::StOnly => AggregationScheme::Uniform,
            _ => cfg.aggregation,
        },
        seed: cfg.seed,
        plan,
        records,
        summary,
    })
}

fn sgd(cfg: &FleetConfig) -> SgdConfig {
    SgdConfig { lr: cfg.local.lr, batch_size: cfg.local.minibatch_size as usize, epochs: cfg.local.epochs_per_cycle as usize }
}

fn local_cycle(
    cfg: &FleetConfig,
    spec: &ModelSpec,
    train: &Dataset,
    plan: &FleetPlan,
    i: usize,
    dev: &mut DeviceState,
    global: &WeightState,
) -> Result<CycleOutput> {
    let data = LocalData { inputs: &train.inputs, labels: &train.labels, samples: &dev.shard };
    let out = soft_train_cycle(
        spec,
        global,
        data,
        &plan.devices[i].budget,
        dev.contrib.as_ref(),
        &cfg.policy,
        sgd(cfg),
        &mut dev.rng,
    )?;
    if !out.weights.is_finite() || !out.loss.is_finite() {
        return Err(Error::NonFinite(format!("device {i}: local training diverged (loss {})", out.loss)));
    }
    Ok(out)
}

/// Trains every device from `global`, inline or on `threads` workers.
/// Each device owns its RNG stream, so the result does not depend on the
/// thread count.
fn train_all(
    cfg: &FleetConfig,
    spec: &ModelSpec,
    train: &Dataset,
    plan: &FleetPlan,
    devices: &mut [DeviceState],
    global: &WeightState,
) -> Result<Vec<CycleOutput>> {
    let threads = cfg.threads.min(devices.len()).max(1);
    if threads == 1 {
        return devices.iter_mut().enumerate().map(|(i, d)| local_cycle(cfg, spec, train, plan, i, d, global)).collect();
    }
    let per = devices.len().div_ceil(threads);
    let results: Vec<Result<Vec<CycleOutput>>> = std::thread::scope(|s| {
        let handles: Vec<_> = devices
            .chunks_mut(per)
            .enumerate()
            .map(|(c, chunk)| {
                s.spawn(move || {
                    chunk
                        .iter_mut()
                        .enumerate()
                        .map(|(k, d)| local_cycle(cfg, spec, train, plan, c * per + k, d, global))
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(devices.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

fn to_update(spec: &ModelSpec, device: usize, out: CycleOutput, staleness: u64) -> DeviceUpdate {
    let kept = spec.total_neurons() - out.mask.masked_count();
    DeviceUpdate {
        device,
        kept_fraction: kept as f64 / spec.total_neurons() as f64,
        weights: out.weights,
        mask: out.mask,
        loss: out.loss,
        staleness,
    }
}

fn record_of(u: &DeviceUpdate) -> UpdateRecord {
    UpdateRecord {
        device: u.device,
        loss: u.loss,
        kept_fraction: u.kept_fraction,
        staleness: u.staleness,
        masked: (0..u.mask.num_layers()).map(|l| u.mask.masked(l).to_vec()).collect(),
    }
}

fn within_horizon(cfg: &FleetConfig, t: f64) -> bool {
    cfg.horizon_seconds.is_none_or(|h| t <= h * (1.0 + 1e-12))
}

fn run_rounds(
    cfg: &FleetConfig,
    spec: &ModelSpec,
    split: &Split,
    plan: &FleetPlan,
    devices: &mut [DeviceState],
    mut global: WeightState,
) -> Result<Vec<CycleRecord>> {
    let period = plan.period();
    let mut clock = 0.0;
    let mut records = Vec::new();
    for event in 0..cfg.rounds {
        if !within_horizon(cfg, clock + period) {
            break;
        }
        let outs = train_all(cfg, spec, &split.train, plan, devices, &global)?;
        let mut updates = Vec::with_capacity(outs.len());
        for (i, out) in outs.into_iter().enumerate() {
            devices[i].contrib = Some(out.contribution.clone().with_cycle(event + 1));
            updates.push(to_update(spec, i, out, 0));
        }
        let (alphas, next) = match cfg.scheme {
            Scheme::StOnly => {
                let a = compute_alphas(&updates, AggregationScheme::Uniform)?;
                let next = weighted_average(&updates, &a)?;
                (a, next)
            }
            _ => {
                let a = compute_alphas(&updates, cfg.aggregation)?;
                let next = aggregate(&global, &updates, &a)?;
                (a, next)
            }
        };
        global = next;
        clock += period;
        records.push(CycleRecord {
            event,
            clock_seconds: clock,
            updates: updates.iter().map(record_of).collect(),
            alphas: alphas.alphas,
            accuracy: evaluate_global(spec, &global, &split.test)?,
        });
    }
    Ok(records)
}

/// Event-driven loop: each device trains on the global model it fetched
/// last, pushes when its cycle ends, and fetches again. Ties go to the
/// lower device id.
fn run_async(
    cfg: &FleetConfig,
    spec: &ModelSpec,
    split: &Split,
    plan: &FleetPlan,
    devices: &mut [DeviceState],
    mut global: WeightState,
) -> Result<Vec<CycleRecord>> {
    let horizon = cfg.horizon_seconds.unwrap_or(cfg.rounds as f64 * plan.reference_period);
    let base_mix = cfg.asynchronous.base_mix.unwrap_or(1.0 / devices.len() as f64);
    let mut version = 0u64;
    let mut fetched: Vec<(WeightState, u64)> = vec![(global.clone(), 0); devices.len()];
    let mut finish: Vec<f64> = plan.devices.iter().map(|d| d.planned_cycle_seconds).collect();
    let mut records = Vec::new();
    loop {
        let i = (0..devices.len()).min_by(|&a, &b| finish[a].total_cmp(&finish[b]).then(a.cmp(&b))).expect("non-empty fleet");
        let clock = finish[i];
        if clock > horizon * (1.0 + 1e-12) {
            break;
        }
        let out = local_cycle(cfg, spec, &split.train, plan, i, &mut devices[i], &fetched[i].0)?;
        devices[i].contrib = Some(out.contribution.clone().with_cycle(version + 1));
        let update = to_update(spec, i, out, version - fetched[i].1);
        let exp = i32::try_from(update.staleness).unwrap_or(i32::MAX);
        let lambda = base_mix * cfg.asynchronous.staleness_discount.powi(exp);
        global = async_apply(&global, &update, cfg.asynchronous.staleness_discount, base_mix)?;
        records.push(CycleRecord {
            event: version,
            clock_seconds: clock,
            updates: vec![record_of(&update)],
            alphas: vec![lambda],
            accuracy: evaluate_global(spec, &global, &split.test)?,
        });
        version += 1;
        fetched[i] = (global.clone(), version);
        finish[i] = clock + plan.devices[i].planned_cycle_seconds;
    }
    Ok(records)
}
