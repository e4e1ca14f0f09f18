use edgefl::nn::{argmax, logits, NeuronMask, WeightState};
use edgefl::presets;
use edgefl::sim::*;
use edgefl::Error;

fn small_fleet(scheme: Scheme, cycles: &[(DeviceRole, f64)]) -> FleetConfig {
    FleetConfig {
        schema_version: edgefl::SCHEMA_VERSION,
        model: ModelChoice::Inline(presets::lenet_for(8, 1, 4)),
        devices: cycles
            .iter()
            .map(|&(role, secs)| DeviceConfig { role, full_cycle_seconds: Some(secs), ..DeviceConfig::default() })
            .collect(),
        scheme,
        dataset: DatasetSpec::Blobs { train_samples: 240, test_samples: 80, classes: 4, side: 8, noise: 1.5, seed: 2 },
        partition: PartitionMode::Iid,
        rounds: 6,
        seed: 3,
        local: LocalTraining { minibatch_size: 16, ..LocalTraining::default() },
        aggregation: Default::default(),
        policy: Default::default(),
        asynchronous: Default::default(),
        time_budget_seconds: None,
        horizon_seconds: None,
        target_accuracy: Some(0.5),
        trailing_window: 3,
        threads: 1,
    }
}

fn run(cfg: &FleetConfig) -> ExperimentLog {
    run_experiment(cfg, std::path::Path::new(".")).unwrap()
}

const MIXED: [(DeviceRole, f64); 3] =
    [(DeviceRole::Capable, 600.0), (DeviceRole::Straggler, 1500.0), (DeviceRole::Straggler, 900.0)];

#[test]
fn sync_period_is_the_slowest_device() {
    let log = run(&small_fleet(Scheme::Sync, &MIXED));
    assert_eq!(log.records.len(), 6);
    let slowest = log.plan.devices.iter().map(|d| d.full_cycle_seconds).fold(0.0, f64::max);
    assert!((slowest - 1500.0).abs() < 1e-6);
    let mut prev = 0.0;
    for r in &log.records {
        assert_eq!(r.clock_seconds - prev, slowest);
        prev = r.clock_seconds;
        assert_eq!(r.updates.len(), 3);
    }
}

#[test]
fn elfish_keeps_pace_with_the_capable_device() {
    let log = run(&small_fleet(Scheme::Elfish, &MIXED));
    assert!((log.plan.reference_period - 600.0).abs() < 1e-6);
    assert!(log.plan.period() <= 600.0);
    assert!(log.plan.devices[1].budget.global_fraction > 0.0);
    let masked: usize = log.records[0].updates[1].masked.iter().map(Vec::len).sum();
    assert!(masked > 0);
    assert!((log.records[0].alphas.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn async_clock_is_event_driven() {
    let log = run(&small_fleet(Scheme::Async, &MIXED));
    let horizon = 6.0 * 600.0;
    assert!(log.records.windows(2).all(|w| w[0].clock_seconds <= w[1].clock_seconds));
    assert!(log.records.last().unwrap().clock_seconds <= horizon + 1e-6);
    let capable = log.records.iter().filter(|r| r.updates[0].device == 0).count();
    assert_eq!(capable, 6);
    assert!(log.records.iter().any(|r| r.updates[0].staleness > 0));
}

#[test]
fn no_stragglers_makes_elfish_and_sync_identical() {
    let fleet = [(DeviceRole::Capable, 600.0), (DeviceRole::Capable, 600.0)];
    let sync = run(&small_fleet(Scheme::Sync, &fleet));
    let elfish = run(&small_fleet(Scheme::Elfish, &fleet));
    assert_eq!(sync.records, elfish.records);
    assert_eq!(sync.summary, elfish.summary);
}

#[test]
fn single_device_schemes_agree() {
    let fleet = [(DeviceRole::Capable, 600.0)];
    let logs: Vec<ExperimentLog> = [Scheme::Sync, Scheme::Async, Scheme::Elfish, Scheme::StOnly]
        .iter()
        .map(|&s| run(&small_fleet(s, &fleet)))
        .collect();
    for log in &logs[1..] {
        assert_eq!(log.records.len(), logs[0].records.len());
        for (a, b) in log.records.iter().zip(&logs[0].records) {
            assert_eq!(a.updates[0].loss, b.updates[0].loss);
            assert_eq!(a.accuracy, b.accuracy);
            assert_eq!(a.clock_seconds, b.clock_seconds);
        }
    }
}

#[test]
fn runs_are_reproducible_and_thread_count_free() {
    let cfg = small_fleet(Scheme::Elfish, &MIXED);
    let a = run(&cfg).to_json().unwrap();
    let b = run(&cfg).to_json().unwrap();
    assert_eq!(a, b);
    let threaded = run(&FleetConfig { threads: 3, ..cfg.clone() }).to_json().unwrap();
    assert_eq!(a, threaded);
    let other_seed = run(&FleetConfig { seed: 4, ..cfg }).to_json().unwrap();
    assert_ne!(a, other_seed);
}

#[test]
fn log_round_trips_and_exports_csv() {
    let log = run(&small_fleet(Scheme::StOnly, &MIXED));
    let back = ExperimentLog::from_json(&log.to_json().unwrap()).unwrap();
    assert_eq!(back, log);
    let mut csv = Vec::new();
    log.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(text.lines().nth(1).unwrap().starts_with("1,st_only,0,"));
    assert!(log.summary_text().contains("final accuracy"));
    let mut v: serde_json::Value = serde_json::from_str(&log.to_json().unwrap()).unwrap();
    v["schema_version"] = 99.into();
    assert!(ExperimentLog::from_json(&v.to_string()).is_err());
}

#[test]
fn infeasible_straggler_aborts_the_run() {
    let mut cfg = small_fleet(Scheme::Elfish, &MIXED);
    cfg.devices[2].workload_ratio = Some(1e6);
    match run_experiment(&cfg, std::path::Path::new(".")) {
        Err(Error::Infeasible(inf)) => {
            assert_eq!(inf.device, Some(2));
            assert!(inf.violations.iter().any(|v| v.constraint == "workload"));
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
    // Schemes that never mask ignore the budgets.
    cfg.scheme = Scheme::Sync;
    assert!(run_experiment(&cfg, std::path::Path::new(".")).is_ok());
}

#[test]
fn config_json_is_validated() {
    let cfg = small_fleet(Scheme::Sync, &MIXED);
    let text = cfg.to_json().unwrap();
    assert_eq!(FleetConfig::from_json(&text).unwrap(), cfg);
    assert!(FleetConfig::from_json(&text.replace("\"rounds\": 6", "\"rounds\": 0")).is_err());
    assert!(FleetConfig::from_json(&text.replace("\"rounds\"", "\"roundz\"")).is_err());
    assert!(FleetConfig::from_json("{").is_err());
    let minimal = r#"{"devices": [{}], "scheme": "sync", "dataset": {"kind": "blobs"}, "rounds": 1}"#;
    let m = FleetConfig::from_json(minimal).unwrap();
    assert_eq!(m.model, ModelChoice::Preset("lenet-mnist".into()));
    assert_eq!(m.asynchronous.staleness_discount, 0.7);
}

#[test]
fn evaluation_matches_per_sample_scoring() {
    let spec = presets::lenet_for(8, 1, 4);
    let data = gaussian_blobs(500, 4, 8, 1.0, 9).unwrap();
    let w = WeightState::init(&spec, 0);
    let acc = evaluate_global(&spec, &w, &data).unwrap();
    let none = NeuronMask::none(&spec);
    let hits = (0..data.len())
        .filter(|&i| argmax(&logits(&spec, &w, &none, data.sample(i)).unwrap()) == data.labels[i])
        .count();
    assert_eq!(acc, hits as f64 / 500.0);
}

#[test]
fn zero_weights_predict_class_zero() {
    let spec = presets::lenet_for(8, 1, 4);
    let data = gaussian_blobs(200, 4, 8, 1.0, 1).unwrap();
    assert_eq!(evaluate_global(&spec, &WeightState::zeros(&spec), &data).unwrap(), 0.25);
    let empty = Dataset { inputs: vec![], labels: vec![], ..data };
    assert!(evaluate_global(&spec, &WeightState::zeros(&spec), &empty).is_err());
}

#[test]
fn bundled_mnist_subset_loads() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    let spec = DatasetSpec::Mnist { dir, train_samples: 5000, test_samples: 1000 };
    let split = spec.load(std::path::Path::new(".")).unwrap();
    assert_eq!((split.train.len(), split.test.len()), (5000, 1000));
    assert_eq!((split.train.rows, split.train.cols, split.train.classes), (28, 28, 10));
    assert!(split.train.inputs.iter().all(|&v| (0.0..=1.0).contains(&v)));
    for c in 0..10 {
        assert!(split.test.labels.iter().filter(|&&l| l == c).count() >= 50);
    }
}

#[test]
fn shard_partition_skews_labels() {
    let data = gaussian_blobs(400, 10, 2, 0.1, 0).unwrap();
    let parts = partition_data(&data.labels, 4, PartitionMode::NoniidShards, 7).unwrap();
    assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), 400);
    for p in parts {
        let mut labels: Vec<usize> = p.iter().map(|&i| data.labels[i]).collect();
        labels.dedup();
        labels.sort_unstable();
        labels.dedup();
        assert!(labels.len() <= 4);
    }
}
