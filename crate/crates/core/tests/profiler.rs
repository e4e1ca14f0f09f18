use std::collections::HashMap;

use edgefl::nn::{LayerSpec, ModelSpec};
use edgefl::presets;
use edgefl::profiler::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Whole-model workload and memory by visiting every kept neuron on its own.
fn brute_force(spec: &ModelSpec, keep: &[usize], cfg: &TrainConfig) -> (f64, f64) {
    let (mut w, mut m) = (0.0, 0.0);
    for (i, l) in spec.layers.iter().enumerate() {
        let in_ch = if i == 0 { l.input_channels } else { keep[i - 1] };
        let single = LayerSpec { neurons: 1, input_channels: in_ch, ..*l };
        for _ in 0..keep[i] {
            w += 2.0
                * cfg.minibatch_count as f64
                * cfg.minibatch_size as f64
                * (single.kernel_rows * single.kernel_cols * single.input_channels * single.input_rows * single.input_cols) as f64;
            m += 2.0 * (cfg.weight_bytes * (single.kernel_rows * single.kernel_cols * single.input_channels) as u64) as f64
                + (cfg.minibatch_size * cfg.activation_bytes * (single.input_rows * single.input_cols) as u64) as f64;
        }
    }
    (w, m)
}

fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let side = 2 * rng.gen_range(2..10);
    let c0 = rng.gen_range(1..4);
    let c1 = rng.gen_range(2..24);
    let k = [1, 3, 5][rng.gen_range(0..3)];
    let c2 = rng.gen_range(2..24);
    let d = rng.gen_range(4..40);
    let classes = rng.gen_range(2..10);
    ModelSpec::new(
        vec![
            LayerSpec::conv(c1, c0, k, side, side),
            LayerSpec::conv(c2, c1, 3, side / 2, side / 2),
            LayerSpec::dense(d, c2, side / 2, side / 2),
            LayerSpec::dense(classes, d, 1, 1),
        ],
        classes,
    )
    .unwrap()
}

fn random_keep(spec: &ModelSpec, rng: &mut ChaCha8Rng) -> Vec<usize> {
    spec.layers.iter().map(|l| rng.gen_range(1..=l.neurons)).collect()
}

#[test]
fn totals_equal_per_neuron_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = TrainConfig { minibatch_size: 16, minibatch_count: 7, weight_bytes: 4, activation_bytes: 2 };
    for _ in 0..50 {
        let spec = random_spec(&mut rng);
        let keep = random_keep(&spec, &mut rng);
        let e = model_time(&spec, &keep, &DeviceProfile::jetson_nano(), &cfg).unwrap();
        let (w, m) = brute_force(&spec, &keep, &cfg);
        assert!((e.workload - w).abs() <= 1e-12 * w);
        assert!((e.memory - m).abs() <= 1e-12 * m);
        let lw: f64 = e.layers.iter().map(|l| l.workload).sum();
        let lm: f64 = e.layers.iter().map(|l| l.memory).sum();
        assert!((lw - e.workload).abs() <= 1e-12 * w && (lm - e.memory).abs() <= 1e-12 * m);
    }
}

#[test]
fn time_combines_the_three_terms() {
    let spec = presets::alexnet_cifar10();
    let cfg = TrainConfig::jetson_cifar10();
    let dev = DeviceProfile { main_memory_capacity: 50e6, ..DeviceProfile::jetson_nano() };
    let e = model_time(&spec, &spec.neuron_counts(), &dev, &cfg).unwrap();
    let nb = cfg.minibatch_count as f64;
    let direct = e.workload / dev.compute_bandwidth
        + nb * (e.memory / dev.mem_bandwidth + (e.memory - 50e6) / dev.secondary_mem_bandwidth)
        + dev.fixed_overhead;
    assert!((e.time - direct).abs() <= 1e-12 * direct);
    assert!(e.spill_time > 0.0);
}

#[test]
fn bandwidth_scaling_scales_variable_time() {
    let spec = presets::vgg13_cifar10();
    let cfg = TrainConfig::jetson_cifar10();
    let dev = DeviceProfile { main_memory_capacity: 100e6, ..DeviceProfile::jetson_nano() };
    let base = model_time(&spec, &spec.neuron_counts(), &dev, &cfg).unwrap();
    for k in [0.5, 2.0, 7.0] {
        let faster = DeviceProfile {
            compute_bandwidth: dev.compute_bandwidth * k,
            mem_bandwidth: dev.mem_bandwidth * k,
            secondary_mem_bandwidth: dev.secondary_mem_bandwidth * k,
            ..dev
        };
        let e = model_time(&spec, &spec.neuron_counts(), &faster, &cfg).unwrap();
        let ratio = (base.time - base.overhead) / (e.time - e.overhead);
        assert!((ratio - k).abs() < 1e-12 * k);
    }
}

#[test]
fn sweep_is_monotone_and_ordered() {
    for spec in [presets::vgg13_cifar10(), presets::alexnet_cifar10(), presets::lenet_mnist()] {
        let rows = keep_fraction_sweep(&spec, &DeviceProfile::jetson_nano(), &TrainConfig::jetson_cifar10()).unwrap();
        assert_eq!(rows.len(), 10);
        assert_eq!(rows[0].keep_fraction, 1.0);
        for pair in rows.windows(2) {
            assert!(pair[0].estimate.time > pair[1].estimate.time);
            assert!(pair[0].estimate.memory >= pair[1].estimate.memory);
        }
    }
}

#[test]
fn sweep_csv_has_schema_version() {
    let spec = presets::lenet_mnist();
    let rows = keep_fraction_sweep(&spec, &DeviceProfile::jetson_nano(), &TrainConfig::jetson_cifar10()).unwrap();
    let mut out = Vec::new();
    write_sweep_csv(&mut out, &rows).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.starts_with("schema_version,keep_fraction"));
    assert_eq!(text.lines().count(), 11);
}

fn synth_measurements(dev: &DeviceProfile, cfg: &TrainConfig, n: usize, noise: f64, seed: u64) -> Vec<Measurement> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let spec = random_spec(&mut rng);
            let keep = random_keep(&spec, &mut rng);
            let e = model_time(&spec, &keep, dev, cfg).unwrap();
            let factor = 1.0 + noise * rng.gen_range(-1.0..1.0);
            Measurement { spec, keep_counts: keep, observed_seconds: e.time * factor, observed_bytes: e.memory }
        })
        .collect()
}

/// Device whose four time terms are of similar size on `random_spec` models.
fn fit_target(cfg: &TrainConfig) -> DeviceProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let sample: Vec<ConsumptionEstimate> = (0..200)
        .map(|_| {
            let spec = random_spec(&mut rng);
            let keep = random_keep(&spec, &mut rng);
            model_time(&spec, &keep, &DeviceProfile::jetson_nano(), cfg).unwrap()
        })
        .collect();
    let mut mem: Vec<f64> = sample.iter().map(|e| e.memory).collect();
    mem.sort_by(f64::total_cmp);
    let median = mem[mem.len() / 2];
    let mean_w = sample.iter().map(|e| e.workload).sum::<f64>() / 200.0;
    let mean_m = mem.iter().sum::<f64>() / 200.0;
    let nb = cfg.minibatch_count as f64;
    DeviceProfile {
        compute_bandwidth: mean_w / 10.0,
        mem_bandwidth: nb * mean_m / 5.0,
        secondary_mem_bandwidth: nb * mean_m / 20.0,
        main_memory_capacity: median,
        fixed_overhead: 8.0,
        ..DeviceProfile::jetson_nano()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

#[test]
fn exact_measurements_recover_the_device() {
    let cfg = TrainConfig { minibatch_size: 32, minibatch_count: 50, weight_bytes: 4, activation_bytes: 4 };
    let dev = fit_target(&cfg);
    let m = synth_measurements(&dev, &cfg, 40, 0.0, 3);
    let fit = fit_device_params(&m, &cfg, &dev).unwrap();
    let p = fit.profile;
    for (got, want) in [
        (p.compute_bandwidth, dev.compute_bandwidth),
        (p.mem_bandwidth, dev.mem_bandwidth),
        (p.secondary_mem_bandwidth, dev.secondary_mem_bandwidth),
        (p.fixed_overhead, dev.fixed_overhead),
    ] {
        assert!(rel(got, want) < 1e-6, "{got} vs {want}");
    }
    assert!(fit.report.time_rmse_seconds < 1e-6);
    assert!(fit.report.mean_memory_rel_error < 1e-12);
}

#[test]
fn noisy_measurements_recover_the_device_roughly() {
    let cfg = TrainConfig { minibatch_size: 32, minibatch_count: 50, weight_bytes: 4, activation_bytes: 4 };
    let dev = fit_target(&cfg);
    let m = synth_measurements(&dev, &cfg, 100, 0.05, 4);
    let fit = fit_device_params(&m, &cfg, &dev).unwrap();
    let p = fit.profile;
    for (got, want) in [
        (p.compute_bandwidth, dev.compute_bandwidth),
        (p.mem_bandwidth, dev.mem_bandwidth),
        (p.secondary_mem_bandwidth, dev.secondary_mem_bandwidth),
        (p.fixed_overhead, dev.fixed_overhead),
    ] {
        assert!(rel(got, want) < 0.10, "{got} vs {want}");
    }
    assert!(fit.report.mean_time_accuracy > 0.95);
}

#[test]
fn measurement_csv_is_read() {
    let mut specs = HashMap::new();
    specs.insert("lenet".to_string(), presets::lenet_mnist());
    let text = "spec-id,keep-fraction,observed-seconds,observed-bytes\nlenet,1.0,12.5,1000\nlenet,0.5,7.0,0\n";
    let m = read_measurements(text.as_bytes(), &specs).unwrap();
    assert_eq!(m.len(), 2);
    assert_eq!(m[1].keep_counts, keep_counts_for_fraction(&presets::lenet_mnist(), 0.5));
    let bad = "spec-id,keep-fraction,observed-seconds,observed-bytes\nvgg,1.0,1,0\n";
    assert!(read_measurements(bad.as_bytes(), &specs).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn estimates_grow_with_keep_counts(seed in 0u64..10_000, layer in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng);
        let keep = random_keep(&spec, &mut rng);
        let cfg = TrainConfig::jetson_cifar10();
        let dev = DeviceProfile { main_memory_capacity: 1e6, ..DeviceProfile::jetson_nano() };
        let a = model_time(&spec, &keep, &dev, &cfg).unwrap();
        let mut more = keep.clone();
        more[layer] = (more[layer] + 1).min(spec.layers[layer].neurons);
        let b = model_time(&spec, &more, &dev, &cfg).unwrap();
        prop_assert!(b.workload >= a.workload && b.memory >= a.memory && b.time >= a.time);
    }

    #[test]
    fn neuron_costs_grow_with_every_dimension(
        r in 1usize..6, s in 1usize..6, n in 1usize..64, h in 1usize..40, w in 1usize..40, which in 0usize..5,
    ) {
        let cfg = TrainConfig::jetson_cifar10();
        let dev = DeviceProfile::jetson_nano();
        let base = LayerSpec {
            kind: edgefl::nn::LayerKind::Conv,
            neurons: 1, kernel_rows: r, kernel_cols: s, input_rows: h, input_cols: w, input_channels: n,
        };
        let mut bigger = base;
        match which {
            0 => bigger.kernel_rows += 1,
            1 => bigger.kernel_cols += 1,
            2 => bigger.input_channels += 1,
            3 => bigger.input_rows += 1,
            _ => bigger.input_cols += 1,
        }
        prop_assert!(neuron_workload(&bigger, &cfg) > neuron_workload(&base, &cfg));
        prop_assert!(neuron_memory(&bigger, &cfg) >= neuron_memory(&base, &cfg));
        prop_assert!(neuron_time(&bigger, &dev, &cfg).unwrap() > neuron_time(&base, &dev, &cfg).unwrap());
    }
}
