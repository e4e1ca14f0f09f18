use std::collections::BTreeSet;

use edgefl::nn::{train_epochs, LayerSpec, ModelSpec, NeuronMask, SgdConfig, WeightState};
use edgefl::presets;
use edgefl::profiler::{model_time, DeviceProfile, TrainConfig};
use edgefl::sim::gaussian_blobs;
use edgefl::soft::*;
use edgefl::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_cost_solve(limit: f64, step: f64) -> edgefl::Result<MaskBudget> {
    let per_neuron = [1.0, 2.0];
    let policy = SoftTrainPolicy { layer_weighting: LayerWeighting::Uniform, p_step: step, ..SoftTrainPolicy::default() };
    solve_on_grid(
        &[4, 4],
        &[true, true],
        &[4.0, 8.0],
        &policy,
        Usage { time: limit, memory: f64::INFINITY, workload: f64::INFINITY },
        |keep| {
            let t = keep.iter().zip(per_neuron).map(|(&k, c)| k as f64 * c).sum();
            Ok(Usage { time: t, memory: 0.0, workload: 0.0 })
        },
    )
}

#[test]
fn toy_grid_example() {
    // Brute force over the grid: the first P that masks a whole neuron in
    // both layers brings the time from 12 to 9.
    let b = unit_cost_solve(9.0, 0.01).unwrap();
    assert!((b.global_fraction - 0.25).abs() < 1e-12);
    assert_eq!(b.keep_counts, vec![3, 3]);
    let full = unit_cost_solve(12.0, 0.01).unwrap();
    assert_eq!(full.global_fraction, 0.0);
    assert_eq!(full.keep_counts, vec![4, 4]);
}

fn table3_device(full_minutes: f64, memory_mb: f64, gflops: f64) -> (ModelSpec, DeviceProfile, TrainConfig) {
    let spec = presets::alexnet_cifar10();
    let cfg = TrainConfig::jetson_cifar10();
    let base = DeviceProfile { main_memory_capacity: memory_mb * 1e6, ..DeviceProfile::jetson_nano() };
    let mut dev = base.calibrated_to(&spec, &cfg, full_minutes * 60.0).unwrap();
    dev.workload_capacity = gflops * 1e9;
    dev.time_budget = 16.0 * 60.0;
    (spec, dev, cfg)
}

#[test]
fn table3_straggler_meets_its_budgets() {
    for (minutes, mb, gflops) in [(20.6, 252.0, 7.0), (23.8, 150.0, 6.0), (27.2, 100.0, 5.5), (34.0, 110.0, 4.5)] {
        let (spec, dev, cfg) = table3_device(minutes, mb, gflops);
        let full = model_time(&spec, &spec.neuron_counts(), &dev, &cfg).unwrap();
        assert!((full.time - minutes * 60.0).abs() < 1e-6);
        let b = solve_mask_budget(&spec, &dev, &cfg, &SoftTrainPolicy::default()).unwrap();
        let e = model_time(&spec, &b.keep_counts, &dev, &cfg).unwrap();
        assert!(e.time <= dev.time_budget);
        assert!(e.memory <= dev.main_memory_capacity);
        assert!(e.workload <= dev.workload_budget());
        assert_eq!(b.usage.time, e.time);
        assert_eq!(*b.keep_counts.last().unwrap(), 10, "output layer is never masked");
    }
}

#[test]
fn fitting_model_is_not_masked() {
    let spec = presets::alexnet_cifar10();
    let b = solve_mask_budget(&spec, &DeviceProfile::jetson_nano(), &TrainConfig::jetson_cifar10(), &SoftTrainPolicy::default())
        .unwrap();
    assert_eq!(b.global_fraction, 0.0);
    assert_eq!(b.keep_counts, spec.neuron_counts());
}

#[test]
fn hopeless_device_is_reported() {
    let (spec, mut dev, cfg) = table3_device(23.8, 150.0, 6.0);
    dev.time_budget = 60.0;
    match solve_mask_budget(&spec, &dev, &cfg, &SoftTrainPolicy::default()) {
        Err(Error::Infeasible(inf)) => {
            assert!(inf.violations.iter().any(|v| v.constraint == "time"));
            assert!(inf.to_string().contains("time"));
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn heavier_layers_mask_more() {
    let (spec, dev, cfg) = table3_device(34.0, 110.0, 4.5);
    let b = solve_mask_budget(&spec, &dev, &cfg, &SoftTrainPolicy::default()).unwrap();
    let full = model_time(&spec, &spec.neuron_counts(), &dev, &cfg).unwrap();
    let maskable = spec.layers.len() - 1;
    let heaviest = (0..maskable).max_by(|&a, &c| full.layers[a].time.total_cmp(&full.layers[c].time)).unwrap();
    let lightest = (0..maskable).min_by(|&a, &c| full.layers[a].time.total_cmp(&full.layers[c].time)).unwrap();
    assert!(b.layer_fractions[heaviest] >= b.layer_fractions[lightest]);
    let masked: f64 = (0..maskable).map(|i| b.layer_weights[i] * b.global_fraction * spec.layers[i].neurons as f64).sum();
    let total: f64 = (0..maskable).map(|i| spec.layers[i].neurons as f64).sum();
    assert!((masked / total - b.global_fraction).abs() < 1e-9);
}

fn half_budget(spec: &ModelSpec) -> MaskBudget {
    let last = spec.layers.len() - 1;
    let keep = spec.layers.iter().enumerate().map(|(i, l)| if i == last { l.neurons } else { l.neurons.div_ceil(2) }).collect();
    MaskBudget { keep_counts: keep, ..MaskBudget::full(spec) }
}

/// Contribution map where kept neurons get random positive scores and
/// masked ones (unchanged weights) get zero.
fn simulated_contrib(spec: &ModelSpec, mask: &NeuronMask, rng: &mut ChaCha8Rng) -> ContributionMap {
    ContributionMap {
        cycle: 0,
        layers: spec
            .layers
            .iter()
            .enumerate()
            .map(|(l, layer)| {
                (0..layer.neurons).map(|j| if mask.is_masked(l, j) { 0.0 } else { rng.gen_range(0.01..1.0) }).collect()
            })
            .collect(),
    }
}

#[test]
fn selection_rotates_through_every_neuron() {
    let spec = ModelSpec::new(vec![LayerSpec::dense(32, 4, 1, 1), LayerSpec::dense(2, 32, 1, 1)], 2).unwrap();
    let budget = half_budget(&spec);
    let policy = SoftTrainPolicy::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut seen = BTreeSet::new();
    let mut contrib: Option<ContributionMap> = None;
    for _ in 0..20 {
        let mask = select_mask(&spec, &budget, contrib.as_ref(), &policy, &mut rng).unwrap();
        seen.extend(mask.kept(0, 32));
        contrib = Some(simulated_contrib(&spec, &mask, &mut rng));
    }
    assert_eq!(seen.len(), 32);
}

#[test]
fn contribution_scaling_keeps_ranking() {
    let spec = presets::lenet_for(8, 1, 4);
    let a = WeightState::init(&spec, 1);
    let b = WeightState::init(&spec, 2);
    let mut scaled = a.clone();
    for (s, (x, y)) in scaled.layers.iter_mut().zip(a.layers.iter().zip(&b.layers)) {
        for (v, (p, q)) in s.weights.iter_mut().zip(x.weights.iter().zip(&y.weights)) {
            *v = p + 3.0 * (q - p);
        }
        for (v, (p, q)) in s.biases.iter_mut().zip(x.biases.iter().zip(&y.biases)) {
            *v = p + 3.0 * (q - p);
        }
    }
    let u1 = contribution(&a, &b).unwrap();
    let u3 = contribution(&a, &scaled).unwrap();
    for (l1, l3) in u1.layers.iter().zip(&u3.layers) {
        for (x, y) in l1.iter().zip(l3) {
            assert!((3.0 * x - y).abs() <= 1e-12 * y.max(1e-300));
        }
    }
    assert!(contribution(&a, &WeightState::init(&presets::lenet_mnist(), 0)).is_err());
}

fn blob_task() -> (ModelSpec, Vec<f64>, Vec<usize>, Vec<usize>) {
    let spec = presets::lenet_for(8, 1, 4);
    let d = gaussian_blobs(64, 4, 8, 0.5, 3).unwrap();
    let samples = (0..64).collect();
    (spec, d.inputs, d.labels, samples)
}

#[test]
fn unmasked_cycle_is_plain_local_training() {
    let (spec, x, y, samples) = blob_task();
    let global = WeightState::init(&spec, 0);
    let sgd = SgdConfig { lr: 0.05, batch_size: 16, epochs: 2 };
    let data = LocalData { inputs: &x, labels: &y, samples: &samples };
    let out = soft_train_cycle(
        &spec,
        &global,
        data,
        &MaskBudget::full(&spec),
        None,
        &SoftTrainPolicy::default(),
        sgd,
        &mut ChaCha8Rng::seed_from_u64(4),
    )
    .unwrap();
    let mut plain = global.clone();
    let loss = train_epochs(&spec, &mut plain, &NeuronMask::none(&spec), &x, &y, &samples, sgd, &mut ChaCha8Rng::seed_from_u64(4))
        .unwrap();
    assert_eq!(out.weights, plain);
    assert_eq!(out.loss, loss);
    assert!(out.mask.is_empty());
}

#[test]
fn masked_neurons_come_back_unchanged() {
    let (spec, x, y, samples) = blob_task();
    let global = WeightState::init(&spec, 0);
    let budget = half_budget(&spec);
    let out = soft_train_cycle(
        &spec,
        &global,
        LocalData { inputs: &x, labels: &y, samples: &samples },
        &budget,
        None,
        &SoftTrainPolicy::default(),
        SgdConfig { lr: 0.05, batch_size: 16, epochs: 1 },
        &mut ChaCha8Rng::seed_from_u64(1),
    )
    .unwrap();
    assert_eq!(out.mask.kept_counts(&spec), budget.keep_counts);
    for l in 0..spec.layers.len() {
        for &j in out.mask.masked(l) {
            assert_eq!(out.weights.neuron_weights(l, j), global.neuron_weights(l, j));
            assert_eq!(out.weights.layers[l].biases[j].to_bits(), global.layers[l].biases[j].to_bits());
            assert_eq!(out.contribution.layers[l][j], 0.0);
        }
    }
}

#[test]
fn straggler_sub_model_fits_where_full_model_does_not() {
    let spec = presets::lenet_mnist();
    let cfg = TrainConfig { minibatch_size: 32, minibatch_count: 40, weight_bytes: 4, activation_bytes: 4 };
    let capable = DeviceProfile::jetson_nano().calibrated_to(&spec, &cfg, 600.0).unwrap();
    let mut straggler = DeviceProfile::jetson_nano().calibrated_to(&spec, &cfg, 1500.0).unwrap();
    straggler.workload_capacity = straggler.compute_bandwidth;
    straggler.time_budget = model_time(&spec, &spec.neuron_counts(), &capable, &cfg).unwrap().time;
    let half = half_budget(&spec);
    let full_t = model_time(&spec, &spec.neuron_counts(), &straggler, &cfg).unwrap().time;
    let half_t = model_time(&spec, &half.keep_counts, &straggler, &cfg).unwrap().time;
    assert!(full_t > straggler.time_budget);
    assert!(half_t <= straggler.time_budget);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn top_contributors_persist(seed in 0u64..10_000, top in 0.0f64..=1.0) {
        let spec = ModelSpec::new(vec![LayerSpec::dense(20, 3, 1, 1), LayerSpec::dense(9, 20, 1, 1), LayerSpec::dense(2, 9, 1, 1)], 2).unwrap();
        let budget = MaskBudget { keep_counts: vec![11, 4, 2], ..MaskBudget::full(&spec) };
        let policy = SoftTrainPolicy { keep_top_fraction: top, ..SoftTrainPolicy::default() };
        let mut scores = ChaCha8Rng::seed_from_u64(seed);
        let contrib = ContributionMap {
            cycle: 1,
            layers: spec.layers.iter().map(|l| (0..l.neurons).map(|_| scores.gen_range(0.0..1.0)).collect()).collect(),
        };
        let mask = select_mask(&spec, &budget, Some(&contrib), &policy, &mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap();
        let again = select_mask(&spec, &budget, Some(&contrib), &policy, &mut ChaCha8Rng::seed_from_u64(seed + 1)).unwrap();
        prop_assert_eq!(&mask, &again);
        for (l, keep) in budget.keep_counts.iter().enumerate() {
            let n = spec.layers[l].neurons;
            prop_assert_eq!(mask.kept(l, n).len(), *keep);
            let k = (top * *keep as f64 - 1e-9).ceil() as usize;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| contrib.layers[l][b].total_cmp(&contrib.layers[l][a]).then(a.cmp(&b)));
            for &j in &order[..k.min(*keep)] {
                prop_assert!(!mask.is_masked(l, j));
            }
        }
    }

    #[test]
    fn grid_solution_is_feasible_and_minimal(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let neurons: Vec<usize> = (0..3).map(|_| rng.gen_range(2..40)).collect();
        let cost: Vec<f64> = (0..3).map(|_| rng.gen_range(0.1..5.0)).collect();
        let full: f64 = neurons.iter().zip(&cost).map(|(&n, c)| n as f64 * c).sum();
        let limit = full * rng.gen_range(0.2..1.1);
        let layer_cost: Vec<f64> = neurons.iter().zip(&cost).map(|(&n, c)| n as f64 * c).collect();
        let policy = SoftTrainPolicy::default();
        let eval = |keep: &[usize]| -> edgefl::Result<Usage> {
            Ok(Usage { time: keep.iter().zip(&cost).map(|(&k, c)| k as f64 * c).sum(), memory: 0.0, workload: 0.0 })
        };
        let lim = Usage { time: limit, memory: 1.0, workload: 1.0 };
        match solve_on_grid(&neurons, &[true; 3], &layer_cost, &policy, lim, eval) {
            Ok(b) => {
                prop_assert!(b.usage.time <= limit);
                if b.global_fraction > 0.0 {
                    let p = b.global_fraction - policy.p_step;
                    let keep: Vec<usize> = neurons.iter().zip(&b.layer_weights)
                        .map(|(&n, a)| keep_count(n, (a * p).min(policy.p_cap))).collect();
                    prop_assert!(eval(&keep).unwrap().time > limit);
                }
            }
            Err(Error::Infeasible(inf)) => {
                let floor: Vec<usize> = neurons.iter().map(|&n| keep_count(n, policy.p_cap)).collect();
                prop_assert_eq!(inf.keep_counts, floor);
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
