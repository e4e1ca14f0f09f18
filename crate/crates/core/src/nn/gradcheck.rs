use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mask::NeuronMask;
use super::network::{backward, forward, Batch};
use super::spec::ModelSpec;
use super::weights::WeightState;
use crate::{Error, Result};

/// Parameters sampled per check when the model has more than this many.
pub const GRADCHECK_SAMPLES: usize = 256;

/// Maximum relative error between backprop and central differences over a
/// sampled subset of parameters (all of them for small models).
pub fn gradient_check(spec: &ModelSpec, weights: &WeightState, batch: Batch<'_>, eps: f64) -> Result<f64> {
    let mask = NeuronMask::none(spec);
    let (_, cache) = forward(spec, weights, &mask, batch)?;
    let analytic = backward(spec, weights, &mask, &cache)?;
    compare_gradient(spec, weights, batch, eps, &analytic)
}

/// Same as [`gradient_check`] but against a caller-supplied gradient.
pub fn compare_gradient(
    spec: &ModelSpec,
    weights: &WeightState,
    batch: Batch<'_>,
    eps: f64,
    analytic: &WeightState,
) -> Result<f64> {
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!("eps {eps} outside [1e-8, 1e-3]")));
    }
    if !analytic.same_shape(weights) {
        return Err(Error::Shape("analytic gradient shape differs from weights".into()));
    }
    let mask = NeuronMask::none(spec);
    let total = weights.param_count();
    let indices: Vec<usize> = if total <= GRADCHECK_SAMPLES {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(total as u64);
        let mut v = sample(&mut rng, total, GRADCHECK_SAMPLES).into_vec();
        v.sort_unstable();
        v
    };
    let mut probe = weights.clone();
    let mut worst = 0.0f64;
    for idx in indices {
        let orig = weights.get(idx).expect("index in range");
        *probe.get_mut(idx).expect("index in range") = orig + eps;
        let (plus, _) = forward(spec, &probe, &mask, batch)?;
        *probe.get_mut(idx).expect("index in range") = orig - eps;
        let (minus, _) = forward(spec, &probe, &mask, batch)?;
        *probe.get_mut(idx).expect("index in range") = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let a = analytic.get(idx).expect("index in range");
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
