use serde::{Deserialize, Serialize};

use crate::nn::{NeuronMask, WeightState};
use crate::{Error, Result};

/// Added to local losses so a zero loss cannot divide by zero.
pub const LOSS_EPSILON: f64 = 1e-6;

/// How device weights `alpha_i` are derived from the updates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationScheme {
    Uniform,
    /// Proportional to the kept fraction of each update.
    Structure,
    /// Proportional to kept fraction over local loss.
    #[default]
    LossStructure,
}

impl std::str::FromStr for AggregationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "structure" => Ok(Self::Structure),
            "loss_structure" | "loss-structure" => Ok(Self::LossStructure),
            _ => Err(Error::InvalidConfig(format!("unknown aggregation scheme {s:?}"))),
        }
    }
}

/// One device's contribution to an aggregation event.
#[derive(Clone, Debug, PartialEq)]
pub struct DeviceUpdate {
    pub device: usize,
    pub weights: WeightState,
    pub mask: NeuronMask,
    pub loss: f64,
    /// Kept neurons over total neurons, in (0, 1].
    pub kept_fraction: f64,
    /// Global aggregation events missed since the device fetched the model.
    pub staleness: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationWeights {
    pub alphas: Vec<f64>,
}

pub fn compute_alphas(updates: &[DeviceUpdate], scheme: AggregationScheme) -> Result<AggregationWeights> {
    if updates.is_empty() {
        return Err(Error::InvalidArgument("no updates to weight".into()));
    }
    for u in updates {
        if !(u.kept_fraction > 0.0 && u.kept_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "device {}: kept fraction {} outside (0, 1]",
                u.device, u.kept_fraction
            )));
        }
        if !u.loss.is_finite() || u.loss < 0.0 {
            return Err(Error::NonFinite(format!("device {}: local loss {}", u.device, u.loss)));
        }
    }
    let raw: Vec<f64> = updates
        .iter()
        .map(|u| match scheme {
            AggregationScheme::Uniform => 1.0,
            AggregationScheme::Structure => u.kept_fraction,
            AggregationScheme::LossStructure => u.kept_fraction / (u.loss + LOSS_EPSILON),
        })
        .collect();
    Ok(AggregationWeights { alphas: normalise(&raw) })
}

fn normalise(raw: &[f64]) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|r| r / total).collect();
    // Push the rounding residue into the largest weight so the sum is 1 to
    // within one ulp.
    let residue = 1.0 - out.iter().sum::<f64>();
    if let Some(k) = (0..out.len()).max_by(|&a, &b| out[a].total_cmp(&out[b]).then(b.cmp(&a))) {
        out[k] += residue;
    }
    out
}

fn check_inputs(global: &WeightState, updates: &[DeviceUpdate], alphas: &AggregationWeights) -> Result<()> {
    if alphas.alphas.len() != updates.len() {
        return Err(Error::Shape(format!("{} alphas for {} updates", alphas.alphas.len(), updates.len())));
    }
    if alphas.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::InvalidArgument("alphas must be finite and non-negative".into()));
    }
    for u in updates {
        if !u.weights.same_shape(global) {
            return Err(Error::Shape(format!("device {}: update shape differs from the global model", u.device)));
        }
        if u.mask.num_layers() != global.layers.len() {
            return Err(Error::Shape(format!("device {}: mask covers {} layers", u.device, u.mask.num_layers())));
        }
    }
    Ok(())
}

/// Mask-aware weighted average. Each neuron's parameters are averaged over
/// the devices that trained it, with their alphas renormalised over that
/// set; a neuron no device trained keeps its global value. Updates are
/// reduced in device-id order so the result does not depend on arrival
/// order.
pub fn aggregate(global: &WeightState, updates: &[DeviceUpdate], alphas: &AggregationWeights) -> Result<WeightState> {
    check_inputs(global, updates, alphas)?;
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&k| (updates[k].device, k));
    let mut out = global.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        let n = layer.biases.len();
        let fan_in = layer.weights.len() / n.max(1);
        for j in 0..n {
            let active: Vec<usize> = order.iter().copied().filter(|&k| !updates[k].mask.is_masked(l, j)).collect();
            let total: f64 = active.iter().map(|&k| alphas.alphas[k]).sum();
            if active.is_empty() || total <= 0.0 {
                continue;
            }
            let w = &mut layer.weights[j * fan_in..(j + 1) * fan_in];
            w.iter_mut().for_each(|v| *v = 0.0);
            let mut b = 0.0;
            for &k in &active {
                let a = alphas.alphas[k] / total;
                let src = &updates[k].weights.layers[l];
                for (dst, s) in w.iter_mut().zip(&src.weights[j * fan_in..(j + 1) * fan_in]) {
                    *dst += a * s;
                }
                b += a * src.biases[j];
            }
            layer.biases[j] = b;
        }
    }
    Ok(out)
}

/// Plain `sum_i alpha_i x_i`, ignoring masks.
pub fn weighted_average(updates: &[DeviceUpdate], alphas: &AggregationWeights) -> Result<WeightState> {
    let first = updates.first().ok_or_else(|| Error::InvalidArgument("no updates to average".into()))?;
    check_inputs(&first.weights, updates, alphas)?;
    let mut order: Vec<usize> = (0..updates.len()).collect();
    order.sort_by_key(|&k| (updates[k].device, k));
    let mut out = first.weights.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        for (dst, vals) in [(&mut layer.weights, 0), (&mut layer.biases, 1)] {
            for (p, v) in dst.iter_mut().enumerate() {
                *v = order
                    .iter()
                    .map(|&k| {
                        let src = &updates[k].weights.layers[l];
                        let x = if vals == 0 { src.weights[p] } else { src.biases[p] };
                        alphas.alphas[k] * x
                    })
                    .sum();
            }
        }
    }
    Ok(out)
}

/// Immediate blend of one update into the global model:
/// `global <- (1 - lambda) global + lambda x`, `lambda = base_mix * discount^staleness`.
/// Neurons the update masked are left alone.
pub fn async_apply(global: &WeightState, update: &DeviceUpdate, staleness_discount: f64, base_mix: f64) -> Result<WeightState> {
    if !(staleness_discount > 0.0 && staleness_discount <= 1.0) {
        return Err(Error::InvalidArgument(format!("staleness discount {staleness_discount} outside (0, 1]")));
    }
    if !(0.0..=1.0).contains(&base_mix) {
        return Err(Error::InvalidArgument(format!("base mix {base_mix} outside [0, 1]")));
    }
    if !update.weights.same_shape(global) || update.mask.num_layers() != global.layers.len() {
        return Err(Error::Shape(format!("device {}: update shape differs from the global model", update.device)));
    }
    let exp = i32::try_from(update.staleness).unwrap_or(i32::MAX);
    let lambda = base_mix * staleness_discount.powi(exp);
    let mut out = global.clone();
    for (l, layer) in out.layers.iter_mut().enumerate() {
        let n = layer.biases.len();
        let fan_in = layer.weights.len() / n.max(1);
        let src = &update.weights.layers[l];
        for j in 0..n {
            if update.mask.is_masked(l, j) {
                continue;
            }
            for p in j * fan_in..(j + 1) * fan_in {
                layer.weights[p] = (1.0 - lambda) * layer.weights[p] + lambda * src.weights[p];
            }
            layer.biases[j] = (1.0 - lambda) * layer.biases[j] + lambda * src.biases[j];
        }
    }
    Ok(out)
}
