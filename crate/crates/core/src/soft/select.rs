use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{MaskBudget, SoftTrainPolicy};
use crate::nn::{ModelSpec, NeuronMask, WeightState};
use crate::{Error, Result};

/// Per-neuron convergence contribution: the L2 norm of the change of all of
/// a neuron's parameters (weights and bias) over one aggregation cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContributionMap {
    pub cycle: u64,
    pub layers: Vec<Vec<f64>>,
}

impl ContributionMap {
    pub fn with_cycle(mut self, cycle: u64) -> Self {
        self.cycle = cycle;
        self
    }
}

/// Contribution of every neuron between two snapshots of the same model.
pub fn contribution(prev: &WeightState, cur: &WeightState) -> Result<ContributionMap> {
    if !prev.same_shape(cur) {
        return Err(Error::Shape("contribution needs two weight states of the same shape".into()));
    }
    let layers = prev
        .layers
        .iter()
        .zip(&cur.layers)
        .map(|(a, b)| {
            let n = a.biases.len();
            let fan_in = a.weights.len() / n.max(1);
            (0..n)
                .map(|j| {
                    let w: f64 = a.weights[j * fan_in..(j + 1) * fan_in]
                        .iter()
                        .zip(&b.weights[j * fan_in..(j + 1) * fan_in])
                        .map(|(x, y)| (y - x) * (y - x))
                        .sum();
                    let db = b.biases[j] - a.biases[j];
                    (w + db * db).sqrt()
                })
                .collect()
        })
        .collect();
    Ok(ContributionMap { cycle: 0, layers })
}

/// Chooses which neurons train this cycle.
///
/// Per layer with `n_c` kept neurons: the `ceil(P_s * n_c)` neurons with the
/// highest contribution are kept (ties to the lower index), and the rest of
/// the kept set is drawn uniformly from the remaining neurons. Without a
/// contribution map (first cycle) the whole kept set is drawn uniformly.
/// Layers that keep every neuron draw nothing from `rng`.
pub fn select_mask<R: Rng + ?Sized>(
    spec: &ModelSpec,
    budget: &MaskBudget,
    contrib: Option<&ContributionMap>,
    policy: &SoftTrainPolicy,
    rng: &mut R,
) -> Result<NeuronMask> {
    if budget.keep_counts.len() != spec.layers.len() {
        return Err(Error::Shape("budget does not match the model".into()));
    }
    if let Some(c) = contrib {
        if c.layers.len() != spec.layers.len() || c.layers.iter().zip(&spec.layers).any(|(u, l)| u.len() != l.neurons) {
            return Err(Error::Shape("contribution map does not cover the model".into()));
        }
    }
    let mut kept_sets = Vec::with_capacity(spec.layers.len());
    for (i, l) in spec.layers.iter().enumerate() {
        let n = l.neurons;
        let nc = budget.keep_counts[i];
        if nc == 0 || nc > n {
            return Err(Error::InvalidMask(format!("layer {i}: keep count {nc} outside [1, {n}]")));
        }
        if nc == n {
            kept_sets.push((0..n).collect());
            continue;
        }
        let mut kept: Vec<usize> = match contrib {
            None => sample(rng, n, nc).into_vec(),
            Some(c) => {
                let u = &c.layers[i];
                let top = ((policy.keep_top_fraction * nc as f64 - 1e-9).ceil() as usize).min(nc);
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| u[b].total_cmp(&u[a]).then(a.cmp(&b)));
                let mut kept: Vec<usize> = order[..top].to_vec();
                let mut rest: Vec<usize> = order[top..].to_vec();
                rest.sort_unstable();
                kept.extend(sample(rng, rest.len(), nc - top).into_iter().map(|k| rest[k]));
                kept
            }
        };
        kept.sort_unstable();
        kept_sets.push(kept);
    }
    NeuronMask::from_kept(spec, &kept_sets)
}
