use rand::Rng;

use super::{contribution, select_mask, ContributionMap, MaskBudget, SoftTrainPolicy};
use crate::nn::{train_epochs, ModelSpec, NeuronMask, SgdConfig, WeightState};
use crate::Result;

/// A device's local training shard: row-major inputs plus labels, and the
/// row indices that belong to this device.
#[derive(Clone, Copy, Debug)]
pub struct LocalData<'a> {
    pub inputs: &'a [f64],
    pub labels: &'a [usize],
    pub samples: &'a [usize],
}

#[derive(Clone, Debug, PartialEq)]
pub struct CycleOutput {
    pub weights: WeightState,
    pub mask: NeuronMask,
    /// Mean mini-batch loss of the last local epoch.
    pub loss: f64,
    pub contribution: ContributionMap,
}

/// One local cycle: start from the global weights (which recovers every
/// neuron masked last time), pick a mask for this cycle, run masked SGD, and
/// measure each neuron's contribution against the global starting point.
/// Masked neurons come back bit-for-bit equal to the global copy.
#[allow(clippy::too_many_arguments)]
pub fn soft_train_cycle<R: Rng + ?Sized>(
    spec: &ModelSpec,
    global: &WeightState,
    data: LocalData<'_>,
    budget: &MaskBudget,
    contrib: Option<&ContributionMap>,
    policy: &SoftTrainPolicy,
    sgd: SgdConfig,
    rng: &mut R,
) -> Result<CycleOutput> {
    global.check_shape(spec)?;
    let mask = select_mask(spec, budget, contrib, policy, rng)?;
    let mut weights = global.clone();
    let loss = train_epochs(spec, &mut weights, &mask, data.inputs, data.labels, data.samples, sgd, rng)?;
    let c = contribution(global, &weights)?;
    Ok(CycleOutput { weights, mask, loss, contribution: c })
}
