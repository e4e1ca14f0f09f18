//! Soft-training: per-cycle temporary masking of a budget-sized neuron
//! subset, with masked neurons recovered from the global model next cycle.

mod budget;
mod cycle;
mod select;

pub use budget::{
    keep_count, layer_weights, solve_mask_budget, solve_on_grid, Infeasible, LayerWeighting, MaskBudget, Usage,
    Violation,
};
pub use cycle::{soft_train_cycle, CycleOutput, LocalData};
pub use select::{contribution, select_mask, ContributionMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Knobs of the mask search and neuron selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftTrainPolicy {
    /// Share of each layer's kept set reserved for the top contributors.
    pub keep_top_fraction: f64,
    pub seed: u64,
    /// Step of the global mask-fraction grid.
    pub p_step: f64,
    /// Upper bound on any layer's masked fraction.
    pub p_cap: f64,
    pub layer_weighting: LayerWeighting,
}

impl Default for SoftTrainPolicy {
    fn default() -> Self {
        Self { keep_top_fraction: 0.5, seed: 0, p_step: 0.01, p_cap: 0.9, layer_weighting: LayerWeighting::TimeShare }
    }
}

impl SoftTrainPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.keep_top_fraction) {
            return Err(Error::InvalidConfig(format!("keep_top_fraction {} outside [0, 1]", self.keep_top_fraction)));
        }
        if !(self.p_step > 0.0 && self.p_step <= 1.0) {
            return Err(Error::InvalidConfig(format!("p_step {} outside (0, 1]", self.p_step)));
        }
        if !(self.p_cap > 0.0 && self.p_cap < 1.0) {
            return Err(Error::InvalidConfig(format!("p_cap {} outside (0, 1)", self.p_cap)));
        }
        Ok(())
    }
}
