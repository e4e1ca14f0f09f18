//! Merging device updates into the global model, and the contraction bound
//! of the mixed update rule.

mod bound;
mod merge;

pub use bound::{convergence_bound, BoundParams, BoundResult};
pub use merge::{
    aggregate, async_apply, compute_alphas, weighted_average, AggregationScheme, AggregationWeights, DeviceUpdate,
    LOSS_EPSILON,
};
