//! Resource-aware federated learning on heterogeneous edge devices.
//!
//! The crate is organised around the training loop of a simulated fleet:
//!
//! * [`nn`] is a small double-precision CNN engine with per-neuron masking.
//! * [`profiler`] estimates per-cycle workload, memory and wall time of a
//!   (possibly partially masked) model on a device, and fits device
//!   parameters from measurements.
//! * [`soft`] decides how many neurons a straggler must mask to meet its
//!   budgets, which neurons to keep, and runs one masked local cycle.
//! * [`aggregation`] merges partial updates into the global model and
//!   evaluates the contraction bound.
//! * [`sim`] drives whole experiments on a simulated clock.

pub mod aggregation;
pub mod error;
pub mod nn;
pub mod presets;
pub mod profiler;
pub mod sim;
pub mod soft;

pub use error::{Error, Result};

/// Version tag written into every emitted JSON/CSV artifact.
pub const SCHEMA_VERSION: u32 = 1;
