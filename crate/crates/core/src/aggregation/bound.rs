use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Assumptions of the contraction bound for an L-smooth, mu-strongly convex
/// objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub smoothness: f64,
    pub strong_convexity: f64,
    pub step_size: f64,
    pub variance_1: f64,
    pub variance_2: f64,
    pub rounds: u32,
    pub initial_gap: f64,
    /// Constant in front of the variance term.
    #[serde(default = "one")]
    pub variance_constant: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundResult {
    pub beta: f64,
    pub bound: f64,
    /// `1 - beta^T`, the weight on the variance term.
    pub variance_coefficient: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.smoothness,
            self.strong_convexity,
            self.step_size,
            self.variance_1,
            self.variance_2,
            self.initial_gap,
            self.variance_constant,
        ];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidArgument("bound parameters must be finite and non-negative".into()));
        }
        if self.strong_convexity <= 0.0 || self.smoothness <= 0.0 {
            return Err(Error::InvalidArgument("smoothness and strong convexity must be positive".into()));
        }
        if self.step_size * self.smoothness >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "step size {} must be below 1/L = {}",
                self.step_size,
                1.0 / self.smoothness
            )));
        }
        Ok(())
    }
}

/// `beta = 1 - alpha + alpha (1 - gamma mu)` and
/// `bound = beta^T gap + (1 - beta^T) c (V1 + V2)`.
pub fn convergence_bound(p: &BoundParams, alpha: f64) -> Result<BoundResult> {
    p.validate()?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1]")));
    }
    let beta = 1.0 - alpha + alpha * (1.0 - p.step_size * p.strong_convexity);
    let bt = beta.powi(p.rounds as i32);
    let coef = 1.0 - bt;
    Ok(BoundResult {
        beta,
        bound: bt * p.initial_gap + coef * p.variance_constant * (p.variance_1 + p.variance_2),
        variance_coefficient: coef,
    })
}
