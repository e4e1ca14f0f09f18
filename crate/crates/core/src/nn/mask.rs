use serde::{Deserialize, Serialize};

use super::spec::ModelSpec;
use crate::{Error, Result};

/// Per-layer sets of neurons excluded from one training cycle.
///
/// Stored as sorted masked indices. A layer never has all of its neurons
/// masked.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuronMask {
    layers: Vec<Vec<usize>>,
}

impl NeuronMask {
    /// A mask that excludes nothing.
    pub fn none(spec: &ModelSpec) -> Self {
        Self { layers: vec![Vec::new(); spec.layers.len()] }
    }

    pub fn from_masked(spec: &ModelSpec, mut layers: Vec<Vec<usize>>) -> Result<Self> {
        for l in &mut layers {
            l.sort_unstable();
            l.dedup();
        }
        let mask = Self { layers };
        mask.validate(spec)?;
        Ok(mask)
    }

    /// Builds the mask from per-layer kept sets.
    pub fn from_kept(spec: &ModelSpec, kept: &[Vec<usize>]) -> Result<Self> {
        if kept.len() != spec.layers.len() {
            return Err(Error::InvalidMask(format!(
                "{} kept sets for a {}-layer model",
                kept.len(),
                spec.layers.len()
            )));
        }
        let mut layers = Vec::with_capacity(kept.len());
        for (l, k) in spec.layers.iter().zip(kept) {
            let mut keep = vec![false; l.neurons];
            for &j in k {
                if j >= l.neurons {
                    return Err(Error::InvalidMask(format!("kept index {j} out of range")));
                }
                keep[j] = true;
            }
            layers.push((0..l.neurons).filter(|&j| !keep[j]).collect());
        }
        Self::from_masked(spec, layers)
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::InvalidMask(format!(
                "mask has {} layers, model has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (l, m)) in spec.layers.iter().zip(&self.layers).enumerate() {
            if m.iter().any(|&j| j >= l.neurons) {
                return Err(Error::InvalidMask(format!("layer {i}: index out of range")));
            }
            if m.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidMask(format!("layer {i}: indices not sorted/unique")));
            }
            if m.len() >= l.neurons {
                return Err(Error::InvalidMask(format!("layer {i}: every neuron masked")));
            }
        }
        Ok(())
    }

    pub fn masked(&self, layer: usize) -> &[usize] {
        &self.layers[layer]
    }

    pub fn is_masked(&self, layer: usize, j: usize) -> bool {
        self.layers[layer].binary_search(&j).is_ok()
    }

    /// Kept neuron indices of `layer`, ascending.
    pub fn kept(&self, layer: usize, neurons: usize) -> Vec<usize> {
        let m = &self.layers[layer];
        let mut out = Vec::with_capacity(neurons - m.len());
        let mut it = m.iter().peekable();
        for j in 0..neurons {
            if it.peek() == Some(&&j) {
                it.next();
            } else {
                out.push(j);
            }
        }
        out
    }

    pub fn kept_counts(&self, spec: &ModelSpec) -> Vec<usize> {
        spec.layers.iter().zip(&self.layers).map(|(l, m)| l.neurons - m.len()).collect()
    }

    pub fn masked_count(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.masked_count() == 0
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }
}
