use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spec::ModelSpec;
use crate::{Error, Result};

/// Weights and biases of one layer. `weights` is row-major, one row of
/// `fan_in` values per neuron, ordered `[input_channel][per_channel_len]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Full parameter set of a model. Gradients use the same type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightState {
    pub layers: Vec<LayerParams>,
}

impl WeightState {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| LayerParams {
                weights: vec![0.0; l.neurons * l.fan_in()],
                biases: vec![0.0; l.neurons],
            })
            .collect();
        Self { layers }
    }

    /// He-uniform initialisation from a seed; biases start at zero.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = Self::zeros(spec);
        for (l, p) in spec.layers.iter().zip(&mut state.layers) {
            let bound = (6.0 / l.fan_in() as f64).sqrt();
            for w in &mut p.weights {
                *w = rng.gen_range(-bound..bound);
            }
        }
        state
    }

    pub fn check_shape(&self, spec: &ModelSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "{} parameter layers for a {}-layer model",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (l, p)) in spec.layers.iter().zip(&self.layers).enumerate() {
            if p.weights.len() != l.neurons * l.fan_in() || p.biases.len() != l.neurons {
                return Err(Error::Shape(format!(
                    "layer {i}: expected {}x{} weights and {} biases, got {} and {}",
                    l.neurons,
                    l.fan_in(),
                    l.neurons,
                    p.weights.len(),
                    p.biases.len()
                )));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &WeightState) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.len() == b.weights.len() && a.biases.len() == b.biases.len())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|p| p.weights.len() + p.biases.len()).sum()
    }

    /// Every parameter, layer by layer, weights before biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|p| p.weights.iter().chain(p.biases.iter()).copied())
    }

    /// Mutable access by flat index in [`values`](Self::values) order.
    pub fn get_mut(&mut self, mut idx: usize) -> Option<&mut f64> {
        for p in &mut self.layers {
            if idx < p.weights.len() {
                return p.weights.get_mut(idx);
            }
            idx -= p.weights.len();
            if idx < p.biases.len() {
                return p.biases.get_mut(idx);
            }
            idx -= p.biases.len();
        }
        None
    }

    pub fn get(&self, mut idx: usize) -> Option<f64> {
        for p in &self.layers {
            if idx < p.weights.len() {
                return Some(p.weights[idx]);
            }
            idx -= p.weights.len();
            if idx < p.biases.len() {
                return Some(p.biases[idx]);
            }
            idx -= p.biases.len();
        }
        None
    }

    /// Weight row of neuron `j` in `layer`.
    pub fn neuron_weights(&self, layer: usize, j: usize) -> &[f64] {
        let p = &self.layers[layer];
        let fan_in = p.weights.len() / p.biases.len();
        &p.weights[j * fan_in..(j + 1) * fan_in]
    }

    /// Copies every parameter of neuron `j` in `layer` from `src`.
    pub fn copy_neuron_from(&mut self, src: &WeightState, layer: usize, j: usize) {
        let fan_in = self.layers[layer].weights.len() / self.layers[layer].biases.len();
        let range = j * fan_in..(j + 1) * fan_in;
        self.layers[layer].weights[range.clone()].copy_from_slice(&src.layers[layer].weights[range]);
        self.layers[layer].biases[j] = src.layers[layer].biases[j];
    }

    /// Cheap order-sensitive fingerprint of every parameter bit pattern.
    pub(crate) fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.values() {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// Writes a binary checkpoint; see [`read_checkpoint`](Self::read_checkpoint).
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.layers.len() as u32).to_le_bytes())?;
        for p in &self.layers {
            out.write_all(&(p.biases.len() as u64).to_le_bytes())?;
            out.write_all(&(p.weights.len() as u64).to_le_bytes())?;
        }
        for v in self.values() {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a checkpoint written by [`write_checkpoint`](Self::write_checkpoint).
    ///
    /// Layout, all little-endian: the 4 magic bytes `EFWS`, a `u32` format
    /// version (1), a `u32` layer count, then per layer a `u64` neuron count
    /// and a `u64` weight count, then every `f64` in [`values`](Self::values)
    /// order.
    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Shape("not a weight checkpoint".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Shape(format!("unsupported checkpoint version {version}")));
        }
        let n_layers = read_u32(&mut input)? as usize;
        let mut dims = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            dims.push((read_u64(&mut input)? as usize, read_u64(&mut input)? as usize));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (neurons, weights) in dims {
            let mut read_vec = |n: usize| -> Result<Vec<f64>> {
                (0..n)
                    .map(|_| {
                        let mut b = [0u8; 8];
                        input.read_exact(&mut b)?;
                        Ok(f64::from_le_bytes(b))
                    })
                    .collect()
            };
            let weights = read_vec(weights)?;
            let biases = read_vec(neurons)?;
            layers.push(LayerParams { weights, biases });
        }
        Ok(Self { layers })
    }
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"EFWS";
const CHECKPOINT_VERSION: u32 = 1;

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerSpec;

    fn spec() -> ModelSpec {
        ModelSpec::new(vec![LayerSpec::conv(3, 2, 3, 4, 4), LayerSpec::dense(2, 3, 2, 2)], 2).unwrap()
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let s = spec();
        let a = WeightState::init(&s, 7);
        assert_eq!(a, WeightState::init(&s, 7));
        assert_ne!(a, WeightState::init(&s, 8));
        a.check_shape(&s).unwrap();
        assert_eq!(a.param_count(), s.param_count());
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = spec();
        let w = WeightState::init(&s, 3);
        let mut buf = Vec::new();
        w.write_checkpoint(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 4 + 2 * 16 + 8 * w.param_count());
        let back = WeightState::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(w, back);
        assert!(WeightState::read_checkpoint(&b"nope"[..]).is_err());
    }

    #[test]
    fn flat_indexing_matches_values() {
        let s = spec();
        let mut w = WeightState::init(&s, 1);
        let flat: Vec<f64> = w.values().collect();
        for (i, v) in flat.iter().enumerate() {
            assert_eq!(w.get(i), Some(*v));
        }
        *w.get_mut(flat.len() - 1).unwrap() = 42.0;
        assert_eq!(w.layers[1].biases[1], 42.0);
        assert!(w.get(flat.len()).is_none());
    }
}
