use rand::seq::SliceRandom;
use rand::Rng;

use super::mask::NeuronMask;
use super::network::{loss_and_grad, sgd_step_in_place, Batch};
use super::spec::ModelSpec;
use super::weights::WeightState;
use crate::{Error, Result};

/// Local SGD settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

/// Masked mini-batch SGD over `samples` (rows of `inputs`). Sample order is
/// reshuffled every epoch from `rng`. Returns the mean mini-batch loss of the
/// final epoch.
pub fn train_epochs<R: Rng + ?Sized>(
    spec: &ModelSpec,
    weights: &mut WeightState,
    mask: &NeuronMask,
    inputs: &[f64],
    labels: &[usize],
    samples: &[usize],
    cfg: SgdConfig,
    rng: &mut R,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidArgument("batch size and epochs must be >= 1".into()));
    }
    let len = spec.input_len();
    let mut order = samples.to_vec();
    let mut xb = Vec::with_capacity(cfg.batch_size * len);
    let mut yb = Vec::with_capacity(cfg.batch_size);
    let mut last_epoch_loss = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&inputs[i * len..(i + 1) * len]);
                yb.push(labels[i]);
            }
            let (loss, grads) = loss_and_grad(spec, weights, mask, Batch::new(&xb, &yb))?;
            sgd_step_in_place(weights, &grads, cfg.lr)?;
            sum += loss;
            count += 1;
        }
        last_epoch_loss = sum / count as f64;
    }
    Ok(last_epoch_loss)
}
