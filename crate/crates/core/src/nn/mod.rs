//! Minimal double-precision CNN: same-padded stride-1 convolutions, 2x2 max
//! pooling, dense layers, ReLU, softmax cross-entropy and plain SGD.

mod gradcheck;
mod mask;
mod network;
mod spec;
mod train;
mod weights;

pub use gradcheck::{compare_gradient, gradient_check, GRADCHECK_SAMPLES};
pub use mask::NeuronMask;
pub use network::{
    argmax, backward, forward, logits, loss_and_grad, predict, sgd_step, sgd_step_in_place, Batch, ForwardCache,
};
pub use spec::{LayerKind, LayerSpec, ModelSpec};
pub use train::{train_epochs, SgdConfig};
pub use weights::{LayerParams, WeightState};
