//! Minimal dense-network engine.
//!
//! Everything is `f64`. Quantization elsewhere in the crate only changes the
//! parameter *values*; the compute path here is always full precision.

mod checkpoint;
mod grad;
mod hvp;
mod network;
mod rop;

pub use checkpoint::{load_network, save_network, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub(crate) use checkpoint::{decode_f64 as checkpoint_decode, encode_f64 as checkpoint_encode};
pub(crate) use grad::log_softmax_at;
pub use grad::{
    cross_entropy_loss, gradient, gradient_with, loss_and_gradient, per_sample_losses, softmax,
    softmax_row, ClassWeights, NetObjective,
};
pub use hvp::{hvp, hvp_objective, HvpMethod, Objective};
pub use network::{
    forward, Activation, DenseLayer, FlatParams, LayerShape, Network, ParamLayout, ParamRecord,
};
pub use rop::hvp_exact;
