//! Per-tensor symmetric weight quantization.
//!
//! Integer precisions map each weight tensor onto `{-qmax, ..., qmax}` with
//! `qmax = 2^(q-1) - 1` and one scale `S = max|w| / qmax` per tensor (zero
//! point 0). `fp16` rounds to the binary16 grid and `fp32` is the identity.
//! Biases are never quantized.

mod model;
mod precision;
mod stats;
mod uniform;

pub use model::{dequantize, quantize, QuantizedLayer, QuantizedModel, QuantizedTensor, QUANTIZED_FORMAT};
pub use precision::{MixedPrecisionMap, PrecisionSpec};
pub use stats::{sparsity, weight_change_stats, WeightChangeStats};
pub use uniform::{
    compute_scale, fake_quant_backward, fake_quant_backward_with_scale, fake_quant_forward, fp16_round, qmax, quantize_tensor,
    FP16_MAX,
};
