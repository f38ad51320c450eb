use serde::{Deserialize, Serialize};

use super::model::{check_layout, dequantize};
use super::QuantizedModel;
use crate::error::Result;
use crate::nn::FlatParams;

/// How far quantization moved the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightChangeStats {
    /// `Σ_k |~θ_q,k − θ_o,k|` over all K parameters.
    pub abs_diff: f64,
    /// Fraction of exact zeros in θ_o.
    pub sparsity_original: f64,
    /// Fraction of exact zeros in ~θ_q.
    pub sparsity_quantized: f64,
}

/// Fraction of exactly-zero entries.
pub fn sparsity(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v == 0.0).count() as f64 / values.len() as f64
}

pub fn weight_change_stats(original: &FlatParams, qm: &QuantizedModel) -> Result<WeightChangeStats> {
    check_layout(original, qm)?;
    let deq = dequantize(qm);
    let abs_diff = deq
        .values
        .iter()
        .zip(&original.values)
        .map(|(q, o)| (q - o).abs())
        .sum();
    Ok(WeightChangeStats {
        abs_diff,
        sparsity_original: sparsity(&original.values),
        sparsity_quantized: sparsity(&deq.values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Network;
    use crate::quant::{quantize, PrecisionSpec};
    use crate::rng::Rng;

    #[test]
    fn passthrough_has_no_change() {
        let net = Network::init(&[6, 5, 3], &mut Rng::new(8)).unwrap();
        let qm = quantize(&net, PrecisionSpec::Float32).unwrap();
        let s = weight_change_stats(&net.flatten(), &qm).unwrap();
        assert_eq!(s.abs_diff, 0.0);
        assert_eq!(s.sparsity_original, s.sparsity_quantized);
    }

    #[test]
    fn grid_weights_have_no_change() {
        let net = Network::init(&[3, 2], &mut Rng::new(0)).unwrap();
        let mut flat = net.flatten();
        for (i, v) in flat.values.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.75 } else { -0.75 };
        }
        let net = Network::from_flat(&flat).unwrap();
        for q in [2, 3, 4, 8] {
            let qm = quantize(&net, PrecisionSpec::Int(q)).unwrap();
            assert_eq!(weight_change_stats(&flat, &qm).unwrap().abs_diff, 0.0);
        }
    }

    #[test]
    fn fewer_bits_more_zeros_on_1000_weights() {
        let mut rng = Rng::new(31);
        let net = Network::init(&[40, 25], &mut rng).unwrap();
        let mut flat = net.flatten();
        for v in &mut flat.values {
            *v = rng.normal();
        }
        let net = Network::from_flat(&flat).unwrap();
        let zeros = |q| {
            let qm = quantize(&net, PrecisionSpec::Int(q)).unwrap();
            let deq = dequantize(&qm);
            deq.values.iter().filter(|&&v| v == 0.0).count()
        };
        assert!(zeros(2) >= zeros(8));
        let s2 = weight_change_stats(&flat, &quantize(&net, PrecisionSpec::Int(2)).unwrap()).unwrap();
        assert_eq!(s2.sparsity_quantized, zeros(2) as f64 / flat.len() as f64);
    }

    #[test]
    fn layout_mismatch_is_an_error() {
        let a = Network::init(&[3, 2], &mut Rng::new(0)).unwrap();
        let b = Network::init(&[3, 4, 2], &mut Rng::new(0)).unwrap();
        let qm = quantize(&b, PrecisionSpec::Int(4)).unwrap();
        assert!(weight_change_stats(&a.flatten(), &qm).is_err());
    }
}
