use half::f16;

use super::PrecisionSpec;

/// Largest finite binary16 value.
pub const FP16_MAX: f64 = 65504.0;

/// Top code of the symmetric `q`-bit range, `2^(q-1) - 1`.
pub fn qmax(bits: u8) -> i32 {
    (1i32 << (bits - 1)) - 1
}

/// Symmetric min-max scale `max|w| / qmax`; 1 for an all-zero tensor.
pub fn compute_scale(weights: &[f64], bits: u8) -> f64 {
    let m = max_abs(weights);
    if m == 0.0 {
        1.0
    } else {
        m / f64::from(qmax(bits))
    }
}

fn max_abs(w: &[f64]) -> f64 {
    w.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Integer codes and scale for one tensor.
///
/// The code is `round_half_even(w · qmax / max|w|)`, which is `w / S` in exact
/// arithmetic but keeps exact halves (e.g. `0.5 · 127`) exact in floating point.
pub fn quantize_tensor(weights: &[f64], bits: u8) -> (f64, Vec<i8>) {
    let m = max_abs(weights);
    let q = f64::from(qmax(bits));
    if m == 0.0 {
        return (1.0, vec![0; weights.len()]);
    }
    let codes = weights
        .iter()
        .map(|w| ((w * q) / m).round_ties_even().clamp(-q, q) as i8)
        .collect();
    (m / q, codes)
}

/// Nearest binary16 value (ties to even), saturating at ±65504.
pub fn fp16_round(w: f64) -> f64 {
    f16::from_f64(w.clamp(-FP16_MAX, FP16_MAX)).to_f64()
}

/// `dequantize(quantize(w))` for one tensor, with a freshly computed scale.
pub fn fake_quant_forward(weights: &[f64], spec: PrecisionSpec) -> Vec<f64> {
    match spec {
        PrecisionSpec::Float32 => weights.to_vec(),
        PrecisionSpec::Float16 => weights.iter().map(|&w| fp16_round(w)).collect(),
        PrecisionSpec::Int(bits) => {
            let (scale, codes) = quantize_tensor(weights, bits);
            codes.iter().map(|&c| scale * f64::from(c)).collect()
        }
    }
}

/// Clipped straight-through estimator: the upstream gradient passes where
/// `|w / S| <= qmax + 1/2` and is zeroed elsewhere.
pub fn fake_quant_backward(upstream: &[f64], weights: &[f64], spec: PrecisionSpec) -> Vec<f64> {
    assert_eq!(upstream.len(), weights.len(), "gradient/weight length mismatch");
    let bound = match spec {
        PrecisionSpec::Float32 => return upstream.to_vec(),
        // values beyond max + half an ulp (32) saturate
        PrecisionSpec::Float16 => FP16_MAX + 16.0,
        PrecisionSpec::Int(bits) => {
            let scale = compute_scale(weights, bits);
            (f64::from(qmax(bits)) + 0.5) * scale
        }
    };
    upstream
        .iter()
        .zip(weights)
        .map(|(&g, &w)| if w.abs() <= bound { g } else { 0.0 })
        .collect()
}

/// Clipped STE against an explicit scale (e.g. one calibrated on other data).
pub fn fake_quant_backward_with_scale(upstream: &[f64], weights: &[f64], bits: u8, scale: f64) -> Vec<f64> {
    let bound = (f64::from(qmax(bits)) + 0.5) * scale;
    upstream
        .iter()
        .zip(weights)
        .map(|(&g, &w)| if w.abs() <= bound { g } else { 0.0 })
        .collect()
}
