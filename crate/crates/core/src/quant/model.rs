use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::uniform::{fp16_round, quantize_tensor};
use super::{MixedPrecisionMap, PrecisionSpec};
use crate::error::{input_err, Error, Result};
use crate::nn::{FlatParams, Network, ParamLayout};

pub const QUANTIZED_FORMAT: &str = "fairquant-quantized";
const QUANTIZED_VERSION: u32 = 1;

/// One quantized weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantizedTensor {
    /// Integer codes `θ_q` with scale `S`; dequantizes to `S · θ_q`.
    Int { bits: u8, scale: f64, codes: Vec<i8> },
    /// Values already on the target float grid (fp16) or untouched (fp32).
    Float { spec: PrecisionSpec, values: Vec<f64> },
}

impl QuantizedTensor {
    pub fn encode(weights: &[f64], spec: PrecisionSpec) -> Self {
        match spec {
            PrecisionSpec::Int(bits) => {
                let (scale, codes) = quantize_tensor(weights, bits);
                QuantizedTensor::Int { bits, scale, codes }
            }
            PrecisionSpec::Float16 => QuantizedTensor::Float {
                spec,
                values: weights.iter().map(|&w| fp16_round(w)).collect(),
            },
            PrecisionSpec::Float32 => QuantizedTensor::Float {
                spec,
                values: weights.to_vec(),
            },
        }
    }

    pub fn spec(&self) -> PrecisionSpec {
        match self {
            QuantizedTensor::Int { bits, .. } => PrecisionSpec::Int(*bits),
            QuantizedTensor::Float { spec, .. } => *spec,
        }
    }

    pub fn scale(&self) -> Option<f64> {
        match self {
            QuantizedTensor::Int { scale, .. } => Some(*scale),
            QuantizedTensor::Float { .. } => None,
        }
    }

    pub fn codes(&self) -> Option<&[i8]> {
        match self {
            QuantizedTensor::Int { codes, .. } => Some(codes),
            QuantizedTensor::Float { .. } => None,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            QuantizedTensor::Int { codes, .. } => codes.len(),
            QuantizedTensor::Float { values, .. } => values.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dequantize(&self) -> Vec<f64> {
        match self {
            QuantizedTensor::Int { scale, codes, .. } => {
                codes.iter().map(|&c| scale * f64::from(c)).collect()
            }
            QuantizedTensor::Float { values, .. } => values.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    pub weights: QuantizedTensor,
    /// Biases stay in full precision.
    pub bias: Vec<f64>,
}

/// A network whose weight tensors have been quantized per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub precision: MixedPrecisionMap,
    pub layout: ParamLayout,
    pub layers: Vec<QuantizedLayer>,
}

impl QuantizedModel {
    pub fn scales(&self) -> Vec<Option<f64>> {
        self.layers.iter().map(|l| l.weights.scale()).collect()
    }

    /// The dequantized network `~θ_q`.
    pub fn to_network(&self) -> Network {
        let flat = dequantize(self);
        Network::from_flat(&flat).expect("layout validated at construction")
    }

    pub fn to_json(&self) -> Result<String> {
        let file = QuantizedFile {
            format: QUANTIZED_FORMAT.into(),
            version: QUANTIZED_VERSION,
            precision: self.precision.clone(),
            layout: self.layout.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| match &l.weights {
                    QuantizedTensor::Int { bits, scale, codes } => LayerFile {
                        spec: PrecisionSpec::Int(*bits),
                        scale: Some(*scale),
                        codes: Some(B64.encode(codes.iter().map(|&c| c as u8).collect::<Vec<_>>())),
                        values: None,
                        bias: crate::nn::checkpoint_encode(&l.bias),
                    },
                    QuantizedTensor::Float { spec, values } => LayerFile {
                        spec: *spec,
                        scale: None,
                        codes: None,
                        values: Some(crate::nn::checkpoint_encode(values)),
                        bias: crate::nn::checkpoint_encode(&l.bias),
                    },
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: QuantizedFile = serde_json::from_str(s)?;
        if file.format != QUANTIZED_FORMAT || file.version != QUANTIZED_VERSION {
            return Err(Error::Format(format!(
                "expected {QUANTIZED_FORMAT} v{QUANTIZED_VERSION}, got {} v{}",
                file.format, file.version
            )));
        }
        file.layout.validate()?;
        if file.layers.len() != file.layout.layers.len() {
            return Err(Error::Format("layer count does not match layout".into()));
        }
        file.precision.validate(file.layout.layers.len())?;
        let layers = file
            .layers
            .into_iter()
            .zip(&file.layout.layers)
            .map(|(l, shape)| {
                let n = shape.inputs * shape.outputs;
                let bias = crate::nn::checkpoint_decode(&l.bias, shape.outputs)?;
                let weights = match (l.spec, l.scale, l.codes, l.values) {
                    (PrecisionSpec::Int(bits), Some(scale), Some(codes), None) => {
                        let bytes = B64
                            .decode(codes)
                            .map_err(|e| Error::Format(format!("bad code payload: {e}")))?;
                        if bytes.len() != n {
                            return Err(Error::Format("code array has the wrong length".into()));
                        }
                        let codes: Vec<i8> = bytes.into_iter().map(|b| b as i8).collect();
                        let q = super::qmax(bits) as i8;
                        if codes.iter().any(|c| !(-q..=q).contains(c)) {
                            return Err(Error::Format(format!("code outside the {bits}-bit range")));
                        }
                        if !(scale > 0.0 && scale.is_finite()) {
                            return Err(Error::Format("scale must be positive".into()));
                        }
                        QuantizedTensor::Int { bits, scale, codes }
                    }
                    (spec @ (PrecisionSpec::Float16 | PrecisionSpec::Float32), None, None, Some(v)) => {
                        QuantizedTensor::Float {
                            spec,
                            values: crate::nn::checkpoint_decode(&v, n)?,
                        }
                    }
                    _ => return Err(Error::Format("inconsistent quantized layer record".into())),
                };
                Ok(QuantizedLayer { weights, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            precision: file.precision,
            layout: file.layout,
            layers,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct QuantizedFile {
    format: String,
    version: u32,
    precision: MixedPrecisionMap,
    layout: ParamLayout,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    spec: PrecisionSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    scale: Option<f64>,
    /// base64 of two's-complement `i8` codes
    #[serde(skip_serializing_if = "Option::is_none", default)]
    codes: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    values: Option<String>,
    bias: String,
}

/// Quantizes every weight tensor of `net` per the precision assignment.
pub fn quantize(net: &Network, precision: impl Into<MixedPrecisionMap>) -> Result<QuantizedModel> {
    let precision = precision.into();
    precision.validate(net.num_layers())?;
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(l, layer)| QuantizedLayer {
            weights: QuantizedTensor::encode(layer.weights().data(), precision.spec_for(l)),
            bias: layer.bias().data().to_vec(),
        })
        .collect();
    Ok(QuantizedModel {
        precision,
        layout: net.layout(),
        layers,
    })
}

/// `~θ_q = S · θ_q` per tensor, reassembled in the source layout.
pub fn dequantize(qm: &QuantizedModel) -> FlatParams {
    let mut values = Vec::with_capacity(qm.layout.param_count());
    for l in &qm.layers {
        values.extend(l.weights.dequantize());
        values.extend_from_slice(&l.bias);
    }
    FlatParams {
        values,
        layout: qm.layout.clone(),
    }
}

/// Checks that `flat` shares `qm`'s layout.
pub(crate) fn check_layout(flat: &FlatParams, qm: &QuantizedModel) -> Result<()> {
    if flat.layout != qm.layout || flat.values.len() != qm.layout.param_count() {
        return input_err("parameter layout does not match the quantized model");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn dequantize_example() {
        let t = QuantizedTensor::Int {
            bits: 8,
            scale: 1.0 / 127.0,
            codes: vec![-127, 64, 0],
        };
        let d = t.dequantize();
        assert_eq!(d, vec![-1.0 / 127.0 * 127.0, 64.0 / 127.0, 0.0]);
        assert_eq!(d[0], -1.0);
    }

    #[test]
    fn passthrough_is_bit_identical() {
        let net = Network::init(&[4, 8, 3], &mut Rng::new(1)).unwrap();
        let qm = quantize(&net, PrecisionSpec::Float32).unwrap();
        assert_eq!(dequantize(&qm), net.flatten());
    }

    #[test]
    fn biases_pass_through_and_mixed_map_applies() {
        let mut rng = Rng::new(2);
        let net = Network::init(&[4, 6, 6, 3], &mut rng).unwrap();
        let mut flat = net.flatten();
        for v in &mut flat.values {
            *v += 0.01 * rng.normal();
        }
        let net = Network::from_flat(&flat).unwrap();
        let map = MixedPrecisionMap::first_last(PrecisionSpec::Int(2), PrecisionSpec::Int(8), 3);
        let qm = quantize(&net, map).unwrap();
        for (l, ql) in qm.layers.iter().enumerate() {
            assert_eq!(ql.bias, net.layers()[l].bias().data());
            let max = ql.weights.codes().unwrap().iter().map(|c| c.abs()).max().unwrap();
            if l == 1 {
                assert_eq!(max, 1);
            } else {
                assert_eq!(max, 127);
            }
        }
    }

    #[test]
    fn file_roundtrip_bit_exact() {
        let net = Network::init(&[5, 7, 7, 2], &mut Rng::new(3)).unwrap();
        let mut map = MixedPrecisionMap::uniform(PrecisionSpec::Int(3));
        map.overrides.insert(1, PrecisionSpec::Float16);
        map.overrides.insert(2, PrecisionSpec::Float32);
        let qm = quantize(&net, map).unwrap();
        let back = QuantizedModel::from_json(&qm.to_json().unwrap()).unwrap();
        assert_eq!(back, qm);
    }

    #[test]
    fn file_rejects_out_of_range_code() {
        let net = Network::init(&[2, 2], &mut Rng::new(3)).unwrap();
        let qm = quantize(&net, PrecisionSpec::Int(2)).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&qm.to_json().unwrap()).unwrap();
        v["layers"][0]["codes"] = serde_json::Value::String(B64.encode([5u8, 0, 0, 0]));
        assert!(QuantizedModel::from_json(&v.to_string()).is_err());
    }
}
