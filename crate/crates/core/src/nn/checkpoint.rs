//! JSON checkpoints: layer shapes plus base64 little-endian `f64` arrays.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::network::{Activation, DenseLayer, Network};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_FORMAT: &str = "fairquant-network";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: String,
    bias: String,
}

pub(crate) fn encode_f64(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub(crate) fn decode_f64(s: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Format(format!("bad base64 payload: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Network {
    pub fn to_json(&self) -> Result<String> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            layers: self
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation(),
                    weights: encode_f64(l.weights().data()),
                    bias: encode_f64(l.bias().data()),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(s)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("not a network checkpoint: {}", file.format)));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let layers = file
            .layers
            .into_iter()
            .map(|r| {
                let w = decode_f64(&r.weights, r.inputs * r.outputs)?;
                let b = decode_f64(&r.bias, r.outputs)?;
                DenseLayer::new(
                    Tensor::new(vec![r.outputs, r.inputs], w)?,
                    Tensor::new(vec![r.outputs], b)?,
                    r.activation,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, net.to_json()?)?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<Network> {
    Network::from_json(&std::fs::read_to_string(path)?)
}
