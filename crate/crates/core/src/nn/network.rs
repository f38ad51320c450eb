use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Input/output widths and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }
}

/// Fully connected layer: `y = act(W x + b)`, `W` stored `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weights: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape().len() != 1 {
            return input_err("layer weights must be 2-D and bias 1-D");
        }
        if bias.len() != weights.shape()[0] {
            return input_err(format!(
                "bias length {} does not match {} output rows",
                bias.len(),
                weights.shape()[0]
            ));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn shape(&self) -> LayerShape {
        LayerShape {
            inputs: self.inputs(),
            outputs: self.outputs(),
            activation: self.activation,
        }
    }
}

/// Ordered stack of dense layers ending in identity (logits).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return input_err("network needs at least one layer");
        };
        if last.activation != Activation::Identity {
            return input_err("last layer must use the identity activation");
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(Error::Dimension {
                    layer: l + 1,
                    expected: pair[0].outputs(),
                    got: pair[1].inputs(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Random network with ReLU hidden layers. `widths` lists every layer
    /// width including input and output, e.g. `[d, 32, 32, classes]`.
    ///
    /// Weights are Glorot-uniform, biases zero.
    pub fn init(widths: &[usize], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return input_err(format!("invalid layer widths {widths:?}"));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (widths[l], widths[l + 1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = (0..fan_in * fan_out)
                    .map(|_| rng.uniform(-limit, limit))
                    .collect();
                let act = if l + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer {
                    weights: Tensor::from_parts_unchecked(vec![fan_out, fan_in], w),
                    bias: Tensor::zeros(vec![fan_out]),
                    activation: act,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    /// Total parameter count K.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.shape().param_count()).sum()
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            layers: self.layers.iter().map(DenseLayer::shape).collect(),
        }
    }

    pub fn flatten(&self) -> FlatParams {
        let mut values = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            values.extend_from_slice(l.weights.data());
            values.extend_from_slice(l.bias.data());
        }
        FlatParams {
            values,
            layout: self.layout(),
        }
    }

    pub fn from_flat(flat: &FlatParams) -> Result<Self> {
        flat.layout.validate()?;
        if flat.values.len() != flat.layout.param_count() {
            return input_err(format!(
                "flat parameter vector has {} values, layout needs {}",
                flat.values.len(),
                flat.layout.param_count()
            ));
        }
        Ok(Self::from_values_unchecked(&flat.layout, &flat.values))
    }

    pub(crate) fn from_values_unchecked(layout: &ParamLayout, values: &[f64]) -> Self {
        let mut off = 0;
        let layers = layout
            .layers
            .iter()
            .map(|s| {
                let nw = s.inputs * s.outputs;
                let w = values[off..off + nw].to_vec();
                let b = values[off + nw..off + nw + s.outputs].to_vec();
                off += nw + s.outputs;
                DenseLayer {
                    weights: Tensor::from_parts_unchecked(vec![s.outputs, s.inputs], w),
                    bias: Tensor::from_parts_unchecked(vec![s.outputs], b),
                    activation: s.activation,
                }
            })
            .collect();
        Self { layers }
    }

    /// Copy with layer `l`'s weight matrix replaced (same shape).
    pub fn with_layer_weights(&self, l: usize, weights: Vec<f64>) -> Result<Self> {
        let layer = self
            .layers
            .get(l)
            .ok_or_else(|| Error::Input(format!("no layer {l}")))?;
        if weights.len() != layer.weights.len() {
            return input_err("replacement weights have the wrong length");
        }
        let mut out = self.clone();
        out.layers[l].weights = Tensor::from_parts_unchecked(layer.weights.shape().to_vec(), weights);
        Ok(out)
    }
}

/// Architecture of a network without its values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub layers: Vec<LayerShape>,
}

/// Where one parameter tensor lives inside a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamRecord {
    pub layer: usize,
    pub is_bias: bool,
    pub offset: usize,
    pub len: usize,
}

impl ParamLayout {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerShape::param_count).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let Some(last) = self.layers.last() else {
            return input_err("layout has no layers");
        };
        if last.activation != Activation::Identity {
            return input_err("last layer must use the identity activation");
        }
        if self.layers.iter().any(|s| s.inputs == 0 || s.outputs == 0) {
            return input_err("layer with zero width");
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[1].inputs != pair[0].outputs {
                return Err(Error::Dimension {
                    layer: l + 1,
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        Ok(())
    }

    /// Weight and bias records in flat order: `W_0, b_0, W_1, b_1, ...`.
    pub fn records(&self) -> Vec<ParamRecord> {
        let mut off = 0;
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (l, s) in self.layers.iter().enumerate() {
            let nw = s.inputs * s.outputs;
            out.push(ParamRecord {
                layer: l,
                is_bias: false,
                offset: off,
                len: nw,
            });
            out.push(ParamRecord {
                layer: l,
                is_bias: true,
                offset: off + nw,
                len: s.outputs,
            });
            off += nw + s.outputs;
        }
        out
    }
}

/// All parameters θ as one vector plus the layout needed to rebuild the network.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    pub values: Vec<f64>,
    pub layout: ParamLayout,
}

impl FlatParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Logits `[N × classes]` for a batch `[N × d_in]`.
pub fn forward(net: &Network, batch: &Tensor) -> Result<Tensor> {
    let width = batch.cols();
    if width != net.input_dim() {
        return Err(Error::Dimension {
            layer: 0,
            expected: net.input_dim(),
            got: width,
        });
    }
    let n = batch.rows();
    let mut act = batch.data().to_vec();
    for layer in net.layers() {
        act = dense_forward(layer, &act, n);
        if layer.activation() == Activation::Relu {
            relu_in_place(&mut act);
        }
    }
    Ok(Tensor::from_parts_unchecked(vec![n, net.output_dim()], act))
}

/// Pre-activations `Z = X Wᵀ + b` for `n` rows of input.
pub(crate) fn dense_forward(layer: &DenseLayer, input: &[f64], n: usize) -> Vec<f64> {
    let (din, dout) = (layer.inputs(), layer.outputs());
    let w = layer.weights().data();
    let b = layer.bias().data();
    let mut out = vec![0.0; n * dout];
    for (x, z) in input.chunks_exact(din).zip(out.chunks_exact_mut(dout)) {
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &w[o * din..(o + 1) * din];
            *zo = b[o] + row.iter().zip(x).map(|(a, c)| a * c).sum::<f64>();
        }
    }
    out
}

pub(crate) fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x <= 0.0 {
            *x = 0.0;
        }
    }
}
