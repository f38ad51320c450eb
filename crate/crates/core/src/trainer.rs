//! Mini-batch SGD with momentum: plain (weighted) ERM, quantization-aware
//! training with a clipped straight-through estimator, and the combined
//! resample + weighted loss + mixed-precision QAT pipeline.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{resample, GroupedDataset, SamplerConfig};
use crate::error::{input_err, Error, Result};
use crate::nn::{self, ClassWeights, Network};
use crate::par::Exec;
use crate::quant::{self, fake_quant_backward, fake_quant_forward, MixedPrecisionMap, QuantizedModel};
use crate::rng::Rng;

/// Loss weights used for the benchmark's weighted-loss mitigation: the
/// minority group gets six times the weight of each other group.
pub const BENCHMARK_WCR_WEIGHTS: [f64; 5] = [0.1, 0.1, 0.1, 0.1, 0.6];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub class_weights: ClassWeights,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

fn default_momentum() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            learning_rate: 0.05,
            momentum: 0.9,
            class_weights: ClassWeights::Uniform,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, classes: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return input_err("epochs and batch_size must be >= 1");
        }
        // zero is accepted: it freezes the parameters
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return input_err("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return input_err("momentum must lie in [0, 1)");
        }
        self.class_weights.validate(classes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QatConfig {
    pub base: TrainConfig,
    pub precision_map: MixedPrecisionMap,
    /// λ_d of the grid-attraction term `λ_d Σ (ŵ − w)²`.
    #[serde(default = "default_dampening")]
    pub dampening_coefficient: f64,
    /// Fraction of epochs after which the dampening term switches on.
    #[serde(default = "default_dampening_start")]
    pub dampening_start_fraction: f64,
}

fn default_dampening() -> f64 {
    0.01
}
fn default_dampening_start() -> f64 {
    0.7
}

impl QatConfig {
    pub fn new(base: TrainConfig, precision_map: MixedPrecisionMap) -> Self {
        Self {
            base,
            precision_map,
            dampening_coefficient: default_dampening(),
            dampening_start_fraction: default_dampening_start(),
        }
    }

    pub fn validate(&self, classes: usize, num_layers: usize) -> Result<()> {
        self.base.validate(classes)?;
        self.precision_map.validate(num_layers)?;
        if !(self.dampening_coefficient >= 0.0 && self.dampening_coefficient.is_finite()) {
            return input_err("dampening_coefficient must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.dampening_start_fraction) {
            return input_err("dampening_start_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    fn dampening_start_epoch(&self) -> usize {
        (self.dampening_start_fraction * self.base.epochs as f64).floor() as usize
    }
}

/// Statistics of one epoch, measured on the full training set after the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Training objective (weighted when class weights are set).
    pub overall_loss: f64,
    /// Unweighted cross-entropy per group; `None` for groups without rows.
    pub group_loss: Vec<Option<f64>>,
    pub group_accuracy: Vec<Option<f64>>,
    pub group_counts: Vec<usize>,
    /// `Σ (ŵ − w)²` between fake-quantized and latent weights (QAT only).
    pub grid_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub group_names: Vec<String>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainTrace {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// `epoch,overall_loss,loss_<g>...,acc_<g>...,count_<g>...,grid_distance`.
    /// Missing values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,overall_loss");
        for prefix in ["loss", "acc", "count"] {
            for name in &self.group_names {
                let _ = write!(s, ",{prefix}_{name}");
            }
        }
        s.push_str(",grid_distance\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for e in &self.epochs {
            let _ = write!(s, "{},{:?}", e.epoch, e.overall_loss);
            for v in &e.group_loss {
                let _ = write!(s, ",{}", opt(*v));
            }
            for v in &e.group_accuracy {
                let _ = write!(s, ",{}", opt(*v));
            }
            for c in &e.group_counts {
                let _ = write!(s, ",{c}");
            }
            let _ = writeln!(s, ",{}", opt(e.grid_distance));
        }
        s
    }
}

fn check_dims(net: &Network, train: &GroupedDataset) -> Result<()> {
    if net.input_dim() != train.dim() {
        return Err(Error::Dimension {
            layer: 0,
            expected: net.input_dim(),
            got: train.dim(),
        });
    }
    if net.output_dim() != train.num_classes() {
        return input_err(format!(
            "network has {} outputs but the dataset has {} classes",
            net.output_dim(),
            train.num_classes()
        ));
    }
    Ok(())
}

/// Empirical risk minimization (weighted when `cfg.class_weights` is set).
pub fn train_erm(net: &Network, train: &GroupedDataset, cfg: &TrainConfig) -> Result<(Network, TrainTrace)> {
    check_dims(net, train)?;
    cfg.validate(train.num_classes())?;
    sgd(net, train, cfg, None)
}

/// Quantization-aware training. Returns the quantized latent weights.
pub fn train_qat(net: &Network, train: &GroupedDataset, cfg: &QatConfig) -> Result<(QuantizedModel, TrainTrace)> {
    let (latent, trace) = train_qat_latent(net, train, cfg)?;
    Ok((quant::quantize(&latent, cfg.precision_map.clone())?, trace))
}

/// As [`train_qat`] but returns the full-precision latent network.
pub fn train_qat_latent(net: &Network, train: &GroupedDataset, cfg: &QatConfig) -> Result<(Network, TrainTrace)> {
    check_dims(net, train)?;
    cfg.validate(train.num_classes(), net.num_layers())?;
    sgd(net, train, &cfg.base, Some(cfg))
}

/// Resample the training set, then run QAT with the configured loss weights
/// and precision map.
pub fn fair_qat_pipeline(
    net: &Network,
    raw_train: &GroupedDataset,
    cfg: &QatConfig,
    sampler: &SamplerConfig,
) -> Result<(QuantizedModel, TrainTrace)> {
    let balanced = resample(raw_train, sampler)?;
    train_qat(net, &balanced, cfg)
}

/// Fake-quantized copy of `net` under `map` (biases untouched).
pub fn fake_quant_network(net: &Network, map: &MixedPrecisionMap) -> Network {
    let mut out = net.clone();
    for (l, layer) in net.layers().iter().enumerate() {
        let spec = map.spec_for(l);
        if spec != quant::PrecisionSpec::Float32 {
            let w = fake_quant_forward(layer.weights().data(), spec);
            out = out.with_layer_weights(l, w).expect("same shape");
        }
    }
    out
}

fn grid_distance(latent: &Network, fake: &Network) -> f64 {
    latent
        .layers()
        .iter()
        .zip(fake.layers())
        .flat_map(|(a, b)| a.weights().data().iter().zip(b.weights().data()))
        .map(|(w, q)| (q - w) * (q - w))
        .sum()
}

fn sgd(
    init: &Network,
    train: &GroupedDataset,
    cfg: &TrainConfig,
    qat: Option<&QatConfig>,
) -> Result<(Network, TrainTrace)> {
    let m = train.len();
    let mut theta = init.flatten();
    let layout = theta.layout.clone();
    let records = layout.records();
    let mut velocity = vec![0.0; theta.len()];
    let mut order: Vec<usize> = (0..m).collect();
    let mut rng = Rng::new(cfg.seed).fork("shuffle");
    let mut trace = TrainTrace {
        group_names: train.group_names().to_vec(),
        epochs: Vec::with_capacity(cfg.epochs),
    };

    for epoch in 0..cfg.epochs {
        let damp = qat
            .filter(|q| epoch >= q.dampening_start_epoch())
            .map_or(0.0, |q| q.dampening_coefficient);
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        for batch in order.chunks(cfg.batch_size) {
            let latent = Network::from_flat(&theta)?;
            let effective = match qat {
                Some(q) => fake_quant_network(&latent, &q.precision_map),
                None => latent.clone(),
            };
            let x = train.features().select_rows(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| train.labels()[i]).collect();
            let (_, mut grad) =
                nn::loss_and_gradient(Exec::Sequential, &effective, &x, &y, &cfg.class_weights)?;
            if let Some(q) = qat {
                for rec in records.iter().filter(|r| !r.is_bias) {
                    let spec = q.precision_map.spec_for(rec.layer);
                    let range = rec.offset..rec.offset + rec.len;
                    let w = &theta.values[range.clone()];
                    let mut g = fake_quant_backward(&grad.values[range.clone()], w, spec);
                    if damp > 0.0 {
                        let w_hat = effective.layers()[rec.layer].weights().data();
                        for ((gi, wi), qi) in g.iter_mut().zip(w).zip(w_hat) {
                            *gi += 2.0 * damp * (wi - qi);
                        }
                    }
                    grad.values[range].copy_from_slice(&g);
                }
            }
            for ((p, v), g) in theta.values.iter_mut().zip(&mut velocity).zip(&grad.values) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.learning_rate * *v;
            }
            if theta.values.iter().any(|p| !p.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: "parameters became non-finite".into(),
                });
            }
        }

        let latent = Network::from_flat(&theta)?;
        let (effective, dist) = match qat {
            Some(q) => {
                let f = fake_quant_network(&latent, &q.precision_map);
                let d = grid_distance(&latent, &f);
                (f, Some(d))
            }
            None => (latent, None),
        };
        let record = evaluate_epoch(&effective, train, &cfg.class_weights, epoch, dist)?;
        if !record.overall_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "loss is not finite".into(),
            });
        }
        trace.epochs.push(record);
    }
    Ok((Network::from_flat(&theta)?, trace))
}

fn evaluate_epoch(
    net: &Network,
    data: &GroupedDataset,
    weights: &ClassWeights,
    epoch: usize,
    grid_distance: Option<f64>,
) -> Result<EpochRecord> {
    let logits = nn::forward(net, data.features())?;
    let losses = nn::per_sample_losses(net, data.features(), data.labels(), &ClassWeights::Uniform)?;
    let g = data.num_groups();
    let mut loss_sum = vec![0.0; g];
    let mut correct = vec![0usize; g];
    let mut count = vec![0usize; g];
    let mut weighted = 0.0;
    for (i, z) in logits.iter_rows().enumerate() {
        let (grp, y) = (data.groups()[i], data.labels()[i]);
        count[grp] += 1;
        loss_sum[grp] += losses[i];
        weighted += weights.weight(y) * losses[i];
        if argmax(z) == y {
            correct[grp] += 1;
        }
    }
    let ratio = |a: f64, n: usize| (n > 0).then(|| a / n as f64);
    Ok(EpochRecord {
        epoch,
        overall_loss: weighted / data.len() as f64,
        group_loss: (0..g).map(|k| ratio(loss_sum[k], count[k])).collect(),
        group_accuracy: (0..g).map(|k| ratio(correct[k] as f64, count[k])).collect(),
        group_counts: count,
        grid_distance,
    })
}

/// Index of the largest entry; the first one wins ties.
pub(crate) fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}
