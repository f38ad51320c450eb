//! Softmax cross-entropy and its exact reverse-mode gradient.

use serde::{Deserialize, Serialize};

use super::network::{dense_forward, relu_in_place, Activation, FlatParams, Network, ParamLayout};
use super::hvp::{hvp_objective, HvpMethod, Objective};
use crate::error::{input_err, Error, Result};
use crate::par::{self, Exec};
use crate::tensor::Tensor;

/// Rows per gradient work unit. Fixed so that the reduction order (and hence
/// every bit of the result) does not depend on the thread count.
pub const GRAD_CHUNK: usize = 64;

/// Per-class loss weights `a_g`. `Uniform` is plain cross-entropy.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeights {
    #[default]
    Uniform,
    PerClass(Vec<f64>),
}

impl ClassWeights {
    pub fn weight(&self, class: usize) -> f64 {
        match self {
            ClassWeights::Uniform => 1.0,
            ClassWeights::PerClass(w) => w[class],
        }
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        if let ClassWeights::PerClass(w) = self {
            if w.len() != classes {
                return input_err(format!(
                    "{} class weights supplied for {classes} classes",
                    w.len()
                ));
            }
            if w.iter().any(|a| !a.is_finite() || *a < 0.0) {
                return input_err("class weights must be finite and non-negative");
            }
            if w.iter().all(|&a| a == 0.0) {
                return input_err("at least one class weight must be positive");
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax of one logit vector.
pub fn softmax_row(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Row-wise softmax of `[N × C]` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let data: Vec<f64> = logits.iter_rows().flat_map(softmax_row).collect();
    Tensor::from_parts_unchecked(logits.shape().to_vec(), data)
}

pub(crate) fn log_softmax_at(z: &[f64], y: usize) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z[y] - m - lse
}

fn check_batch(net: &Network, batch: &Tensor, labels: &[usize], w: &ClassWeights) -> Result<()> {
    if batch.cols() != net.input_dim() {
        return Err(Error::Dimension {
            layer: 0,
            expected: net.input_dim(),
            got: batch.cols(),
        });
    }
    if labels.len() != batch.rows() {
        return input_err(format!(
            "{} labels for {} samples",
            labels.len(),
            batch.rows()
        ));
    }
    let classes = net.output_dim();
    if let Some(bad) = labels.iter().find(|&&y| y >= classes) {
        return input_err(format!("label {bad} out of range for {classes} classes"));
    }
    w.validate(classes)
}

/// `-a_{y_i} log p(x_i)_{y_i}` for every sample.
pub fn per_sample_losses(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<Vec<f64>> {
    check_batch(net, batch, labels, weights)?;
    let logits = super::forward(net, batch)?;
    Ok(logits
        .iter_rows()
        .zip(labels)
        .map(|(z, &y)| -weights.weight(y) * log_softmax_at(z, y))
        .collect())
}

/// Mean weighted cross-entropy `-(1/M) Σ_i a_{y_i} log p(x_i)_{y_i}`.
pub fn cross_entropy_loss(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<f64> {
    let l = per_sample_losses(net, batch, labels, weights)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64)
}

pub fn gradient(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<FlatParams> {
    gradient_with(Exec::default(), net, batch, labels, weights)
}

pub fn gradient_with(
    exec: Exec,
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<FlatParams> {
    loss_and_gradient(exec, net, batch, labels, weights).map(|(_, g)| g)
}

/// Loss and gradient in one pass. Samples are processed in fixed chunks of
/// [`GRAD_CHUNK`] rows whose partial sums are added in chunk order.
pub fn loss_and_gradient(
    exec: Exec,
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
) -> Result<(f64, FlatParams)> {
    check_batch(net, batch, labels, weights)?;
    let n = batch.rows();
    let d = batch.cols();
    let k = net.param_count();
    let chunks = n.div_ceil(GRAD_CHUNK);
    let parts = par::map_range(exec, chunks, |c| {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(n);
        chunk_gradient(net, &batch.data()[lo * d..hi * d], &labels[lo..hi], weights)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; k];
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let inv = 1.0 / n as f64;
    for g in &mut grad {
        *g *= inv;
    }
    Ok((
        loss * inv,
        FlatParams {
            values: grad,
            layout: net.layout(),
        },
    ))
}

/// Summed (not averaged) loss and gradient over a contiguous block of rows.
fn chunk_gradient(
    net: &Network,
    x: &[f64],
    labels: &[usize],
    weights: &ClassWeights,
) -> (f64, Vec<f64>) {
    let n = labels.len();
    let layers = net.layers();
    // inputs[l] feeds layer l; pre[l] is layer l's pre-activation
    let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
    let mut cur = x.to_vec();
    for layer in layers {
        let z = dense_forward(layer, &cur, n);
        let mut a = z.clone();
        if layer.activation() == Activation::Relu {
            relu_in_place(&mut a);
        }
        inputs.push(std::mem::replace(&mut cur, a));
        pre.push(z);
    }

    let classes = net.output_dim();
    let mut loss = 0.0;
    let mut delta = vec![0.0; n * classes];
    for (i, (z, &y)) in cur.chunks_exact(classes).zip(labels).enumerate() {
        let a = weights.weight(y);
        let p = softmax_row(z);
        loss -= a * log_softmax_at(z, y);
        let di = &mut delta[i * classes..(i + 1) * classes];
        for (c, (dc, pc)) in di.iter_mut().zip(&p).enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            *dc = a * (pc - target);
        }
    }

    let layout = net.layout();
    let records = layout.records();
    let mut grad = vec![0.0; layout.param_count()];
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let (din, dout) = (layer.inputs(), layer.outputs());
        let w_rec = records[2 * l];
        let b_rec = records[2 * l + 1];
        let input = &inputs[l];
        {
            let gw = &mut grad[w_rec.offset..w_rec.offset + w_rec.len];
            for s in 0..n {
                let ds = &delta[s * dout..(s + 1) * dout];
                let xs = &input[s * din..(s + 1) * din];
                for (o, &dso) in ds.iter().enumerate() {
                    if dso == 0.0 {
                        continue;
                    }
                    for (g, &xi) in gw[o * din..(o + 1) * din].iter_mut().zip(xs) {
                        *g += dso * xi;
                    }
                }
            }
        }
        {
            let gb = &mut grad[b_rec.offset..b_rec.offset + b_rec.len];
            for ds in delta.chunks_exact(dout) {
                for (g, v) in gb.iter_mut().zip(ds) {
                    *g += v;
                }
            }
        }
        if l == 0 {
            break;
        }
        let w = layer.weights().data();
        let zprev = &pre[l - 1];
        let mut next = vec![0.0; n * din];
        for s in 0..n {
            let ds = &delta[s * dout..(s + 1) * dout];
            let out = &mut next[s * din..(s + 1) * din];
            for (o, &dso) in ds.iter().enumerate() {
                if dso == 0.0 {
                    continue;
                }
                for (v, &wo) in out.iter_mut().zip(&w[o * din..(o + 1) * din]) {
                    *v += dso * wo;
                }
            }
            // ReLU'(z) = 0 for z <= 0
            for (v, &z) in out.iter_mut().zip(&zprev[s * din..(s + 1) * din]) {
                if z <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        delta = next;
    }
    (loss, grad)
}

/// The (weighted) cross-entropy of a fixed batch viewed as a function of θ.
#[derive(Debug, Clone)]
pub struct NetObjective {
    layout: ParamLayout,
    batch: Tensor,
    labels: Vec<usize>,
    weights: ClassWeights,
    exec: Exec,
    hvp_method: HvpMethod,
}

impl NetObjective {
    pub fn new(
        net: &Network,
        batch: Tensor,
        labels: Vec<usize>,
        weights: ClassWeights,
        exec: Exec,
    ) -> Result<Self> {
        check_batch(net, &batch, &labels, &weights)?;
        Ok(Self {
            layout: net.layout(),
            batch,
            labels,
            weights,
            exec,
            hvp_method: HvpMethod::default(),
        })
    }

    pub fn with_hvp_method(mut self, method: HvpMethod) -> Self {
        self.hvp_method = method;
        self
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }
}

impl Objective for NetObjective {
    fn dim(&self) -> usize {
        self.layout.param_count()
    }

    fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let net = Network::from_values_unchecked(&self.layout, theta);
        loss_and_gradient(self.exec, &net, &self.batch, &self.labels, &self.weights)
            .expect("batch validated at construction")
            .1
            .values
    }

    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        match self.hvp_method {
            HvpMethod::FiniteDifference => hvp_objective(self, theta, v),
            HvpMethod::Exact => {
                if theta.len() != self.dim() {
                    return input_err("parameter vector does not match the objective");
                }
                let net = Network::from_values_unchecked(&self.layout, theta);
                super::hvp_exact(self.exec, &net, &self.batch, &self.labels, &self.weights, v)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseLayer;
    use crate::rng::Rng;

    fn random_batch(rng: &mut Rng, n: usize, d: usize, classes: usize) -> (Tensor, Vec<usize>) {
        let x: Vec<f64> = (0..n * d).map(|_| rng.normal()).collect();
        let y = (0..n).map(|_| rng.below(classes)).collect();
        (Tensor::new(vec![n, d], x).unwrap(), y)
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_row(&[0.0, 0.0, 0.0]);
        for p in &s {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_row(&[1000.0, 0.0]);
        assert_eq!(s[0], 1.0);
        assert!(s[1] >= 0.0 && s[1] < 1e-300);
        // direct evaluation: e^k / (e + e^2 + e^3)
        let denom = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let s = softmax_row(&[1.0, 2.0, 3.0]);
        for (k, p) in s.iter().enumerate() {
            let expect = ((k + 1) as f64).exp() / denom;
            assert!((p - expect).abs() < 1e-15);
        }
    }

    fn linear_net(w: Vec<f64>, classes: usize, d: usize) -> Network {
        Network::new(vec![DenseLayer::new(
            Tensor::new(vec![classes, d], w).unwrap(),
            Tensor::zeros(vec![classes]),
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    }

    #[test]
    fn confident_prediction_has_tiny_loss() {
        let net = linear_net(vec![50.0, 0.0], 2, 1);
        let x = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let l = cross_entropy_loss(&net, &x, &[0], &ClassWeights::Uniform).unwrap();
        assert!(l < 1e-9);
    }

    #[test]
    fn uniform_logits_give_log_g() {
        let net = linear_net(vec![0.0; 5], 5, 1);
        let x = Tensor::from_rows(&[vec![1.0], vec![-3.0]]).unwrap();
        let l = cross_entropy_loss(&net, &x, &[0, 4], &ClassWeights::Uniform).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn weighted_loss_matches_per_sample_summation() {
        // identity net over 3 classes so logits equal the inputs
        let net = linear_net(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], 3, 3);
        let rows = [vec![2.0, 0.5, -1.0], vec![0.0, 0.3, 0.1], vec![-1.0, 1.0, 3.0]];
        let labels = [0usize, 2, 1];
        let a = [0.1, 0.1, 0.6];
        let x = Tensor::from_rows(&rows).unwrap();
        let got = cross_entropy_loss(&net, &x, &labels, &ClassWeights::PerClass(a.to_vec())).unwrap();
        let mut expect = 0.0;
        for (z, &y) in rows.iter().zip(&labels) {
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            expect += -a[y] * (z[y].exp() / denom).ln();
        }
        expect /= 3.0;
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let net = linear_net(vec![0.0; 2], 2, 1);
        let x = Tensor::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(
            cross_entropy_loss(&net, &x, &[2], &ClassWeights::Uniform),
            Err(Error::Input(_))
        ));
        assert!(cross_entropy_loss(&net, &x, &[0], &ClassWeights::PerClass(vec![1.0])).is_err());
    }

    #[test]
    fn single_linear_neuron_closed_form() {
        // logits z = W x, gradient wrt W is (p - y) xᵀ
        let w = vec![0.3, -0.2, 0.5, 0.1];
        let x = [1.5, -0.7];
        let net = linear_net(w.clone(), 2, 2);
        let g = gradient(&net, &Tensor::from_rows(&[x.to_vec()]).unwrap(), &[1], &ClassWeights::Uniform)
            .unwrap();
        let z = [w[0] * x[0] + w[1] * x[1], w[2] * x[0] + w[3] * x[1]];
        let p = softmax_row(&z);
        let r = [p[0] - 0.0, p[1] - 1.0];
        let expect = [r[0] * x[0], r[0] * x[1], r[1] * x[0], r[1] * x[1], r[0], r[1]];
        for (a, b) in g.values.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let net = Network::init(&[4, 6, 5, 3], &mut rng).unwrap();
        // non-zero biases so every parameter is exercised
        let mut flat = net.flatten();
        for v in flat.values.iter_mut() {
            *v += 0.05 * rng.normal();
        }
        let net = Network::from_flat(&flat).unwrap();
        let (x, y) = random_batch(&mut rng, 150, 4, 3);
        let w = ClassWeights::PerClass(vec![0.2, 1.0, 0.7]);
        let g = gradient(&net, &x, &y, &w).unwrap();
        let h = 1e-5;
        for k in 0..flat.len() {
            let mut p = flat.clone();
            p.values[k] += h;
            let lp = cross_entropy_loss(&Network::from_flat(&p).unwrap(), &x, &y, &w).unwrap();
            p.values[k] -= 2.0 * h;
            let lm = cross_entropy_loss(&Network::from_flat(&p).unwrap(), &x, &y, &w).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let rel = (g.values[k] - fd).abs() / fd.abs().max(g.values[k].abs()).max(1e-6);
            assert!(rel < 1e-4, "coord {k}: {} vs {fd}", g.values[k]);
        }
    }

    #[test]
    fn sequential_and_parallel_bit_identical() {
        let mut rng = Rng::new(9);
        let net = Network::init(&[6, 16, 4], &mut rng).unwrap();
        let (x, y) = random_batch(&mut rng, 1000, 6, 4);
        let a = gradient_with(Exec::Sequential, &net, &x, &y, &ClassWeights::Uniform).unwrap();
        let b = gradient_with(Exec::Parallel, &net, &x, &y, &ClassWeights::Uniform).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_is_mean_of_per_sample_losses() {
        let mut rng = Rng::new(2);
        let net = Network::init(&[3, 5, 4], &mut rng).unwrap();
        let (x, y) = random_batch(&mut rng, 37, 3, 4);
        let per = per_sample_losses(&net, &x, &y, &ClassWeights::Uniform).unwrap();
        let mean = per.iter().sum::<f64>() / 37.0;
        let (l, _) = loss_and_gradient(Exec::Sequential, &net, &x, &y, &ClassWeights::Uniform).unwrap();
        assert!((l - mean).abs() < 1e-12);
    }
}
