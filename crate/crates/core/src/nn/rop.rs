//! Exact Hessian-vector products by a forward R-pass followed by a
//! second-order backward pass. ReLU is treated as piecewise linear, so the
//! result is the Hessian wherever no pre-activation sits exactly at zero.

use super::grad::{softmax_row, ClassWeights, GRAD_CHUNK};
use super::network::{dense_forward, relu_in_place, Activation, DenseLayer, Network};
use crate::error::{input_err, Result};
use crate::par::{self, Exec};
use crate::tensor::Tensor;

/// `H·v` of the mean weighted cross-entropy over `batch`, with `v` laid out
/// like [`Network::flatten`].
pub fn hvp_exact(
    exec: Exec,
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
    v: &[f64],
) -> Result<Vec<f64>> {
    if v.len() != net.param_count() {
        return input_err(format!("direction has {} entries, network has {}", v.len(), net.param_count()));
    }
    if batch.cols() != net.input_dim() || labels.len() != batch.rows() {
        return input_err("batch does not match the network or the labels");
    }
    if labels.iter().any(|&y| y >= net.output_dim()) {
        return input_err("label out of range");
    }
    weights.validate(net.output_dim())?;
    let n = batch.rows();
    let d = batch.cols();
    let dir = Network::from_values_unchecked(&net.layout(), v);
    let parts = par::map_range(exec, n.div_ceil(GRAD_CHUNK), |c| {
        let lo = c * GRAD_CHUNK;
        let hi = (lo + GRAD_CHUNK).min(n);
        chunk_hvp(net, &dir, &batch.data()[lo * d..hi * d], &labels[lo..hi], weights)
    });
    let mut out = vec![0.0; v.len()];
    for p in parts {
        for (a, b) in out.iter_mut().zip(&p) {
            *a += b;
        }
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|x| *x *= inv);
    Ok(out)
}

/// `Vᵀ·x` for a layer-shaped `[out × in]` matrix applied to `[n × out]` rows.
fn back_matvec(layer_w: &[f64], din: usize, dout: usize, delta: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * din];
    for s in 0..n {
        let ds = &delta[s * dout..(s + 1) * dout];
        let o_row = &mut out[s * din..(s + 1) * din];
        for (o, &dso) in ds.iter().enumerate() {
            if dso == 0.0 {
                continue;
            }
            for (a, &w) in o_row.iter_mut().zip(&layer_w[o * din..(o + 1) * din]) {
                *a += dso * w;
            }
        }
    }
    out
}

/// `W·x` without bias.
fn matvec(layer: &DenseLayer, x: &[f64], n: usize) -> Vec<f64> {
    let (din, dout) = (layer.inputs(), layer.outputs());
    let w = layer.weights().data();
    let mut out = vec![0.0; n * dout];
    for (xs, zs) in x.chunks_exact(din).zip(out.chunks_exact_mut(dout)) {
        for (o, z) in zs.iter_mut().enumerate() {
            *z = w[o * din..(o + 1) * din].iter().zip(xs).map(|(a, b)| a * b).sum();
        }
    }
    out
}

fn outer_acc(g: &mut [f64], left: &[f64], right: &[f64], n: usize, dout: usize, din: usize) {
    for s in 0..n {
        let l = &left[s * dout..(s + 1) * dout];
        let r = &right[s * din..(s + 1) * din];
        for (o, &lo) in l.iter().enumerate() {
            if lo == 0.0 {
                continue;
            }
            for (gi, &ri) in g[o * din..(o + 1) * din].iter_mut().zip(r) {
                *gi += lo * ri;
            }
        }
    }
}

fn chunk_hvp(net: &Network, dir: &Network, x: &[f64], labels: &[usize], weights: &ClassWeights) -> Vec<f64> {
    let n = labels.len();
    let layers = net.layers();
    let mut inputs = Vec::with_capacity(layers.len());
    let mut r_inputs = Vec::with_capacity(layers.len());
    let mut pre = Vec::with_capacity(layers.len());
    let mut cur = x.to_vec();
    let mut r_cur = vec![0.0; x.len()];
    for (layer, vl) in layers.iter().zip(dir.layers()) {
        let z = dense_forward(layer, &cur, n);
        // R(z) = V h + W R(h) + V_b
        let mut rz = dense_forward(vl, &cur, n);
        for (a, b) in rz.iter_mut().zip(matvec(layer, &r_cur, n)) {
            *a += b;
        }
        let mut h = z.clone();
        if layer.activation() == Activation::Relu {
            relu_in_place(&mut h);
            for (r, &zz) in rz.iter_mut().zip(&z) {
                if zz <= 0.0 {
                    *r = 0.0;
                }
            }
        }
        inputs.push(std::mem::replace(&mut cur, h));
        r_inputs.push(std::mem::replace(&mut r_cur, rz));
        pre.push(z);
    }

    let classes = net.output_dim();
    let mut delta = vec![0.0; n * classes];
    let mut r_delta = vec![0.0; n * classes];
    for (i, &y) in labels.iter().enumerate() {
        let a = weights.weight(y);
        let z = &cur[i * classes..(i + 1) * classes];
        let rz = &r_cur[i * classes..(i + 1) * classes];
        let p = softmax_row(z);
        let p_rz: f64 = p.iter().zip(rz).map(|(a, b)| a * b).sum();
        for c in 0..classes {
            let t = if c == y { 1.0 } else { 0.0 };
            delta[i * classes + c] = a * (p[c] - t);
            r_delta[i * classes + c] = a * p[c] * (rz[c] - p_rz);
        }
    }

    let layout = net.layout();
    let records = layout.records();
    let mut out = vec![0.0; layout.param_count()];
    for l in (0..layers.len()).rev() {
        let layer = &layers[l];
        let (din, dout) = (layer.inputs(), layer.outputs());
        let w_rec = records[2 * l];
        let b_rec = records[2 * l + 1];
        {
            let hw = &mut out[w_rec.offset..w_rec.offset + w_rec.len];
            outer_acc(hw, &r_delta, &inputs[l], n, dout, din);
            outer_acc(hw, &delta, &r_inputs[l], n, dout, din);
        }
        {
            let hb = &mut out[b_rec.offset..b_rec.offset + b_rec.len];
            for rd in r_delta.chunks_exact(dout) {
                for (h, v) in hb.iter_mut().zip(rd) {
                    *h += v;
                }
            }
        }
        if l == 0 {
            break;
        }
        let mut next = back_matvec(layer.weights().data(), din, dout, &delta, n);
        let mut r_next = back_matvec(dir.layers()[l].weights().data(), din, dout, &delta, n);
        for (a, b) in r_next.iter_mut().zip(back_matvec(layer.weights().data(), din, dout, &r_delta, n)) {
            *a += b;
        }
        for ((d, rd), &z) in next.iter_mut().zip(r_next.iter_mut()).zip(&pre[l - 1]) {
            if z <= 0.0 {
                *d = 0.0;
                *rd = 0.0;
            }
        }
        delta = next;
        r_delta = r_next;
    }
    out
}
