//! Hessian-vector products by central differences of exact gradients.

use serde::{Deserialize, Serialize};

use super::grad::{ClassWeights, NetObjective};
use super::network::{FlatParams, Network};
use crate::error::{input_err, Result};
use crate::par::Exec;
use crate::tensor::Tensor;

/// How a network objective forms Hessian-vector products.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpMethod {
    /// Central differences of exact gradients ([`hvp_objective`]).
    #[default]
    FiniteDifference,
    /// Second-order forward/backward pass ([`super::hvp_exact`]).
    Exact,
}

/// A differentiable scalar function of a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn gradient(&self, theta: &[f64]) -> Vec<f64>;

    /// `H(θ)·v`; central differences unless overridden.
    fn hvp(&self, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        hvp_objective(self, theta, v)
    }
}

/// `H(θ)·v ≈ ‖v‖ (∇L(θ + εv̂) − ∇L(θ − εv̂)) / 2ε`, with `v̂ = v/‖v‖` and
/// `ε = 1e-4 (1 + ‖θ‖∞)`.
pub fn hvp_objective<O: Objective + ?Sized>(obj: &O, theta: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != obj.dim() || theta.len() != obj.dim() {
        return input_err(format!(
            "hvp needs vectors of length {}, got theta {} and v {}",
            obj.dim(),
            theta.len(),
            v.len()
        ));
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return input_err("hvp direction must be a finite non-zero vector");
    }
    let theta_inf = theta.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let eps = 1e-4 * (1.0 + theta_inf);
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + eps * d / norm).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t - eps * d / norm).collect();
    let gp = obj.gradient(&plus);
    let gm = obj.gradient(&minus);
    let scale = norm / (2.0 * eps);
    Ok(gp.iter().zip(&gm).map(|(a, b)| (a - b) * scale).collect())
}

pub fn hvp(
    net: &Network,
    batch: &Tensor,
    labels: &[usize],
    weights: &ClassWeights,
    v: &FlatParams,
) -> Result<FlatParams> {
    if v.layout != net.layout() {
        return input_err("direction layout does not match the network");
    }
    let obj = NetObjective::new(net, batch.clone(), labels.to_vec(), weights.clone(), Exec::default())?;
    let values = hvp_objective(&obj, &net.flatten().values, &v.values)?;
    Ok(FlatParams {
        values,
        layout: v.layout.clone(),
    })
}
