//! Per-group optimization-state diagnostics: full-group gradient norms and
//! the dominant Hessian eigenvalue by power iteration on Hessian-vector
//! products. Parameters are never modified.

use serde::{Deserialize, Serialize};

use crate::audit::{fmt_f64, write_csv};
use crate::dataset::GroupedDataset;
use crate::error::{input_err, Error, Result};
use crate::nn::{self, ClassWeights, HvpMethod, NetObjective, Network, Objective};
use crate::par::{self, Exec};
use crate::quant::QuantizedModel;
use crate::rng::{derive_seed, Rng};

pub const DIAGNOSTICS_CSV_HEADER: [&str; 4] = ["precision", "group", "metric", "value"];

/// `‖Hv‖` below this counts as a zero product.
const ZERO_HVP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Hessian-vector products used on network objectives.
    #[serde(default = "exact")]
    pub hvp: HvpMethod,
}

fn exact() -> HvpMethod {
    HvpMethod::Exact
}

impl Default for PowerIterationConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-4,
            seed: 0,
            hvp: HvpMethod::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerIterationResult {
    /// Rayleigh quotient `vᵀHv` at the final iterate.
    pub lambda: f64,
    /// `‖Hv − λv‖` at the final iterate.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `Hv` vanished three times in a row; `lambda` is reported as 0.
    pub degenerate: bool,
    /// Final unit iterate.
    pub vector: Vec<f64>,
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Power iteration from a unit start vector derived from `cfg.seed` and
/// `stream`. Stops when `‖Hv − λv‖ ≤ tol·|λ|` or after `max_iters` products.
pub fn power_iteration<O: Objective + ?Sized>(
    obj: &O,
    theta: &[f64],
    cfg: &PowerIterationConfig,
    stream: &str,
) -> Result<PowerIterationResult> {
    if cfg.max_iters == 0 {
        return input_err("max_iters must be >= 1");
    }
    if !(cfg.tol >= 0.0 && cfg.tol.is_finite()) {
        return input_err("tol must be finite and non-negative");
    }
    let n = obj.dim();
    if n == 0 || theta.len() != n {
        return input_err(format!("expected {n} parameters, got {}", theta.len()));
    }
    let mut rng = Rng::new(derive_seed(cfg.seed, stream));
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut zero_run = 0;
    let mut last = (0.0, 0.0);
    for it in 1..=cfg.max_iters {
        let hv = obj.hvp(theta, &v)?;
        let nh = norm(&hv);
        if !nh.is_finite() {
            return Err(Error::Input("Hessian-vector product is not finite".into()));
        }
        if nh <= ZERO_HVP {
            zero_run += 1;
            if zero_run >= 3 {
                return Ok(PowerIterationResult {
                    lambda: 0.0,
                    residual: nh,
                    iterations: it,
                    converged: false,
                    degenerate: true,
                    vector: v,
                });
            }
            last = (0.0, nh);
            continue;
        }
        zero_run = 0;
        let lambda: f64 = v.iter().zip(&hv).map(|(a, b)| a * b).sum();
        let residual = norm(&hv.iter().zip(&v).map(|(h, x)| h - lambda * x).collect::<Vec<_>>());
        if residual <= cfg.tol * lambda.abs() || it == cfg.max_iters {
            return Ok(PowerIterationResult {
                lambda,
                residual,
                iterations: it,
                converged: residual <= cfg.tol * lambda.abs(),
                degenerate: false,
                vector: v,
            });
        }
        last = (lambda, residual);
        v = hv.iter().map(|x| x / nh).collect();
    }
    // only reachable when every product was zero but fewer than three in a row
    Ok(PowerIterationResult {
        lambda: last.0,
        residual: last.1,
        iterations: cfg.max_iters,
        converged: false,
        degenerate: false,
        vector: v,
    })
}

fn group_objective(net: &Network, data: &GroupedDataset, g: usize, weights: &ClassWeights, exec: Exec) -> Result<Option<NetObjective>> {
    if g >= data.num_groups() {
        return input_err(format!("group {g} out of range"));
    }
    let Some(view) = data.group_view(g) else {
        return Ok(None);
    };
    let (x, y) = (view.features().clone(), view.labels().to_vec());
    NetObjective::new(net, x, y, weights.clone(), exec).map(Some)
}

/// ℓ2 norm of the full-group gradient of the mean cross-entropy; `None` for
/// empty groups.
pub fn group_gradient_norm(net: &Network, data: &GroupedDataset) -> Result<Vec<Option<f64>>> {
    group_gradient_norm_with(net, data, &ClassWeights::Uniform, Exec::default())
}

pub fn group_gradient_norm_with(
    net: &Network,
    data: &GroupedDataset,
    weights: &ClassWeights,
    exec: Exec,
) -> Result<Vec<Option<f64>>> {
    check_model(net, data)?;
    (0..data.num_groups())
        .map(|g| {
            let Some(view) = data.group_view(g) else {
                return Ok(None);
            };
            let grad = nn::gradient_with(exec, net, view.features(), view.labels(), weights)?;
            Ok(Some(grad.norm()))
        })
        .collect()
}

/// Dominant Hessian eigenvalue of the group-`g` loss. The start vector
/// depends only on `cfg.seed` and `g`.
pub fn lambda_max(net: &Network, data: &GroupedDataset, g: usize, cfg: &PowerIterationConfig) -> Result<PowerIterationResult> {
    lambda_max_with(net, data, g, cfg, Exec::default())
}

pub fn lambda_max_with(
    net: &Network,
    data: &GroupedDataset,
    g: usize,
    cfg: &PowerIterationConfig,
    exec: Exec,
) -> Result<PowerIterationResult> {
    check_model(net, data)?;
    let Some(obj) = group_objective(net, data, g, &ClassWeights::Uniform, exec)? else {
        return input_err(format!("group {g} has no samples"));
    };
    let obj = obj.with_hvp_method(cfg.hvp);
    power_iteration(&obj, &net.flatten().values, cfg, &format!("lambda-max/{g}"))
}

fn check_model(net: &Network, data: &GroupedDataset) -> Result<()> {
    if net.input_dim() != data.dim() {
        return Err(Error::Dimension {
            layer: 0,
            expected: net.input_dim(),
            got: data.dim(),
        });
    }
    if net.output_dim() != data.num_classes() {
        return input_err("network outputs do not match the dataset's classes");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostics {
    pub group: String,
    pub count: usize,
    /// Share of the evaluated samples that belong to this group.
    pub size_fraction: f64,
    pub gradient_norm: Option<f64>,
    pub lambda_max: Option<f64>,
    pub residual: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: bool,
    pub degenerate: bool,
    /// Set when this cell failed; the other cells are still reported.
    pub error: Option<String>,
}

impl GroupDiagnostics {
    pub fn log_lambda_max(&self) -> Option<f64> {
        self.lambda_max.filter(|l| *l > 0.0).map(f64::ln)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub precision: String,
    pub seed: Option<u64>,
    pub power_iteration: PowerIterationConfig,
    pub groups: Vec<GroupDiagnostics>,
}

impl DiagnosticsReport {
    pub fn failed_cells(&self) -> usize {
        self.groups.iter().filter(|g| g.error.is_some()).count()
    }

    pub fn group(&self, name: &str) -> Option<&GroupDiagnostics> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Long-format rows: gradient_norm, lambda_max, log_lambda_max, residual
    /// and iterations per group; absent values are skipped.
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for g in &self.groups {
            let mut push = |metric: &str, v: Option<String>| {
                if let Some(v) = v {
                    rows.push(vec![self.precision.clone(), g.group.clone(), metric.to_string(), v]);
                }
            };
            push("gradient_norm", g.gradient_norm.map(fmt_f64));
            push("lambda_max", g.lambda_max.map(fmt_f64));
            push("log_lambda_max", g.log_lambda_max().map(fmt_f64));
            push("residual", g.residual.map(fmt_f64));
            push("iterations", g.iterations.map(|i| i.to_string()));
        }
        rows
    }

    pub fn to_csv(&self) -> Result<String> {
        write_csv(&DIAGNOSTICS_CSV_HEADER, self.csv_rows())
    }
}

/// Gradient norm and λ_max for one (model, group) cell.
fn diagnose_cell(net: &Network, data: &GroupedDataset, g: usize, cfg: &PowerIterationConfig) -> GroupDiagnostics {
    let counts = data.group_counts();
    let mut cell = GroupDiagnostics {
        group: data.group_names()[g].clone(),
        count: counts[g],
        size_fraction: counts[g] as f64 / data.len() as f64,
        gradient_norm: None,
        lambda_max: None,
        residual: None,
        iterations: None,
        converged: false,
        degenerate: false,
        error: None,
    };
    if counts[g] == 0 {
        return cell;
    }
    let run = || -> Result<(f64, PowerIterationResult)> {
        let view = data.group_view(g).expect("non-empty group");
        let grad = nn::gradient_with(Exec::Sequential, net, view.features(), view.labels(), &ClassWeights::Uniform)?;
        let pi = lambda_max_with(net, data, g, cfg, Exec::Sequential)?;
        Ok((grad.norm(), pi))
    };
    match run() {
        Ok((gn, pi)) => {
            cell.gradient_norm = Some(gn);
            cell.lambda_max = Some(pi.lambda);
            cell.residual = Some(pi.residual);
            cell.iterations = Some(pi.iterations);
            cell.converged = pi.converged;
            cell.degenerate = pi.degenerate;
        }
        Err(e) => cell.error = Some(e.to_string()),
    }
    cell
}

/// Diagnostics of a single network over every group.
pub fn diagnose(
    net: &Network,
    data: &GroupedDataset,
    precision: &str,
    seed: Option<u64>,
    cfg: &PowerIterationConfig,
    exec: Exec,
) -> Result<DiagnosticsReport> {
    check_model(net, data)?;
    let groups = par::map_range(exec, data.num_groups(), |g| diagnose_cell(net, data, g, cfg));
    Ok(DiagnosticsReport {
        precision: precision.to_string(),
        seed,
        power_iteration: *cfg,
        groups,
    })
}

/// Diagnostics for every (model, group) cell, one report per model, in input
/// order. Cells run concurrently under [`Exec::Parallel`]; each power
/// iteration is sequential.
pub fn diagnostics_sweep(
    orig: &Network,
    models: &[QuantizedModel],
    data: &GroupedDataset,
    seed: Option<u64>,
    cfg: &PowerIterationConfig,
    exec: Exec,
) -> Result<Vec<DiagnosticsReport>> {
    check_model(orig, data)?;
    for qm in models {
        if qm.layout != orig.layout() {
            return input_err(format!("{} model does not share the original architecture", qm.precision.label()));
        }
    }
    let nets: Vec<Network> = models.iter().map(QuantizedModel::to_network).collect();
    let g = data.num_groups();
    let cells = par::map_range(exec, nets.len() * g, |c| diagnose_cell(&nets[c / g], data, c % g, cfg));
    let mut cells = cells.into_iter();
    Ok(models
        .iter()
        .map(|qm| DiagnosticsReport {
            precision: qm.precision.label(),
            seed,
            power_iteration: *cfg,
            groups: cells.by_ref().take(g).collect(),
        })
        .collect())
}
