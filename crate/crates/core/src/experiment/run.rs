use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, RunSeeds};
use crate::audit::{audit, pareto_select, AuditMeta, AuditReport, Selection};
use crate::dataset::{resample, GroupedDataset, SamplerConfig};
use crate::diagnostics::{diagnostics_sweep, DiagnosticsReport, PowerIterationConfig};
use crate::error::Result;
use crate::nn::{ClassWeights, Network};
use crate::par::{self, Exec};
use crate::quant::{quantize, weight_change_stats, PrecisionSpec, QuantizedModel, WeightChangeStats};
use crate::rng::Rng;
use crate::trainer::{fair_qat_pipeline, train_erm, train_qat, TrainConfig, TrainTrace};

/// Something that went wrong in one cell of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub seed: u64,
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionResult {
    pub precision: PrecisionSpec,
    pub model: QuantizedModel,
    pub weight_stats: WeightChangeStats,
    pub audit: AuditReport,
    pub diagnostics: DiagnosticsReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSweep {
    pub seed: u64,
    pub network: Network,
    pub trace: TrainTrace,
    pub cells: Vec<PrecisionResult>,
}

impl SeedSweep {
    pub fn cell(&self, p: PrecisionSpec) -> Option<&PrecisionResult> {
        self.cells.iter().find(|c| c.precision == p)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepOutcome {
    pub seeds: Vec<SeedSweep>,
    pub failures: Vec<Failure>,
}

/// Trains the base model for one run seed: θ_o by default, or a fair base
/// model when a sampler and/or loss weights are given.
pub fn train_base(
    cfg: &ExperimentConfig,
    train: &GroupedDataset,
    seed: u64,
    sampler: Option<&SamplerConfig>,
    weights: Option<&ClassWeights>,
) -> Result<(Network, TrainTrace)> {
    let seeds = RunSeeds::new(seed);
    let widths = cfg.widths(train.dim(), train.num_classes());
    let init = Network::init(&widths, &mut Rng::new(seeds.init))?;
    let data = match sampler {
        Some(s) => resample(
            train,
            &SamplerConfig {
                seed: seeds.sampler,
                ..s.clone()
            },
        )?,
        None => train.clone(),
    };
    let tc = TrainConfig {
        seed: seeds.train,
        class_weights: weights.cloned().unwrap_or_else(|| cfg.train.class_weights.clone()),
        ..cfg.train.clone()
    };
    train_erm(&init, &data, &tc)
}

/// PTQ at each precision, audited against `orig` and diagnosed on `test`.
pub fn evaluate_precisions(
    cfg: &ExperimentConfig,
    orig: &Network,
    test: &GroupedDataset,
    seed: u64,
    exec: Exec,
) -> Result<Vec<PrecisionResult>> {
    let models = cfg
        .precisions
        .iter()
        .map(|&p| quantize(orig, p))
        .collect::<Result<Vec<_>>>()?;
    let pi = PowerIterationConfig {
        seed: RunSeeds::new(seed).power,
        ..cfg.power_iteration
    };
    let diags = diagnostics_sweep(orig, &models, test, Some(seed), &pi, exec)?;
    let flat = orig.flatten();
    models
        .into_iter()
        .zip(diags)
        .zip(&cfg.precisions)
        .map(|((model, diagnostics), &precision)| {
            let label = precision.to_string();
            let meta = AuditMeta {
                id: format!("seed{seed}/{label}"),
                precision: label,
                seed: Some(seed),
                dataset: cfg.data.id(),
                dtdb_mode: cfg.dtdb_mode,
            };
            let net = model.to_network();
            Ok(PrecisionResult {
                precision,
                weight_stats: weight_change_stats(&flat, &model)?,
                audit: audit(&net, Some(orig), test, &meta)?,
                diagnostics,
                model,
            })
        })
        .collect()
}

/// Train θ_o for one seed, then quantize, audit and diagnose at every precision.
pub fn sweep_seed(cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<SeedSweep> {
    let (train, test) = cfg.data.load(RunSeeds::new(seed).data)?;
    let (network, trace) = train_base(cfg, &train, seed, None, None)?;
    let cells = evaluate_precisions(cfg, &network, &test, seed, exec)?;
    Ok(SeedSweep {
        seed,
        network,
        trace,
        cells,
    })
}

/// [`sweep_seed`] for every configured seed. Seeds run concurrently under
/// [`Exec::Parallel`]; a failing seed is recorded and the rest continue.
pub fn sweep(cfg: &ExperimentConfig, exec: Exec) -> Result<SweepOutcome> {
    cfg.validate()?;
    let runs = par::map(exec, &cfg.seeds, |&s| (s, sweep_seed(cfg, s, exec)));
    let mut out = SweepOutcome::default();
    for (seed, r) in runs {
        match r {
            Ok(s) => {
                for c in &s.cells {
                    for g in c.diagnostics.groups.iter().filter(|g| g.error.is_some()) {
                        out.failures.push(Failure {
                            seed,
                            stage: format!("diagnostics/{}/{}", c.precision, g.group),
                            message: g.error.clone().unwrap_or_default(),
                        });
                    }
                }
                out.seeds.push(s);
            }
            Err(e) => out.failures.push(Failure {
                seed,
                stage: "sweep".into(),
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// The four arms of the mitigation comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// PTQ of the ERM model at the target precision.
    Ptq,
    /// PTQ of a model trained with resampling and a weighted loss.
    UoWcrPtq,
    /// Mixed-precision QAT fine-tuning of the ERM model.
    Mpqat,
    /// Resampling + weighted loss + mixed-precision QAT.
    FairQat,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Ptq, Arm::UoWcrPtq, Arm::Mpqat, Arm::FairQat];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Ptq => "ptq",
            Arm::UoWcrPtq => "uo_wcr_ptq",
            Arm::Mpqat => "mpqat",
            Arm::FairQat => "fair_qat",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmResult {
    pub arm: Arm,
    pub model: QuantizedModel,
    pub audit: AuditReport,
    /// Trace of the last training stage of the arm.
    pub trace: TrainTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedMitigation {
    pub seed: u64,
    pub arms: Vec<ArmResult>,
    pub selection: Selection,
}

impl SeedMitigation {
    pub fn arm(&self, arm: Arm) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm == arm)
    }

    pub fn on_frontier(&self, arm: Arm) -> bool {
        self.arms
            .iter()
            .position(|a| a.arm == arm)
            .is_some_and(|i| self.selection.frontier.contains(&i))
    }

    pub fn selected(&self) -> Arm {
        self.arms[self.selection.pick].arm
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MitigationOutcome {
    pub seeds: Vec<SeedMitigation>,
    pub failures: Vec<Failure>,
}

/// Runs the four arms for one seed at the configured target precision. The
/// ERM and fair base models are trained concurrently under [`Exec::Parallel`],
/// then the two QAT arms.
pub fn mitigate_seed(cfg: &ExperimentConfig, seed: u64, exec: Exec) -> Result<SeedMitigation> {
    let seeds = RunSeeds::new(seed);
    let m = &cfg.mitigation;
    let (train, test) = cfg.data.load(seeds.data)?;
    let fair_sampler = SamplerConfig {
        seed: seeds.sampler,
        ..m.sampler.clone()
    };
    let bases = par::map_range(exec, 2, |k| {
        if k == 0 {
            train_base(cfg, &train, seed, None, None)
        } else {
            train_base(cfg, &train, seed, Some(&m.sampler), Some(&m.class_weights))
        }
    });
    let mut bases = bases.into_iter();
    let (orig, orig_trace) = bases.next().expect("two bases")?;
    let (fair, fair_trace) = bases.next().expect("two bases")?;
    let layers = orig.num_layers();

    let qat_arms = par::map_range(exec, 2, |k| {
        if k == 0 {
            let q = m.qat_config(layers, ClassWeights::Uniform, seeds.qat);
            train_qat(&orig, &train, &q)
        } else {
            let q = m.qat_config(layers, m.class_weights.clone(), seeds.qat);
            fair_qat_pipeline(&fair, &train, &q, &fair_sampler)
        }
    });
    let mut qat_arms = qat_arms.into_iter();
    let (mpqat, mpqat_trace) = qat_arms.next().expect("two arms")?;
    let (fair_qat, fair_qat_trace) = qat_arms.next().expect("two arms")?;

    let runs = [
        (Arm::Ptq, quantize(&orig, m.precision)?, orig_trace),
        (Arm::UoWcrPtq, quantize(&fair, m.precision)?, fair_trace),
        (Arm::Mpqat, mpqat, mpqat_trace),
        (Arm::FairQat, fair_qat, fair_qat_trace),
    ];
    let mut arms = Vec::with_capacity(4);
    for (arm, model, trace) in runs {
        let meta = AuditMeta {
            id: format!("seed{seed}/{}", arm.name()),
            precision: model.precision.label(),
            seed: Some(seed),
            dataset: cfg.data.id(),
            dtdb_mode: cfg.dtdb_mode,
        };
        let audit = audit(&model.to_network(), Some(&orig), &test, &meta)?;
        arms.push(ArmResult {
            arm,
            model,
            audit,
            trace,
        });
    }
    let pts: Vec<(f64, Option<f64>)> = arms.iter().map(|a| (a.audit.overall_accuracy, a.audit.fvo)).collect();
    let selection = pareto_select(&pts).expect("four arms");
    Ok(SeedMitigation { seed, arms, selection })
}

pub fn mitigate(cfg: &ExperimentConfig, exec: Exec) -> Result<MitigationOutcome> {
    cfg.validate()?;
    let runs = par::map(exec, &cfg.seeds, |&s| (s, mitigate_seed(cfg, s, exec)));
    let mut out = MitigationOutcome::default();
    for (seed, r) in runs {
        match r {
            Ok(s) => out.seeds.push(s),
            Err(e) => out.failures.push(Failure {
                seed,
                stage: "mitigate".into(),
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}
