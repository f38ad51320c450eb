use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::audit::DtdbMode;
use crate::dataset::{
    generate_synthetic, load_csv, CsvSchema, GroupedDataset, SamplerConfig, SamplerMode, Split, SyntheticSpec,
};
use crate::diagnostics::PowerIterationConfig;
use crate::error::{input_err, Result};
use crate::nn::ClassWeights;
use crate::quant::{MixedPrecisionMap, PrecisionSpec};
use crate::rng::derive_seed;
use crate::trainer::{QatConfig, TrainConfig, BENCHMARK_WCR_WEIGHTS};

pub const DEFAULT_PRECISIONS: [PrecisionSpec; 5] = [
    PrecisionSpec::Float32,
    PrecisionSpec::Float16,
    PrecisionSpec::Int(8),
    PrecisionSpec::Int(4),
    PrecisionSpec::Int(2),
];

/// Where the train and test splits come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// [`SyntheticSpec::benchmark`].
    Benchmark,
    /// [`SyntheticSpec::balanced_easy`].
    BalancedEasy,
    /// A custom synthetic spec; its `seed` is replaced by the run seed.
    Synthetic { spec: SyntheticSpec },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
}

impl DataSource {
    pub fn id(&self) -> String {
        match self {
            Self::Benchmark => "benchmark".into(),
            Self::BalancedEasy => "balanced_easy".into(),
            Self::Synthetic { .. } => "synthetic".into(),
            Self::Csv { train, .. } => format!("csv:{}", train.display()),
        }
    }

    /// Train and test splits for a run seed.
    pub fn load(&self, data_seed: u64) -> Result<(GroupedDataset, GroupedDataset)> {
        match self {
            Self::Benchmark => generate_synthetic(&SyntheticSpec::benchmark(data_seed)),
            Self::BalancedEasy => generate_synthetic(&SyntheticSpec::balanced_easy(data_seed)),
            Self::Synthetic { spec } => generate_synthetic(&SyntheticSpec {
                seed: data_seed,
                ..spec.clone()
            }),
            Self::Csv { train, test, schema } => {
                let tr = load_csv(train, &schema.clone().with_split(Split::Train))?;
                let te = load_csv(test, &schema.clone().with_split(Split::Test))?;
                if tr.dim() != te.dim() || tr.num_groups() != te.num_groups() || tr.num_classes() != te.num_classes() {
                    return input_err("train and test CSV files disagree on features, groups or classes");
                }
                Ok((tr, te))
            }
        }
    }
}

/// Settings of the four-arm mitigation comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MitigationConfig {
    pub precision: PrecisionSpec,
    /// Precision of the first and last layers under mixed-precision QAT.
    pub edge_precision: PrecisionSpec,
    /// Loss weights of the fair arms.
    pub class_weights: ClassWeights,
    /// Resampling of the fair arms (its seed is replaced by the run seed).
    pub sampler: SamplerConfig,
    /// Optimizer settings for QAT fine-tuning (the seed is replaced by the run seed).
    pub qat: TrainConfig,
    pub dampening_coefficient: f64,
    pub dampening_start_fraction: f64,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self {
            precision: PrecisionSpec::Int(4),
            edge_precision: PrecisionSpec::Int(8),
            class_weights: ClassWeights::PerClass(BENCHMARK_WCR_WEIGHTS.to_vec()),
            sampler: SamplerConfig::new(SamplerMode::UnderOver, 0),
            qat: TrainConfig {
                epochs: 40,
                batch_size: 64,
                learning_rate: 0.01,
                momentum: 0.9,
                class_weights: ClassWeights::Uniform,
                seed: 0,
                shuffle: true,
            },
            dampening_coefficient: 0.01,
            dampening_start_fraction: 0.7,
        }
    }
}

impl MitigationConfig {
    pub fn precision_map(&self, num_layers: usize) -> MixedPrecisionMap {
        MixedPrecisionMap::first_last(self.precision, self.edge_precision, num_layers)
    }

    /// QAT settings for one arm.
    pub fn qat_config(&self, num_layers: usize, weights: ClassWeights, seed: u64) -> QatConfig {
        QatConfig {
            base: TrainConfig {
                class_weights: weights,
                seed,
                ..self.qat.clone()
            },
            precision_map: self.precision_map(num_layers),
            dampening_coefficient: self.dampening_coefficient,
            dampening_start_fraction: self.dampening_start_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub data: DataSource,
    /// Hidden layer widths; input and output widths come from the data.
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_precisions")]
    pub precisions: Vec<PrecisionSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub mitigation: MitigationConfig,
    #[serde(default)]
    pub power_iteration: PowerIterationConfig,
    #[serde(default)]
    pub dtdb_mode: DtdbMode,
}

fn default_name() -> String {
    "experiment".into()
}
fn default_precisions() -> Vec<PrecisionSpec> {
    DEFAULT_PRECISIONS.to_vec()
}
fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl ExperimentConfig {
    /// The bundled imbalanced benchmark with the default training recipe.
    pub fn benchmark() -> Self {
        Self {
            name: "benchmark".into(),
            data: DataSource::Benchmark,
            hidden: vec![64, 64],
            train: TrainConfig {
                epochs: 60,
                batch_size: 64,
                learning_rate: 0.05,
                momentum: 0.9,
                class_weights: ClassWeights::Uniform,
                seed: 0,
                shuffle: true,
            },
            precisions: default_precisions(),
            seeds: default_seeds(),
            mitigation: MitigationConfig::default(),
            power_iteration: PowerIterationConfig::default(),
            dtdb_mode: DtdbMode::TrueClass,
        }
    }

    /// Same recipe on five equal, well separated groups.
    pub fn balanced_easy() -> Self {
        Self {
            name: "balanced_easy".into(),
            data: DataSource::BalancedEasy,
            ..Self::benchmark()
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn validate(&self) -> Result<()> {
        if self.precisions.is_empty() {
            return input_err("precision list is empty");
        }
        for (i, p) in self.precisions.iter().enumerate() {
            p.validate()?;
            if self.precisions[..i].contains(p) {
                return input_err(format!("precision {p} listed twice"));
            }
        }
        if self.seeds.is_empty() {
            return input_err("seed list is empty");
        }
        for (i, s) in self.seeds.iter().enumerate() {
            if self.seeds[..i].contains(s) {
                return input_err(format!("seed {s} listed twice"));
            }
        }
        if self.hidden.contains(&0) {
            return input_err("hidden layer widths must be >= 1");
        }
        if self.power_iteration.max_iters == 0 {
            return input_err("power_iteration.max_iters must be >= 1");
        }
        self.mitigation.precision.validate()?;
        self.mitigation.edge_precision.validate()?;
        if let DataSource::Synthetic { spec } = &self.data {
            spec.validate()?;
        }
        Ok(())
    }

    /// Layer widths for data with `d` features and `classes` classes.
    pub fn widths(&self, d: usize, classes: usize) -> Vec<usize> {
        let mut w = vec![d];
        w.extend(&self.hidden);
        w.push(classes);
        w
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len() + 1
    }
}

/// Independent streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub run: u64,
    pub data: u64,
    pub init: u64,
    pub train: u64,
    pub sampler: u64,
    pub qat: u64,
    pub power: u64,
}

impl RunSeeds {
    pub fn new(run: u64) -> Self {
        Self {
            run,
            data: derive_seed(run, "data"),
            init: derive_seed(run, "init"),
            train: derive_seed(run, "train"),
            sampler: derive_seed(run, "sampler"),
            qat: derive_seed(run, "qat"),
            power: derive_seed(run, "power"),
        }
    }
}
