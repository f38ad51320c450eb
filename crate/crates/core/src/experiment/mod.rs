//! Experiment orchestration: configuration, per-seed precision sweeps and
//! mitigation comparisons, seed aggregation and report emission.

mod config;
mod output;
mod run;

pub use config::{DataSource, ExperimentConfig, MitigationConfig, RunSeeds, DEFAULT_PRECISIONS};
pub use output::{
    aggregate, config_hash, write_mitigation, write_sweep, AggregateRow, RunManifest, AGGREGATE_CSV_HEADER,
    MANIFEST_FORMAT, SCATTER_CSV_HEADER, WEIGHT_STATS_CSV_HEADER,
};
pub use run::{
    evaluate_precisions, mitigate, mitigate_seed, sweep, sweep_seed, train_base, Arm, ArmResult, Failure,
    MitigationOutcome, PrecisionResult, SeedMitigation, SeedSweep, SweepOutcome,
};
