use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::run::{MitigationOutcome, SweepOutcome};
use crate::audit::{fmt_f64, write_csv, AUDIT_CSV_HEADER, HISTOGRAM_CSV_HEADER};
use crate::diagnostics::DIAGNOSTICS_CSV_HEADER;
use crate::error::{Error, Result};

pub const AGGREGATE_CSV_HEADER: [&str; 6] = ["precision", "group", "metric", "mean", "sd", "n"];
pub const WEIGHT_STATS_CSV_HEADER: [&str; 5] = ["seed", "precision", "abs_diff", "sparsity_original", "sparsity_quantized"];
pub const SCATTER_CSV_HEADER: [&str; 7] = ["seed", "arm", "precision", "overall_accuracy", "fvo", "on_frontier", "selected"];
pub const MANIFEST_FORMAT: &str = "fairquant-manifest";

/// Group label used for whole-model metrics in the aggregate table.
const ALL_GROUPS: &str = "*";

/// Mean and sample standard deviation of one metric over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub precision: String,
    pub group: String,
    pub metric: String,
    pub mean: f64,
    /// `None` with a single observation.
    pub sd: Option<f64>,
    pub n: usize,
}

fn mean_sd(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.len() > 1).then(|| (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt());
    (mean, sd)
}

const GROUP_METRICS: [&str; 11] = [
    "accuracy",
    "loss",
    "avg_cosine_distance",
    "avg_l1",
    "avg_l2",
    "mean_logit_variance",
    "mean_softmax_variance",
    "avg_prediction_probability",
    "gradient_norm",
    "lambda_max",
    "log_lambda_max",
];

const MODEL_METRICS: [&str; 4] = ["overall_accuracy", "fvo", "abs_diff", "sparsity_quantized"];

/// Per precision × group × metric summary over the seeds of a sweep, in
/// configuration order. Seeds where a value is absent are skipped.
pub fn aggregate(cfg: &ExperimentConfig, outcome: &SweepOutcome) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    let Some(first) = outcome.seeds.first() else {
        return rows;
    };
    let groups: Vec<String> = first.cells.first().map_or(Vec::new(), |c| {
        c.audit.groups.iter().map(|g| g.group.clone()).collect()
    });
    let mut push = |precision: &str, group: &str, metric: &str, xs: Vec<f64>| {
        if !xs.is_empty() {
            let (mean, sd) = mean_sd(&xs);
            rows.push(AggregateRow {
                precision: precision.into(),
                group: group.into(),
                metric: metric.into(),
                mean,
                sd,
                n: xs.len(),
            });
        }
    };
    for &p in &cfg.precisions {
        let label = p.to_string();
        let cells: Vec<_> = outcome.seeds.iter().filter_map(|s| s.cell(p)).collect();
        for (gi, name) in groups.iter().enumerate() {
            for metric in GROUP_METRICS {
                let xs = cells
                    .iter()
                    .filter_map(|c| {
                        let a = &c.audit.groups[gi];
                        let d = &c.diagnostics.groups[gi];
                        match metric {
                            "accuracy" => a.accuracy,
                            "loss" => a.loss,
                            "avg_cosine_distance" => a.avg_cosine_distance,
                            "avg_l1" => a.avg_l1,
                            "avg_l2" => a.avg_l2,
                            "mean_logit_variance" => a.mean_logit_variance,
                            "mean_softmax_variance" => a.mean_softmax_variance,
                            "avg_prediction_probability" => a.avg_prediction_probability,
                            "gradient_norm" => d.gradient_norm,
                            "lambda_max" => d.lambda_max,
                            _ => d.log_lambda_max(),
                        }
                    })
                    .collect();
                push(&label, name, metric, xs);
            }
        }
        for metric in MODEL_METRICS {
            let xs = cells
                .iter()
                .filter_map(|c| match metric {
                    "overall_accuracy" => Some(c.audit.overall_accuracy),
                    "fvo" => c.audit.fvo,
                    "abs_diff" => Some(c.weight_stats.abs_diff),
                    _ => Some(c.weight_stats.sparsity_quantized),
                })
                .collect();
            push(&label, ALL_GROUPS, metric, xs);
        }
    }
    rows
}

/// SHA-256 of the configuration's JSON form.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Index of a run's artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub tool_version: String,
    pub command: String,
    pub config_hash: Option<String>,
    /// Paths relative to the output directory, in write order.
    pub artifacts: Vec<String>,
    pub failures: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, config_hash: Option<String>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash,
            artifacts: Vec::new(),
            failures: Vec::new(),
            started_unix: now_unix(),
            finished_unix: None,
        }
    }

    /// Writes `contents` to `out/rel`, creating parent directories, and records it.
    pub fn write(&mut self, out: &Path, rel: &str, contents: &str) -> Result<PathBuf> {
        let path = out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, contents)?;
        self.artifacts.push(rel.to_string());
        Ok(path)
    }

    /// Records a file written by other means.
    pub fn record(&mut self, rel: &str) {
        self.artifacts.push(rel.to_string());
    }

    /// Checks that every artifact exists, then writes `out/manifest.json`.
    pub fn finalize(mut self, out: &Path) -> Result<PathBuf> {
        if let Some(missing) = self.artifacts.iter().find(|a| !out.join(a).is_file()) {
            return Err(Error::Format(format!("manifest lists missing artifact {missing}")));
        }
        self.finished_unix = Some(now_unix());
        let path = out.join("manifest.json");
        fs::create_dir_all(out)?;
        fs::write(&path, serde_json::to_string_pretty(&self)? + "\n")?;
        Ok(path)
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Writes per-seed reports, the weight statistics table and the aggregate
/// table of a sweep under `out`.
pub fn write_sweep(out: &Path, cfg: &ExperimentConfig, outcome: &SweepOutcome, manifest: &mut RunManifest) -> Result<()> {
    let mut audit_rows = Vec::new();
    let mut hist_rows = Vec::new();
    let mut diag_rows = Vec::new();
    let mut stats_rows = Vec::new();
    for s in &outcome.seeds {
        let dir = format!("seed-{}", s.seed);
        manifest.write(out, &format!("{dir}/model.json"), &s.network.to_json()?)?;
        manifest.write(out, &format!("{dir}/train_trace.csv"), &s.trace.to_csv())?;
        for c in &s.cells {
            let cd = format!("{dir}/{}", c.precision);
            manifest.write(out, &format!("{cd}/quantized.json"), &c.model.to_json()?)?;
            manifest.write(out, &format!("{cd}/audit.json"), &c.audit.to_json()?)?;
            manifest.write(out, &format!("{cd}/diagnostics.json"), &c.diagnostics.to_json()?)?;
            audit_rows.extend(c.audit.csv_rows());
            hist_rows.extend(c.audit.histogram_rows());
            diag_rows.extend(c.diagnostics.csv_rows().into_iter().map(|mut r| {
                r.insert(0, s.seed.to_string());
                r
            }));
            stats_rows.push(vec![
                s.seed.to_string(),
                c.precision.to_string(),
                fmt_f64(c.weight_stats.abs_diff),
                fmt_f64(c.weight_stats.sparsity_original),
                fmt_f64(c.weight_stats.sparsity_quantized),
            ]);
        }
    }
    let mut diag_header = vec!["seed"];
    diag_header.extend(DIAGNOSTICS_CSV_HEADER);
    manifest.write(out, "audit.csv", &write_csv(&AUDIT_CSV_HEADER, audit_rows)?)?;
    manifest.write(out, "dtdb_histogram.csv", &write_csv(&HISTOGRAM_CSV_HEADER, hist_rows)?)?;
    manifest.write(out, "diagnostics.csv", &write_csv(&diag_header, diag_rows)?)?;
    manifest.write(out, "weight_stats.csv", &write_csv(&WEIGHT_STATS_CSV_HEADER, stats_rows)?)?;
    let agg = aggregate(cfg, outcome).into_iter().map(|r| {
        vec![r.precision, r.group, r.metric, fmt_f64(r.mean), opt(r.sd), r.n.to_string()]
    });
    manifest.write(out, "aggregate.csv", &write_csv(&AGGREGATE_CSV_HEADER, agg)?)?;
    for f in &outcome.failures {
        manifest.failures.push(format!("seed {} {}: {}", f.seed, f.stage, f.message));
    }
    Ok(())
}

#[derive(Serialize)]
struct SelectionRecord<'a> {
    seed: u64,
    frontier: Vec<&'a str>,
    selected: &'a str,
}

/// Writes per-arm reports, the (OA, FVO) scatter table and the per-seed
/// frontier and selection under `out`.
pub fn write_mitigation(out: &Path, outcome: &MitigationOutcome, manifest: &mut RunManifest) -> Result<()> {
    let mut scatter = Vec::new();
    let mut audit_rows = Vec::new();
    let mut selections = Vec::new();
    for s in &outcome.seeds {
        for (i, a) in s.arms.iter().enumerate() {
            let dir = format!("seed-{}/{}", s.seed, a.arm.name());
            manifest.write(out, &format!("{dir}/quantized.json"), &a.model.to_json()?)?;
            manifest.write(out, &format!("{dir}/audit.json"), &a.audit.to_json()?)?;
            manifest.write(out, &format!("{dir}/train_trace.csv"), &a.trace.to_csv())?;
            audit_rows.extend(a.audit.csv_rows());
            scatter.push(vec![
                s.seed.to_string(),
                a.arm.name().to_string(),
                a.audit.precision.clone(),
                fmt_f64(a.audit.overall_accuracy),
                opt(a.audit.fvo),
                s.selection.frontier.contains(&i).to_string(),
                (s.selection.pick == i).to_string(),
            ]);
        }
        selections.push(SelectionRecord {
            seed: s.seed,
            frontier: s.selection.frontier.iter().map(|&i| s.arms[i].arm.name()).collect(),
            selected: s.selected().name(),
        });
    }
    manifest.write(out, "mitigation_scatter.csv", &write_csv(&SCATTER_CSV_HEADER, scatter)?)?;
    manifest.write(out, "audit.csv", &write_csv(&AUDIT_CSV_HEADER, audit_rows)?)?;
    manifest.write(out, "selection.json", &(serde_json::to_string_pretty(&selections)? + "\n"))?;
    for f in &outcome.failures {
        manifest.failures.push(format!("seed {} {}: {}", f.seed, f.stage, f.message));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_sd() {
        let (m, sd) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((sd.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[3.0]), (3.0, None));
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::benchmark();
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seeds = vec![9];
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn manifest_rejects_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("test", None);
        m.write(dir.path(), "a/b.txt", "x").unwrap();
        m.record("missing.txt");
        assert!(m.finalize(dir.path()).is_err());
        let mut m = RunManifest::new("test", None);
        m.write(dir.path(), "a/b.txt", "x").unwrap();
        assert!(m.finalize(dir.path()).unwrap().is_file());
    }
}
