use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use fairquant::audit::{self as fq_audit, write_csv, AuditMeta};
use fairquant::dataset::{save_csv, GroupedDataset, SamplerConfig, SamplerMode};
use fairquant::diagnostics::{self, PowerIterationConfig};
use fairquant::experiment::{
    self, aggregate, config_hash, write_mitigation, write_sweep, ExperimentConfig, RunManifest, RunSeeds,
    WEIGHT_STATS_CSV_HEADER,
};
use fairquant::quant::{quantize as quantize_net, weight_change_stats, PrecisionSpec, QuantizedModel};
use fairquant::{ClassWeights, Exec, Network};
use serde_json::Value;

use crate::{usage, Common, Fairness, Outcome};

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            ExperimentConfig::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::benchmark(),
    };
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn validated(cfg: ExperimentConfig) -> Result<ExperimentConfig> {
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig, seed: u64) -> Result<(GroupedDataset, GroupedDataset)> {
    cfg.data.load(RunSeeds::new(seed).data).map_err(|e| usage(format!("cannot load data: {e}")))
}

/// A network checkpoint or quantized model, with its precision label.
fn load_model(path: &Path) -> Result<(Network, String)> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let format = serde_json::from_str::<Value>(&text)
        .ok()
        .and_then(|v| v.get("format").and_then(Value::as_str).map(str::to_owned));
    let parsed = match format.as_deref() {
        Some("fairquant-quantized") => {
            QuantizedModel::from_json(&text).map(|qm| (qm.to_network(), qm.precision.label()))
        }
        _ => Network::from_json(&text).map(|n| (n, PrecisionSpec::Float32.to_string())),
    };
    parsed.map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn check_fit(net: &Network, data: &GroupedDataset) -> Result<()> {
    if net.input_dim() != data.dim() || net.output_dim() != data.num_classes() {
        return Err(usage(format!(
            "model maps {} features to {} classes but the data has {} features and {} classes",
            net.input_dim(),
            net.output_dim(),
            data.dim(),
            data.num_classes()
        )));
    }
    Ok(())
}

fn class_weights(f: &Fairness, classes: usize) -> Result<Option<ClassWeights>> {
    let Some(w) = &f.class_weights else {
        return Ok(None);
    };
    if w.0.len() != classes {
        return Err(usage(format!("--class-weights needs {classes} values, got {}", w.0.len())));
    }
    Ok(Some(ClassWeights::PerClass(w.0.clone())))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn finish(manifest: RunManifest, out: &Path) -> Result<()> {
    let path = manifest.finalize(out)?;
    println!("manifest: {}", path.display());
    Ok(())
}

pub fn train(common: &Common, fairness: &Fairness) -> Result<Outcome> {
    let cfg = validated(load_config(common)?)?;
    let seed = cfg.seeds[0];
    let (train, _) = load_data(&cfg, seed)?;
    cfg.train.validate(train.num_classes()).map_err(usage)?;
    let weights = class_weights(fairness, train.num_classes())?;
    let sampler = fairness
        .sampler
        .filter(|m| *m != SamplerMode::None)
        .map(|m| SamplerConfig::new(m, 0));
    let (net, trace) = experiment::train_base(&cfg, &train, seed, sampler.as_ref(), weights.as_ref())?;

    let out = &common.out;
    let mut manifest = RunManifest::new("train", Some(config_hash(&cfg)?));
    manifest.write(out, "config.json", &cfg.to_json()?)?;
    manifest.write(out, "model.json", &net.to_json()?)?;
    manifest.write(out, "train_trace.csv", &trace.to_csv())?;
    if let Some(last) = trace.last() {
        println!("seed {seed}, final training accuracy per group:");
        for (name, acc) in trace.group_names.iter().zip(&last.group_accuracy) {
            println!("  {name:<12} {}", fmt_opt(*acc));
        }
    }
    finish(manifest, out)?;
    Ok(Outcome::Success)
}

pub fn quantize(model: &Path, precisions: &[PrecisionSpec], seed: Option<u64>, out: &Path) -> Result<Outcome> {
    if precisions.is_empty() {
        return Err(usage("--precisions is empty"));
    }
    for p in precisions {
        p.validate().map_err(usage)?;
    }
    let (net, _) = load_model(model)?;
    let flat = net.flatten();
    let mut manifest = RunManifest::new("quantize", None);
    let mut rows = Vec::new();
    for &p in precisions {
        let qm = quantize_net(&net, p)?;
        let stats = weight_change_stats(&flat, &qm)?;
        manifest.write(out, &format!("{p}/quantized.json"), &qm.to_json()?)?;
        println!(
            "{p:<5} abs_diff {:.6}  sparsity {:.4} -> {:.4}",
            stats.abs_diff, stats.sparsity_original, stats.sparsity_quantized
        );
        rows.push(vec![
            seed.map(|s| s.to_string()).unwrap_or_default(),
            p.to_string(),
            format!("{:?}", stats.abs_diff),
            format!("{:?}", stats.sparsity_original),
            format!("{:?}", stats.sparsity_quantized),
        ]);
    }
    manifest.write(out, "weight_stats.csv", &write_csv(&WEIGHT_STATS_CSV_HEADER, rows)?)?;
    finish(manifest, out)?;
    Ok(Outcome::Success)
}

pub fn audit(common: &Common, model: &Path, reference: Option<&Path>) -> Result<Outcome> {
    let cfg = validated(load_config(common)?)?;
    let seed = cfg.seeds[0];
    let (_, test) = load_data(&cfg, seed)?;
    let (net, label) = load_model(model)?;
    check_fit(&net, &test)?;
    let reference = match reference {
        Some(p) => {
            let (r, _) = load_model(p)?;
            if r.layout() != net.layout() {
                return Err(usage("reference model does not share the audited architecture"));
            }
            Some(r)
        }
        None => None,
    };
    let meta = AuditMeta {
        id: format!("seed{seed}/{label}"),
        precision: label,
        seed: Some(seed),
        dataset: cfg.data.id(),
        dtdb_mode: cfg.dtdb_mode,
    };
    let report = fq_audit::audit(&net, reference.as_ref(), &test, &meta)?;

    let out = &common.out;
    let mut manifest = RunManifest::new("audit", Some(config_hash(&cfg)?));
    manifest.write(out, "audit.json", &report.to_json()?)?;
    manifest.write(out, "audit.csv", &report.to_csv()?)?;
    manifest.write(out, "dtdb_histogram.csv", &report.histogram_csv()?)?;
    println!("overall accuracy {:.4}, FVO {}", report.overall_accuracy, fmt_opt(report.fvo));
    for g in &report.groups {
        println!("  {:<12} n={:<5} accuracy {}", g.group, g.count, fmt_opt(g.accuracy));
    }
    finish(manifest, out)?;
    Ok(Outcome::Success)
}

pub fn diagnose(common: &Common, model: &Path, exec: Exec) -> Result<Outcome> {
    let cfg = validated(load_config(common)?)?;
    let seed = cfg.seeds[0];
    let (_, test) = load_data(&cfg, seed)?;
    let (net, label) = load_model(model)?;
    check_fit(&net, &test)?;
    let pi = PowerIterationConfig {
        seed: RunSeeds::new(seed).power,
        ..cfg.power_iteration
    };
    let report = diagnostics::diagnose(&net, &test, &label, Some(seed), &pi, exec)?;

    let out = &common.out;
    let mut manifest = RunManifest::new("diagnose", Some(config_hash(&cfg)?));
    manifest.write(out, "diagnostics.json", &report.to_json()?)?;
    manifest.write(out, "diagnostics.csv", &report.to_csv()?)?;
    for g in &report.groups {
        match &g.error {
            Some(e) => {
                eprintln!("  {:<12} failed: {e}", g.group);
                manifest.failures.push(format!("{}: {e}", g.group));
            }
            None => println!(
                "  {:<12} gradient norm {}  lambda_max {}",
                g.group,
                fmt_opt(g.gradient_norm),
                fmt_opt(g.lambda_max)
            ),
        }
    }
    finish(manifest, out)?;
    Ok(if report.failed_cells() > 0 {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}

pub fn sweep(common: &Common, precisions: Option<Vec<PrecisionSpec>>, exec: Exec) -> Result<Outcome> {
    let mut cfg = load_config(common)?;
    if let Some(p) = precisions {
        cfg.precisions = p;
    }
    let cfg = validated(cfg)?;
    // surface data problems as configuration errors before any work starts
    load_data(&cfg, cfg.seeds[0])?;
    let outcome = experiment::sweep(&cfg, exec)?;

    let out = &common.out;
    let mut manifest = RunManifest::new("sweep", Some(config_hash(&cfg)?));
    manifest.write(out, "config.json", &cfg.to_json()?)?;
    write_sweep(out, &cfg, &outcome, &mut manifest)?;
    for row in aggregate(&cfg, &outcome).iter().filter(|r| r.metric == "fvo") {
        println!("{:<5} FVO {:.4} ± {} (n={})", row.precision, row.mean, fmt_opt(row.sd), row.n);
    }
    for f in &outcome.failures {
        eprintln!("seed {} {} failed: {}", f.seed, f.stage, f.message);
    }
    finish(manifest, out)?;
    Ok(if outcome.failures.is_empty() {
        Outcome::Success
    } else {
        Outcome::Partial
    })
}

pub fn mitigate(
    common: &Common,
    fairness: &Fairness,
    precisions: Option<Vec<PrecisionSpec>>,
    exec: Exec,
) -> Result<Outcome> {
    let mut cfg = load_config(common)?;
    if let Some(p) = precisions.as_ref().and_then(|p| p.first()) {
        cfg.mitigation.precision = *p;
    }
    if let Some(mode) = fairness.sampler {
        cfg.mitigation.sampler.mode = mode;
    }
    let cfg = validated(cfg)?;
    let (train, _) = load_data(&cfg, cfg.seeds[0])?;
    let mut cfg = cfg;
    if let Some(w) = class_weights(fairness, train.num_classes())? {
        cfg.mitigation.class_weights = w;
    }
    let outcome = experiment::mitigate(&cfg, exec)?;

    let out = &common.out;
    let mut manifest = RunManifest::new("mitigate", Some(config_hash(&cfg)?));
    manifest.write(out, "config.json", &cfg.to_json()?)?;
    write_mitigation(out, &outcome, &mut manifest)?;
    for s in &outcome.seeds {
        let arms: Vec<String> = s
            .arms
            .iter()
            .map(|a| format!("{} OA {:.4} FVO {}", a.arm.name(), a.audit.overall_accuracy, fmt_opt(a.audit.fvo)))
            .collect();
        println!("seed {}: {}; selected {}", s.seed, arms.join(", "), s.selected().name());
    }
    for f in &outcome.failures {
        eprintln!("seed {} {} failed: {}", f.seed, f.stage, f.message);
    }
    finish(manifest, out)?;
    Ok(if outcome.failures.is_empty() {
        Outcome::Success
    } else {
        Outcome::Partial
    })
}

pub fn gen_data(common: &Common) -> Result<Outcome> {
    let cfg = validated(load_config(common)?)?;
    let seed = cfg.seeds[0];
    let (train, test) = load_data(&cfg, seed)?;
    let out = &common.out;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let mut manifest = RunManifest::new("gen-data", Some(config_hash(&cfg)?));
    for (name, ds) in [("train.csv", &train), ("test.csv", &test)] {
        save_csv(ds, &out.join(name))?;
        manifest.record(name);
        println!("{name}: {} rows, group counts {:?}", ds.len(), ds.group_counts());
    }
    finish(manifest, out)?;
    Ok(Outcome::Success)
}
