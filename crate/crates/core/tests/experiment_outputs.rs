use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use fairquant::audit::{audit, fvo, AuditMeta, AUDIT_CSV_HEADER, HISTOGRAM_CSV_HEADER};
use fairquant::diagnostics::DIAGNOSTICS_CSV_HEADER;
use fairquant::experiment::{
    aggregate, config_hash, mitigate, sweep, write_mitigation, write_sweep, ExperimentConfig, RunManifest, RunSeeds,
    AGGREGATE_CSV_HEADER, MANIFEST_FORMAT, SCATTER_CSV_HEADER, WEIGHT_STATS_CSV_HEADER,
};
use fairquant::quant::PrecisionSpec;
use fairquant::Exec;

/// Benchmark data with a tiny model and short schedules.
fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::benchmark();
    cfg.hidden = vec![8];
    cfg.train.epochs = 3;
    cfg.seeds = vec![0, 1];
    cfg.precisions = vec![
        PrecisionSpec::Float32,
        PrecisionSpec::Int(8),
        PrecisionSpec::Int(4),
        PrecisionSpec::Int(2),
    ];
    cfg.power_iteration.max_iters = 10;
    cfg.mitigation.qat.epochs = 2;
    cfg
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

fn files_under(root: &Path) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/"));
            }
        }
    }
    out
}

#[test]
fn fp32_cell_matches_a_direct_audit() {
    let mut cfg = small_config();
    cfg.precisions = vec![PrecisionSpec::Float32];
    let out = sweep(&cfg, Exec::Sequential).unwrap();
    assert!(out.failures.is_empty());
    for s in &out.seeds {
        let (_, test) = cfg.data.load(RunSeeds::new(s.seed).data).unwrap();
        let direct = audit(&s.network, None, &test, &AuditMeta::default()).unwrap();
        let cell = &s.cells[0];
        assert_eq!(cell.audit.fvo, direct.fvo);
        let acc: Vec<f64> = direct.groups.iter().filter_map(|g| g.accuracy).collect();
        assert_eq!(cell.audit.fvo, fvo(&acc));
        assert_eq!(cell.weight_stats.abs_diff, 0.0);
        for g in &cell.audit.groups {
            assert_eq!(g.avg_l1, Some(0.0));
        }
    }
}

#[test]
fn sweep_outputs_are_complete_and_well_formed() {
    let cfg = small_config();
    let out = sweep(&cfg, Exec::Parallel).unwrap();
    assert!(out.failures.is_empty());
    assert_eq!(out, sweep(&cfg, Exec::Sequential).unwrap());

    let agg = aggregate(&cfg, &out);
    let groups: BTreeSet<&str> = agg.iter().map(|r| r.group.as_str()).filter(|g| *g != "*").collect();
    assert_eq!(groups.len(), 5);
    for p in &cfg.precisions {
        for g in &groups {
            let acc = agg
                .iter()
                .find(|r| r.precision == p.to_string() && r.group == *g && r.metric == "accuracy")
                .unwrap();
            assert_eq!(acc.n, 2);
            assert!(acc.sd.is_some());
        }
        for metric in ["overall_accuracy", "fvo", "abs_diff", "sparsity_quantized"] {
            assert!(agg.iter().any(|r| r.precision == p.to_string() && r.group == "*" && r.metric == metric));
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let hash = config_hash(&cfg).unwrap();
    let mut manifest = RunManifest::new("sweep", Some(hash.clone()));
    write_sweep(dir.path(), &cfg, &out, &mut manifest).unwrap();
    let path = manifest.finalize(dir.path()).unwrap();
    let m: RunManifest = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(m.format, MANIFEST_FORMAT);
    assert_eq!(m.config_hash.as_deref(), Some(hash.as_str()));
    assert!(m.failures.is_empty());
    let mut expected = files_under(dir.path());
    expected.remove("manifest.json");
    assert_eq!(m.artifacts.iter().cloned().collect::<BTreeSet<_>>(), expected);
    assert_eq!(m.artifacts.len(), expected.len());

    let d = dir.path();
    assert_eq!(header(&d.join("audit.csv")), AUDIT_CSV_HEADER.join(","));
    assert_eq!(header(&d.join("dtdb_histogram.csv")), HISTOGRAM_CSV_HEADER.join(","));
    assert_eq!(header(&d.join("diagnostics.csv")), format!("seed,{}", DIAGNOSTICS_CSV_HEADER.join(",")));
    assert_eq!(header(&d.join("weight_stats.csv")), WEIGHT_STATS_CSV_HEADER.join(","));
    assert_eq!(header(&d.join("aggregate.csv")), AGGREGATE_CSV_HEADER.join(","));
    let rows = fs::read_to_string(d.join("weight_stats.csv")).unwrap().lines().count() - 1;
    assert_eq!(rows, cfg.seeds.len() * cfg.precisions.len());
}

#[test]
fn mitigation_outputs_are_complete_and_well_formed() {
    let mut cfg = small_config();
    cfg.seeds = vec![3];
    let out = mitigate(&cfg, Exec::Parallel).unwrap();
    assert!(out.failures.is_empty());
    let s = &out.seeds[0];
    assert_eq!(s.arms.len(), 4);
    assert!(s.selection.frontier.contains(&s.selection.pick));

    let dir = tempfile::tempdir().unwrap();
    let mut manifest = RunManifest::new("mitigate", None);
    write_mitigation(dir.path(), &out, &mut manifest).unwrap();
    manifest.finalize(dir.path()).unwrap();
    assert_eq!(header(&dir.path().join("mitigation_scatter.csv")), SCATTER_CSV_HEADER.join(","));
    assert_eq!(header(&dir.path().join("audit.csv")), AUDIT_CSV_HEADER.join(","));
    let scatter = fs::read_to_string(dir.path().join("mitigation_scatter.csv")).unwrap();
    let selected: Vec<&str> = scatter.lines().skip(1).filter(|l| l.ends_with(",true")).collect();
    assert_eq!(selected.len(), 1);
    assert!(selected[0].contains(s.selected().name()));
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("selection.json")).unwrap()).unwrap();
    assert_eq!(sel[0]["selected"], s.selected().name());
}

#[test]
fn config_round_trips_and_hash_is_stable() {
    let cfg = small_config();
    let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(config_hash(&back).unwrap(), config_hash(&cfg).unwrap());
    let mut other = cfg.clone();
    other.seeds.push(9);
    assert_ne!(config_hash(&other).unwrap(), config_hash(&cfg).unwrap());

    let minimal = ExperimentConfig::from_json(r#"{"data": {"kind": "benchmark"}, "hidden": [4]}"#).unwrap();
    assert_eq!(minimal.seeds, vec![0, 1, 2, 3, 4]);
    for bad in [
        r#"{"data": {"kind": "benchmark"}, "hidden": [4], "seeds": [1, 1]}"#,
        r#"{"data": {"kind": "benchmark"}, "hidden": [0]}"#,
        r#"{"data": {"kind": "benchmark"}, "hidden": [4], "precisions": []}"#,
        r#"{"data": {"kind": "nope"}, "hidden": [4]}"#,
    ] {
        assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
    }
}

#[test]
fn missing_artifacts_block_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = RunManifest::new("x", None);
    m.record("nope.csv");
    assert!(m.finalize(dir.path()).is_err());
}
