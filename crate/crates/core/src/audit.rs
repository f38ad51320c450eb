//! Forward-pass fairness metrics: group accuracy and loss, FVO, logit drift,
//! logit/softmax variance, distance to the decision boundary, and model
//! selection over (overall accuracy, FVO).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::GroupedDataset;
use crate::error::{input_err, Error, Result};
use crate::nn::{self, Network};
use crate::tensor::Tensor;
use crate::trainer::argmax;

pub const DTDB_BINS: usize = 20;

pub const AUDIT_CSV_HEADER: [&str; 17] = [
    "id",
    "precision",
    "seed",
    "dataset",
    "group",
    "count",
    "accuracy",
    "loss",
    "avg_cosine_distance",
    "cd_excluded",
    "avg_l1",
    "avg_l2",
    "mean_logit_variance",
    "mean_softmax_variance",
    "avg_prediction_probability",
    "overall_accuracy",
    "fvo",
];

pub const HISTOGRAM_CSV_HEADER: [&str; 5] = ["id", "group", "bin_left", "bin_right", "count"];

/// Which softmax entry a sample's distance to the decision boundary uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtdbMode {
    #[default]
    TrueClass,
    MaxProbability,
}

impl FromStr for DtdbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true_class" => Ok(Self::TrueClass),
            "max_probability" => Ok(Self::MaxProbability),
            _ => Err(Error::Usage(format!("unknown dtdb mode {s:?}"))),
        }
    }
}

/// Fixed-width histogram over `[0, 1]`; the last bin is closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn unit(bins: usize) -> Self {
        assert!(bins > 0);
        Self {
            edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
            counts: vec![0; bins],
        }
    }

    pub fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let k = ((v.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1);
        self.counts[k] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Largest absolute pairwise gap. `None` with fewer than two entries.
pub fn fvo(accuracies: &[f64]) -> Option<f64> {
    if accuracies.len() < 2 {
        return None;
    }
    let hi = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    Some(hi - lo)
}

/// [`fvo`] over the groups that are present.
pub fn fvo_present(accuracies: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = accuracies.iter().flatten().copied().collect();
    fvo(&present)
}

/// Population variance.
pub fn population_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

/// `1 − cos(a, b)`, evaluated as `‖â − b̂‖² / 2`. `None` if either vector is null.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return None;
    }
    let d: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let t = x / na - y / nb;
            t * t
        })
        .sum();
    Some((d / 2.0).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub accuracy: Vec<Option<f64>>,
    pub loss: Vec<Option<f64>>,
    pub overall_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDrift {
    pub avg_cosine_distance: Option<f64>,
    /// Samples left out of the cosine average because a logit vector was null.
    pub cd_excluded: usize,
    pub avg_l1: Option<f64>,
    pub avg_l2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVariance {
    pub mean_logit_variance: Option<f64>,
    pub mean_softmax_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupConfidence {
    pub dtdb_histogram: Histogram,
    pub avg_prediction_probability: Option<f64>,
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
        return input_err(format!(
            "network has {} outputs but the dataset has {} classes",
            net.output_dim(),
            data.num_classes()
        ));
    }
    Ok(())
}

fn logits_of(net: &Network, data: &GroupedDataset) -> Result<Tensor> {
    check_model(net, data)?;
    nn::forward(net, data.features())
}

fn group_means(sums: &[f64], counts: &[usize]) -> Vec<Option<f64>> {
    sums.iter()
        .zip(counts)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect()
}

pub fn group_accuracy_and_loss(net: &Network, test: &GroupedDataset) -> Result<GroupAccuracy> {
    let logits = logits_of(net, test)?;
    Ok(accuracy_from_logits(&logits, test.labels(), test.groups(), test.num_groups()))
}

pub fn accuracy_from_logits(logits: &Tensor, labels: &[usize], groups: &[usize], num_groups: usize) -> GroupAccuracy {
    let mut correct = vec![0.0; num_groups];
    let mut loss = vec![0.0; num_groups];
    let mut count = vec![0usize; num_groups];
    for (i, z) in logits.iter_rows().enumerate() {
        let (g, y) = (groups[i], labels[i]);
        count[g] += 1;
        loss[g] -= nn::log_softmax_at(z, y);
        if argmax(z) == y {
            correct[g] += 1.0;
        }
    }
    GroupAccuracy {
        accuracy: group_means(&correct, &count),
        loss: group_means(&loss, &count),
        overall_accuracy: correct.iter().sum::<f64>() / labels.len() as f64,
    }
}

pub fn logit_drift(orig: &Network, quant: &Network, test: &GroupedDataset) -> Result<Vec<GroupDrift>> {
    if orig.layout() != quant.layout() {
        return input_err("models do not share an architecture");
    }
    let a = logits_of(quant, test)?;
    let b = logits_of(orig, test)?;
    Ok(drift_from_logits(&a, &b, test.groups(), test.num_groups()))
}

/// Per-group drift between two logit tables of equal shape.
pub fn drift_from_logits(quant: &Tensor, orig: &Tensor, groups: &[usize], num_groups: usize) -> Vec<GroupDrift> {
    let mut cd = vec![0.0; num_groups];
    let mut cd_n = vec![0usize; num_groups];
    let mut excluded = vec![0usize; num_groups];
    let mut l1 = vec![0.0; num_groups];
    let mut l2 = vec![0.0; num_groups];
    let mut count = vec![0usize; num_groups];
    for (i, (a, b)) in quant.iter_rows().zip(orig.iter_rows()).enumerate() {
        let g = groups[i];
        count[g] += 1;
        match cosine_distance(a, b) {
            Some(d) => {
                cd[g] += d;
                cd_n[g] += 1;
            }
            None => excluded[g] += 1,
        }
        l1[g] += a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>();
        l2[g] += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    }
    let cd = group_means(&cd, &cd_n);
    let l1 = group_means(&l1, &count);
    let l2 = group_means(&l2, &count);
    (0..num_groups)
        .map(|g| GroupDrift {
            avg_cosine_distance: cd[g],
            cd_excluded: excluded[g],
            avg_l1: l1[g],
            avg_l2: l2[g],
        })
        .collect()
}

pub fn logit_and_softmax_variance(net: &Network, test: &GroupedDataset) -> Result<Vec<GroupVariance>> {
    let logits = logits_of(net, test)?;
    Ok(variance_from_logits(&logits, test.groups(), test.num_groups()))
}

pub fn variance_from_logits(logits: &Tensor, groups: &[usize], num_groups: usize) -> Vec<GroupVariance> {
    let mut lv = vec![0.0; num_groups];
    let mut sv = vec![0.0; num_groups];
    let mut count = vec![0usize; num_groups];
    for (i, z) in logits.iter_rows().enumerate() {
        let g = groups[i];
        count[g] += 1;
        lv[g] += population_variance(z);
        sv[g] += population_variance(&nn::softmax_row(z));
    }
    group_means(&lv, &count)
        .into_iter()
        .zip(group_means(&sv, &count))
        .map(|(l, s)| GroupVariance {
            mean_logit_variance: l,
            mean_softmax_variance: s,
        })
        .collect()
}

pub fn dtdb_and_confidence(net: &Network, test: &GroupedDataset, mode: DtdbMode) -> Result<Vec<GroupConfidence>> {
    let logits = logits_of(net, test)?;
    let probs = nn::softmax(&logits);
    Ok(confidence_from_probs(&probs, test.labels(), test.groups(), test.num_groups(), mode))
}

pub fn confidence_from_probs(
    probs: &Tensor,
    labels: &[usize],
    groups: &[usize],
    num_groups: usize,
    mode: DtdbMode,
) -> Vec<GroupConfidence> {
    let mut hist = vec![Histogram::unit(DTDB_BINS); num_groups];
    let mut conf = vec![0.0; num_groups];
    let mut count = vec![0usize; num_groups];
    for (i, p) in probs.iter_rows().enumerate() {
        let g = groups[i];
        let top = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        count[g] += 1;
        conf[g] += top;
        hist[g].add(match mode {
            DtdbMode::TrueClass => p[labels[i]],
            DtdbMode::MaxProbability => top,
        });
    }
    hist.into_iter()
        .zip(group_means(&conf, &count))
        .map(|(h, c)| GroupConfidence {
            dtdb_histogram: h,
            avg_prediction_probability: c,
        })
        .collect()
}

/// Pareto frontier over (overall accuracy ↑, FVO ↓) and a single pick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Indices of non-dominated candidates, in input order.
    pub frontier: Vec<usize>,
    /// Frontier member with the lowest FVO; ties go to higher accuracy, then
    /// to the earlier candidate.
    pub pick: usize,
}

/// A missing FVO ranks as the worst possible value. `None` for no candidates.
pub fn pareto_select(points: &[(f64, Option<f64>)]) -> Option<Selection> {
    if points.is_empty() {
        return None;
    }
    let key = |i: usize| (points[i].0, points[i].1.unwrap_or(f64::INFINITY));
    let dominates = |j: usize, i: usize| {
        let (oj, fj) = key(j);
        let (oi, fi) = key(i);
        oj >= oi && fj <= fi && (oj > oi || fj < fi)
    };
    let frontier: Vec<usize> = (0..points.len())
        .filter(|&i| !(0..points.len()).any(|j| dominates(j, i)))
        .collect();
    let mut pick = frontier[0];
    for &i in &frontier[1..] {
        let (oi, fi) = key(i);
        let (op, fp) = key(pick);
        if fi < fp || (fi == fp && oi > op) {
            pick = i;
        }
    }
    Some(Selection { frontier, pick })
}

pub fn select_best(candidates: &[AuditReport]) -> Option<Selection> {
    let pts: Vec<(f64, Option<f64>)> = candidates.iter().map(|r| (r.overall_accuracy, r.fvo)).collect();
    pareto_select(&pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAudit {
    pub group: String,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub loss: Option<f64>,
    pub avg_cosine_distance: Option<f64>,
    pub cd_excluded: usize,
    pub avg_l1: Option<f64>,
    pub avg_l2: Option<f64>,
    pub mean_logit_variance: Option<f64>,
    pub mean_softmax_variance: Option<f64>,
    pub avg_prediction_probability: Option<f64>,
    pub dtdb_histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub id: String,
    pub precision: String,
    pub seed: Option<u64>,
    pub dataset: String,
    pub dtdb_mode: DtdbMode,
    pub overall_accuracy: f64,
    pub fvo: Option<f64>,
    pub groups: Vec<GroupAudit>,
}

/// Labels attached to an audit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditMeta {
    pub id: String,
    pub precision: String,
    pub seed: Option<u64>,
    pub dataset: String,
    pub dtdb_mode: DtdbMode,
}

/// Full audit of `model` on `test`. Drift fields are filled only when a
/// reference model is given.
pub fn audit(model: &Network, reference: Option<&Network>, test: &GroupedDataset, meta: &AuditMeta) -> Result<AuditReport> {
    let g = test.num_groups();
    let logits = logits_of(model, test)?;
    let acc = accuracy_from_logits(&logits, test.labels(), test.groups(), g);
    let var = variance_from_logits(&logits, test.groups(), g);
    let conf = confidence_from_probs(&nn::softmax(&logits), test.labels(), test.groups(), g, meta.dtdb_mode);
    let drift = match reference {
        Some(r) => {
            if r.layout() != model.layout() {
                return input_err("models do not share an architecture");
            }
            Some(drift_from_logits(&logits, &logits_of(r, test)?, test.groups(), g))
        }
        None => None,
    };
    let counts = test.group_counts();
    let groups = (0..g)
        .zip(var)
        .zip(conf)
        .map(|((k, v), c)| {
            let d = drift.as_ref().map(|d| d[k].clone());
            GroupAudit {
                group: test.group_names()[k].clone(),
                count: counts[k],
                accuracy: acc.accuracy[k],
                loss: acc.loss[k],
                avg_cosine_distance: d.as_ref().and_then(|d| d.avg_cosine_distance),
                cd_excluded: d.as_ref().map_or(0, |d| d.cd_excluded),
                avg_l1: d.as_ref().and_then(|d| d.avg_l1),
                avg_l2: d.as_ref().and_then(|d| d.avg_l2),
                mean_logit_variance: v.mean_logit_variance,
                mean_softmax_variance: v.mean_softmax_variance,
                avg_prediction_probability: c.avg_prediction_probability,
                dtdb_histogram: c.dtdb_histogram,
            }
        })
        .collect();
    Ok(AuditReport {
        id: meta.id.clone(),
        precision: meta.precision.clone(),
        seed: meta.seed,
        dataset: meta.dataset.clone(),
        dtdb_mode: meta.dtdb_mode,
        overall_accuracy: acc.overall_accuracy,
        fvo: fvo_present(&acc.accuracy),
        groups,
    })
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl AuditReport {
    pub fn accuracies(&self) -> Vec<Option<f64>> {
        self.groups.iter().map(|g| g.accuracy).collect()
    }

    /// FVO recomputed from the stored per-group accuracies.
    pub fn recompute_fvo(&self) -> Option<f64> {
        fvo_present(&self.accuracies())
    }

    pub fn group(&self, name: &str) -> Option<&GroupAudit> {
        self.groups.iter().find(|g| g.group == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One row per group under [`AUDIT_CSV_HEADER`].
    pub fn csv_rows(&self) -> Vec<Vec<String>> {
        self.groups
            .iter()
            .map(|g| {
                vec![
                    self.id.clone(),
                    self.precision.clone(),
                    self.seed.map(|s| s.to_string()).unwrap_or_default(),
                    self.dataset.clone(),
                    g.group.clone(),
                    g.count.to_string(),
                    fmt_opt(g.accuracy),
                    fmt_opt(g.loss),
                    fmt_opt(g.avg_cosine_distance),
                    g.cd_excluded.to_string(),
                    fmt_opt(g.avg_l1),
                    fmt_opt(g.avg_l2),
                    fmt_opt(g.mean_logit_variance),
                    fmt_opt(g.mean_softmax_variance),
                    fmt_opt(g.avg_prediction_probability),
                    fmt_f64(self.overall_accuracy),
                    fmt_opt(self.fvo),
                ]
            })
            .collect()
    }

    pub fn histogram_rows(&self) -> Vec<Vec<String>> {
        let mut rows = Vec::new();
        for g in &self.groups {
            let h = &g.dtdb_histogram;
            for (k, c) in h.counts.iter().enumerate() {
                rows.push(vec![
                    self.id.clone(),
                    g.group.clone(),
                    fmt_f64(h.edges[k]),
                    fmt_f64(h.edges[k + 1]),
                    c.to_string(),
                ]);
            }
        }
        rows
    }

    pub fn to_csv(&self) -> Result<String> {
        write_csv(&AUDIT_CSV_HEADER, self.csv_rows())
    }

    pub fn histogram_csv(&self) -> Result<String> {
        write_csv(&HISTOGRAM_CSV_HEADER, self.histogram_rows())
    }
}

/// Renders a header and rows as CSV text.
pub fn write_csv<S: AsRef<str>>(header: &[&str], rows: impl IntoIterator<Item = Vec<S>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|s| s.as_ref()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}
