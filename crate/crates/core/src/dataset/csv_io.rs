use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GroupedDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which columns hold what. Feature columns default to every `f<k>` column
/// ordered by `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
    #[serde(default = "default_label")]
    pub label_column: String,
    #[serde(default = "default_group")]
    pub group_column: String,
    /// Defaults to `max(label) + 1`.
    #[serde(default)]
    pub num_classes: Option<usize>,
    /// Defaults to `g0, g1, ...` up to `max(group) + 1`.
    #[serde(default)]
    pub group_names: Option<Vec<String>>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_label() -> String {
    "label".into()
}
fn default_group() -> String {
    "group".into()
}
fn default_split() -> Split {
    Split::Train
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            feature_columns: None,
            label_column: default_label(),
            group_column: default_group(),
            num_classes: None,
            group_names: None,
            split: Split::Train,
        }
    }
}

impl CsvSchema {
    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }
}

fn parse_err(row: usize, column: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message: message.into(),
    }
}

/// Reads a dataset. Rows in errors are 1-based file lines (the header is line 1).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<GroupedDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = match reader.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        _ => return Err(parse_err(1, "", "empty file")),
    };
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(1, name, "missing column"))
    };
    let feature_cols: Vec<(String, usize)> = match &schema.feature_columns {
        Some(cols) => cols
            .iter()
            .map(|c| find(c).map(|i| (c.clone(), i)))
            .collect::<Result<_>>()?,
        None => {
            let mut cols: Vec<(usize, String, usize)> = headers
                .iter()
                .enumerate()
                .filter_map(|(i, h)| {
                    let k = h.strip_prefix('f')?.parse::<usize>().ok()?;
                    Some((k, h.to_string(), i))
                })
                .collect();
            cols.sort_unstable();
            cols.into_iter().map(|(_, h, i)| (h, i)).collect()
        }
    };
    if feature_cols.is_empty() {
        return Err(parse_err(1, "f0", "missing column"));
    }
    let label_idx = find(&schema.label_column)?;
    let group_idx = find(&schema.group_column)?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (r, rec) in reader.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| parse_err(line, "", e.to_string()))?;
        for (name, i) in &feature_cols {
            let cell = rec.get(*i).ok_or_else(|| parse_err(line, name, "missing cell"))?;
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| parse_err(line, name, format!("non-numeric value '{cell}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line, name, format!("non-finite value '{cell}'")));
            }
            features.push(v);
        }
        let int_cell = |i: usize, name: &str| -> Result<usize> {
            let cell = rec.get(i).ok_or_else(|| parse_err(line, name, "missing cell"))?;
            cell.trim()
                .parse()
                .map_err(|_| parse_err(line, name, format!("expected a non-negative integer, got '{cell}'")))
        };
        labels.push(int_cell(label_idx, &schema.label_column)?);
        groups.push(int_cell(group_idx, &schema.group_column)?);
    }
    if labels.is_empty() {
        return Err(parse_err(1, "", "empty dataset"));
    }
    let num_classes = schema
        .num_classes
        .unwrap_or_else(|| labels.iter().max().unwrap() + 1);
    let group_names = schema.group_names.clone().unwrap_or_else(|| {
        (0..=*groups.iter().max().unwrap())
            .map(|g| format!("g{g}"))
            .collect()
    });
    let m = labels.len();
    GroupedDataset::new(
        Tensor::new(vec![m, feature_cols.len()], features)?,
        labels,
        groups,
        group_names,
        num_classes,
        schema.split,
    )
}

/// Writes `f0..f{d-1},label,group`. Values use Rust's shortest round-trip formatting.
pub fn save_csv(ds: &GroupedDataset, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..ds.dim()).map(|k| format!("f{k}")).collect();
    header.push("label".into());
    header.push("group".into());
    w.write_record(&header)?;
    for (i, row) in ds.features().iter_rows().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        rec.push(ds.labels()[i].to_string());
        rec.push(ds.groups()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
