//! Grouped datasets, the synthetic generator, resampling and CSV I/O.

mod csv_io;
mod sampling;
mod synthetic;

pub use csv_io::{load_csv, save_csv, CsvSchema};
pub use sampling::{resample, SamplerConfig, SamplerMode, TargetRule};
pub use synthetic::{generate_synthetic, SyntheticSpec, BENCHMARK_GROUPS, TEST_FRACTION};

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Samples with a class label and a group id each.
///
/// Groups and classes are separate fields; the bundled generators set
/// `group == label`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    features: Tensor,
    labels: Vec<usize>,
    groups: Vec<usize>,
    group_names: Vec<String>,
    num_classes: usize,
    split: Split,
}

impl GroupedDataset {
    pub fn new(
        features: Tensor,
        labels: Vec<usize>,
        groups: Vec<usize>,
        group_names: Vec<String>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        let m = features.rows();
        if features.shape().len() != 2 {
            return input_err("features must be a 2-D [M × d] tensor");
        }
        if labels.len() != m || groups.len() != m {
            return input_err(format!(
                "{m} feature rows but {} labels and {} group ids",
                labels.len(),
                groups.len()
            ));
        }
        if group_names.is_empty() || num_classes == 0 {
            return input_err("dataset needs at least one group and one class");
        }
        if let Some(g) = groups.iter().find(|&&g| g >= group_names.len()) {
            return input_err(format!("group id {g} out of range for {} groups", group_names.len()));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= num_classes) {
            return input_err(format!("label {y} out of range for {num_classes} classes"));
        }
        if !features.is_finite() {
            return input_err("features contain NaN or infinity");
        }
        Ok(Self {
            features,
            labels,
            groups,
            group_names,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn group_names(&self) -> &[String] {
        &self.group_names
    }

    pub fn num_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    pub fn group_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_groups()];
        for &g in &self.groups {
            c[g] += 1;
        }
        c
    }

    /// Row indices belonging to group `g`, ascending.
    pub fn group_indices(&self, g: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.groups[i] == g).collect()
    }

    /// `D_g`: the rows of group `g` in original order, or `None` if the group is empty.
    pub fn group_view(&self, g: usize) -> Option<GroupedDataset> {
        let idx = self.group_indices(g);
        if idx.is_empty() {
            return None;
        }
        Some(self.subset(&idx).expect("indices are in range"))
    }

    /// Rows at `idx` (repeats allowed), same group/class metadata.
    pub fn subset(&self, idx: &[usize]) -> Result<GroupedDataset> {
        if let Some(i) = idx.iter().find(|&&i| i >= self.len()) {
            return input_err(format!("row {i} out of range"));
        }
        Ok(Self {
            features: self.features.select_rows(idx)?,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
            group_names: self.group_names.clone(),
            num_classes: self.num_classes,
            split: self.split,
        })
    }
}
