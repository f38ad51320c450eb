use serde::{Deserialize, Serialize};

use super::{GroupedDataset, Split};
use crate::error::{input_err, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fraction of each group held out for testing.
pub const TEST_FRACTION: f64 = 0.2;

/// Group names of the bundled five-group benchmark.
pub const BENCHMARK_GROUPS: [&str; 5] = ["White", "Black", "Asian", "Indian", "Others"];

/// Isotropic Gaussian blobs, one per group, with group `g` labelled class `g`.
///
/// Group `g` draws `sizes[g]` points around `centers[g]` with standard
/// deviation `spreads[g] * difficulty[g]`: a difficulty above 1 widens the
/// blob into its neighbours' territory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub group_names: Vec<String>,
    pub sizes: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
    pub spreads: Vec<f64>,
    pub difficulty: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn num_groups(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.sizes.len();
        if g == 0 {
            return input_err("synthetic spec needs at least one group");
        }
        if self.centers.len() != g
            || self.spreads.len() != g
            || self.difficulty.len() != g
            || self.group_names.len() != g
        {
            return input_err("sizes, centers, spreads, difficulty and group_names must all have one entry per group");
        }
        let d = self.dim();
        if d == 0 || self.centers.iter().any(|c| c.len() != d || c.iter().any(|v| !v.is_finite())) {
            return input_err("centers must be finite vectors of one common non-zero length");
        }
        if self.sizes.contains(&0) {
            return input_err("every group needs at least one sample");
        }
        if self.spreads.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return input_err("spreads must be positive");
        }
        if self.difficulty.iter().any(|k| !(*k >= 1.0 && k.is_finite())) {
            return input_err("difficulty multipliers must be >= 1");
        }
        Ok(())
    }

    /// The imbalanced five-group benchmark: group sizes in roughly the
    /// proportions of a skewed demographic dataset, with the smallest group
    /// (`Others`, ~7% of samples) also the hardest.
    pub fn benchmark(seed: u64) -> Self {
        let d = 8;
        Self {
            group_names: BENCHMARK_GROUPS.iter().map(|s| s.to_string()).collect(),
            sizes: vec![2000, 900, 700, 800, 350],
            centers: simplex_centers(5, d, 2.2),
            spreads: vec![1.0; 5],
            difficulty: vec![1.0, 1.0, 1.0, 1.0, 1.6],
            seed,
        }
    }

    /// Five well-separated, equal-size groups: nothing for mitigation to fix.
    pub fn balanced_easy(seed: u64) -> Self {
        let d = 8;
        Self {
            group_names: BENCHMARK_GROUPS.iter().map(|s| s.to_string()).collect(),
            sizes: vec![600; 5],
            centers: simplex_centers(5, d, 6.0),
            spreads: vec![1.0; 5],
            difficulty: vec![1.0; 5],
            seed,
        }
    }
}

/// `radius · e_g` in `d` dimensions (`d >= g`), so every pair of centers is
/// `radius·√2` apart.
fn simplex_centers(groups: usize, d: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..groups)
        .map(|g| {
            let mut c = vec![0.0; d];
            c[g % d] = radius;
            c
        })
        .collect()
}

/// Draws the blobs and splits each group 80/20 into train and test.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(GroupedDataset, GroupedDataset)> {
    spec.validate()?;
    let d = spec.dim();
    let mut rng = Rng::new(spec.seed);
    let mut train = Rows::default();
    let mut test = Rows::default();
    for g in 0..spec.num_groups() {
        let sd = spec.spreads[g] * spec.difficulty[g];
        let n = spec.sizes[g];
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| spec.centers[g].iter().map(|c| c + sd * rng.normal()).collect())
            .collect();
        let n_test = (n as f64 * TEST_FRACTION).round() as usize;
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        let (test_idx, train_idx) = order.split_at(n_test);
        let mut test_idx = test_idx.to_vec();
        let mut train_idx = train_idx.to_vec();
        test_idx.sort_unstable();
        train_idx.sort_unstable();
        for i in train_idx {
            train.push(&points[i], g);
        }
        for i in test_idx {
            test.push(&points[i], g);
        }
    }
    let build = |rows: Rows, split| -> Result<GroupedDataset> {
        let m = rows.labels.len();
        if m == 0 {
            return input_err(format!("{split:?} split is empty"));
        }
        GroupedDataset::new(
            Tensor::new(vec![m, d], rows.features)?,
            rows.labels.clone(),
            rows.labels,
            spec.group_names.clone(),
            spec.num_groups(),
            split,
        )
    };
    Ok((build(train, Split::Train)?, build(test, Split::Test)?))
}

#[derive(Default)]
struct Rows {
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Rows {
    fn push(&mut self, x: &[f64], g: usize) {
        self.features.extend_from_slice(x);
        self.labels.push(g);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let s = SyntheticSpec::benchmark(3);
        let a = generate_synthetic(&s).unwrap();
        let b = generate_synthetic(&s).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec::benchmark(4)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn stratified_split_within_one_sample() {
        let s = SyntheticSpec::benchmark(0);
        let (train, test) = generate_synthetic(&s).unwrap();
        let tc = train.group_counts();
        let sc = test.group_counts();
        for g in 0..5 {
            let n = s.sizes[g] as f64;
            assert_eq!(tc[g] + sc[g], s.sizes[g]);
            assert!((sc[g] as f64 - 0.2 * n).abs() <= 1.0);
        }
        assert_eq!(train.split(), Split::Train);
        assert_eq!(test.split(), Split::Test);
    }

    #[test]
    fn degenerate_specs_rejected() {
        let mut s = SyntheticSpec::benchmark(0);
        s.difficulty[0] = 0.5;
        assert!(generate_synthetic(&s).is_err());
        let mut s = SyntheticSpec::benchmark(0);
        s.sizes[1] = 0;
        assert!(generate_synthetic(&s).is_err());
        let mut s = SyntheticSpec::benchmark(0);
        s.centers[2].pop();
        assert!(generate_synthetic(&s).is_err());
        let mut s = SyntheticSpec::benchmark(0);
        s.spreads[0] = 0.0;
        assert!(generate_synthetic(&s).is_err());
    }
}
