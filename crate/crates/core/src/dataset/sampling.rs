use serde::{Deserialize, Serialize};

use super::{GroupedDataset, Split};
use crate::error::{input_err, Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    None,
    Undersample,
    Oversample,
    /// Undersample groups above the target and oversample groups below it.
    #[serde(rename = "u_o", alias = "uo", alias = "u-o")]
    UnderOver,
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
            .map_err(|_| Error::Input(format!("unknown sampler mode '{s}'")))
    }
}

/// Per-group target count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetRule {
    MinGroup,
    MaxGroup,
    /// Lower median of the group sizes.
    Median,
    Explicit(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    /// Defaults to `min_group` (undersample), `max_group` (oversample), `median` (u_o).
    #[serde(default)]
    pub target: Option<TargetRule>,
    #[serde(default)]
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(mode: SamplerMode, seed: u64) -> Self {
        Self {
            mode,
            target: None,
            seed,
        }
    }

    fn rule(&self) -> TargetRule {
        self.target.clone().unwrap_or(match self.mode {
            SamplerMode::Undersample => TargetRule::MinGroup,
            SamplerMode::Oversample => TargetRule::MaxGroup,
            SamplerMode::UnderOver | SamplerMode::None => TargetRule::Median,
        })
    }

    /// Target count for each group given the current counts (empty groups are ignored
    /// by the min/max/median rules).
    pub fn targets(&self, counts: &[usize]) -> Result<Vec<usize>> {
        let present: Vec<usize> = counts.iter().copied().filter(|&c| c > 0).collect();
        if present.is_empty() {
            return input_err("cannot resample an empty dataset");
        }
        let t = match self.rule() {
            TargetRule::Explicit(t) => {
                if t.len() != counts.len() || t.contains(&0) {
                    return input_err("explicit targets need one count >= 1 per group");
                }
                return Ok(t);
            }
            TargetRule::MinGroup => *present.iter().min().unwrap(),
            TargetRule::MaxGroup => *present.iter().max().unwrap(),
            TargetRule::Median => {
                let mut s = present.clone();
                s.sort_unstable();
                s[(s.len() - 1) / 2]
            }
        };
        Ok(counts.iter().map(|&c| if c == 0 { 0 } else { t }).collect())
    }
}

/// Rebalances group counts of a training split.
///
/// Shrinking draws rows without replacement. Growing from `n` to `t` rows
/// keeps `⌊t/n⌋` copies of every row and draws the remaining `t mod n`
/// without replacement, so each row appears at least `⌊t/n⌋` times. Output
/// rows are ordered by their original index.
pub fn resample(ds: &GroupedDataset, cfg: &SamplerConfig) -> Result<GroupedDataset> {
    if ds.split() != Split::Train {
        return Err(Error::Usage(
            "resampling is only allowed on a training split".into(),
        ));
    }
    if cfg.mode == SamplerMode::None {
        return Ok(ds.clone());
    }
    let counts = ds.group_counts();
    let targets = cfg.targets(&counts)?;
    let mut rng = Rng::new(cfg.seed);
    let mut picked = Vec::new();
    for (g, (&n, &t)) in counts.iter().zip(&targets).enumerate() {
        let rows = ds.group_indices(g);
        if t > n {
            if n == 0 {
                return input_err(format!("group {g} has no rows to oversample"));
            }
            if cfg.mode == SamplerMode::Undersample {
                return input_err(format!("undersampling cannot grow group {g} from {n} to {t}"));
            }
            for _ in 0..t / n {
                picked.extend_from_slice(&rows);
            }
            picked.extend(rng.sample_indices(n, t % n).into_iter().map(|i| rows[i]));
        } else if t < n {
            if cfg.mode == SamplerMode::Oversample {
                return input_err(format!("oversampling cannot shrink group {g} from {n} to {t}"));
            }
            picked.extend(rng.sample_indices(n, t).into_iter().map(|i| rows[i]));
        } else {
            picked.extend_from_slice(&rows);
        }
    }
    picked.sort_unstable();
    ds.subset(&picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn two_groups(a: usize, b: usize) -> GroupedDataset {
        let m = a + b;
        let x = Tensor::new(vec![m, 1], (0..m).map(|i| i as f64).collect()).unwrap();
        let g: Vec<usize> = (0..m).map(|i| usize::from(i >= a)).collect();
        GroupedDataset::new(x, g.clone(), g, vec!["maj".into(), "min".into()], 2, Split::Train).unwrap()
    }

    #[test]
    fn balanced_u_o_is_identity() {
        let d = two_groups(30, 30);
        let r = resample(&d, &SamplerConfig::new(SamplerMode::UnderOver, 1)).unwrap();
        assert_eq!(r, d);
    }

    #[test]
    fn oversample_counting_bound() {
        let d = two_groups(100, 10);
        let r = resample(&d, &SamplerConfig::new(SamplerMode::Oversample, 5)).unwrap();
        assert_eq!(r.group_counts(), vec![100, 100]);
        for v in 100..110 {
            let c = r.features().data().iter().filter(|&&x| x == v as f64).count();
            assert!(c >= 10, "row {v} appears {c} times");
        }
    }

    #[test]
    fn undersample_is_subset() {
        let d = two_groups(100, 10);
        let r = resample(&d, &SamplerConfig::new(SamplerMode::Undersample, 5)).unwrap();
        assert_eq!(r.group_counts(), vec![10, 10]);
        let mut seen: Vec<f64> = r.features().data().to_vec();
        seen.dedup();
        assert_eq!(seen.len(), 20, "no duplicates when shrinking");
        assert!(seen.iter().all(|&x| x < 110.0 && x.fract() == 0.0));
    }

    #[test]
    fn u_o_uses_median_and_is_deterministic() {
        let d = two_groups(100, 10);
        let cfg = SamplerConfig {
            mode: SamplerMode::UnderOver,
            target: Some(TargetRule::Explicit(vec![40, 40])),
            seed: 9,
        };
        let a = resample(&d, &cfg).unwrap();
        assert_eq!(a, resample(&d, &cfg).unwrap());
        assert_eq!(a.group_counts(), vec![40, 40]);
        // lower median of {100, 10} is 10
        let m = resample(&d, &SamplerConfig::new(SamplerMode::UnderOver, 9)).unwrap();
        assert_eq!(m.group_counts(), vec![10, 10]);
    }

    #[test]
    fn test_split_is_refused() {
        let d = two_groups(5, 5).with_split(Split::Test);
        assert!(matches!(
            resample(&d, &SamplerConfig::new(SamplerMode::UnderOver, 0)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn direction_mismatch_is_an_error() {
        let d = two_groups(10, 20);
        let cfg = SamplerConfig {
            mode: SamplerMode::Undersample,
            target: Some(TargetRule::MaxGroup),
            seed: 0,
        };
        assert!(resample(&d, &cfg).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("u_o".parse::<SamplerMode>().unwrap(), SamplerMode::UnderOver);
        assert_eq!("U-O".parse::<SamplerMode>().unwrap(), SamplerMode::UnderOver);
        assert_eq!("none".parse::<SamplerMode>().unwrap(), SamplerMode::None);
        assert!("smote".parse::<SamplerMode>().is_err());
    }
}
