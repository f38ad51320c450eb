use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Error, Result};

/// Numeric format of a weight tensor after quantization.
///
/// Serialized as `fp32`, `fp16` or `int{q}` with `2 <= q <= 8`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PrecisionSpec {
    Float32,
    Float16,
    Int(u8),
}

impl PrecisionSpec {
    pub fn int(bits: u8) -> Result<Self> {
        if !(2..=8).contains(&bits) {
            return input_err(format!("integer precision must have 2..=8 bits, got {bits}"));
        }
        Ok(PrecisionSpec::Int(bits))
    }

    pub fn bits(&self) -> u8 {
        match self {
            PrecisionSpec::Float32 => 32,
            PrecisionSpec::Float16 => 16,
            PrecisionSpec::Int(q) => *q,
        }
    }

    pub fn is_integer(&self) -> bool {
        matches!(self, PrecisionSpec::Int(_))
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PrecisionSpec::Int(q) => PrecisionSpec::int(*q).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Parses a comma-separated list such as `fp32,int8,int4`.
    pub fn parse_list(s: &str) -> Result<Vec<Self>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }
}

impl fmt::Display for PrecisionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrecisionSpec::Float32 => f.write_str("fp32"),
            PrecisionSpec::Float16 => f.write_str("fp16"),
            PrecisionSpec::Int(q) => write!(f, "int{q}"),
        }
    }
}

impl FromStr for PrecisionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp32" | "float32" | "f32" => Ok(PrecisionSpec::Float32),
            "fp16" | "float16" | "f16" => Ok(PrecisionSpec::Float16),
            other => match other.strip_prefix("int").map(str::parse::<u8>) {
                Some(Ok(q)) => PrecisionSpec::int(q),
                _ => input_err(format!("unknown precision '{s}'")),
            },
        }
    }
}

impl TryFrom<String> for PrecisionSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PrecisionSpec> for String {
    fn from(p: PrecisionSpec) -> String {
        p.to_string()
    }
}

/// Per-layer precision assignment: a default plus explicit layer overrides.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MixedPrecisionMap {
    pub default_spec: PrecisionSpec,
    #[serde(default)]
    pub overrides: BTreeMap<usize, PrecisionSpec>,
}

impl MixedPrecisionMap {
    pub fn uniform(spec: PrecisionSpec) -> Self {
        Self {
            default_spec: spec,
            overrides: BTreeMap::new(),
        }
    }

    /// `edge` on the first and last layer, `target` everywhere else.
    pub fn first_last(target: PrecisionSpec, edge: PrecisionSpec, num_layers: usize) -> Self {
        let mut overrides = BTreeMap::new();
        if num_layers > 0 {
            overrides.insert(0, edge);
            overrides.insert(num_layers - 1, edge);
        }
        Self {
            default_spec: target,
            overrides,
        }
    }

    pub fn spec_for(&self, layer: usize) -> PrecisionSpec {
        self.overrides
            .get(&layer)
            .copied()
            .unwrap_or(self.default_spec)
    }

    pub fn validate(&self, num_layers: usize) -> Result<()> {
        self.default_spec.validate()?;
        for (&l, s) in &self.overrides {
            if l >= num_layers {
                return input_err(format!(
                    "precision override for layer {l} but the network has {num_layers} layers"
                ));
            }
            s.validate()?;
        }
        Ok(())
    }

    /// True when every layer resolves to `fp32`.
    pub fn is_passthrough(&self, num_layers: usize) -> bool {
        (0..num_layers).all(|l| self.spec_for(l) == PrecisionSpec::Float32)
    }

    /// Short label, e.g. `int4` or `int4[0:int8,2:int8]`.
    pub fn label(&self) -> String {
        if self.overrides.is_empty() {
            return self.default_spec.to_string();
        }
        let o: Vec<String> = self
            .overrides
            .iter()
            .map(|(l, s)| format!("{l}:{s}"))
            .collect();
        format!("{}[{}]", self.default_spec, o.join(","))
    }
}

impl From<PrecisionSpec> for MixedPrecisionMap {
    fn from(spec: PrecisionSpec) -> Self {
        Self::uniform(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_display() {
        for s in ["fp32", "fp16", "int8", "int4", "int3", "int2"] {
            let p: PrecisionSpec = s.parse().unwrap();
            assert_eq!(p.to_string(), s);
        }
        assert!("int1".parse::<PrecisionSpec>().is_err());
        assert!("int9".parse::<PrecisionSpec>().is_err());
        assert!("bf16".parse::<PrecisionSpec>().is_err());
        assert_eq!(
            PrecisionSpec::parse_list("fp32, int8,int2").unwrap(),
            vec![PrecisionSpec::Float32, PrecisionSpec::Int(8), PrecisionSpec::Int(2)]
        );
    }

    #[test]
    fn serde_as_string() {
        let j = serde_json::to_string(&PrecisionSpec::Int(4)).unwrap();
        assert_eq!(j, "\"int4\"");
        assert!(serde_json::from_str::<PrecisionSpec>("\"int12\"").is_err());
    }

    #[test]
    fn mixed_map_resolution_and_validation() {
        let m = MixedPrecisionMap::first_last(PrecisionSpec::Int(4), PrecisionSpec::Int(8), 3);
        assert_eq!(m.spec_for(0), PrecisionSpec::Int(8));
        assert_eq!(m.spec_for(1), PrecisionSpec::Int(4));
        assert_eq!(m.spec_for(2), PrecisionSpec::Int(8));
        assert!(m.validate(3).is_ok());
        assert!(m.validate(2).is_err());
        assert_eq!(m.label(), "int4[0:int8,2:int8]");
        let j = serde_json::to_string(&m).unwrap();
        assert_eq!(serde_json::from_str::<MixedPrecisionMap>(&j).unwrap(), m);
    }
}
