//! Weighted logarithmic cost of allocator calls.
//!
//! Every allocator call `f` operating on `b` bytes costs `w(f) * log2(b)`.
//! Churn between two markers is the sum of those costs over the calls made
//! in between. Byte counts of 0 are treated as 1, so zero-byte calls cost
//! nothing but are still counted.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scalar::ChurnScalar;

/// Version tag of the shipped default weights.
pub const DEFAULT_MODEL_VERSION: &str = "paper-v1";

/// The four intercepted allocator entry points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocFnKind {
    Malloc,
    Calloc,
    Realloc,
    Free,
}

impl AllocFnKind {
    pub const ALL: [AllocFnKind; 4] = [
        AllocFnKind::Malloc,
        AllocFnKind::Calloc,
        AllocFnKind::Realloc,
        AllocFnKind::Free,
    ];

    /// Dense index into per-kind arrays, in the order of [`AllocFnKind::ALL`].
    pub const fn index(self) -> usize {
        match self {
            AllocFnKind::Malloc => 0,
            AllocFnKind::Calloc => 1,
            AllocFnKind::Realloc => 2,
            AllocFnKind::Free => 3,
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            AllocFnKind::Malloc => "malloc",
            AllocFnKind::Calloc => "calloc",
            AllocFnKind::Realloc => "realloc",
            AllocFnKind::Free => "free",
        }
    }
}

impl fmt::Display for AllocFnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AllocFnKind {
    type Err = CostModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AllocFnKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| CostModelError::UnknownKey(s.to_owned()))
    }
}

/// A single problem found by [`validate_cost_model`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelViolation {
    MissingWeight(AllocFnKind),
    NegativeWeight(AllocFnKind),
    NonFiniteWeight(AllocFnKind),
    EmptyVersion,
}

impl fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelViolation::MissingWeight(k) => write!(f, "missing weight for {k}"),
            ModelViolation::NegativeWeight(k) => write!(f, "negative weight for {k}"),
            ModelViolation::NonFiniteWeight(k) => write!(f, "non-finite weight for {k}"),
            ModelViolation::EmptyVersion => f.write_str("empty model_version"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CostModelError {
    #[error("invalid cost model: {}", join_violations(.0))]
    Invalid(Vec<ModelViolation>),
    #[error("unknown cost model key `{0}`")]
    UnknownKey(String),
    #[error("cost model key `{key}` has an invalid value: {reason}")]
    BadValue { key: String, reason: String },
    #[error("cost model document is not a flat key/value table: {0}")]
    Syntax(String),
    #[error("cannot read cost model file: {0}")]
    Io(#[from] std::io::Error),
}

fn join_violations(v: &[ModelViolation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Per-function weights plus a version tag identifying the weight set.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel<T> {
    weights: BTreeMap<AllocFnKind, T>,
    model_version: String,
}

impl<T: ChurnScalar> CostModel<T> {
    /// Builds a model from the given weights without validating it.
    pub fn from_weights(
        weights: impl IntoIterator<Item = (AllocFnKind, T)>,
        model_version: impl Into<String>,
    ) -> Self {
        Self {
            weights: weights.into_iter().collect(),
            model_version: model_version.into(),
        }
    }

    /// Builds and validates a model in one step.
    pub fn new(
        weights: impl IntoIterator<Item = (AllocFnKind, T)>,
        model_version: impl Into<String>,
    ) -> Result<Self, CostModelError> {
        let model = Self::from_weights(weights, model_version);
        validate_cost_model(&model).map_err(CostModelError::Invalid)?;
        Ok(model)
    }

    pub fn weight(&self, kind: AllocFnKind) -> Option<T> {
        self.weights.get(&kind).copied()
    }

    pub fn weights(&self) -> impl Iterator<Item = (AllocFnKind, T)> + '_ {
        self.weights.iter().map(|(k, w)| (*k, *w))
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    /// Cost of one call; see [`event_cost`].
    #[inline]
    pub fn event_cost(&self, kind: AllocFnKind, bytes: u64) -> T {
        event_cost(self, kind, bytes)
    }

    /// Returns a copy with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: T, model_version: impl Into<String>) -> Self {
        Self {
            weights: self
                .weights
                .iter()
                .map(|(k, w)| (*k, *w * factor))
                .collect(),
            model_version: model_version.into(),
        }
    }

    /// Converts the weights to another scalar type.
    pub fn cast<U: ChurnScalar>(&self) -> CostModel<U> {
        CostModel {
            weights: self
                .weights
                .iter()
                .map(|(k, w)| (*k, U::from_f64_lossy(w.to_f64_lossy())))
                .collect(),
            model_version: self.model_version.clone(),
        }
    }

    /// Parses the flat `key = value` override format: `malloc`, `calloc`,
    /// `realloc`, `free` map to decimal weights and `model_version` to a
    /// string. All five keys are required.
    pub fn from_override_str(doc: &str) -> Result<Self, CostModelError> {
        let table: toml::Table = doc
            .parse()
            .map_err(|e: toml::de::Error| CostModelError::Syntax(e.message().to_owned()))?;
        let mut weights = BTreeMap::new();
        let mut version = None;
        for (key, value) in &table {
            if key == "model_version" {
                let s = value.as_str().ok_or_else(|| CostModelError::BadValue {
                    key: key.clone(),
                    reason: "expected a string".into(),
                })?;
                version = Some(s.to_owned());
                continue;
            }
            let kind: AllocFnKind = key.parse()?;
            let w = match value {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                _ => {
                    return Err(CostModelError::BadValue {
                        key: key.clone(),
                        reason: "expected a decimal number".into(),
                    })
                }
            };
            weights.insert(kind, T::from_f64_lossy(w));
        }
        let version = version.ok_or_else(|| CostModelError::BadValue {
            key: "model_version".into(),
            reason: "missing".into(),
        })?;
        Self::new(weights, version)
    }

    pub fn load(path: &Path) -> Result<Self, CostModelError> {
        Self::from_override_str(&std::fs::read_to_string(path)?)
    }
}

impl<T: ChurnScalar> Default for CostModel<T> {
    fn default() -> Self {
        default_cost_model()
    }
}

/// The shipped weights: calloc 2, free 1, malloc 1, realloc 3.
pub fn default_cost_model<T: ChurnScalar>() -> CostModel<T> {
    let w = |x: u8| T::from_u8(x).expect("small integers are representable");
    CostModel::from_weights(
        [
            (AllocFnKind::Calloc, w(2)),
            (AllocFnKind::Free, w(1)),
            (AllocFnKind::Malloc, w(1)),
            (AllocFnKind::Realloc, w(3)),
        ],
        DEFAULT_MODEL_VERSION,
    )
}

/// `weight(kind) * log2(max(bytes, 1))`.
///
/// A kind without a weight costs zero; sessions only accept validated models,
/// so that case does not arise during recording.
#[inline]
pub fn event_cost<T: ChurnScalar>(model: &CostModel<T>, kind: AllocFnKind, bytes: u64) -> T {
    let w = model.weight(kind).unwrap_or_else(T::zero);
    w * T::from_bytes(bytes.max(1)).log2()
}

/// Checks that all four kinds carry a finite, nonnegative weight.
pub fn validate_cost_model<T: ChurnScalar>(
    model: &CostModel<T>,
) -> Result<(), Vec<ModelViolation>> {
    let mut violations = Vec::new();
    for kind in AllocFnKind::ALL {
        match model.weight(kind) {
            None => violations.push(ModelViolation::MissingWeight(kind)),
            Some(w) if !w.is_finite() => violations.push(ModelViolation::NonFiniteWeight(kind)),
            Some(w) if w < T::zero() => violations.push(ModelViolation::NegativeWeight(kind)),
            Some(_) => {}
        }
    }
    if model.model_version.trim().is_empty() {
        violations.push(ModelViolation::EmptyVersion);
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}
