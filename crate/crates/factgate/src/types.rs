//! Core value types shared by every stage of the pipeline.
//!
//! Everything here is an immutable value type: safe to clone, share, and
//! send across threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::FactualityCategory;

#[derive(Debug, Error, PartialEq)]
pub enum DomainError {
    #[error("atomic fact text is empty after trimming")]
    EmptyFactText,
    #[error("feature vector must have exactly {expected} values, got {got}")]
    WrongFeatureCount { expected: usize, got: usize },
    #[error("feature {index} value {value} outside [0, 1]")]
    FeatureOutOfRange { index: usize, value: f64 },
}

/// Which document a fact came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactOrigin {
    Source,
    Summary,
}

/// How a fact was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Backend,
    Manual,
}

/// One minimal standalone factual claim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AtomicFact {
    pub text: String,
    pub origin: FactOrigin,
    /// 0-based ordinal within its document; unique and contiguous.
    pub index: usize,
    pub provenance: Provenance,
}

impl AtomicFact {
    pub fn new(
        text: impl Into<String>,
        origin: FactOrigin,
        index: usize,
        provenance: Provenance,
    ) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyFactText);
        }
        Ok(AtomicFact { text, origin, index, provenance })
    }
}

/// The eight aggregated category probabilities for one summary fact, indexed
/// by the canonical category order. Every value lies in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector([f64; FactualityCategory::COUNT]);

impl FeatureVector {
    pub fn new(values: [f64; FactualityCategory::COUNT]) -> Result<Self, DomainError> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(DomainError::FeatureOutOfRange { index, value });
            }
        }
        Ok(FeatureVector(values))
    }

    pub fn get(&self, cat: FactualityCategory) -> f64 {
        self.0[cat.index()]
    }

    pub fn values(&self) -> &[f64; FactualityCategory::COUNT] {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = DomainError;

    fn try_from(v: Vec<f64>) -> Result<Self, DomainError> {
        let arr: [f64; FactualityCategory::COUNT] =
            v.as_slice().try_into().map_err(|_| DomainError::WrongFeatureCount {
                expected: FactualityCategory::COUNT,
                got: v.len(),
            })?;
        FeatureVector::new(arr)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(v: FeatureVector) -> Vec<f64> {
        v.0.to_vec()
    }
}

/// Classifier class: is a fact (or summary) factually consistent?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Factual,
    NotFactual,
}

impl ClassLabel {
    /// Class index used for parameter storage: factual = 0, not_factual = 1.
    pub fn index(self) -> usize {
        match self {
            ClassLabel::Factual => 0,
            ClassLabel::NotFactual => 1,
        }
    }

    /// Benchmark convention: 1 is factually consistent, 0 otherwise.
    pub fn from_benchmark(label: u8) -> Self {
        if label == 1 {
            ClassLabel::Factual
        } else {
            ClassLabel::NotFactual
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Factual => "factual",
            ClassLabel::NotFactual => "not_factual",
        }
    }
}

/// Summary-level judgement under the worst-fact rule: the summary score is
/// the minimum per-fact posterior, and the summary is factual only if every
/// fact is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// P(factual | features) for each summary fact, in fact order.
    pub fact_posteriors: Vec<f64>,
    /// Minimum of `fact_posteriors`.
    pub summary_score: f64,
    pub summary_label: ClassLabel,
}
