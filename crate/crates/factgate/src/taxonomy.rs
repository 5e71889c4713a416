//! The eight-way factuality taxonomy used to relate a summary statement to a
//! source statement: seven error categories plus one support category.
//!
//! The category order defined here is canonical. Feature vectors, score
//! files, and model files all index features by this order, and the
//! lowercase identifiers returned by [`FactualityCategory::identifier`] are
//! the exact strings used in file formats.

use serde::{Deserialize, Serialize};

/// Whether a category flags an error or asserts support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    Error,
    Support,
}

/// One of the eight factuality categories.
///
/// Declaration order is the canonical feature order; `category as usize`
/// is the feature index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactualityCategory {
    /// The predicate of the summary statement contradicts the source.
    PredE,
    /// The primary arguments of the predicate (or their attributes) are wrong.
    EntE,
    /// Circumstantial detail around the predicate (location, time) is wrong.
    CircE,
    /// A pronoun or reference has an incorrect or non-existent antecedent.
    CorefE,
    /// Statements are linked together (temporally, causally) in a way the
    /// source does not support.
    LinkE,
    /// The statement contains information that is not in the source at all.
    OutE,
    /// The statement is too ungrammatical to carry meaning.
    GramE,
    /// The statement is perfectly supported by the source.
    Supported,
}

impl FactualityCategory {
    /// Number of categories.
    pub const COUNT: usize = 8;

    /// All categories in canonical order.
    pub const ALL: [FactualityCategory; 8] = [
        FactualityCategory::PredE,
        FactualityCategory::EntE,
        FactualityCategory::CircE,
        FactualityCategory::CorefE,
        FactualityCategory::LinkE,
        FactualityCategory::OutE,
        FactualityCategory::GramE,
        FactualityCategory::Supported,
    ];

    /// Feature index of this category in the canonical order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    /// `Supported` is the single support-polarity member; the rest are errors.
    pub fn polarity(self) -> Polarity {
        match self {
            FactualityCategory::Supported => Polarity::Support,
            _ => Polarity::Error,
        }
    }

    /// Lowercase identifier used in file formats.
    pub fn identifier(self) -> &'static str {
        match self {
            FactualityCategory::PredE => "prede",
            FactualityCategory::EntE => "ente",
            FactualityCategory::CircE => "circe",
            FactualityCategory::CorefE => "corefe",
            FactualityCategory::LinkE => "linke",
            FactualityCategory::OutE => "oute",
            FactualityCategory::GramE => "grame",
            FactualityCategory::Supported => "supported",
        }
    }

    pub fn from_identifier(id: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|c| c.identifier() == id)
    }

    /// The fixed yes/no question asked about a summary/source statement pair.
    ///
    /// These strings are constants: the same category always yields the
    /// byte-identical question, which keeps prompts, cache keys, and scores
    /// reproducible.
    pub fn question(self) -> &'static str {
        match self {
            FactualityCategory::PredE => {
                "Is the predicate in the summary statement inconsistent with the source statement? Answer yes or no."
            }
            FactualityCategory::EntE => {
                "Are the primary arguments of the predicate in the summary statement incorrect according to the source statement? Answer yes or no."
            }
            FactualityCategory::CircE => {
                "Is the circumstantial information (such as location or time) around the predicate in the summary statement incorrect according to the source statement? Answer yes or no."
            }
            FactualityCategory::CorefE => {
                "Does a pronoun or reference in the summary statement have an incorrect or non-existent antecedent? Answer yes or no."
            }
            FactualityCategory::LinkE => {
                "Is the way statements are linked together in the summary statement (such as temporal ordering or causal links) inconsistent with the source statement? Answer yes or no."
            }
            FactualityCategory::OutE => {
                "Does the summary statement contain information not present in the source statement? Answer yes or no."
            }
            FactualityCategory::GramE => {
                "Is the grammar of the summary statement so erroneous that the statement becomes meaningless? Answer yes or no."
            }
            FactualityCategory::Supported => {
                "Is the summary statement perfectly supported by the source statement? Answer yes or no."
            }
        }
    }
}

/// Question text for a category. Thin wrapper kept for discoverability.
pub fn category_question(cat: FactualityCategory) -> &'static str {
    cat.question()
}
