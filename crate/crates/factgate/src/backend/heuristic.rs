//! Deterministic offline backend.
//!
//! Stands in for an LLM in tests and offline runs. Pair prompts are answered
//! from lexical overlap between the two statements; decomposition prompts
//! are answered by sentence splitting; anything else gets a stable
//! hash-derived distribution so every prompt has exactly one answer across
//! processes and platforms.

use sha2::{Digest, Sha256};
use std::collections::BTreeSet;

use super::{Backend, BackendError, BackendRequest, TokenDistribution, TokenLogprob};
use crate::facts;
use crate::scoring;
use crate::taxonomy::FactualityCategory;

const PRONOUNS: [&str; 11] =
    ["he", "she", "it", "they", "him", "her", "them", "his", "hers", "its", "their"];

/// Pure-function backend: equal prompts always produce equal distributions.
#[derive(Debug, Clone)]
pub struct HeuristicBackend {
    model_id: String,
}

impl Default for HeuristicBackend {
    fn default() -> Self {
        HeuristicBackend { model_id: "heuristic-v1".into() }
    }
}

impl HeuristicBackend {
    pub fn new(model_id: impl Into<String>) -> Self {
        HeuristicBackend { model_id: model_id.into() }
    }

    /// Sentence boundaries are ". ", "! ", "? "; the terminator stays with
    /// its sentence. This is also the backend's fact-decomposition rule.
    pub fn split_sentences(text: &str) -> Vec<String> {
        let mut sentences = Vec::new();
        let mut current = String::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            current.push(c);
            if matches!(c, '.' | '!' | '?') && chars.peek() == Some(&' ') {
                chars.next();
                let s = current.trim();
                if !s.is_empty() {
                    sentences.push(s.to_string());
                }
                current.clear();
            }
        }
        let tail = current.trim();
        if !tail.is_empty() {
            sentences.push(tail.to_string());
        }
        sentences
    }
}

fn lower_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.union(b).count();
    if union == 0 {
        // Two punctuation-only texts are treated as identical.
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Deterministic category score for one summary/source statement pair.
///
/// Let J be the Jaccard similarity of the lowercase alphanumeric token sets.
/// Supported scores J and OutE scores 1-J; EntE is the fraction of
/// capitalized summary tokens (original casing, length >= 2) missing from
/// the source; CorefE fires only when a pronoun appears in a low-overlap
/// summary; the remaining error categories scale 1-J with fixed weights
/// that keep them mutually distinguishable.
pub fn heuristic_pair_score(
    summary_fact: &str,
    source_fact: &str,
    cat: FactualityCategory,
) -> Result<f64, BackendError> {
    if summary_fact.trim().is_empty() || source_fact.trim().is_empty() {
        return Err(BackendError::EmptyText);
    }
    let summary_tokens = lower_tokens(summary_fact);
    let source_tokens = lower_tokens(source_fact);
    let j = jaccard(&summary_tokens, &source_tokens);
    let score = match cat {
        FactualityCategory::Supported => j,
        FactualityCategory::OutE => 1.0 - j,
        FactualityCategory::EntE => {
            let capitalized: Vec<&str> = summary_fact
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| t.chars().count() >= 2)
                .filter(|t| t.chars().next().is_some_and(|c| c.is_uppercase()))
                .collect();
            if capitalized.is_empty() {
                0.0
            } else {
                let absent = capitalized
                    .iter()
                    .filter(|t| !source_tokens.contains(&t.to_lowercase()))
                    .count();
                absent as f64 / capitalized.len() as f64
            }
        }
        FactualityCategory::CorefE => {
            let has_pronoun = PRONOUNS.iter().any(|p| summary_tokens.contains(*p));
            if has_pronoun && j < 0.5 {
                1.0
            } else {
                0.0
            }
        }
        FactualityCategory::PredE => (1.0 - j) * 0.8,
        FactualityCategory::CircE => (1.0 - j) * 0.6,
        FactualityCategory::LinkE => (1.0 - j) * 0.4,
        FactualityCategory::GramE => 0.0,
    };
    Ok(score)
}

/// Encode a probability as a yes/no token distribution. Exact 0 and 1 are
/// kept exact by emitting a single entry; interior values carry both tokens.
fn distribution_for_p(p: f64) -> TokenDistribution {
    if p >= 1.0 {
        TokenDistribution::new(vec![TokenLogprob { token: "yes".into(), logprob: 0.0 }], "yes")
            .expect("valid logprob")
    } else if p <= 0.0 {
        TokenDistribution::new(vec![TokenLogprob { token: "no".into(), logprob: 0.0 }], "no")
            .expect("valid logprob")
    } else {
        let entries = vec![
            TokenLogprob { token: "yes".into(), logprob: p.ln() },
            TokenLogprob { token: "no".into(), logprob: (1.0 - p).ln() },
        ];
        TokenDistribution::new(entries, if p >= 0.5 { "yes" } else { "no" }).expect("valid logprobs")
    }
}

/// Stable pseudo-probability for prompts that match no known template.
fn hash_probability(prompt: &str) -> f64 {
    let digest = Sha256::digest(prompt.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    let v = u64::from_be_bytes(bytes);
    (v as f64 / u64::MAX as f64).clamp(0.01, 0.99)
}

impl Backend for HeuristicBackend {
    fn id(&self) -> &str {
        "heuristic"
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn query(&self, request: &BackendRequest) -> Result<TokenDistribution, BackendError> {
        request.validate()?;
        if let Some(text) = facts::parse_decomposition_prompt(&request.prompt) {
            let bullets: Vec<String> =
                Self::split_sentences(&text).into_iter().map(|s| format!("- {s}")).collect();
            return TokenDistribution::new(Vec::new(), bullets.join("\n"));
        }
        if let Some((source, summary, cat)) = scoring::parse_pair_prompt(&request.prompt) {
            let p = heuristic_pair_score(&summary, &source, cat)?;
            return Ok(distribution_for_p(p));
        }
        Ok(distribution_for_p(hash_probability(&request.prompt)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::yes_probability;

    #[test]
    fn identical_texts_pin_supported_and_oute() {
        let s = "The committee approved the budget.";
        assert_eq!(heuristic_pair_score(s, s, FactualityCategory::Supported).unwrap(), 1.0);
        assert_eq!(heuristic_pair_score(s, s, FactualityCategory::OutE).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_texts_pin_supported_and_oute() {
        let a = "alpha beta gamma";
        let b = "delta epsilon";
        assert_eq!(heuristic_pair_score(a, b, FactualityCategory::Supported).unwrap(), 0.0);
        assert_eq!(heuristic_pair_score(a, b, FactualityCategory::OutE).unwrap(), 1.0);
    }

    #[test]
    fn partial_overlap_supported_is_jaccard() {
        // Token sets {barrow, won, the, match} and {barrow, lost}:
        // union 5, intersection 1.
        let p = heuristic_pair_score("barrow won the match", "barrow lost", FactualityCategory::Supported)
            .unwrap();
        assert!((p - 0.2).abs() < 1e-12);
    }

    #[test]
    fn error_weights_scale_one_minus_jaccard() {
        let (summary, source) = ("barrow won the match", "barrow lost");
        for (cat, weight) in [
            (FactualityCategory::PredE, 0.8),
            (FactualityCategory::CircE, 0.6),
            (FactualityCategory::LinkE, 0.4),
        ] {
            let p = heuristic_pair_score(summary, source, cat).unwrap();
            assert!((p - 0.8 * weight).abs() < 1e-12, "{cat:?}");
        }
        assert_eq!(heuristic_pair_score(summary, source, FactualityCategory::GramE).unwrap(), 0.0);
    }

    #[test]
    fn ente_counts_missing_capitalized_tokens() {
        let p = heuristic_pair_score(
            "Mallory visited Radford",
            "Mallory visited the museum",
            FactualityCategory::EntE,
        )
        .unwrap();
        assert!((p - 0.5).abs() < 1e-12);
        // No capitalized tokens at all -> 0.
        let none =
            heuristic_pair_score("they visited a museum", "something else", FactualityCategory::EntE)
                .unwrap();
        assert_eq!(none, 0.0);
    }

    #[test]
    fn corefe_requires_pronoun_and_low_overlap() {
        let fire = heuristic_pair_score("she opened the gala", "unrelated words entirely", FactualityCategory::CorefE)
            .unwrap();
        assert_eq!(fire, 1.0);
        let overlap_too_high =
            heuristic_pair_score("she opened the gala", "she opened the gala", FactualityCategory::CorefE)
                .unwrap();
        assert_eq!(overlap_too_high, 0.0);
        let no_pronoun =
            heuristic_pair_score("alice opened the gala", "unrelated words entirely", FactualityCategory::CorefE)
                .unwrap();
        assert_eq!(no_pronoun, 0.0);
    }

    #[test]
    fn empty_text_is_an_error() {
        assert!(matches!(
            heuristic_pair_score("  ", "x", FactualityCategory::Supported),
            Err(BackendError::EmptyText)
        ));
    }

    #[test]
    fn pair_scores_are_deterministic() {
        for cat in FactualityCategory::ALL {
            let a = heuristic_pair_score("Norcross signed the accord", "Norcross balked", cat).unwrap();
            let b = heuristic_pair_score("Norcross signed the accord", "Norcross balked", cat).unwrap();
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(
            HeuristicBackend::split_sentences("One here. Two there! Three? Four"),
            ["One here.", "Two there!", "Three?", "Four"]
        );
        assert_eq!(HeuristicBackend::split_sentences("Just one sentence."), ["Just one sentence."]);
        // A dot without a following space does not split.
        assert_eq!(HeuristicBackend::split_sentences("v1.2 shipped"), ["v1.2 shipped"]);
    }

    #[test]
    fn unknown_prompts_get_a_stable_distribution() {
        let backend = HeuristicBackend::default();
        let req = BackendRequest::scoring("what color is the sky?");
        let a = backend.query(&req).unwrap();
        let b = backend.query(&req).unwrap();
        assert_eq!(a, b);
        let p = yes_probability(&a).unwrap();
        assert!((0.01..=0.99).contains(&p));
        // Different prompts should (virtually always) differ.
        let c = backend.query(&BackendRequest::scoring("what color is the sea?")).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pair_prompt_round_trips_through_query() {
        let backend = HeuristicBackend::default();
        let prompt = scoring::pair_prompt("The mill closed.", "The mill closed.", FactualityCategory::Supported);
        let dist = backend.query(&BackendRequest::scoring(prompt)).unwrap();
        assert_eq!(yes_probability(&dist).unwrap(), 1.0);
    }
}
