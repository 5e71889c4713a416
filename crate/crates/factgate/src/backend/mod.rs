//! Scoring backends.
//!
//! A backend answers a prompt with the distribution over the first generated
//! token. Category questions are phrased so that "yes"/"no" mass in that
//! distribution carries the signal; [`yes_probability`] turns a distribution
//! into a probability. Two backends are provided: a remote HTTP backend that
//! reads next-token log-probabilities from an OpenAI-compatible completion
//! endpoint, and a deterministic heuristic backend for offline runs and
//! tests. [`cache::CachedBackend`] wraps either with a content-addressed
//! response cache.

pub mod cache;
pub mod heuristic;
pub mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, CacheEntry, CachedBackend};
pub use heuristic::{heuristic_pair_score, HeuristicBackend};
pub use remote::{RemoteBackend, RemoteConfig};

/// Number of tokens requested for fact-decomposition completions.
pub const COMPLETION_MAX_TOKENS: u32 = 512;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("rate limited (retry after {retry_after:?}s)")]
    RateLimited { retry_after: Option<f64> },
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unparseable response: {0}")]
    UnparseableResponse(String),
    #[error("no yes/no mass and fallback token '{0}' is neither")]
    NoDecisionToken(String),
    #[error("text must be non-empty")]
    EmptyText,
    #[error("prompt must be non-empty")]
    EmptyPrompt,
    #[error("logprob {0} is positive")]
    InvalidLogprob(f64),
    #[error("cache: {0}")]
    Cache(String),
}

/// One backend call: a prompt plus decoding parameters. Scoring requests use
/// a single greedy token with top log-probabilities; decomposition requests
/// ask for a longer completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub prompt: String,
    pub want_top_logprobs: u32,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl BackendRequest {
    /// Single-token request carrying the default of 20 top log-probabilities.
    pub fn scoring(prompt: impl Into<String>) -> Self {
        BackendRequest {
            prompt: prompt.into(),
            want_top_logprobs: 20,
            max_tokens: 1,
            temperature: 0.0,
        }
    }

    /// Multi-token greedy completion (used for fact decomposition).
    pub fn completion(prompt: impl Into<String>, max_tokens: u32) -> Self {
        BackendRequest {
            prompt: prompt.into(),
            want_top_logprobs: 20,
            max_tokens,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        Ok(())
    }
}

/// A token with its log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenLogprob {
    pub token: String,
    pub logprob: f64,
}

/// The distribution over the first generated token, sorted by descending
/// log-probability, plus the greedily generated text itself. For multi-token
/// completions `entries` may be empty and `fallback_text` holds the full
/// generated text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDistribution {
    entries: Vec<TokenLogprob>,
    fallback_text: String,
}

impl TokenDistribution {
    pub fn new(
        mut entries: Vec<TokenLogprob>,
        fallback_text: impl Into<String>,
    ) -> Result<Self, BackendError> {
        for e in &entries {
            if !e.logprob.is_finite() || e.logprob > 0.0 {
                return Err(BackendError::InvalidLogprob(e.logprob));
            }
        }
        entries.sort_by(|a, b| b.logprob.partial_cmp(&a.logprob).expect("finite logprobs"));
        Ok(TokenDistribution { entries, fallback_text: fallback_text.into() })
    }

    pub fn entries(&self) -> &[TokenLogprob] {
        &self.entries
    }

    /// The greedy generation: a single token for scoring requests, the full
    /// completion text for multi-token requests.
    pub fn fallback_text(&self) -> &str {
        &self.fallback_text
    }
}

/// Anything that can answer a [`BackendRequest`]. Implementations are
/// shared across scoring threads, so `&self` methods must be reentrant.
pub trait Backend: Send + Sync {
    /// Stable identifier used in cache keys (e.g. "heuristic", "remote").
    fn id(&self) -> &str;

    /// Model identifier used in cache keys and request payloads.
    fn model_id(&self) -> &str;

    fn query(&self, request: &BackendRequest) -> Result<TokenDistribution, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn query(&self, request: &BackendRequest) -> Result<TokenDistribution, BackendError> {
        (**self).query(request)
    }
}

impl Backend for Box<dyn Backend> {
    fn id(&self) -> &str {
        (**self).id()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn query(&self, request: &BackendRequest) -> Result<TokenDistribution, BackendError> {
        (**self).query(request)
    }
}

/// Probability that the answer is "yes".
///
/// Sums `exp(logprob)` over tokens whose trimmed, lowercased text is exactly
/// `"yes"` (and likewise `"no"`) and renormalizes over the pair. When the
/// combined mass is below `1e-9` the greedy text decides: a "yes" prefix
/// maps to 0.99 and a "no" prefix to 0.01, keeping downstream statistics
/// away from exact 0/1 point masses.
pub fn yes_probability(dist: &TokenDistribution) -> Result<f64, BackendError> {
    let mut p_yes = 0.0f64;
    let mut p_no = 0.0f64;
    for e in dist.entries() {
        match e.token.trim().to_lowercase().as_str() {
            "yes" => p_yes += e.logprob.exp(),
            "no" => p_no += e.logprob.exp(),
            _ => {}
        }
    }
    if p_yes + p_no < 1e-9 {
        let fallback = dist.fallback_text().trim().to_lowercase();
        if fallback.starts_with("yes") {
            Ok(0.99)
        } else if fallback.starts_with("no") {
            Ok(0.01)
        } else {
            Err(BackendError::NoDecisionToken(dist.fallback_text().to_string()))
        }
    } else {
        Ok(p_yes / (p_yes + p_no))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(entries: &[(&str, f64)], fallback: &str) -> TokenDistribution {
        TokenDistribution::new(
            entries.iter().map(|(t, lp)| TokenLogprob { token: t.to_string(), logprob: *lp }).collect(),
            fallback,
        )
        .unwrap()
    }

    #[test]
    fn yes_probability_from_stated_masses() {
        let d = dist(&[("yes", 0.9f64.ln()), ("no", 0.1f64.ln())], "yes");
        assert!((yes_probability(&d).unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn equal_logprobs_give_half() {
        let d = dist(&[("yes", -1.3), ("no", -1.3)], "yes");
        assert!((yes_probability(&d).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn renormalizes_and_matches_surface_forms() {
        let d = dist(&[(" Yes", 0.03f64.ln()), ("no", 0.01f64.ln())], " Yes");
        assert!((yes_probability(&d).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn fallback_prefixes() {
        let yes = dist(&[("the", -0.5)], " Yes, it is");
        assert_eq!(yes_probability(&yes).unwrap(), 0.99);
        let no = dist(&[("the", -0.5)], "No.");
        assert_eq!(yes_probability(&no).unwrap(), 0.01);
        let bad = dist(&[("the", -0.5)], "maybe");
        assert!(matches!(yes_probability(&bad), Err(BackendError::NoDecisionToken(_))));
    }

    #[test]
    fn entries_sorted_and_validated() {
        let d = dist(&[("a", -3.0), ("b", -1.0), ("c", -2.0)], "b");
        let lps: Vec<f64> = d.entries().iter().map(|e| e.logprob).collect();
        assert_eq!(lps, [-1.0, -2.0, -3.0]);
        let bad = TokenDistribution::new(
            vec![TokenLogprob { token: "x".into(), logprob: 0.25 }],
            "x",
        );
        assert!(matches!(bad, Err(BackendError::InvalidLogprob(_))));
    }

    proptest! {
        // Adding a constant to every logprob cancels in the renormalization.
        #[test]
        fn shift_invariance(
            py in 1e-4f64..0.9,
            pn in 1e-4f64..0.9,
            shift in -8.0f64..0.0,
        ) {
            let base = dist(&[("yes", py.ln()), ("no", pn.ln())], "yes");
            let shifted = dist(&[("yes", py.ln() + shift), ("no", pn.ln() + shift)], "yes");
            let a = yes_probability(&base).unwrap();
            let b = yes_probability(&shifted).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
