//! Deterministic synthetic corpus with known ground truth.
//!
//! Factual records copy source sentences verbatim into the summary;
//! non-factual records apply exactly one mechanical perturbation (swap an
//! entity for an unseen one, negate the verb, or append a sentence of novel
//! tokens). All three perturbations are detectable from lexical overlap, so
//! the heuristic backend separates the classes and the end-to-end pipeline
//! has a reproducible acceptance target. This is test scaffolding, not a
//! realistic adversarial benchmark.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{BenchRecord, Cut, Origin};
use crate::facts::FactSet;
use crate::types::{FactOrigin, Provenance};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("n_factual and n_nonfactual must both be >= 1")]
    EmptyClass,
    #[error("at least one perturbation kind is required")]
    NoPerturbations,
}

/// Mechanical summary corruptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    EntitySwap,
    PredicateNegation,
    OutOfArticleAddition,
}

impl Perturbation {
    pub const ALL: [Perturbation; 3] =
        [Perturbation::EntitySwap, Perturbation::PredicateNegation, Perturbation::OutOfArticleAddition];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_factual: usize,
    pub n_nonfactual: usize,
    pub seed: u64,
    pub perturbations: Vec<Perturbation>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_factual: 20,
            n_nonfactual: 20,
            seed: 0,
            perturbations: Perturbation::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<BenchRecord>,
    /// Source and summary fact sets per record, in record order.
    pub facts: Vec<FactSet>,
}

const SUBJECTS: [&str; 10] = [
    "Arden Rovers",
    "Calder United",
    "Weston Albion",
    "Halford City",
    "Norcross Athletic",
    "Eastvale Rangers",
    "Marwick Harriers",
    "Pelton Borough",
    "Southmere Town",
    "Kelbrook Wanderers",
];

// Disjoint from SUBJECTS so an entity swap always introduces a token the
// source never mentions.
const SWAP_ENTITIES: [&str; 6] =
    ["Bramford", "Ostlake", "Queniborough", "Tarnfield", "Ulverscroft", "Vexten"];

const VERBS: [&str; 8] =
    ["opened", "visited", "won", "signed", "announced", "toured", "inspected", "secured"];

const OBJECTS: [&str; 9] = [
    "the harbour museum",
    "a new training ground",
    "the regional final",
    "a supply agreement",
    "the northern bridge project",
    "a community garden",
    "the coastal defence review",
    "an apprenticeship scheme",
    "the winter funding round",
];

const DAYS: [&str; 7] =
    ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"];

// Novel vocabulary: none of these tokens appear in any generated source.
const NOVEL_SENTENCES: [&str; 4] = [
    "Zephyrquill emissaries convened beside the opaline viaduct.",
    "Glimmervane auditors tabulated the crepuscular ledgers.",
    "Umbraline couriers traversed the vitrified causeway.",
    "Quillstone archivists catalogued the seraphic orrery.",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
    let verb = VERBS[rng.random_range(0..VERBS.len())];
    let object = OBJECTS[rng.random_range(0..OBJECTS.len())];
    let day = DAYS[rng.random_range(0..DAYS.len())];
    format!("{subject} has {verb} {object} on {day}.")
}

fn entity_swap(sentence: &str, rng: &mut ChaCha8Rng) -> String {
    let replacement = SWAP_ENTITIES[rng.random_range(0..SWAP_ENTITIES.len())];
    // Replace the leading subject token; it is always capitalized.
    match sentence.split_once(' ') {
        Some((_, rest)) => format!("{replacement} {rest}"),
        None => replacement.to_string(),
    }
}

fn predicate_negation(sentence: &str) -> String {
    sentence.replacen(" has ", " has not ", 1)
}

fn out_of_article_addition(sentence: &str, rng: &mut ChaCha8Rng) -> String {
    let extra = NOVEL_SENTENCES[rng.random_range(0..NOVEL_SENTENCES.len())];
    format!("{sentence} {extra}")
}

/// Generate the corpus. Deterministic in `spec.seed`: a single ChaCha8
/// stream drives every draw in a fixed order.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticCorpus, SynthError> {
    if spec.n_factual == 0 || spec.n_nonfactual == 0 {
        return Err(SynthError::EmptyClass);
    }
    if spec.perturbations.is_empty() {
        return Err(SynthError::NoPerturbations);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut records = Vec::new();
    let mut facts = Vec::new();
    let total = spec.n_factual + spec.n_nonfactual;
    for idx in 0..total {
        let factual = idx < spec.n_factual;
        let doc_id = format!("syn-{idx:04}");
        let n_sentences = rng.random_range(3..=5);
        let source_sentences: Vec<String> = (0..n_sentences).map(|_| sentence(&mut rng)).collect();
        let doc = source_sentences.join(" ");

        // Summary copies 1..=3 distinct source sentences, in source order.
        let n_copy = rng.random_range(1..=3.min(n_sentences));
        let mut picks: Vec<usize> = (0..n_sentences).collect();
        for i in 0..n_copy {
            let j = rng.random_range(i..picks.len());
            picks.swap(i, j);
        }
        picks.truncate(n_copy);
        picks.sort_unstable();
        let mut summary_sentences: Vec<String> =
            picks.iter().map(|&i| source_sentences[i].clone()).collect();

        let label = if factual {
            1
        } else {
            let kind = spec.perturbations[idx % spec.perturbations.len()];
            let target = rng.random_range(0..summary_sentences.len());
            summary_sentences[target] = match kind {
                Perturbation::EntitySwap => entity_swap(&summary_sentences[target], &mut rng),
                Perturbation::PredicateNegation => predicate_negation(&summary_sentences[target]),
                Perturbation::OutOfArticleAddition => {
                    out_of_article_addition(&summary_sentences[target], &mut rng)
                }
            };
            0
        };
        let summary = summary_sentences.join(" ");

        // Alternate cuts within each class so both cuts stay balanced.
        let cut = if idx % 2 == 0 { Cut::Val } else { Cut::Test };
        let origin = if idx % 2 == 0 { Origin::Cnndm } else { Origin::Xsum };
        records.push(BenchRecord {
            dataset_name: "synthetic".into(),
            origin,
            doc_id: doc_id.clone(),
            doc,
            summary,
            model_name: "synthetic-v1".into(),
            label: Some(label),
            cut: Some(cut),
            system_scores: Default::default(),
            system_labels: Default::default(),
        });

        // Facts are the sentences themselves. The perturbed summary sentence
        // stays one fact; an appended novel sentence becomes its own fact.
        let summary_facts: Vec<String> = summary_sentences
            .iter()
            .flat_map(|s| crate::backend::HeuristicBackend::split_sentences(s))
            .collect();
        facts.push(
            FactSet::from_texts(&doc_id, FactOrigin::Source, &source_sentences, Provenance::Manual)
                .expect("generated sentences are non-empty"),
        );
        facts.push(
            FactSet::from_texts(&doc_id, FactOrigin::Summary, &summary_facts, Provenance::Manual)
                .expect("generated sentences are non-empty"),
        );
    }
    Ok(SyntheticCorpus { records, facts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::heuristic_pair_score;
    use crate::taxonomy::FactualityCategory;

    fn spec(n_factual: usize, n_nonfactual: usize, kinds: &[Perturbation]) -> SyntheticSpec {
        SyntheticSpec { n_factual, n_nonfactual, seed: 11, perturbations: kinds.to_vec() }
    }

    #[test]
    fn counts_and_labels_are_balanced() {
        let corpus = generate(&spec(5, 5, &Perturbation::ALL)).unwrap();
        assert_eq!(corpus.records.len(), 10);
        assert_eq!(corpus.facts.len(), 20);
        let positives = corpus.records.iter().filter(|r| r.label == Some(1)).count();
        assert_eq!(positives, 5);
        // Both cuts contain both classes.
        for cut in [Cut::Val, Cut::Test] {
            let in_cut: Vec<_> = corpus.records.iter().filter(|r| r.cut == Some(cut)).collect();
            assert!(in_cut.iter().any(|r| r.label == Some(1)));
            assert!(in_cut.iter().any(|r| r.label == Some(0)));
        }
    }

    #[test]
    fn same_seed_reproduces_byte_identical_corpora() {
        let a = generate(&spec(6, 6, &Perturbation::ALL)).unwrap();
        let b = generate(&spec(6, 6, &Perturbation::ALL)).unwrap();
        assert_eq!(a, b);
        let different_seed = SyntheticSpec { seed: 12, ..spec(6, 6, &Perturbation::ALL) };
        assert_ne!(a, generate(&different_seed).unwrap());
    }

    #[test]
    fn entity_swap_mentions_an_unseen_entity() {
        let corpus = generate(&spec(2, 4, &[Perturbation::EntitySwap])).unwrap();
        for record in corpus.records.iter().filter(|r| r.label == Some(0)) {
            let doc_tokens: std::collections::HashSet<&str> =
                record.doc.split_whitespace().collect();
            let has_novel_entity = record
                .summary
                .split_whitespace()
                .any(|t| t.chars().next().is_some_and(|c| c.is_uppercase()) && !doc_tokens.contains(t));
            assert!(has_novel_entity, "summary: {}", record.summary);
        }
    }

    #[test]
    fn predicate_negation_inserts_not() {
        let corpus = generate(&spec(1, 3, &[Perturbation::PredicateNegation])).unwrap();
        for record in corpus.records.iter().filter(|r| r.label == Some(0)) {
            assert!(record.summary.contains(" has not "), "summary: {}", record.summary);
            assert!(!record.doc.contains(" has not "));
        }
    }

    #[test]
    fn factual_records_score_cleanly_under_the_heuristic() {
        let corpus = generate(&spec(6, 6, &Perturbation::ALL)).unwrap();
        for (record, chunk) in corpus.records.iter().zip(corpus.facts.chunks(2)) {
            let (source_set, summary_set) = (&chunk[0], &chunk[1]);
            if record.label != Some(1) {
                continue;
            }
            for fact in &summary_set.facts {
                let best_support = source_set
                    .facts
                    .iter()
                    .map(|s| {
                        heuristic_pair_score(&fact.text, &s.text, FactualityCategory::Supported).unwrap()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                let worst_oute = source_set
                    .facts
                    .iter()
                    .map(|s| heuristic_pair_score(&fact.text, &s.text, FactualityCategory::OutE).unwrap())
                    .fold(f64::INFINITY, f64::min);
                assert!(best_support >= 0.99, "support {best_support} for '{}'", fact.text);
                assert!(worst_oute <= 0.01, "oute {worst_oute} for '{}'", fact.text);
            }
        }
    }

    #[test]
    fn novel_addition_yields_a_high_oute_fact() {
        let corpus = generate(&spec(1, 3, &[Perturbation::OutOfArticleAddition])).unwrap();
        for (record, chunk) in corpus.records.iter().zip(corpus.facts.chunks(2)) {
            if record.label != Some(0) {
                continue;
            }
            let (source_set, summary_set) = (&chunk[0], &chunk[1]);
            let max_min_oute = summary_set
                .facts
                .iter()
                .map(|fact| {
                    source_set
                        .facts
                        .iter()
                        .map(|s| {
                            heuristic_pair_score(&fact.text, &s.text, FactualityCategory::OutE).unwrap()
                        })
                        .fold(f64::INFINITY, f64::min)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(max_min_oute >= 0.5, "max aggregated OutE = {max_min_oute}");
        }
    }

    #[test]
    fn invalid_specs_error() {
        assert!(matches!(generate(&spec(0, 1, &Perturbation::ALL)), Err(SynthError::EmptyClass)));
        assert!(matches!(generate(&spec(1, 1, &[])), Err(SynthError::NoPerturbations)));
    }
}
