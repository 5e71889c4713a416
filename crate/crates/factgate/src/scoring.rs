//! Pairwise cross-comparison and feature aggregation.
//!
//! Every (summary fact, source fact, category) triple becomes one backend
//! query; a complete matrix therefore holds n_summary x n_source x 8
//! probabilities. Aggregation collapses the source axis into one
//! [`FeatureVector`] per summary fact: the support category keeps its best
//! pair (any source fact can support a claim), the error categories keep
//! their worst (an error against the article must hold against every source
//! fact). Pairwise aggregation is known to miss claims that need several
//! source facts combined; that limitation is accepted here.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{yes_probability, Backend, BackendError, BackendRequest};
use crate::dataset::Cut;
use crate::facts::FactSet;
use crate::taxonomy::FactualityCategory;
use crate::types::{FactOrigin, FeatureVector};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("{origin:?} fact set is empty")]
    EmptyFactSet { origin: FactOrigin },
    #[error("backend failed at summary {summary_idx}, source {source_idx}, {category:?}: {source}")]
    Backend {
        summary_idx: usize,
        source_idx: usize,
        category: FactualityCategory,
        source: BackendError,
    },
    #[error("summary fact index {index} out of range ({len} facts)")]
    IndexOutOfRange { index: usize, len: usize },
}

/// One scored (summary fact, source fact, category) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub summary_idx: usize,
    pub source_idx: usize,
    pub category: FactualityCategory,
    pub p_yes: f64,
}

/// Complete dense score matrix for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    doc_id: String,
    n_summary: usize,
    n_source: usize,
    values: Vec<f64>,
}

impl ScoreMatrix {
    fn cell(&self, i: usize, j: usize, cat: FactualityCategory) -> usize {
        (i * self.n_source + j) * FactualityCategory::COUNT + cat.index()
    }

    pub fn doc_id(&self) -> &str {
        &self.doc_id
    }

    /// (n_summary, n_source, category count)
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_summary, self.n_source, FactualityCategory::COUNT)
    }

    pub fn get(&self, i: usize, j: usize, cat: FactualityCategory) -> f64 {
        self.values[self.cell(i, j, cat)]
    }

    pub fn pair_scores(&self) -> impl Iterator<Item = PairScore> + '_ {
        (0..self.n_summary).flat_map(move |i| {
            (0..self.n_source).flat_map(move |j| {
                FactualityCategory::ALL.iter().map(move |&category| PairScore {
                    summary_idx: i,
                    source_idx: j,
                    category,
                    p_yes: self.get(i, j, category),
                })
            })
        })
    }

    /// Raw pair rows for one summary fact: one 8-vector per source fact.
    pub fn pairs_for_summary(&self, i: usize) -> Result<Vec<Vec<f64>>, ScoringError> {
        if i >= self.n_summary {
            return Err(ScoringError::IndexOutOfRange { index: i, len: self.n_summary });
        }
        Ok((0..self.n_source)
            .map(|j| FactualityCategory::ALL.iter().map(|&c| self.get(i, j, c)).collect())
            .collect())
    }
}

/// Fixed pair prompt: one source fact at a time, never the whole article.
pub fn pair_prompt(source_fact: &str, summary_fact: &str, cat: FactualityCategory) -> String {
    format!(
        "Source statement: {source_fact}\nSummary statement: {summary_fact}\nQuestion: {question}\nAnswer:",
        question = cat.question()
    )
}

/// Recover (source fact, summary fact, category) from a pair prompt.
pub fn parse_pair_prompt(prompt: &str) -> Option<(String, String, FactualityCategory)> {
    let rest = prompt.strip_prefix("Source statement: ")?;
    let (source, rest) = rest.split_once("\nSummary statement: ")?;
    let (summary, rest) = rest.split_once("\nQuestion: ")?;
    let question = rest.strip_suffix("\nAnswer:")?;
    let cat = FactualityCategory::ALL.iter().copied().find(|c| c.question() == question)?;
    Some((source.to_string(), summary.to_string(), cat))
}

/// Score every (summary fact, source fact, category) triple.
///
/// Queries may run on up to `concurrency` worker threads; cell results land
/// by index, so the matrix is identical regardless of execution order. On
/// any failure the error with the lowest cell index is returned and no
/// partial matrix escapes.
pub fn score_pairs(
    summary_facts: &FactSet,
    source_facts: &FactSet,
    backend: &dyn Backend,
    concurrency: usize,
) -> Result<ScoreMatrix, ScoringError> {
    if summary_facts.is_empty() {
        return Err(ScoringError::EmptyFactSet { origin: FactOrigin::Summary });
    }
    if source_facts.is_empty() {
        return Err(ScoringError::EmptyFactSet { origin: FactOrigin::Source });
    }
    let n_summary = summary_facts.len();
    let n_source = source_facts.len();
    let jobs: Vec<(usize, usize, FactualityCategory)> = (0..n_summary)
        .flat_map(|i| {
            (0..n_source)
                .flat_map(move |j| FactualityCategory::ALL.iter().map(move |&c| (i, j, c)))
        })
        .collect();

    let run_job = |&(i, j, cat): &(usize, usize, FactualityCategory)| -> Result<f64, ScoringError> {
        let prompt = pair_prompt(&source_facts.facts[j].text, &summary_facts.facts[i].text, cat);
        let wrap = |source: BackendError| ScoringError::Backend {
            summary_idx: i,
            source_idx: j,
            category: cat,
            source,
        };
        let dist = backend.query(&BackendRequest::scoring(prompt)).map_err(wrap)?;
        yes_probability(&dist).map_err(wrap)
    };

    let mut results: Vec<Result<f64, ScoringError>> = Vec::with_capacity(jobs.len());
    if concurrency <= 1 {
        for job in &jobs {
            results.push(run_job(job));
        }
    } else {
        let cells: Vec<OnceLock<Result<f64, ScoringError>>> =
            (0..jobs.len()).map(|_| OnceLock::new()).collect();
        let cursor = AtomicUsize::new(0);
        let workers = concurrency.min(jobs.len());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let k = cursor.fetch_add(1, Ordering::SeqCst);
                    if k >= jobs.len() {
                        break;
                    }
                    let _ = cells[k].set(run_job(&jobs[k]));
                });
            }
        });
        for cell in cells {
            results.push(cell.into_inner().expect("every job ran"));
        }
    }

    let mut values = vec![0.0f64; jobs.len()];
    for (slot, result) in results.into_iter().enumerate() {
        values[slot] = result?;
    }
    Ok(ScoreMatrix { doc_id: summary_facts.doc_id.clone(), n_summary, n_source, values })
}

/// Collapse the source axis for summary fact `i`: max over source facts for
/// the support category, min for every error category.
pub fn aggregate_features(matrix: &ScoreMatrix, i: usize) -> Result<FeatureVector, ScoringError> {
    if i >= matrix.n_summary {
        return Err(ScoringError::IndexOutOfRange { index: i, len: matrix.n_summary });
    }
    let mut values = [0.0f64; FactualityCategory::COUNT];
    for cat in FactualityCategory::ALL {
        let over_sources = (0..matrix.n_source).map(|j| matrix.get(i, j, cat));
        let agg = match cat {
            FactualityCategory::Supported => over_sources.fold(f64::NEG_INFINITY, f64::max),
            _ => over_sources.fold(f64::INFINITY, f64::min),
        };
        values[cat.index()] = agg;
    }
    Ok(FeatureVector::new(values).expect("pair probabilities stay in [0,1]"))
}

/// One score-file line: aggregated features for one summary fact, plus the
/// raw pair rows and enough benchmark context to train and evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreLine {
    pub doc_id: String,
    pub dataset: String,
    #[serde(default)]
    pub cut: Option<Cut>,
    #[serde(default)]
    pub label: Option<u8>,
    pub summary_idx: usize,
    pub summary_fact: String,
    pub features: FeatureVector,
    pub pairs: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::HeuristicBackend;
    use crate::types::Provenance;
    use proptest::prelude::*;

    fn fact_set(doc_id: &str, origin: FactOrigin, texts: &[&str]) -> FactSet {
        let texts: Vec<String> = texts.iter().map(|s| s.to_string()).collect();
        FactSet::from_texts(doc_id, origin, &texts, Provenance::Manual).unwrap()
    }

    fn matrix_from(doc_id: &str, n_summary: usize, n_source: usize, f: impl Fn(usize, usize, FactualityCategory) -> f64) -> ScoreMatrix {
        let mut values = Vec::new();
        for i in 0..n_summary {
            for j in 0..n_source {
                for cat in FactualityCategory::ALL {
                    values.push(f(i, j, cat));
                }
            }
        }
        ScoreMatrix { doc_id: doc_id.into(), n_summary, n_source, values }
    }

    #[test]
    fn score_count_is_product_of_dims() {
        let summary = fact_set("d", FactOrigin::Summary, &["Alpha won.", "Beta lost."]);
        let source = fact_set(
            "d",
            FactOrigin::Source,
            &["Alpha won.", "Beta lost.", "Gamma drew.", "Delta forfeited."],
        );
        let backend = HeuristicBackend::default();
        let matrix = score_pairs(&summary, &source, &backend, 1).unwrap();
        assert_eq!(matrix.dims(), (2, 4, 8));
        assert_eq!(matrix.pair_scores().count(), 64);
    }

    #[test]
    fn identical_texts_give_supported_one() {
        let summary = fact_set("d", FactOrigin::Summary, &["The dam held."]);
        let source = fact_set("d", FactOrigin::Source, &["The dam held."]);
        let backend = HeuristicBackend::default();
        let matrix = score_pairs(&summary, &source, &backend, 1).unwrap();
        assert_eq!(matrix.get(0, 0, FactualityCategory::Supported), 1.0);
        assert_eq!(matrix.get(0, 0, FactualityCategory::OutE), 0.0);
    }

    #[test]
    fn empty_fact_set_is_rejected() {
        let summary = FactSet { doc_id: "d".into(), origin: FactOrigin::Summary, facts: vec![] };
        let source = fact_set("d", FactOrigin::Source, &["x y"]);
        let backend = HeuristicBackend::default();
        assert!(matches!(
            score_pairs(&summary, &source, &backend, 1),
            Err(ScoringError::EmptyFactSet { origin: FactOrigin::Summary })
        ));
    }

    #[test]
    fn permuting_source_order_permutes_indices_only() {
        let summary = fact_set("d", FactOrigin::Summary, &["Quay reopened fully.", "Harbour stayed shut."]);
        let source_a = fact_set(
            "d",
            FactOrigin::Source,
            &["Quay reopened fully.", "Storms battered the coast.", "Harbour stayed shut."],
        );
        let source_b = fact_set(
            "d",
            FactOrigin::Source,
            &["Harbour stayed shut.", "Quay reopened fully.", "Storms battered the coast."],
        );
        let backend = HeuristicBackend::default();
        let ma = score_pairs(&summary, &source_a, &backend, 1).unwrap();
        let mb = score_pairs(&summary, &source_b, &backend, 1).unwrap();
        let mut sa: Vec<u64> = ma.pair_scores().map(|p| p.p_yes.to_bits()).collect();
        let mut sb: Vec<u64> = mb.pair_scores().map(|p| p.p_yes.to_bits()).collect();
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, sb);
        // And aggregation is invariant under the permutation.
        assert_eq!(aggregate_features(&ma, 0).unwrap(), aggregate_features(&mb, 0).unwrap());
        assert_eq!(aggregate_features(&ma, 1).unwrap(), aggregate_features(&mb, 1).unwrap());
    }

    #[test]
    fn concurrency_does_not_change_the_matrix() {
        let summary = fact_set("d", FactOrigin::Summary, &["Alpha won the cup.", "Beta fell behind."]);
        let source = fact_set(
            "d",
            FactOrigin::Source,
            &["Alpha won the cup.", "Beta fell behind early.", "The crowd went home."],
        );
        let backend = HeuristicBackend::default();
        let sequential = score_pairs(&summary, &source, &backend, 1).unwrap();
        let parallel = score_pairs(&summary, &source, &backend, 4).unwrap();
        assert_eq!(sequential, parallel);
    }

    #[test]
    fn singleton_aggregation_is_identity() {
        let matrix = matrix_from("d", 1, 1, |_, _, cat| 0.1 + 0.1 * cat.index() as f64);
        let features = aggregate_features(&matrix, 0).unwrap();
        for cat in FactualityCategory::ALL {
            assert_eq!(features.get(cat), matrix.get(0, 0, cat));
        }
    }

    #[test]
    fn supported_takes_max_errors_take_min() {
        let supported_by_j = [0.2, 0.7, 0.4];
        let oute_by_j = [0.9, 0.1, 0.8];
        let matrix = matrix_from("d", 1, 3, |_, j, cat| match cat {
            FactualityCategory::Supported => supported_by_j[j],
            FactualityCategory::OutE => oute_by_j[j],
            _ => 0.5,
        });
        let features = aggregate_features(&matrix, 0).unwrap();
        assert_eq!(features.get(FactualityCategory::Supported), 0.7);
        assert_eq!(features.get(FactualityCategory::OutE), 0.1);
    }

    #[test]
    fn out_of_range_summary_index() {
        let matrix = matrix_from("d", 1, 1, |_, _, _| 0.5);
        assert!(matches!(
            aggregate_features(&matrix, 1),
            Err(ScoringError::IndexOutOfRange { index: 1, len: 1 })
        ));
    }

    #[test]
    fn identical_pair_sets_approach_the_ideal_vector() {
        let summary = fact_set("d", FactOrigin::Summary, &["The vote passed narrowly."]);
        let source = fact_set("d", FactOrigin::Source, &["The vote passed narrowly."]);
        let backend = HeuristicBackend::default();
        let matrix = score_pairs(&summary, &source, &backend, 1).unwrap();
        let features = aggregate_features(&matrix, 0).unwrap();
        for cat in FactualityCategory::ALL {
            match cat {
                FactualityCategory::Supported => assert!(features.get(cat) >= 0.99),
                _ => assert!(features.get(cat) <= 0.01, "{cat:?} = {}", features.get(cat)),
            }
        }
    }

    #[test]
    fn pair_prompt_round_trip() {
        for cat in FactualityCategory::ALL {
            let prompt = pair_prompt("src fact", "sum fact", cat);
            let (src, sum, parsed) = parse_pair_prompt(&prompt).unwrap();
            assert_eq!((src.as_str(), sum.as_str(), parsed), ("src fact", "sum fact", cat));
        }
        assert_eq!(parse_pair_prompt("nope"), None);
    }

    #[test]
    fn backend_errors_carry_cell_context() {
        struct FailingBackend;
        impl Backend for FailingBackend {
            fn id(&self) -> &str {
                "fail"
            }
            fn model_id(&self) -> &str {
                "fail"
            }
            fn query(&self, _: &BackendRequest) -> Result<crate::backend::TokenDistribution, BackendError> {
                Err(BackendError::Transport("down".into()))
            }
        }
        let summary = fact_set("d", FactOrigin::Summary, &["a b"]);
        let source = fact_set("d", FactOrigin::Source, &["c d"]);
        let err = score_pairs(&summary, &source, &FailingBackend, 2).unwrap_err();
        match err {
            ScoringError::Backend { summary_idx: 0, source_idx: 0, category, .. } => {
                assert_eq!(category, FactualityCategory::PredE);
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    proptest! {
        // Aggregates stay inside the [min, max] of their pair scores and are
        // invariant under source permutation.
        #[test]
        fn aggregate_bounds_and_permutation_invariance(
            rows in proptest::collection::vec(proptest::array::uniform8(0.0f64..=1.0), 1..6),
            seed in any::<u64>(),
        ) {
            let n_source = rows.len();
            let matrix = matrix_from("d", 1, n_source, |_, j, cat| rows[j][cat.index()]);
            let features = aggregate_features(&matrix, 0).unwrap();
            for cat in FactualityCategory::ALL {
                let col: Vec<f64> = (0..n_source).map(|j| matrix.get(0, j, cat)).collect();
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(features.get(cat) >= lo && features.get(cat) <= hi);
            }
            // Shuffle source rows with a cheap LCG-driven Fisher-Yates.
            let mut perm: Vec<usize> = (0..n_source).collect();
            let mut state = seed | 1;
            for i in (1..n_source).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let j = (state >> 33) as usize % (i + 1);
                perm.swap(i, j);
            }
            let permuted = matrix_from("d", 1, n_source, |_, j, cat| rows[perm[j]][cat.index()]);
            prop_assert_eq!(features, aggregate_features(&permuted, 0).unwrap());
        }
    }
}
