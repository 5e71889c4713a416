//! Atomic-fact production: backend-driven decomposition plus manually
//! authored fact files. Manual facts exist because decomposition quality is
//! the weakest link of the whole approach; a fact file written by hand takes
//! precedence over anything a backend extracts.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, BackendRequest, COMPLETION_MAX_TOKENS};
use crate::dataset::BenchRecord;
use crate::types::{AtomicFact, DomainError, FactOrigin, Provenance};

#[derive(Debug, Error)]
pub enum FactsError {
    #[error("text must be non-empty")]
    EmptyText,
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("no fact lines parsed from backend response")]
    NoFactsParsed,
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("duplicate doc_id '{0}'")]
    DuplicateDocId(String),
    #[error("doc_id '{0}' not present in the benchmark")]
    UnknownDocId(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// The ordered atomic facts of one document side (source or summary).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactSet {
    pub doc_id: String,
    pub origin: FactOrigin,
    pub facts: Vec<AtomicFact>,
}

impl FactSet {
    pub fn from_texts(
        doc_id: impl Into<String>,
        origin: FactOrigin,
        texts: &[String],
        provenance: Provenance,
    ) -> Result<Self, FactsError> {
        let facts = texts
            .iter()
            .enumerate()
            .map(|(index, text)| AtomicFact::new(text.clone(), origin, index, provenance))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(FactSet { doc_id: doc_id.into(), origin, facts })
    }

    pub fn texts(&self) -> Vec<&str> {
        self.facts.iter().map(|f| f.text.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.facts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.facts.is_empty()
    }
}

/// Fixed decomposition prompt.
pub fn decomposition_prompt(text: &str) -> String {
    format!(
        "Break the following text into independent atomic facts. Output one fact per line, each line starting with '- '.\n\nText: {text}\n\nFacts:\n"
    )
}

/// Recover the `{TEXT}` slot from a decomposition prompt. Used by the
/// heuristic backend to answer its own template.
pub fn parse_decomposition_prompt(prompt: &str) -> Option<String> {
    let rest = prompt.strip_prefix(
        "Break the following text into independent atomic facts. Output one fact per line, each line starting with '- '.\n\nText: ",
    )?;
    let text = rest.strip_suffix("\n\nFacts:\n")?;
    Some(text.to_string())
}

/// Ask the backend to decompose `text`, then parse one fact per "- " line.
pub fn extract_facts(
    doc_id: &str,
    text: &str,
    origin: FactOrigin,
    backend: &dyn Backend,
) -> Result<FactSet, FactsError> {
    if text.trim().is_empty() {
        return Err(FactsError::EmptyText);
    }
    let request = BackendRequest::completion(decomposition_prompt(text), COMPLETION_MAX_TOKENS);
    let response = backend.query(&request)?;
    let texts = parse_fact_lines(response.fallback_text());
    if texts.is_empty() {
        return Err(FactsError::NoFactsParsed);
    }
    FactSet::from_texts(doc_id, origin, &texts, Provenance::Backend)
}

/// One fact per line beginning with "- "; bullets and surrounding whitespace
/// stripped, empty lines dropped.
pub fn parse_fact_lines(response: &str) -> Vec<String> {
    response
        .lines()
        .filter_map(|line| line.trim_start().strip_prefix("- "))
        .map(|fact| fact.trim().to_string())
        .filter(|fact| !fact.is_empty())
        .collect()
}

/// On-disk manual-facts line: all facts for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualFactsLine {
    pub doc_id: String,
    pub source_facts: Vec<String>,
    pub summary_facts: Vec<String>,
}

/// Load a manual-facts JSONL file. Each line yields two [`FactSet`]s (source
/// first, then summary), both with manual provenance.
pub fn load_manual_facts(path: &Path) -> Result<Vec<FactSet>, FactsError> {
    let file = File::open(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut sets = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ManualFactsLine =
            serde_json::from_str(&line).map_err(|e| FactsError::MalformedLine {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if !seen.insert(parsed.doc_id.clone()) {
            return Err(FactsError::DuplicateDocId(parsed.doc_id));
        }
        let source = FactSet::from_texts(
            &parsed.doc_id,
            FactOrigin::Source,
            &parsed.source_facts,
            Provenance::Manual,
        )
        .map_err(|e| FactsError::MalformedLine { line: i + 1, reason: e.to_string() })?;
        let summary = FactSet::from_texts(
            &parsed.doc_id,
            FactOrigin::Summary,
            &parsed.summary_facts,
            Provenance::Manual,
        )
        .map_err(|e| FactsError::MalformedLine { line: i + 1, reason: e.to_string() })?;
        sets.push(source);
        sets.push(summary);
    }
    Ok(sets)
}

/// Serialize fact sets back to the manual-facts JSONL schema. Sets are
/// paired by doc_id; a missing side becomes an empty list.
pub fn manual_facts_lines(sets: &[FactSet]) -> Vec<ManualFactsLine> {
    let mut order: Vec<String> = Vec::new();
    let mut by_doc: BTreeMap<String, (Vec<String>, Vec<String>)> = BTreeMap::new();
    for set in sets {
        if !by_doc.contains_key(&set.doc_id) {
            order.push(set.doc_id.clone());
        }
        let entry = by_doc.entry(set.doc_id.clone()).or_default();
        let texts: Vec<String> = set.facts.iter().map(|f| f.text.clone()).collect();
        match set.origin {
            FactOrigin::Source => entry.0 = texts,
            FactOrigin::Summary => entry.1 = texts,
        }
    }
    order
        .into_iter()
        .map(|doc_id| {
            let (source_facts, summary_facts) = by_doc.remove(&doc_id).expect("doc present");
            ManualFactsLine { doc_id, source_facts, summary_facts }
        })
        .collect()
}

pub fn save_manual_facts(path: &Path, sets: &[FactSet]) -> Result<(), FactsError> {
    let mut out = String::new();
    for line in manual_facts_lines(sets) {
        out.push_str(&serde_json::to_string(&line).expect("fact line serialization"));
        out.push('\n');
    }
    let mut file = File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Verify every fact set's doc_id appears in the benchmark.
pub fn cross_check_doc_ids(sets: &[FactSet], records: &[BenchRecord]) -> Result<(), FactsError> {
    let known: std::collections::HashSet<&str> =
        records.iter().map(|r| r.doc_id.as_str()).collect();
    for set in sets {
        if !known.contains(set.doc_id.as_str()) {
            return Err(FactsError::UnknownDocId(set.doc_id.clone()));
        }
    }
    Ok(())
}
