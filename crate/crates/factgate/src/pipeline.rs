//! End-to-end command orchestration and run artifacts.
//!
//! Each command reads its inputs, writes exactly one output file atomically
//! (write-temp-then-rename), and validates the written file by re-reading
//! it. Backend calls always go through the response cache, so an
//! interrupted scoring run resumes by replaying cached answers and issuing
//! only the missing queries.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    self, AnalysisError, Diagnostics, EvalReport, MetricSet, PcaSummary, ThresholdObjective,
};
use crate::backend::{
    Backend, BackendError, CachedBackend, HeuristicBackend, RemoteBackend, RemoteConfig,
};
use crate::classifier::{self, ClassifierError, NbVariant, TrainOptions};
use crate::dataset::{self, BenchFormat, BenchRecord, Cut, DatasetError, SamplePlan};
use crate::facts::{self, FactsError, FactSet, ManualFactsLine};
use crate::scoring::{self, ScoreLine, ScoringError};
use crate::synth::{self, SynthError, SyntheticSpec};
use crate::types::{ClassLabel, FactOrigin, FeatureVector};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("data file not found: {0}")]
    DataFileMissing(PathBuf),
    #[error("facts file not found: {0}")]
    FactsFileMissing(PathBuf),
    #[error("no sampled record has facts; nothing to score")]
    NoFactsForRun,
    #[error("scores file {path} line {line}: {reason}")]
    MalformedScoreLine { path: PathBuf, line: usize, reason: String },
    #[error("doc {doc_id}: {source}")]
    Doc { doc_id: String, source: Box<PipelineError> },
    #[error("output validation failed for {path}: {reason}")]
    OutputValidation { path: PathBuf, reason: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Facts(#[from] FactsError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn with_doc(doc_id: &str) -> impl Fn(PipelineError) -> PipelineError + '_ {
    move |source| PipelineError::Doc { doc_id: doc_id.to_string(), source: Box::new(source) }
}

/// Which backend answers queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Heuristic,
    Remote,
}

/// Run configuration; usually loaded from TOML and overridden by CLI flags.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub model_id: String,
    pub data_path: PathBuf,
    pub facts_path: Option<PathBuf>,
    pub cache_path: PathBuf,
    pub sample: SamplePlan,
    pub nb: NbVariant,
    pub threshold_objective: ThresholdObjective,
    pub concurrency_limit: usize,
    /// Remote endpoint; falls back to the FACTGATE_API_URL environment
    /// variable when unset.
    pub api_url: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            backend: BackendKind::Heuristic,
            model_id: "heuristic-v1".into(),
            data_path: PathBuf::new(),
            facts_path: None,
            cache_path: PathBuf::from("cache.jsonl"),
            sample: SamplePlan::default(),
            nb: NbVariant::Gaussian,
            threshold_objective: ThresholdObjective::Accuracy,
            concurrency_limit: 4,
            api_url: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.concurrency_limit == 0 {
            return Err(PipelineError::Config("concurrency_limit must be >= 1".into()));
        }
        Ok(())
    }

    fn data_path_checked(&self) -> Result<&Path, PipelineError> {
        if self.data_path.as_os_str().is_empty() {
            return Err(PipelineError::Config("data_path is not set".into()));
        }
        if !self.data_path.exists() {
            return Err(PipelineError::DataFileMissing(self.data_path.clone()));
        }
        Ok(&self.data_path)
    }

    fn facts_path_checked(&self, must_exist: bool) -> Result<&Path, PipelineError> {
        let path = self
            .facts_path
            .as_deref()
            .ok_or_else(|| PipelineError::Config("facts_path is not set".into()))?;
        if must_exist && !path.exists() {
            return Err(PipelineError::FactsFileMissing(path.to_path_buf()));
        }
        Ok(path)
    }
}

/// Build the configured backend behind the response cache.
pub fn make_backend(config: &RunConfig) -> Result<CachedBackend<Box<dyn Backend>>, PipelineError> {
    let inner: Box<dyn Backend> = match config.backend {
        BackendKind::Heuristic => Box::new(HeuristicBackend::new(config.model_id.clone())),
        BackendKind::Remote => {
            let remote_config =
                RemoteConfig::from_env(config.model_id.clone(), config.api_url.clone())?;
            Box::new(RemoteBackend::new(remote_config)?)
        }
    };
    Ok(CachedBackend::open(inner, &config.cache_path)?)
}

/// Write-temp-then-rename in the target directory.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let file_name = path
        .file_name()
        .ok_or_else(|| PipelineError::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!("{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn sampled_records(config: &RunConfig) -> Result<Vec<BenchRecord>, PipelineError> {
    let data_path = config.data_path_checked()?;
    let records = dataset::load_benchmark(data_path, BenchFormat::from_path(data_path))?;
    Ok(dataset::sample(&records, &config.sample)?)
}

// ---------------------------------------------------------------------------
// generate

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateStats {
    pub n_records: usize,
    pub n_fact_lines: usize,
}

/// Emit a synthetic benchmark (CSV/JSONL by extension) plus its manual-facts
/// JSONL.
pub fn cmd_generate(
    spec: &SyntheticSpec,
    data_out: &Path,
    facts_out: &Path,
) -> Result<GenerateStats, PipelineError> {
    let corpus = synth::generate(spec)?;
    dataset::save_benchmark(&corpus.records, data_out, BenchFormat::from_path(data_out))?;
    facts::save_manual_facts(facts_out, &corpus.facts)?;
    let reloaded = dataset::load_benchmark(data_out, BenchFormat::from_path(data_out))
        .map_err(|e| PipelineError::OutputValidation {
            path: data_out.to_path_buf(),
            reason: e.to_string(),
        })?;
    if reloaded != corpus.records {
        return Err(PipelineError::OutputValidation {
            path: data_out.to_path_buf(),
            reason: "reloaded records differ from generated records".into(),
        });
    }
    let fact_lines = facts::load_manual_facts(facts_out).map_err(|e| {
        PipelineError::OutputValidation { path: facts_out.to_path_buf(), reason: e.to_string() }
    })?;
    Ok(GenerateStats { n_records: corpus.records.len(), n_fact_lines: fact_lines.len() / 2 })
}

// ---------------------------------------------------------------------------
// sample

#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    pub n_in: usize,
    pub n_out: usize,
}

pub fn cmd_sample(config: &RunConfig, out: &Path) -> Result<SampleStats, PipelineError> {
    config.validate()?;
    let data_path = config.data_path_checked()?;
    let records = dataset::load_benchmark(data_path, BenchFormat::from_path(data_path))?;
    let sampled = dataset::sample(&records, &config.sample)?;
    dataset::save_benchmark(&sampled, out, BenchFormat::from_path(out))?;
    dataset::load_benchmark(out, BenchFormat::from_path(out)).map_err(|e| {
        PipelineError::OutputValidation { path: out.to_path_buf(), reason: e.to_string() }
    })?;
    Ok(SampleStats { n_in: records.len(), n_out: sampled.len() })
}

// ---------------------------------------------------------------------------
// extract-facts

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractStats {
    pub n_records: usize,
    pub n_extracted: usize,
    pub n_skipped: usize,
    pub backend_queries: u64,
}

/// Extract facts for every sampled record into the manual-facts file,
/// skipping doc_ids already present. Rerunning against an unchanged input
/// leaves the file bytes untouched.
pub fn cmd_extract_facts(config: &RunConfig) -> Result<ExtractStats, PipelineError> {
    config.validate()?;
    let records = sampled_records(config)?;
    let facts_path = config.facts_path_checked(false)?;

    // Existing lines are preserved verbatim so manual fact files keep their
    // exact formatting.
    let mut raw_lines: Vec<String> = Vec::new();
    let mut known_ids = std::collections::HashSet::new();
    if facts_path.exists() {
        for set in facts::load_manual_facts(facts_path)? {
            known_ids.insert(set.doc_id);
        }
        raw_lines = fs::read_to_string(facts_path)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| l.to_string())
            .collect();
    }

    let backend = make_backend(config)?;
    let mut extracted = 0usize;
    let mut skipped = 0usize;
    for record in &records {
        if known_ids.contains(&record.doc_id) {
            skipped += 1;
            continue;
        }
        let source =
            facts::extract_facts(&record.doc_id, &record.doc, FactOrigin::Source, &backend)
                .map_err(PipelineError::from)
                .map_err(with_doc(&record.doc_id))?;
        let summary =
            facts::extract_facts(&record.doc_id, &record.summary, FactOrigin::Summary, &backend)
                .map_err(PipelineError::from)
                .map_err(with_doc(&record.doc_id))?;
        let line = ManualFactsLine {
            doc_id: record.doc_id.clone(),
            source_facts: source.facts.into_iter().map(|f| f.text).collect(),
            summary_facts: summary.facts.into_iter().map(|f| f.text).collect(),
        };
        raw_lines.push(serde_json::to_string(&line).expect("fact line serialization"));
        extracted += 1;
    }

    if extracted > 0 {
        let mut out = raw_lines.join("\n");
        out.push('\n');
        write_atomic(facts_path, out.as_bytes())?;
    }
    facts::load_manual_facts(facts_path).map_err(|e| PipelineError::OutputValidation {
        path: facts_path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(ExtractStats {
        n_records: records.len(),
        n_extracted: extracted,
        n_skipped: skipped,
        backend_queries: backend.backend_queries(),
    })
}

// ---------------------------------------------------------------------------
// score

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStats {
    pub n_docs: usize,
    pub n_lines: usize,
    pub n_missing_facts: usize,
    pub backend_queries: u64,
    pub cache_hits: u64,
}

fn facts_by_doc(sets: Vec<FactSet>) -> BTreeMap<String, (Option<FactSet>, Option<FactSet>)> {
    let mut map: BTreeMap<String, (Option<FactSet>, Option<FactSet>)> = BTreeMap::new();
    for set in sets {
        let slot = map.entry(set.doc_id.clone()).or_default();
        match set.origin {
            FactOrigin::Source => slot.0 = Some(set),
            FactOrigin::Summary => slot.1 = Some(set),
        }
    }
    map
}

/// Cross-compare and aggregate every sampled record that has facts; one
/// output line per summary fact.
pub fn cmd_score(config: &RunConfig, scores_out: &Path) -> Result<ScoreStats, PipelineError> {
    config.validate()?;
    let records = sampled_records(config)?;
    let facts_path = config.facts_path_checked(true)?;
    let fact_map = facts_by_doc(facts::load_manual_facts(facts_path)?);

    let backend = make_backend(config)?;
    let mut lines: Vec<ScoreLine> = Vec::new();
    let mut n_docs = 0usize;
    let mut n_missing = 0usize;
    for record in &records {
        let Some((Some(source), Some(summary))) = fact_map.get(&record.doc_id).map(|(s, m)| (s.as_ref(), m.as_ref()))
        else {
            log::warn!("no facts for doc {}; skipping", record.doc_id);
            n_missing += 1;
            continue;
        };
        let matrix = scoring::score_pairs(summary, source, &backend, config.concurrency_limit)
            .map_err(PipelineError::from)
            .map_err(with_doc(&record.doc_id))?;
        for i in 0..summary.len() {
            let features = scoring::aggregate_features(&matrix, i)
                .map_err(PipelineError::from)
                .map_err(with_doc(&record.doc_id))?;
            lines.push(ScoreLine {
                doc_id: record.doc_id.clone(),
                dataset: record.dataset_name.clone(),
                cut: record.cut,
                label: record.label,
                summary_idx: i,
                summary_fact: summary.facts[i].text.clone(),
                features,
                pairs: matrix.pairs_for_summary(i).expect("index in range"),
            });
        }
        n_docs += 1;
    }
    if n_docs == 0 {
        return Err(PipelineError::NoFactsForRun);
    }

    let mut out = String::new();
    for line in &lines {
        out.push_str(&serde_json::to_string(line).expect("score line serialization"));
        out.push('\n');
    }
    write_atomic(scores_out, out.as_bytes())?;
    read_score_lines(scores_out).map_err(|e| PipelineError::OutputValidation {
        path: scores_out.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(ScoreStats {
        n_docs,
        n_lines: lines.len(),
        n_missing_facts: n_missing,
        backend_queries: backend.backend_queries(),
        cache_hits: backend.cache_hits(),
    })
}

pub fn read_score_lines(path: &Path) -> Result<Vec<ScoreLine>, PipelineError> {
    let content = fs::read_to_string(path)?;
    let mut lines = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: ScoreLine =
            serde_json::from_str(raw).map_err(|e| PipelineError::MalformedScoreLine {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        lines.push(line);
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub n_examples: usize,
    pub priors: [f64; 2],
}

/// Train on the validation cut only; per-fact vectors inherit their
/// summary's label.
pub fn cmd_train(
    config: &RunConfig,
    scores_in: &Path,
    model_out: &Path,
) -> Result<TrainStats, PipelineError> {
    config.validate()?;
    let lines = read_score_lines(scores_in)?;
    let examples: Vec<(FeatureVector, ClassLabel)> = lines
        .iter()
        .filter(|l| l.cut == Some(Cut::Val))
        .filter_map(|l| l.label.map(|label| (l.features, ClassLabel::from_benchmark(label))))
        .collect();
    let options = TrainOptions { variant: config.nb, ..TrainOptions::default() };
    let model = classifier::train_with(&examples, options)?;
    let mut json = classifier::model_to_json(&model)?;
    json.push('\n');
    write_atomic(model_out, json.as_bytes())?;
    classifier::load_model(model_out).map_err(|e| PipelineError::OutputValidation {
        path: model_out.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(TrainStats { n_examples: examples.len(), priors: model.priors() })
}

// ---------------------------------------------------------------------------
// predict

/// One verdict per document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictLine {
    pub doc_id: String,
    pub dataset: String,
    #[serde(default)]
    pub cut: Option<Cut>,
    #[serde(default)]
    pub label: Option<u8>,
    pub summary_label: ClassLabel,
    pub summary_score: f64,
    pub fact_posteriors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictStats {
    pub n_docs: usize,
}

/// Documents in first-seen order, facts sorted by summary index.
struct DocGroup {
    doc_id: String,
    dataset: String,
    cut: Option<Cut>,
    label: Option<u8>,
    vectors: Vec<(usize, FeatureVector)>,
}

fn group_by_doc(lines: &[ScoreLine]) -> Vec<DocGroup> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, DocGroup> = BTreeMap::new();
    for line in lines {
        if !groups.contains_key(&line.doc_id) {
            order.push(line.doc_id.clone());
            groups.insert(
                line.doc_id.clone(),
                DocGroup {
                    doc_id: line.doc_id.clone(),
                    dataset: line.dataset.clone(),
                    cut: line.cut,
                    label: line.label,
                    vectors: Vec::new(),
                },
            );
        }
        let group = groups.get_mut(&line.doc_id).expect("group exists");
        group.vectors.push((line.summary_idx, line.features));
    }
    order
        .into_iter()
        .map(|doc_id| {
            let mut group = groups.remove(&doc_id).expect("group exists");
            group.vectors.sort_by_key(|(idx, _)| *idx);
            group
        })
        .collect()
}

pub fn cmd_predict(
    config: &RunConfig,
    scores_in: &Path,
    model_in: &Path,
    out: &Path,
) -> Result<PredictStats, PipelineError> {
    config.validate()?;
    let lines = read_score_lines(scores_in)?;
    let model = classifier::load_model(model_in)?;
    let groups = group_by_doc(&lines);
    let mut out_text = String::new();
    for group in &groups {
        let vectors: Vec<FeatureVector> = group.vectors.iter().map(|(_, v)| *v).collect();
        let verdict = classifier::judge_summary(&model, &vectors)
            .map_err(PipelineError::from)
            .map_err(with_doc(&group.doc_id))?;
        let line = VerdictLine {
            doc_id: group.doc_id.clone(),
            dataset: group.dataset.clone(),
            cut: group.cut,
            label: group.label,
            summary_label: verdict.summary_label,
            summary_score: verdict.summary_score,
            fact_posteriors: verdict.fact_posteriors,
        };
        out_text.push_str(&serde_json::to_string(&line).expect("verdict serialization"));
        out_text.push('\n');
    }
    write_atomic(out, out_text.as_bytes())?;
    read_verdict_lines(out).map_err(|e| PipelineError::OutputValidation {
        path: out.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(PredictStats { n_docs: groups.len() })
}

pub fn read_verdict_lines(path: &Path) -> Result<Vec<VerdictLine>, PipelineError> {
    let content = fs::read_to_string(path)?;
    let mut lines = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: VerdictLine =
            serde_json::from_str(raw).map_err(|e| PipelineError::MalformedScoreLine {
                path: path.to_path_buf(),
                line: i + 1,
                reason: e.to_string(),
            })?;
        lines.push(line);
    }
    Ok(lines)
}

// ---------------------------------------------------------------------------
// evaluate

/// Score the test cut with a threshold selected on the validation cut.
/// Per-dataset entries use a threshold from that dataset's own validation
/// slice when it has both classes, falling back to the global threshold;
/// datasets whose test slice lacks both classes are omitted.
pub fn cmd_evaluate(
    config: &RunConfig,
    scores_in: &Path,
    model_in: &Path,
    report_out: &Path,
) -> Result<EvalReport, PipelineError> {
    config.validate()?;
    let lines = read_score_lines(scores_in)?;
    let model = classifier::load_model(model_in)?;
    let groups = group_by_doc(&lines);

    struct Judged {
        dataset: String,
        cut: Cut,
        label: u8,
        score: f64,
    }
    let mut judged: Vec<Judged> = Vec::new();
    for group in &groups {
        let (Some(cut), Some(label)) = (group.cut, group.label) else {
            log::warn!("doc {} lacks cut or label; excluded from evaluation", group.doc_id);
            continue;
        };
        let vectors: Vec<FeatureVector> = group.vectors.iter().map(|(_, v)| *v).collect();
        let verdict = classifier::judge_summary(&model, &vectors)
            .map_err(PipelineError::from)
            .map_err(with_doc(&group.doc_id))?;
        judged.push(Judged { dataset: group.dataset.clone(), cut, label, score: verdict.summary_score });
    }

    let val: Vec<&Judged> = judged.iter().filter(|j| j.cut == Cut::Val).collect();
    let test: Vec<&Judged> = judged.iter().filter(|j| j.cut == Cut::Test).collect();
    let val_scores: Vec<f64> = val.iter().map(|j| j.score).collect();
    let val_labels: Vec<u8> = val.iter().map(|j| j.label).collect();
    let threshold =
        analysis::select_threshold_with(&val_scores, &val_labels, config.threshold_objective)?;

    let test_scores: Vec<f64> = test.iter().map(|j| j.score).collect();
    let test_labels: Vec<u8> = test.iter().map(|j| j.label).collect();
    let auc = analysis::auc(&test_scores, &test_labels)?;
    let metrics = analysis::threshold_metrics(&test_scores, &test_labels, threshold)?;

    let mut per_dataset = BTreeMap::new();
    let mut datasets: Vec<String> = test.iter().map(|j| j.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    for name in datasets {
        let subset: Vec<&&Judged> = test.iter().filter(|j| j.dataset == name).collect();
        let scores: Vec<f64> = subset.iter().map(|j| j.score).collect();
        let labels: Vec<u8> = subset.iter().map(|j| j.label).collect();
        if !labels.contains(&0) || !labels.contains(&1) {
            log::warn!("dataset {name}: test slice lacks both classes; omitted from per_dataset");
            continue;
        }
        let ds_val: Vec<&&Judged> = val.iter().filter(|j| j.dataset == name).collect();
        let ds_val_scores: Vec<f64> = ds_val.iter().map(|j| j.score).collect();
        let ds_val_labels: Vec<u8> = ds_val.iter().map(|j| j.label).collect();
        let ds_threshold = analysis::select_threshold_with(
            &ds_val_scores,
            &ds_val_labels,
            config.threshold_objective,
        )
        .unwrap_or(threshold);
        let ds_auc = analysis::auc(&scores, &labels)?;
        let ds_metrics = analysis::threshold_metrics(&scores, &labels, ds_threshold)?;
        per_dataset.insert(
            name,
            MetricSet {
                auc: ds_auc,
                accuracy: ds_metrics.accuracy,
                f1: ds_metrics.f1,
                precision: ds_metrics.precision,
                threshold: ds_threshold,
                n_examples: subset.len(),
            },
        );
    }

    let report = EvalReport {
        auc,
        accuracy: metrics.accuracy,
        f1: metrics.f1,
        precision: metrics.precision,
        threshold,
        n_examples: test.len(),
        per_dataset,
    };
    let mut json = serde_json::to_string(&report).expect("report serialization");
    json.push('\n');
    write_atomic(report_out, json.as_bytes())?;
    let reread = fs::read_to_string(report_out)?;
    serde_json::from_str::<EvalReport>(&reread).map_err(|e| PipelineError::OutputValidation {
        path: report_out.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// diagnose

pub fn cmd_diagnose(
    config: &RunConfig,
    scores_in: &Path,
    diagnostics_out: &Path,
    components: usize,
) -> Result<Diagnostics, PipelineError> {
    config.validate()?;
    let lines = read_score_lines(scores_in)?;
    let vectors: Vec<FeatureVector> = lines.iter().map(|l| l.features).collect();
    let pearson = analysis::pearson_matrix(&vectors)?;
    let pca = analysis::pca(&vectors, components)?;
    let diagnostics = Diagnostics {
        correlation: pearson.values,
        zero_variance_features: pearson.zero_variance,
        pca: PcaSummary { ratios: pca.explained_variance_ratio, components: pca.components },
    };
    let mut json = serde_json::to_string(&diagnostics).expect("diagnostics serialization");
    json.push('\n');
    write_atomic(diagnostics_out, json.as_bytes())?;
    let reread = fs::read_to_string(diagnostics_out)?;
    serde_json::from_str::<Diagnostics>(&reread).map_err(|e| PipelineError::OutputValidation {
        path: diagnostics_out.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok(diagnostics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Perturbation;
    use tempfile::TempDir;

    fn run_config(dir: &TempDir) -> RunConfig {
        RunConfig {
            data_path: dir.path().join("corpus.csv"),
            facts_path: Some(dir.path().join("facts.jsonl")),
            cache_path: dir.path().join("cache.jsonl"),
            sample: SamplePlan { n: 100, seed: 7, stratify_by_label: false },
            ..RunConfig::default()
        }
    }

    fn generate_corpus(dir: &TempDir, config: &RunConfig) {
        let spec = SyntheticSpec {
            n_factual: 4,
            n_nonfactual: 4,
            seed: 3,
            perturbations: Perturbation::ALL.to_vec(),
        };
        cmd_generate(&spec, &config.data_path, dir.path().join("manual.jsonl").as_path()).unwrap();
    }

    #[test]
    fn extract_facts_writes_one_line_per_record_and_reruns_are_noops() {
        let dir = TempDir::new().unwrap();
        let config = run_config(&dir);
        generate_corpus(&dir, &config);
        let stats = cmd_extract_facts(&config).unwrap();
        assert_eq!(stats.n_records, 8);
        assert_eq!(stats.n_extracted, 8);
        assert_eq!(stats.n_skipped, 0);
        let first_bytes = fs::read(config.facts_path.as_ref().unwrap()).unwrap();
        let lines = first_bytes.iter().filter(|&&b| b == b'\n').count();
        assert_eq!(lines, 8);

        let rerun = cmd_extract_facts(&config).unwrap();
        assert_eq!(rerun.n_extracted, 0);
        assert_eq!(rerun.n_skipped, 8);
        assert_eq!(rerun.backend_queries, 0);
        let second_bytes = fs::read(config.facts_path.as_ref().unwrap()).unwrap();
        assert_eq!(first_bytes, second_bytes);
    }

    #[test]
    fn missing_data_file_is_a_clean_error() {
        let dir = TempDir::new().unwrap();
        let config = run_config(&dir);
        let err = cmd_extract_facts(&config).unwrap_err();
        assert!(matches!(err, PipelineError::DataFileMissing(_)), "{err}");
        assert!(err.to_string().contains("corpus.csv"));
    }

    #[test]
    fn score_line_count_matches_summary_fact_count() {
        let dir = TempDir::new().unwrap();
        let config = run_config(&dir);
        generate_corpus(&dir, &config);
        cmd_extract_facts(&config).unwrap();
        let scores_path = dir.path().join("scores.jsonl");
        let stats = cmd_score(&config, &scores_path).unwrap();
        assert_eq!(stats.n_docs, 8);
        assert_eq!(stats.n_missing_facts, 0);
        let lines = read_score_lines(&scores_path).unwrap();
        assert_eq!(lines.len(), stats.n_lines);
        // Query count: every (summary fact, source fact, category) triple,
        // all missed on a cold cache.
        let sets = facts::load_manual_facts(config.facts_path.as_deref().unwrap()).unwrap();
        let by_doc = facts_by_doc(sets);
        let expected: usize = by_doc
            .values()
            .map(|(src, sum)| {
                src.as_ref().unwrap().len() * sum.as_ref().unwrap().len() * 8
            })
            .sum();
        assert_eq!(stats.backend_queries as usize, expected);
    }

    #[test]
    fn warm_cache_rerun_issues_no_backend_queries() {
        let dir = TempDir::new().unwrap();
        let config = run_config(&dir);
        generate_corpus(&dir, &config);
        cmd_extract_facts(&config).unwrap();
        let scores_path = dir.path().join("scores.jsonl");
        let cold = cmd_score(&config, &scores_path).unwrap();
        assert!(cold.backend_queries > 0);
        let warm = cmd_score(&config, &scores_path).unwrap();
        assert_eq!(warm.backend_queries, 0);
        assert_eq!(warm.cache_hits, cold.backend_queries);
    }

    #[test]
    fn partial_cache_resume_issues_only_missing_queries() {
        let dir = TempDir::new().unwrap();
        let mut config = run_config(&dir);
        generate_corpus(&dir, &config);
        cmd_extract_facts(&config).unwrap();

        // First run over a subset of the corpus (simulates an interrupt
        // partway along): sample only 3 records.
        config.sample.n = 3;
        let partial = cmd_score(&config, &dir.path().join("partial.jsonl")).unwrap();
        assert!(partial.backend_queries > 0);

        // Full run resumes from the cache: exactly the remaining queries.
        config.sample.n = 100;
        let full = cmd_score(&config, &dir.path().join("scores.jsonl")).unwrap();
        let sets = facts::load_manual_facts(config.facts_path.as_deref().unwrap()).unwrap();
        let total: usize = facts_by_doc(sets)
            .values()
            .map(|(src, sum)| src.as_ref().unwrap().len() * sum.as_ref().unwrap().len() * 8)
            .sum();
        assert_eq!(full.backend_queries as usize, total - partial.backend_queries as usize);
    }

    #[test]
    fn train_reads_only_the_val_cut() {
        let dir = TempDir::new().unwrap();
        let config = run_config(&dir);
        generate_corpus(&dir, &config);
        cmd_extract_facts(&config).unwrap();
        let scores_path = dir.path().join("scores.jsonl");
        cmd_score(&config, &scores_path).unwrap();
        let model_path = dir.path().join("model.json");
        cmd_train(&config, &scores_path, &model_path).unwrap();
        let clean_model = fs::read(&model_path).unwrap();

        // Poison every test-cut line; the trained model must not move.
        let poisoned_path = dir.path().join("poisoned.jsonl");
        let mut lines = read_score_lines(&scores_path).unwrap();
        for line in &mut lines {
            if line.cut == Some(Cut::Test) {
                line.features = FeatureVector::new([0.123; 8]).unwrap();
                line.label = line.label.map(|l| 1 - l);
            }
        }
        let mut out = String::new();
        for line in &lines {
            out.push_str(&serde_json::to_string(line).unwrap());
            out.push('\n');
        }
        fs::write(&poisoned_path, out).unwrap();
        let poisoned_model_path = dir.path().join("model2.json");
        cmd_train(&config, &poisoned_path, &poisoned_model_path).unwrap();
        assert_eq!(clean_model, fs::read(&poisoned_model_path).unwrap());
    }

    #[test]
    fn train_fails_without_val_examples() {
        let dir = TempDir::new().unwrap();
        let config = run_config(&dir);
        let scores_path = dir.path().join("scores.jsonl");
        // Only test-cut lines.
        let line = ScoreLine {
            doc_id: "d".into(),
            dataset: "synthetic".into(),
            cut: Some(Cut::Test),
            label: Some(1),
            summary_idx: 0,
            summary_fact: "f".into(),
            features: FeatureVector::new([0.5; 8]).unwrap(),
            pairs: vec![vec![0.5; 8]],
        };
        fs::write(&scores_path, format!("{}\n", serde_json::to_string(&line).unwrap())).unwrap();
        let err = cmd_train(&config, &scores_path, &dir.path().join("m.json")).unwrap_err();
        assert!(matches!(err, PipelineError::Classifier(ClassifierError::EmptyTraining)), "{err}");
    }

    #[test]
    fn evaluate_and_diagnose_produce_valid_files() {
        let dir = TempDir::new().unwrap();
        let mut config = run_config(&dir);
        config.sample.n = 100;
        let spec = SyntheticSpec {
            n_factual: 8,
            n_nonfactual: 8,
            seed: 5,
            perturbations: Perturbation::ALL.to_vec(),
        };
        cmd_generate(&spec, &config.data_path, dir.path().join("manual.jsonl").as_path()).unwrap();
        cmd_extract_facts(&config).unwrap();
        let scores_path = dir.path().join("scores.jsonl");
        cmd_score(&config, &scores_path).unwrap();
        let model_path = dir.path().join("model.json");
        cmd_train(&config, &scores_path, &model_path).unwrap();

        let report_path = dir.path().join("report.json");
        let report = cmd_evaluate(&config, &scores_path, &model_path, &report_path).unwrap();
        for metric in [report.auc, report.accuracy, report.f1, report.precision] {
            assert!((0.0..=1.0).contains(&metric), "{metric}");
        }
        assert_eq!(report.n_examples, 8);
        assert_eq!(report.per_dataset.len(), 1);
        assert!(report.per_dataset.contains_key("synthetic"));

        let verdicts_path = dir.path().join("verdicts.jsonl");
        let predict = cmd_predict(&config, &scores_path, &model_path, &verdicts_path).unwrap();
        assert_eq!(predict.n_docs, 16);
        let verdicts = read_verdict_lines(&verdicts_path).unwrap();
        assert_eq!(verdicts.len(), 16);
        for v in &verdicts {
            let min = v.fact_posteriors.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(v.summary_score, min);
        }

        let diag_path = dir.path().join("diagnostics.json");
        let diagnostics = cmd_diagnose(&config, &scores_path, &diag_path, 8).unwrap();
        let ratio_sum: f64 = diagnostics.pca.ratios.iter().sum();
        assert!((ratio_sum - 1.0).abs() < 1e-9, "{ratio_sum}");
        for w in diagnostics.pca.ratios.windows(2) {
            assert!(w[0] >= w[1] - 1e-15);
        }
        assert_eq!(diagnostics.correlation.len(), 8);
    }

    #[test]
    fn constant_scores_evaluate_to_half_auc() {
        let dir = TempDir::new().unwrap();
        let config = run_config(&dir);
        // Hand-build a scores file whose features are all identical; every
        // posterior ties, so every summary score ties and AUC is 0.5. Two
        // dataset names exercise the per-dataset grouping.
        let scores_path = dir.path().join("scores.jsonl");
        let mut out = String::new();
        for (i, (cut, label)) in [
            (Cut::Val, 1),
            (Cut::Val, 0),
            (Cut::Val, 1),
            (Cut::Val, 0),
            (Cut::Test, 1),
            (Cut::Test, 0),
            (Cut::Test, 1),
            (Cut::Test, 0),
        ]
        .iter()
        .enumerate()
        {
            let line = ScoreLine {
                doc_id: format!("d{i}"),
                dataset: if i % 4 < 2 { "alpha".into() } else { "beta".into() },
                cut: Some(*cut),
                label: Some(*label),
                summary_idx: 0,
                summary_fact: "f".into(),
                features: FeatureVector::new([0.5; 8]).unwrap(),
                pairs: vec![vec![0.5; 8]],
            };
            out.push_str(&serde_json::to_string(&line).unwrap());
            out.push('\n');
        }
        fs::write(&scores_path, out).unwrap();
        // A symmetric hand-built model (identical class parameters).
        let model_json = serde_json::json!({
            "variant": "gaussian",
            "priors": {"factual": 0.5, "not_factual": 0.5},
            "means": {"factual": vec![0.5; 8], "not_factual": vec![0.5; 8]},
            "variances": {"factual": vec![0.1; 8], "not_factual": vec![0.1; 8]},
            "var_smoothing": 0.0,
            "feature_order": ["prede","ente","circe","corefe","linke","oute","grame","supported"],
        });
        let model_path = dir.path().join("model.json");
        fs::write(&model_path, model_json.to_string()).unwrap();
        let report =
            cmd_evaluate(&config, &scores_path, &model_path, &dir.path().join("report.json")).unwrap();
        assert_eq!(report.auc, 0.5);
        // Per-dataset keys are exactly the distinct dataset names.
        let keys: Vec<&str> = report.per_dataset.keys().map(|s| s.as_str()).collect();
        assert_eq!(keys, ["alpha", "beta"]);
    }

    #[test]
    fn zero_concurrency_is_rejected() {
        let dir = TempDir::new().unwrap();
        let mut config = run_config(&dir);
        config.concurrency_limit = 0;
        let err = config.validate().unwrap_err();
        assert!(matches!(err, PipelineError::Config(_)), "{err}");
    }

    #[test]
    fn score_without_any_facts_errors() {
        let dir = TempDir::new().unwrap();
        let config = run_config(&dir);
        generate_corpus(&dir, &config);
        // Facts file exists but covers no sampled doc.
        fs::write(
            config.facts_path.as_deref().unwrap(),
            "{\"doc_id\":\"other\",\"source_facts\":[\"s\"],\"summary_facts\":[\"m\"]}\n",
        )
        .unwrap();
        let err = cmd_score(&config, &dir.path().join("scores.jsonl")).unwrap_err();
        assert!(matches!(err, PipelineError::NoFactsForRun), "{err}");
    }
}
