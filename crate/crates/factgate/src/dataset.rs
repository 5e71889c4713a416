//! Benchmark ingestion: CSV/JSONL loading, seeded sampling, val/test splits.
//!
//! The CSV layout is the benchmark's native one: a header row with required
//! columns `dataset, origin, id, doc, summary, model_name, label, cut`, plus
//! any number of optional system columns named `"<name> score"` and
//! `"<name> label"`. The JSONL mirror uses the same field names with maps
//! for the system columns.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("row {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample plan must request at least one record")]
    InvalidPlan,
    #[error("record {0} has no cut value")]
    MissingCut(String),
}

/// Summarization dataset a record originates from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Cnndm,
    Xsum,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Cnndm => "cnndm",
            Origin::Xsum => "xsum",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "cnndm" => Some(Origin::Cnndm),
            "xsum" => Some(Origin::Xsum),
            _ => None,
        }
    }
}

/// Benchmark split a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cut {
    Val,
    Test,
}

impl Cut {
    pub fn as_str(self) -> &'static str {
        match self {
            Cut::Val => "val",
            Cut::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "val" => Some(Cut::Val),
            "test" => Some(Cut::Test),
            _ => None,
        }
    }
}

/// One benchmark row: a document, a model-generated summary, and an optional
/// gold factual-consistency label (1 = factually consistent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    #[serde(rename = "dataset")]
    pub dataset_name: String,
    pub origin: Origin,
    #[serde(rename = "id")]
    pub doc_id: String,
    pub doc: String,
    pub summary: String,
    pub model_name: String,
    #[serde(default)]
    pub label: Option<u8>,
    #[serde(default)]
    pub cut: Option<Cut>,
    /// Scores from other factuality systems, keyed by system name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub system_scores: BTreeMap<String, f64>,
    /// Thresholded labels from other factuality systems.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub system_labels: BTreeMap<String, u8>,
}

/// Seeded sampling parameters. `n` defaults to 70.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    #[serde(default = "default_sample_n")]
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stratify_by_label: bool,
}

fn default_sample_n() -> usize {
    70
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan { n: 70, seed: 0, stratify_by_label: false }
    }
}

/// On-disk benchmark encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchFormat {
    Csv,
    Jsonl,
}

impl BenchFormat {
    /// Guess the format from a file extension; defaults to CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => BenchFormat::Jsonl,
            _ => BenchFormat::Csv,
        }
    }
}

const REQUIRED_COLUMNS: [&str; 8] =
    ["dataset", "origin", "id", "doc", "summary", "model_name", "label", "cut"];

/// Load a benchmark file. Row order is preserved; unknown columns ending in
/// `" score"` / `" label"` are captured into the record's system maps.
pub fn load_benchmark(path: &Path, format: BenchFormat) -> Result<Vec<BenchRecord>, DatasetError> {
    match format {
        BenchFormat::Csv => load_csv(path),
        BenchFormat::Jsonl => load_jsonl(path),
    }
}

fn load_csv(path: &Path) -> Result<Vec<BenchRecord>, DatasetError> {
    let file = File::open(path)?;
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    let mut required_idx = [usize::MAX; 8];
    for (want_pos, want) in REQUIRED_COLUMNS.iter().enumerate() {
        match headers.iter().position(|h| h == *want) {
            Some(i) => required_idx[want_pos] = i,
            None => {
                return Err(DatasetError::MalformedRow {
                    line: 1,
                    reason: format!("missing required column '{want}'"),
                })
            }
        }
    }
    // Extra columns become system scores/labels by suffix convention.
    let mut score_cols: Vec<(usize, String)> = Vec::new();
    let mut label_cols: Vec<(usize, String)> = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if required_idx.contains(&i) {
        } else if let Some(name) = h.strip_suffix(" score") {
            score_cols.push((i, name.to_string()));
        } else if let Some(name) = h.strip_suffix(" label") {
            label_cols.push((i, name.to_string()));
        }
        // Other unknown columns are ignored.
    }

    let mut records = Vec::new();
    for (row_no, row) in reader.records().enumerate() {
        let line = row_no + 2; // 1-based, after the header
        let row = row?;
        let get = |slot: usize| row.get(required_idx[slot]).unwrap_or("");
        let malformed = |reason: String| DatasetError::MalformedRow { line, reason };

        let origin = Origin::parse(get(1))
            .ok_or_else(|| malformed(format!("unknown origin '{}'", get(1))))?;
        let label = parse_optional_binary(get(6))
            .map_err(|v| malformed(format!("label must be 0 or 1, got '{v}'")))?;
        let cut = match get(7) {
            "" => None,
            s => Some(Cut::parse(s).ok_or_else(|| malformed(format!("unknown cut '{s}'")))?),
        };
        let doc = get(3).to_string();
        let summary = get(4).to_string();
        if doc.is_empty() {
            return Err(malformed("doc is empty".into()));
        }
        if summary.is_empty() {
            return Err(malformed("summary is empty".into()));
        }

        let mut system_scores = BTreeMap::new();
        for (i, name) in &score_cols {
            let cell = row.get(*i).unwrap_or("");
            if !cell.is_empty() {
                let value: f64 = cell.parse().map_err(|_| {
                    malformed(format!("column '{name} score' is not a number: '{cell}'"))
                })?;
                system_scores.insert(name.clone(), value);
            }
        }
        let mut system_labels = BTreeMap::new();
        for (i, name) in &label_cols {
            let cell = row.get(*i).unwrap_or("");
            if !cell.is_empty() {
                let value = parse_optional_binary(cell)
                    .map_err(|v| malformed(format!("column '{name} label' must be 0 or 1, got '{v}'")))?
                    .expect("non-empty cell");
                system_labels.insert(name.clone(), value);
            }
        }

        records.push(BenchRecord {
            dataset_name: get(0).to_string(),
            origin,
            doc_id: get(2).to_string(),
            doc,
            summary,
            model_name: get(5).to_string(),
            label,
            cut,
            system_scores,
            system_labels,
        });
    }
    Ok(records)
}

fn parse_optional_binary(cell: &str) -> Result<Option<u8>, String> {
    match cell {
        "" => Ok(None),
        "0" => Ok(Some(0)),
        "1" => Ok(Some(1)),
        other => Err(other.to_string()),
    }
}

fn load_jsonl(path: &Path) -> Result<Vec<BenchRecord>, DatasetError> {
    let file = File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: BenchRecord =
            serde_json::from_str(&line).map_err(|e| DatasetError::MalformedRow {
                line: i + 1,
                reason: e.to_string(),
            })?;
        if record.doc.is_empty() || record.summary.is_empty() {
            return Err(DatasetError::MalformedRow {
                line: i + 1,
                reason: "doc and summary must be non-empty".into(),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Serialize records back out in either format. Column order is fixed:
/// required columns, then system score columns sorted by name, then system
/// label columns sorted by name.
pub fn save_benchmark(
    records: &[BenchRecord],
    path: &Path,
    format: BenchFormat,
) -> Result<(), DatasetError> {
    match format {
        BenchFormat::Csv => save_csv(records, path),
        BenchFormat::Jsonl => {
            let mut out = String::new();
            for r in records {
                out.push_str(&serde_json::to_string(r).expect("record serialization"));
                out.push('\n');
            }
            let mut file = File::create(path)?;
            file.write_all(out.as_bytes())?;
            Ok(())
        }
    }
}

fn save_csv(records: &[BenchRecord], path: &Path) -> Result<(), DatasetError> {
    let mut score_names: Vec<String> = Vec::new();
    let mut label_names: Vec<String> = Vec::new();
    for r in records {
        for name in r.system_scores.keys() {
            if !score_names.contains(name) {
                score_names.push(name.clone());
            }
        }
        for name in r.system_labels.keys() {
            if !label_names.contains(name) {
                label_names.push(name.clone());
            }
        }
    }
    score_names.sort();
    label_names.sort();

    let mut writer = csv::Writer::from_writer(File::create(path)?);
    let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(score_names.iter().map(|n| format!("{n} score")));
    header.extend(label_names.iter().map(|n| format!("{n} label")));
    writer.write_record(&header)?;

    for r in records {
        let mut row: Vec<String> = vec![
            r.dataset_name.clone(),
            r.origin.as_str().to_string(),
            r.doc_id.clone(),
            r.doc.clone(),
            r.summary.clone(),
            r.model_name.clone(),
            r.label.map(|l| l.to_string()).unwrap_or_default(),
            r.cut.map(|c| c.as_str().to_string()).unwrap_or_default(),
        ];
        for name in &score_names {
            row.push(r.system_scores.get(name).map(|v| v.to_string()).unwrap_or_default());
        }
        for name in &label_names {
            row.push(r.system_labels.get(name).map(|v| v.to_string()).unwrap_or_default());
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Draw `plan.n` records without replacement using ChaCha8 seeded from
/// `plan.seed`. Selected records keep their original relative order. When
/// `n >= records.len()` the input is returned unchanged.
///
/// With `stratify_by_label`, per-label counts follow largest-remainder
/// proportional allocation, which lands within one record of the population
/// proportion for every class.
pub fn sample(records: &[BenchRecord], plan: &SamplePlan) -> Result<Vec<BenchRecord>, DatasetError> {
    if records.is_empty() {
        return Err(DatasetError::EmptyDataset);
    }
    if plan.n == 0 {
        return Err(DatasetError::InvalidPlan);
    }
    if plan.n >= records.len() {
        return Ok(records.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let chosen = if plan.stratify_by_label {
        // Group indices per label value; unlabeled records form their own
        // stratum. BTreeMap keeps the stratum order deterministic.
        let mut strata: BTreeMap<Option<u8>, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            strata.entry(r.label).or_default().push(i);
        }
        let total = records.len();
        let mut allocations: Vec<(Option<u8>, usize, f64)> = strata
            .iter()
            .map(|(label, idxs)| {
                let exact = plan.n as f64 * idxs.len() as f64 / total as f64;
                (*label, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let mut assigned: usize = allocations.iter().map(|(_, c, _)| *c).sum();
        // Hand out the remainder to the largest fractional parts.
        let mut by_remainder: Vec<usize> = (0..allocations.len()).collect();
        by_remainder.sort_by(|&a, &b| {
            allocations[b].2.partial_cmp(&allocations[a].2).unwrap().then(a.cmp(&b))
        });
        let mut cursor = 0;
        while assigned < plan.n {
            allocations[by_remainder[cursor % by_remainder.len()]].1 += 1;
            assigned += 1;
            cursor += 1;
        }
        let mut chosen = Vec::with_capacity(plan.n);
        for (label, count, _) in &allocations {
            let idxs = &strata[label];
            chosen.extend(choose_without_replacement(idxs, *count, &mut rng));
        }
        chosen
    } else {
        let all: Vec<usize> = (0..records.len()).collect();
        choose_without_replacement(&all, plan.n, &mut rng)
    };
    let mut chosen = chosen;
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| records[i].clone()).collect())
}

/// Partial Fisher-Yates: pick `count` distinct elements from `pool`.
fn choose_without_replacement(pool: &[usize], count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = pool.to_vec();
    let count = count.min(pool.len());
    for i in 0..count {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

/// Partition records into (val, test), preserving order within each side.
pub fn split_by_cut(
    records: &[BenchRecord],
) -> Result<(Vec<BenchRecord>, Vec<BenchRecord>), DatasetError> {
    let mut val = Vec::new();
    let mut test = Vec::new();
    for r in records {
        match r.cut {
            Some(Cut::Val) => val.push(r.clone()),
            Some(Cut::Test) => test.push(r.clone()),
            None => return Err(DatasetError::MissingCut(r.doc_id.clone())),
        }
    }
    Ok((val, test))
}
