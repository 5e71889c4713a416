//! factgate: estimate whether a generated summary is factually consistent
//! with its source document.
//!
//! Configuration precedence: built-in defaults < --config TOML file < flags.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use factgate::analysis::ThresholdObjective;
use factgate::classifier::NbVariant;
use factgate::pipeline::{
    self, BackendKind, RunConfig,
};
use factgate::synth::{Perturbation, SyntheticSpec};

#[derive(Parser)]
#[command(name = "factgate", version, about = "Factual-consistency gate for generated summaries")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Scoring backend.
    #[arg(long, global = true, value_parser = parse_backend)]
    backend: Option<BackendKind>,

    /// Response cache file (JSONL).
    #[arg(long, global = true)]
    cache: Option<PathBuf>,

    /// Sampling seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Maximum in-flight backend queries.
    #[arg(long, global = true)]
    concurrency: Option<usize>,

    /// Backend model identifier.
    #[arg(long, global = true)]
    model_id: Option<String>,

    /// Remote endpoint URL (overrides FACTGATE_API_URL).
    #[arg(long, global = true)]
    api_url: Option<String>,

    #[command(subcommand)]
    command: Command,
}

fn parse_backend(s: &str) -> Result<BackendKind, String> {
    match s {
        "heuristic" => Ok(BackendKind::Heuristic),
        "remote" => Ok(BackendKind::Remote),
        other => Err(format!("unknown backend '{other}' (expected heuristic|remote)")),
    }
}

fn parse_nb(s: &str) -> Result<NbVariant, String> {
    match s {
        "gaussian" => Ok(NbVariant::Gaussian),
        "bernoulli" => Ok(NbVariant::Bernoulli),
        other => Err(format!("unknown variant '{other}' (expected gaussian|bernoulli)")),
    }
}

fn parse_objective(s: &str) -> Result<ThresholdObjective, String> {
    match s {
        "accuracy" => Ok(ThresholdObjective::Accuracy),
        "balanced_accuracy" => Ok(ThresholdObjective::BalancedAccuracy),
        other => Err(format!("unknown objective '{other}' (expected accuracy|balanced_accuracy)")),
    }
}

fn parse_perturbation(s: &str) -> Result<Perturbation, String> {
    match s {
        "entity_swap" => Ok(Perturbation::EntitySwap),
        "predicate_negation" => Ok(Perturbation::PredicateNegation),
        "out_of_article_addition" => Ok(Perturbation::OutOfArticleAddition),
        other => Err(format!("unknown perturbation '{other}'")),
    }
}

#[derive(Args)]
struct DataArgs {
    /// Benchmark file (CSV or JSONL by extension).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Sample size drawn from the benchmark.
    #[arg(long)]
    n: Option<usize>,
    /// Stratify the sample by label.
    #[arg(long)]
    stratify: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Emit a synthetic benchmark with known ground truth.
    Generate {
        /// Output benchmark file.
        #[arg(long, default_value = "corpus.csv")]
        out_data: PathBuf,
        /// Output manual-facts file.
        #[arg(long, default_value = "manual-facts.jsonl")]
        out_facts: PathBuf,
        #[arg(long, default_value_t = 20)]
        factual: usize,
        #[arg(long, default_value_t = 20)]
        nonfactual: usize,
        /// Perturbation kinds applied to non-factual records.
        #[arg(long, value_delimiter = ',', value_parser = parse_perturbation)]
        kinds: Option<Vec<Perturbation>>,
    },
    /// Draw a seeded sample of the benchmark.
    Sample {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "sampled.csv")]
        out: PathBuf,
    },
    /// Decompose sampled documents and summaries into atomic facts.
    ExtractFacts {
        #[command(flatten)]
        data: DataArgs,
        /// Facts file to create or extend (doc_ids already present are kept).
        #[arg(long)]
        facts: Option<PathBuf>,
    },
    /// Cross-compare facts and write aggregated feature vectors.
    Score {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        facts: Option<PathBuf>,
        #[arg(long, default_value = "scores.jsonl")]
        out: PathBuf,
    },
    /// Train the Naive Bayes model on the validation cut.
    Train {
        #[arg(long, default_value = "scores.jsonl")]
        scores: PathBuf,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        /// Likelihood family.
        #[arg(long, value_parser = parse_nb)]
        nb: Option<NbVariant>,
    },
    /// Apply a trained model and write per-summary verdicts.
    Predict {
        #[arg(long, default_value = "scores.jsonl")]
        scores: PathBuf,
        #[arg(long, default_value = "model.json")]
        model: PathBuf,
        #[arg(long, default_value = "verdicts.jsonl")]
        out: PathBuf,
    },
    /// Evaluate on the test cut with a threshold selected on validation.
    Evaluate {
        #[arg(long, default_value = "scores.jsonl")]
        scores: PathBuf,
        #[arg(long, default_value = "model.json")]
        model: PathBuf,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        #[arg(long, value_parser = parse_objective)]
        objective: Option<ThresholdObjective>,
    },
    /// Feature correlation matrix and PCA explained-variance ratios.
    Diagnose {
        #[arg(long, default_value = "scores.jsonl")]
        scores: PathBuf,
        #[arg(long, default_value = "diagnostics.json")]
        out: PathBuf,
        /// Number of principal components to keep.
        #[arg(long, default_value_t = 8)]
        components: usize,
    },
}

/// TOML mirror of RunConfig; every field optional so configs can be partial.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    backend: Option<BackendKind>,
    model_id: Option<String>,
    data_path: Option<PathBuf>,
    facts_path: Option<PathBuf>,
    cache_path: Option<PathBuf>,
    nb: Option<NbVariant>,
    threshold_objective: Option<ThresholdObjective>,
    concurrency_limit: Option<usize>,
    api_url: Option<String>,
    #[serde(default)]
    sample: SampleConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleConfig {
    n: Option<usize>,
    seed: Option<u64>,
    stratify_by_label: Option<bool>,
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: FileConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(v) = file.backend {
            config.backend = v;
        }
        if let Some(v) = file.model_id {
            config.model_id = v;
        }
        if let Some(v) = file.data_path {
            config.data_path = v;
        }
        if let Some(v) = file.facts_path {
            config.facts_path = Some(v);
        }
        if let Some(v) = file.cache_path {
            config.cache_path = v;
        }
        if let Some(v) = file.nb {
            config.nb = v;
        }
        if let Some(v) = file.threshold_objective {
            config.threshold_objective = v;
        }
        if let Some(v) = file.concurrency_limit {
            config.concurrency_limit = v;
        }
        if let Some(v) = file.api_url {
            config.api_url = Some(v);
        }
        if let Some(v) = file.sample.n {
            config.sample.n = v;
        }
        if let Some(v) = file.sample.seed {
            config.sample.seed = v;
        }
        if let Some(v) = file.sample.stratify_by_label {
            config.sample.stratify_by_label = v;
        }
    }
    // Flags win over the file.
    if let Some(v) = cli.backend {
        config.backend = v;
    }
    if let Some(v) = &cli.cache {
        config.cache_path = v.clone();
    }
    if let Some(v) = cli.seed {
        config.sample.seed = v;
    }
    if let Some(v) = cli.concurrency {
        config.concurrency_limit = v;
    }
    if let Some(v) = &cli.model_id {
        config.model_id = v.clone();
    }
    if let Some(v) = &cli.api_url {
        config.api_url = Some(v.clone());
    }
    Ok(config)
}

fn apply_data_args(config: &mut RunConfig, data: &DataArgs, facts: Option<&PathBuf>) {
    if let Some(path) = &data.data {
        config.data_path = path.clone();
    }
    if let Some(n) = data.n {
        config.sample.n = n;
    }
    if data.stratify {
        config.sample.stratify_by_label = true;
    }
    if let Some(path) = facts {
        config.facts_path = Some(path.clone());
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut config = build_config(&cli)?;

    match &cli.command {
        Command::Generate { out_data, out_facts, factual, nonfactual, kinds } => {
            let spec = SyntheticSpec {
                n_factual: *factual,
                n_nonfactual: *nonfactual,
                seed: config.sample.seed,
                perturbations: kinds.clone().unwrap_or_else(|| Perturbation::ALL.to_vec()),
            };
            let stats = pipeline::cmd_generate(&spec, out_data, out_facts)?;
            println!(
                "generated {} records and {} fact lines -> {}, {}",
                stats.n_records,
                stats.n_fact_lines,
                out_data.display(),
                out_facts.display()
            );
        }
        Command::Sample { data, out } => {
            apply_data_args(&mut config, data, None);
            let stats = pipeline::cmd_sample(&config, out)?;
            println!("sampled {} of {} records -> {}", stats.n_out, stats.n_in, out.display());
        }
        Command::ExtractFacts { data, facts } => {
            apply_data_args(&mut config, data, facts.as_ref());
            if config.facts_path.is_none() {
                bail!("extract-facts needs --facts or facts_path in the config");
            }
            let stats = pipeline::cmd_extract_facts(&config)?;
            println!(
                "facts for {} records ({} extracted, {} already present, {} backend queries) -> {}",
                stats.n_records,
                stats.n_extracted,
                stats.n_skipped,
                stats.backend_queries,
                config.facts_path.as_ref().expect("checked above").display()
            );
        }
        Command::Score { data, facts, out } => {
            apply_data_args(&mut config, data, facts.as_ref());
            if config.facts_path.is_none() {
                bail!("score needs --facts or facts_path in the config");
            }
            let stats = pipeline::cmd_score(&config, out)?;
            println!(
                "scored {} documents ({} summary facts, {} backend queries, {} cache hits, {} without facts) -> {}",
                stats.n_docs,
                stats.n_lines,
                stats.backend_queries,
                stats.cache_hits,
                stats.n_missing_facts,
                out.display()
            );
        }
        Command::Train { scores, out, nb } => {
            if let Some(v) = nb {
                config.nb = *v;
            }
            let stats = pipeline::cmd_train(&config, scores, out)?;
            println!(
                "trained on {} validation facts (priors factual={:.4}, not_factual={:.4}) -> {}",
                stats.n_examples,
                stats.priors[0],
                stats.priors[1],
                out.display()
            );
        }
        Command::Predict { scores, model, out } => {
            let stats = pipeline::cmd_predict(&config, scores, model, out)?;
            println!("verdicts for {} documents -> {}", stats.n_docs, out.display());
        }
        Command::Evaluate { scores, model, out, objective } => {
            if let Some(v) = objective {
                config.threshold_objective = *v;
            }
            let report = pipeline::cmd_evaluate(&config, scores, model, out)?;
            println!(
                "test metrics on {} summaries: auc={:.4} accuracy={:.4} f1={:.4} precision={:.4} threshold={:.6} -> {}",
                report.n_examples,
                report.auc,
                report.accuracy,
                report.f1,
                report.precision,
                report.threshold,
                out.display()
            );
        }
        Command::Diagnose { scores, out, components } => {
            let diagnostics = pipeline::cmd_diagnose(&config, scores, out, *components)?;
            let shown: Vec<String> =
                diagnostics.pca.ratios.iter().map(|r| format!("{r:.4}")).collect();
            println!("explained variance ratios [{}] -> {}", shown.join(", "), out.display());
        }
    }
    Ok(())
}
