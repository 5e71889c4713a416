//! Naive Bayes over the eight category features.
//!
//! The hypothesis is per summary fact: given the feature vector X, choose
//! the class C in {factual, not_factual} maximizing P(C) * prod_i P(X_i|C).
//! Likelihoods are Gaussian by default (the features are continuous
//! probabilities); a Bernoulli variant that binarizes features at 0.5 is
//! available for comparison. All probability arithmetic happens in log
//! space and posteriors are normalized with the log-sum-exp identity.
//!
//! Summary-level judgement applies the worst-fact rule: the summary score
//! is the minimum per-fact posterior and the summary is factual only when
//! every fact classifies as factual. Ties in the per-fact argmax resolve to
//! not_factual, the safe side of a factuality gate.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::FactualityCategory;
use crate::types::{ClassLabel, FeatureVector, Verdict};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("training set is empty")]
    EmptyTraining,
    #[error("training set has no {0} examples")]
    SingleClassTraining(&'static str),
    #[error("feature {feature} has zero variance in class {class} and smoothing is disabled")]
    DegenerateVariance { class: &'static str, feature: usize },
    #[error("feature count mismatch: model has {model}, input has {input}")]
    FeatureCountMismatch { model: usize, input: usize },
    #[error("no facts to judge")]
    NoFacts,
    #[error("model file: {0}")]
    ModelSchema(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Likelihood family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NbVariant {
    #[default]
    Gaussian,
    Bernoulli,
}

/// Training knobs. `var_smoothing_fraction` scales the largest per-feature
/// variance of the full training set into the additive smoothing term; zero
/// disables smoothing entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub variant: NbVariant,
    pub var_smoothing_fraction: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { variant: NbVariant::Gaussian, var_smoothing_fraction: 1e-9 }
    }
}

/// Trained model: class priors plus per-class, per-feature parameters.
/// For the Gaussian variant `means`/`variances` are moments (population
/// variance, already smoothed); for Bernoulli, `means` holds the
/// Laplace-smoothed P(X_i >= 0.5 | C) and `variances` the matching p(1-p).
#[derive(Debug, Clone, PartialEq)]
pub struct NbModel {
    variant: NbVariant,
    /// Indexed by [`ClassLabel::index`]: [factual, not_factual].
    priors: [f64; 2],
    means: [Vec<f64>; 2],
    variances: [Vec<f64>; 2],
    var_smoothing: f64,
    n_features: usize,
}

impl NbModel {
    pub fn variant(&self) -> NbVariant {
        self.variant
    }

    pub fn priors(&self) -> [f64; 2] {
        self.priors
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn var_smoothing(&self) -> f64 {
        self.var_smoothing
    }

    pub fn mean(&self, class: ClassLabel, feature: usize) -> f64 {
        self.means[class.index()][feature]
    }

    pub fn variance(&self, class: ClassLabel, feature: usize) -> f64 {
        self.variances[class.index()][feature]
    }
}

/// Train on feature vectors with summary-level labels.
pub fn train(examples: &[(FeatureVector, ClassLabel)]) -> Result<NbModel, ClassifierError> {
    train_with(examples, TrainOptions::default())
}

pub fn train_with(
    examples: &[(FeatureVector, ClassLabel)],
    options: TrainOptions,
) -> Result<NbModel, ClassifierError> {
    let rows: Vec<(&[f64], ClassLabel)> =
        examples.iter().map(|(v, l)| (v.as_slice(), *l)).collect();
    train_rows(&rows, options)
}

/// Train on raw feature rows of any (consistent) dimension.
pub fn train_rows(
    rows: &[(&[f64], ClassLabel)],
    options: TrainOptions,
) -> Result<NbModel, ClassifierError> {
    if rows.is_empty() {
        return Err(ClassifierError::EmptyTraining);
    }
    let n_features = rows[0].0.len();
    let n_total = rows.len() as f64;
    let mut counts = [0usize; 2];
    for (_, label) in rows {
        counts[label.index()] += 1;
    }
    if counts[ClassLabel::Factual.index()] == 0 {
        return Err(ClassifierError::SingleClassTraining("factual"));
    }
    if counts[ClassLabel::NotFactual.index()] == 0 {
        return Err(ClassifierError::SingleClassTraining("not_factual"));
    }
    let priors = [counts[0] as f64 / n_total, counts[1] as f64 / n_total];

    match options.variant {
        NbVariant::Gaussian => {
            let mut means = [vec![0.0; n_features], vec![0.0; n_features]];
            let mut variances = [vec![0.0; n_features], vec![0.0; n_features]];
            for (x, label) in rows {
                let c = label.index();
                for (f, &value) in x.iter().enumerate() {
                    means[c][f] += value;
                }
            }
            for c in 0..2 {
                for f in 0..n_features {
                    means[c][f] /= counts[c] as f64;
                }
            }
            for (x, label) in rows {
                let c = label.index();
                for (f, &value) in x.iter().enumerate() {
                    let d = value - means[c][f];
                    variances[c][f] += d * d;
                }
            }
            for c in 0..2 {
                for f in 0..n_features {
                    // Population variance: divide by the class count.
                    variances[c][f] /= counts[c] as f64;
                }
            }

            // Smoothing scale: largest per-feature variance over all rows.
            let mut max_feature_variance = 0.0f64;
            for f in 0..n_features {
                let mean_all: f64 = rows.iter().map(|(x, _)| x[f]).sum::<f64>() / n_total;
                let var_all: f64 =
                    rows.iter().map(|(x, _)| (x[f] - mean_all).powi(2)).sum::<f64>() / n_total;
                max_feature_variance = max_feature_variance.max(var_all);
            }
            let mut var_smoothing = options.var_smoothing_fraction * max_feature_variance;
            if options.var_smoothing_fraction > 0.0 && var_smoothing == 0.0 {
                // Every feature is constant; fall back to the fraction itself
                // so smoothed variances stay strictly positive.
                var_smoothing = options.var_smoothing_fraction;
            }
            for class_variances in &mut variances {
                for v in class_variances.iter_mut() {
                    *v += var_smoothing;
                }
            }
            if var_smoothing == 0.0 {
                for (c, name) in [(0usize, "factual"), (1usize, "not_factual")] {
                    if let Some(f) = variances[c].iter().position(|&v| v <= 0.0) {
                        return Err(ClassifierError::DegenerateVariance { class: name, feature: f });
                    }
                }
            }
            Ok(NbModel {
                variant: NbVariant::Gaussian,
                priors,
                means,
                variances,
                var_smoothing,
                n_features,
            })
        }
        NbVariant::Bernoulli => {
            // Binarize at 0.5, estimate with add-one smoothing.
            let mut ones = [vec![0usize; n_features], vec![0usize; n_features]];
            for (x, label) in rows {
                let c = label.index();
                for (f, &value) in x.iter().enumerate() {
                    if value >= 0.5 {
                        ones[c][f] += 1;
                    }
                }
            }
            let mut means = [vec![0.0; n_features], vec![0.0; n_features]];
            let mut variances = [vec![0.0; n_features], vec![0.0; n_features]];
            for c in 0..2 {
                for f in 0..n_features {
                    let p = (ones[c][f] as f64 + 1.0) / (counts[c] as f64 + 2.0);
                    means[c][f] = p;
                    variances[c][f] = p * (1.0 - p);
                }
            }
            Ok(NbModel {
                variant: NbVariant::Bernoulli,
                priors,
                means,
                variances,
                var_smoothing: 0.0,
                n_features,
            })
        }
    }
}

fn gaussian_log_density(value: f64, mean: f64, variance: f64) -> f64 {
    let d = value - mean;
    -0.5 * ((2.0 * PI * variance).ln() + d * d / variance)
}

/// Log-joint difference a_factual - a_not_factual, accumulated feature by
/// feature so that terms shared by both classes cancel exactly instead of
/// meeting again as two huge sums. This keeps posteriors accurate even when
/// a near-zero smoothed variance makes individual log-joints enormous.
fn log_joint_difference(model: &NbModel, x: &[f64]) -> f64 {
    let f_idx = ClassLabel::Factual.index();
    let nf_idx = ClassLabel::NotFactual.index();
    let mut diff = model.priors[f_idx].ln() - model.priors[nf_idx].ln();
    match model.variant {
        NbVariant::Gaussian => {
            for (f, &value) in x.iter().enumerate() {
                let t_f = gaussian_log_density(value, model.means[f_idx][f], model.variances[f_idx][f]);
                let t_nf =
                    gaussian_log_density(value, model.means[nf_idx][f], model.variances[nf_idx][f]);
                diff += t_f - t_nf;
            }
        }
        NbVariant::Bernoulli => {
            for (f, &value) in x.iter().enumerate() {
                let (p_f, p_nf) = (model.means[f_idx][f], model.means[nf_idx][f]);
                if value >= 0.5 {
                    diff += p_f.ln() - p_nf.ln();
                } else {
                    diff += (1.0 - p_f).ln() - (1.0 - p_nf).ln();
                }
            }
        }
    }
    diff
}

fn check_width(model: &NbModel, x: &[f64]) -> Result<(), ClassifierError> {
    if x.len() != model.n_features {
        return Err(ClassifierError::FeatureCountMismatch {
            model: model.n_features,
            input: x.len(),
        });
    }
    Ok(())
}

/// P(factual | x): exp(a_f) / (exp(a_f) + exp(a_nf)) evaluated in log space
/// via the two-class log-sum-exp reduction 1 / (1 + exp(a_nf - a_f)).
pub fn posterior_factual(model: &NbModel, x: &FeatureVector) -> f64 {
    posterior_factual_raw(model, x.as_slice()).expect("feature vectors are 8-wide")
}

pub fn posterior_factual_raw(model: &NbModel, x: &[f64]) -> Result<f64, ClassifierError> {
    check_width(model, x)?;
    let diff = log_joint_difference(model, x);
    Ok(1.0 / (1.0 + (-diff).exp()))
}

pub fn posterior_not_factual(model: &NbModel, x: &FeatureVector) -> f64 {
    let diff = log_joint_difference(model, x.as_slice());
    1.0 / (1.0 + diff.exp())
}

/// Argmax class; an exact tie resolves to not_factual.
pub fn classify_fact(model: &NbModel, x: &FeatureVector) -> ClassLabel {
    classify_fact_raw(model, x.as_slice()).expect("feature vectors are 8-wide")
}

pub fn classify_fact_raw(model: &NbModel, x: &[f64]) -> Result<ClassLabel, ClassifierError> {
    check_width(model, x)?;
    let diff = log_joint_difference(model, x);
    Ok(if diff > 0.0 { ClassLabel::Factual } else { ClassLabel::NotFactual })
}

/// Judge a whole summary by its worst fact.
pub fn judge_summary(model: &NbModel, vectors: &[FeatureVector]) -> Result<Verdict, ClassifierError> {
    if vectors.is_empty() {
        return Err(ClassifierError::NoFacts);
    }
    let fact_posteriors: Vec<f64> = vectors.iter().map(|v| posterior_factual(model, v)).collect();
    let summary_score = fact_posteriors.iter().cloned().fold(f64::INFINITY, f64::min);
    let all_factual = vectors.iter().all(|v| classify_fact(model, v) == ClassLabel::Factual);
    Ok(Verdict {
        fact_posteriors,
        summary_score,
        summary_label: if all_factual { ClassLabel::Factual } else { ClassLabel::NotFactual },
    })
}

// ---------------------------------------------------------------------------
// Model file

#[derive(Debug, Serialize, Deserialize)]
struct ClassPair<T> {
    factual: T,
    not_factual: T,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(default)]
    variant: NbVariant,
    priors: ClassPair<f64>,
    means: ClassPair<Vec<f64>>,
    variances: ClassPair<Vec<f64>>,
    var_smoothing: f64,
    feature_order: Vec<String>,
}

/// Serialize a model trained on the canonical eight features.
pub fn model_to_json(model: &NbModel) -> Result<String, ClassifierError> {
    if model.n_features != FactualityCategory::COUNT {
        return Err(ClassifierError::ModelSchema(format!(
            "model files require {} features, model has {}",
            FactualityCategory::COUNT,
            model.n_features
        )));
    }
    let file = ModelFile {
        variant: model.variant,
        priors: ClassPair { factual: model.priors[0], not_factual: model.priors[1] },
        means: ClassPair { factual: model.means[0].clone(), not_factual: model.means[1].clone() },
        variances: ClassPair {
            factual: model.variances[0].clone(),
            not_factual: model.variances[1].clone(),
        },
        var_smoothing: model.var_smoothing,
        feature_order: FactualityCategory::ALL.iter().map(|c| c.identifier().to_string()).collect(),
    };
    Ok(serde_json::to_string(&file).expect("model serialization"))
}

pub fn model_from_json(json: &str) -> Result<NbModel, ClassifierError> {
    let file: ModelFile =
        serde_json::from_str(json).map_err(|e| ClassifierError::ModelSchema(e.to_string()))?;
    let expected: Vec<String> =
        FactualityCategory::ALL.iter().map(|c| c.identifier().to_string()).collect();
    if file.feature_order != expected {
        return Err(ClassifierError::ModelSchema(format!(
            "feature_order must be the canonical category list, got {:?}",
            file.feature_order
        )));
    }
    let n = FactualityCategory::COUNT;
    for (name, v) in [("means", &file.means), ("variances", &file.variances)] {
        if v.factual.len() != n || v.not_factual.len() != n {
            return Err(ClassifierError::ModelSchema(format!("{name} must hold {n} values per class")));
        }
    }
    let priors = [file.priors.factual, file.priors.not_factual];
    if !(priors[0] > 0.0 && priors[0] < 1.0 && priors[1] > 0.0 && priors[1] < 1.0)
        || (priors[0] + priors[1] - 1.0).abs() > 1e-12
    {
        return Err(ClassifierError::ModelSchema(format!(
            "priors must lie in (0,1) and sum to 1, got {priors:?}"
        )));
    }
    if file
        .variances
        .factual
        .iter()
        .chain(file.variances.not_factual.iter())
        .any(|&v| !v.is_finite() || v <= 0.0)
    {
        return Err(ClassifierError::ModelSchema("variances must be finite and positive".into()));
    }
    if file.var_smoothing < 0.0 {
        return Err(ClassifierError::ModelSchema("var_smoothing must be >= 0".into()));
    }
    Ok(NbModel {
        variant: file.variant,
        priors,
        means: [file.means.factual, file.means.not_factual],
        variances: [file.variances.factual, file.variances.not_factual],
        var_smoothing: file.var_smoothing,
        n_features: n,
    })
}

pub fn save_model(model: &NbModel, path: &Path) -> Result<(), ClassifierError> {
    let mut json = model_to_json(model)?;
    json.push('\n');
    fs::write(path, json)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NbModel, ClassifierError> {
    let json = fs::read_to_string(path)?;
    model_from_json(&json)
}
