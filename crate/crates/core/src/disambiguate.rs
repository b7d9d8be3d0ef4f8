//! Context classifiers for unit surfaces with several readings.
//!
//! One multinomial naive Bayes model per ambiguous surface ("pound",
//! "C", "¥", ...), trained on bag-of-words features of example sentences.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_FORMAT: &str = "quantex-nb";
pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_ALPHA: f64 = 1.0;

macro_rules! bundled_data {
    ($($surface:literal => $file:literal),* $(,)?) => {
        &[$(($surface, include_str!(concat!("../data/disambiguation/", $file)))),*]
    };
}

/// Training data shipped with the crate, one file per surface.
pub const BUNDLED_DATA: &[(&str, &str)] = bundled_data! {
    "\"" => "double-quote.json",
    "'" => "apostrophe.json",
    "B" => "B-upper.json",
    "C" => "C-upper.json",
    "F" => "F-upper.json",
    "P" => "P-upper.json",
    "R" => "R-upper.json",
    "a" => "a.json",
    "b" => "b-lower.json",
    "c" => "c.json",
    "dram" => "dram.json",
    "kn" => "kn.json",
    "kt" => "kt.json",
    "p" => "p.json",
    "pound" => "pound.json",
    "¥" => "yen-sign.json",
    "′" => "prime.json",
    "″" => "double-prime.json",
};

#[derive(Debug, Error)]
pub enum DisambigError {
    #[error("{context}: {message}")]
    Json { context: String, message: String },
    #[error("unsupported model format {found:?} (expected {MODEL_FORMAT:?})")]
    Format { found: String },
    #[error("unsupported model version {found} (expected {MODEL_VERSION})")]
    Version { found: u32 },
    #[error("corrupt model: {0}")]
    Corrupt(String),
    #[error("model is for surface {found:?}, not {expected:?}")]
    SurfaceMismatch { expected: String, found: String },
    #[error("no training examples for surface {0:?}")]
    Empty(String),
    #[error("no model for surface {0:?}")]
    UnknownSurface(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub text: String,
    pub unit: String,
}

pub fn parse_examples(text: &str, context: &str) -> Result<Vec<Example>, DisambigError> {
    serde_json::from_str(text).map_err(|e| DisambigError::Json {
        context: context.into(),
        message: e.to_string(),
    })
}

pub fn load_examples(path: &Path) -> Result<Vec<Example>, DisambigError> {
    let text = fs::read_to_string(path).map_err(|source| DisambigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_examples(&text, &path.display().to_string())
}

/// Every fifth example (positions 4, 9, ...) is held out.
pub fn split_examples(examples: &[Example]) -> (Vec<Example>, Vec<Example>) {
    let (test, train): (Vec<_>, Vec<_>) = examples.iter().cloned().enumerate().partition(|(i, _)| i % 5 == 4);
    (
        train.into_iter().map(|(_, e)| e).collect(),
        test.into_iter().map(|(_, e)| e).collect(),
    )
}

fn word_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}]+").unwrap())
}

/// Lowercased word tokens of `text`, minus bare numbers and the surface
/// itself (and its plural).
pub fn context_tokens(text: &str, surface: &str) -> Vec<String> {
    let own = surface.to_lowercase();
    let plural = format!("{own}s");
    word_pattern()
        .find_iter(text)
        .map(|m| m.as_str().to_lowercase())
        .filter(|w| !w.chars().all(|c| c.is_ascii_digit()) && *w != own && *w != plural)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    surface: String,
    alpha: f64,
    classes: Vec<String>,
    class_counts: Vec<u64>,
    token_counts: Vec<BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub unit: String,
    /// Posterior probability of `unit`.
    pub score: f64,
    pub posteriors: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayes {
    surface: String,
    alpha: f64,
    classes: Vec<String>,
    class_counts: Vec<u64>,
    token_counts: Vec<BTreeMap<String, u64>>,
    log_prior: Vec<f64>,
    log_unseen: Vec<f64>,
    log_likelihood: Vec<BTreeMap<String, f64>>,
    vocabulary: BTreeSet<String>,
}

impl NaiveBayes {
    /// Trains on `examples`; exact duplicates count once.
    pub fn train(surface: &str, examples: &[Example], alpha: f64) -> Result<Self, DisambigError> {
        let unique: BTreeSet<(&str, &str)> = examples.iter().map(|e| (e.unit.as_str(), e.text.as_str())).collect();
        if unique.is_empty() {
            return Err(DisambigError::Empty(surface.into()));
        }
        let classes: Vec<String> = unique
            .iter()
            .map(|(u, _)| u.to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut class_counts = vec![0u64; classes.len()];
        let mut token_counts = vec![BTreeMap::new(); classes.len()];
        for (unit, text) in unique {
            let c = classes
                .binary_search_by(|x| x.as_str().cmp(unit))
                .expect("class listed");
            class_counts[c] += 1;
            for w in context_tokens(text, surface) {
                *token_counts[c].entry(w).or_insert(0) += 1;
            }
        }
        Self::from_counts(surface.into(), alpha, classes, class_counts, token_counts)
    }

    fn from_counts(
        surface: String,
        alpha: f64,
        classes: Vec<String>,
        class_counts: Vec<u64>,
        token_counts: Vec<BTreeMap<String, u64>>,
    ) -> Result<Self, DisambigError> {
        if classes.is_empty() {
            return Err(DisambigError::Corrupt("no classes".into()));
        }
        if class_counts.len() != classes.len() || token_counts.len() != classes.len() {
            return Err(DisambigError::Corrupt("class table lengths differ".into()));
        }
        if classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DisambigError::Corrupt("classes must be sorted and unique".into()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(DisambigError::Corrupt(format!("alpha must be positive, got {alpha}")));
        }
        let total: u64 = class_counts.iter().sum();
        if total == 0 || class_counts.contains(&0) {
            return Err(DisambigError::Corrupt("every class needs at least one example".into()));
        }
        let vocabulary: BTreeSet<String> = token_counts.iter().flat_map(|m| m.keys().cloned()).collect();
        let v = vocabulary.len() as f64;
        let log_prior = class_counts.iter().map(|&n| (n as f64 / total as f64).ln()).collect();
        let mut log_unseen = Vec::with_capacity(classes.len());
        let mut log_likelihood = Vec::with_capacity(classes.len());
        for counts in &token_counts {
            let words: u64 = counts.values().sum();
            let denom = words as f64 + alpha * v;
            log_unseen.push((alpha / denom).ln());
            log_likelihood.push(
                counts
                    .iter()
                    .map(|(w, &n)| (w.clone(), ((n as f64 + alpha) / denom).ln()))
                    .collect(),
            );
        }
        Ok(NaiveBayes {
            surface,
            alpha,
            classes,
            class_counts,
            token_counts,
            log_prior,
            log_unseen,
            log_likelihood,
            vocabulary,
        })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    /// Classifies a sentence. Words never seen in training are ignored; with
    /// no known words the class prior decides. Ties go to the
    /// lexicographically smaller class.
    pub fn predict(&self, text: &str) -> Prediction {
        self.predict_among(text, &self.classes.iter().map(String::as_str).collect::<Vec<_>>())
            .expect("own classes are never empty")
    }

    /// Like [`predict`](Self::predict) but restricted to `allowed` classes.
    pub fn predict_among(&self, text: &str, allowed: &[&str]) -> Option<Prediction> {
        let words: Vec<String> = context_tokens(text, &self.surface)
            .into_iter()
            .filter(|w| self.vocabulary.contains(w))
            .collect();
        let mut scored: Vec<(usize, f64)> = Vec::new();
        for (c, class) in self.classes.iter().enumerate() {
            if !allowed.contains(&class.as_str()) {
                continue;
            }
            let mut score = self.log_prior[c];
            for w in &words {
                score += self.log_likelihood[c].get(w).copied().unwrap_or(self.log_unseen[c]);
            }
            scored.push((c, score));
        }
        let max = scored.iter().map(|(_, s)| *s).fold(f64::NEG_INFINITY, f64::max);
        if scored.is_empty() {
            return None;
        }
        let norm: f64 = scored.iter().map(|(_, s)| (s - max).exp()).sum();
        let posteriors: Vec<(String, f64)> = scored
            .iter()
            .map(|&(c, s)| (self.classes[c].clone(), (s - max).exp() / norm))
            .collect();
        // classes are sorted, so the first maximum is the smaller name
        let (unit, score) = posteriors
            .iter()
            .fold(None::<&(String, f64)>, |best, p| match best {
                Some(b) if b.1 >= p.1 => Some(b),
                _ => Some(p),
            })
            .cloned()
            .expect("non-empty");
        Some(Prediction {
            unit,
            score,
            posteriors,
        })
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            surface: self.surface.clone(),
            alpha: self.alpha,
            classes: self.classes.clone(),
            class_counts: self.class_counts.clone(),
            token_counts: self.token_counts.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DisambigError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| DisambigError::Json {
            context: "model".into(),
            message: e.to_string(),
        })?;
        if let Some(format) = value.get("format").and_then(|f| f.as_str()) {
            if format != MODEL_FORMAT {
                return Err(DisambigError::Format { found: format.into() });
            }
        }
        if let Some(version) = value.get("version").and_then(|v| v.as_u64()) {
            if version != u64::from(MODEL_VERSION) {
                return Err(DisambigError::Version {
                    found: u32::try_from(version).unwrap_or(u32::MAX),
                });
            }
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| DisambigError::Corrupt(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(DisambigError::Format { found: file.format });
        }
        Self::from_counts(
            file.surface,
            file.alpha,
            file.classes,
            file.class_counts,
            file.token_counts,
        )
    }

    /// Loads a model and checks it was trained for `surface`.
    pub fn load_for(path: &Path, surface: &str) -> Result<Self, DisambigError> {
        let text = fs::read_to_string(path).map_err(|source| DisambigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let model = Self::from_json(&text)?;
        if model.surface != surface {
            return Err(DisambigError::SurfaceMismatch {
                expected: surface.into(),
                found: model.surface,
            });
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub classes: Vec<ClassMetrics>,
    /// Per-class scores averaged with weights equal to class support.
    pub weighted: ClassMetrics,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-class precision, recall and F1 for (gold, predicted) label pairs.
pub fn report(pairs: &[(String, String)]) -> Report {
    let labels: BTreeSet<&str> = pairs.iter().flat_map(|(g, p)| [g.as_str(), p.as_str()]).collect();
    let total = pairs.len();
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    let mut classes = Vec::new();
    for label in labels {
        let tp = pairs.iter().filter(|(g, p)| g == label && p == label).count();
        let predicted = pairs.iter().filter(|(_, p)| p == label).count();
        let support = pairs.iter().filter(|(g, _)| g == label).count();
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 { 0.0 } else { tp as f64 / support as f64 };
        classes.push(ClassMetrics {
            label: label.into(),
            precision,
            recall,
            f1: f1(precision, recall),
            support,
        });
    }
    let weigh = |f: fn(&ClassMetrics) -> f64| {
        if total == 0 {
            0.0
        } else {
            classes.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        }
    };
    let weighted = ClassMetrics {
        label: "weighted".into(),
        precision: weigh(|c| c.precision),
        recall: weigh(|c| c.recall),
        f1: weigh(|c| c.f1),
        support: total,
    };
    Report {
        classes,
        weighted,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
    }
}

/// (gold, predicted) pairs for `examples` under `model`.
pub fn predictions(model: &NaiveBayes, examples: &[Example]) -> Vec<(String, String)> {
    examples
        .iter()
        .map(|e| (e.unit.clone(), model.predict(&e.text).unit))
        .collect()
}

/// Models keyed by the surface they disambiguate.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Disambiguator {
    models: BTreeMap<String, NaiveBayes>,
}

impl Disambiguator {
    /// Models trained on all bundled examples.
    pub fn bundled() -> &'static Disambiguator {
        static D: OnceLock<Disambiguator> = OnceLock::new();
        D.get_or_init(|| {
            let mut d = Disambiguator::default();
            for (surface, data) in BUNDLED_DATA {
                let examples = parse_examples(data, surface).expect("bundled data parses");
                d.insert(NaiveBayes::train(surface, &examples, DEFAULT_ALPHA).expect("bundled data trains"));
            }
            d
        })
    }

    /// Reads every `*.json` model file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, DisambigError> {
        let io = |source| DisambigError::Io {
            path: dir.display().to_string(),
            source,
        };
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(io)?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io)?;
        paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
        paths.sort();
        let mut d = Disambiguator::default();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|source| DisambigError::Io {
                path: path.display().to_string(),
                source,
            })?;
            d.insert(NaiveBayes::from_json(&text)?);
        }
        Ok(d)
    }

    pub fn insert(&mut self, model: NaiveBayes) {
        self.models.insert(model.surface.clone(), model);
    }

    pub fn get(&self, surface: &str) -> Option<&NaiveBayes> {
        self.models.get(surface)
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Picks one of `readings` for a unit written `surface` (or, failing
    /// that, `lemma`) in `text`.
    pub fn resolve(&self, text: &str, surface: &str, lemma: &str, readings: &[&str]) -> Option<Prediction> {
        let model = self.get(surface).or_else(|| self.get(lemma))?;
        model.predict_among(text, readings)
    }
}
