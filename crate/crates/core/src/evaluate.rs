//! Scoring extractor output against gold annotations.
//!
//! Quantities are paired per sentence, greedily in prediction order, and
//! counted per facet: value alone, value with unit, value with change.
//! Scores are micro-averaged over the corpus.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

use crate::model::{ChangeCategory, Magnitude, Quantity};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("{context}: {message}")]
    Json { context: String, message: String },
    #[error("{context}: entry {index}: {message}")]
    Schema {
        context: String,
        index: usize,
        message: String,
    },
    #[error("{pred} predicted sentences but {gold} gold sentences")]
    LengthMismatch { pred: usize, gold: usize },
    #[error("sentence {index}: predicted text {pred:?} does not match gold {gold:?}")]
    TextMismatch { index: usize, pred: String, gold: String },
    #[error("gold corpus is empty")]
    EmptyGold,
    #[error("permutation test needs at least 1000 iterations, got {0}")]
    TooFewIterations(usize),
}

/// The comparable part of a quantity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalQuantity {
    pub value: Magnitude,
    pub unit: Option<String>,
    pub change: ChangeCategory,
    pub concept: Vec<String>,
}

impl From<&Quantity> for EvalQuantity {
    fn from(q: &Quantity) -> Self {
        EvalQuantity {
            value: q.value.magnitude.clone(),
            unit: q.unit_name().map(String::from),
            change: q.change.category,
            concept: q.concept.surfaces(),
        }
    }
}

impl EvalQuantity {
    pub fn from_json(v: &Value) -> Result<Self, String> {
        let obj = v.as_object().ok_or("quantity must be an object")?;
        let value = Magnitude::from_json(obj.get("value").ok_or("missing \"value\"")?).map_err(|e| e.to_string())?;
        let unit = match obj.get("unit") {
            None | Some(Value::Null) => None,
            Some(Value::String(u)) if u.is_empty() => None,
            Some(Value::String(u)) => Some(u.clone()),
            Some(_) => return Err("\"unit\" must be a string or null".into()),
        };
        let change = match obj.get("change") {
            None => ChangeCategory::Equals,
            Some(Value::String(c)) => c.parse().map_err(|e: crate::model::ModelError| e.to_string())?,
            Some(_) => return Err("\"change\" must be a string".into()),
        };
        let concept = match obj.get("concept") {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(items)) => items
                .iter()
                .map(|t| t.as_str().map(String::from).ok_or("concept tokens must be strings"))
                .collect::<Result<_, _>>()?,
            Some(_) => return Err("\"concept\" must be an array".into()),
        };
        Ok(EvalQuantity {
            value,
            unit,
            change,
            concept,
        })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "value": self.value.to_json(),
            "unit": self.unit,
            "change": self.change.symbol(),
            "concept": self.concept,
        })
    }
}

/// One annotated sentence; an empty quantity list marks a negative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSentence {
    pub text: String,
    pub quantities: Vec<EvalQuantity>,
}

impl GoldSentence {
    fn from_json(v: &Value) -> Result<Self, String> {
        let obj = v.as_object().ok_or("sentence must be an object")?;
        let text = obj
            .get("text")
            .and_then(Value::as_str)
            .ok_or("missing string \"text\"")?
            .to_string();
        let quantities = obj
            .get("quantities")
            .and_then(Value::as_array)
            .ok_or("missing array \"quantities\"")?
            .iter()
            .enumerate()
            .map(|(i, q)| EvalQuantity::from_json(q).map_err(|e| format!("quantity {i}: {e}")))
            .collect::<Result<_, _>>()?;
        Ok(GoldSentence { text, quantities })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "text": self.text,
            "quantities": self.quantities.iter().map(EvalQuantity::to_json).collect::<Vec<_>>(),
        })
    }
}

fn sentences_from_values(values: Vec<Value>, context: &str) -> Result<Vec<GoldSentence>, EvalError> {
    values
        .iter()
        .enumerate()
        .map(|(index, v)| {
            GoldSentence::from_json(v).map_err(|message| EvalError::Schema {
                context: context.into(),
                index,
                message,
            })
        })
        .collect()
}

/// A JSON array of `{"text", "quantities"}` objects.
pub fn parse_gold(text: &str, context: &str) -> Result<Vec<GoldSentence>, EvalError> {
    let values: Vec<Value> = serde_json::from_str(text).map_err(|e| EvalError::Json {
        context: context.into(),
        message: e.to_string(),
    })?;
    sentences_from_values(values, context)
}

/// Extractor output: either a JSON array like the gold file or one JSON
/// object per line.
pub fn parse_predictions(text: &str, context: &str) -> Result<Vec<GoldSentence>, EvalError> {
    if text.trim_start().starts_with('[') {
        return parse_gold(text, context);
    }
    let mut values = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        values.push(serde_json::from_str(line).map_err(|e| EvalError::Json {
            context: format!("{context} line {}", n + 1),
            message: e.to_string(),
        })?);
    }
    sentences_from_values(values, context)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Facet {
    Value,
    ValueUnit,
    ValueChange,
}

impl Facet {
    pub const ALL: [Facet; 3] = [Facet::Value, Facet::ValueUnit, Facet::ValueChange];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Value => "value",
            Facet::ValueUnit => "value+unit",
            Facet::ValueChange => "value+change",
        }
    }

    fn matches(self, p: &EvalQuantity, g: &EvalQuantity) -> bool {
        p.value == g.value
            && match self {
                Facet::Value => true,
                Facet::ValueUnit => p.unit == g.unit,
                Facet::ValueChange => p.change == g.change,
            }
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Facet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Facet::ALL
            .into_iter()
            .find(|f| f.as_str() == s.trim())
            .ok_or_else(|| format!("unknown facet {s:?} (expected value, value+unit or value+change)"))
    }
}

/// One-to-one pairs `(pred index, gold index)`. Each prediction, in order,
/// takes the earliest unmatched gold quantity it matches.
pub fn align(pred: &[EvalQuantity], gold: &[EvalQuantity], facet: Facet) -> Vec<(usize, usize)> {
    let mut used = vec![false; gold.len()];
    let mut pairs = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        if let Some(j) = (0..gold.len()).find(|&j| !used[j] && facet.matches(p, &gold[j])) {
            used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub matches: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl std::ops::Add for Counts {
    type Output = Counts;

    fn add(self, o: Counts) -> Counts {
        Counts {
            matches: self.matches + o.matches,
            predicted: self.predicted + o.predicted,
            gold: self.gold + o.gold,
        }
    }
}

impl std::iter::Sum for Counts {
    fn sum<I: Iterator<Item = Counts>>(iter: I) -> Counts {
        iter.fold(Counts::default(), |a, b| a + b)
    }
}

impl Counts {
    /// Precision is 0 when nothing was predicted, recall 0 when nothing
    /// was annotated.
    pub fn score(self) -> Score {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(self.matches, self.predicted);
        let recall = ratio(self.matches, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Score {
            counts: self,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub counts: Counts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    pub fn to_json(&self) -> Value {
        json!({
            "matches": self.counts.matches,
            "predicted": self.counts.predicted,
            "gold": self.counts.gold,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        })
    }
}

fn check_pairing(pred: &[GoldSentence], gold: &[GoldSentence]) -> Result<(), EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyGold);
    }
    if pred.len() != gold.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    for (index, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.text.trim() != g.text.trim() {
            return Err(EvalError::TextMismatch {
                index,
                pred: p.text.clone(),
                gold: g.text.clone(),
            });
        }
    }
    Ok(())
}

/// Per-sentence counts for one facet.
pub fn sentence_counts(pred: &[GoldSentence], gold: &[GoldSentence], facet: Facet) -> Result<Vec<Counts>, EvalError> {
    check_pairing(pred, gold)?;
    Ok(pred
        .iter()
        .zip(gold)
        .map(|(p, g)| Counts {
            matches: align(&p.quantities, &g.quantities, facet).len(),
            predicted: p.quantities.len(),
            gold: g.quantities.len(),
        })
        .collect())
}

/// Micro-averaged scores per facet.
pub fn score(
    pred: &[GoldSentence],
    gold: &[GoldSentence],
    facets: &[Facet],
) -> Result<BTreeMap<Facet, Score>, EvalError> {
    facets
        .iter()
        .map(|&f| Ok((f, sentence_counts(pred, gold, f)?.into_iter().sum::<Counts>().score())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConceptMode {
    /// Same token surfaces, as multisets.
    Strict,
    /// At least one shared token surface.
    Relaxed,
}

impl FromStr for ConceptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ConceptMode::Strict),
            "relaxed" => Ok(ConceptMode::Relaxed),
            other => Err(format!("unknown concept mode {other:?}")),
        }
    }
}

/// Whether two concepts agree. Two empty concepts agree in both modes.
pub fn concepts_match(pred: &[String], gold: &[String], mode: ConceptMode) -> bool {
    if pred.is_empty() && gold.is_empty() {
        return true;
    }
    match mode {
        ConceptMode::Strict => {
            let mut a = pred.to_vec();
            let mut b = gold.to_vec();
            a.sort();
            b.sort();
            a == b
        }
        ConceptMode::Relaxed => pred.iter().any(|t| gold.contains(t)),
    }
}

/// Concept agreement over value-matched pairs. Precision and recall are
/// relative to all predicted and all gold quantities.
pub fn concept_score(pred: &[GoldSentence], gold: &[GoldSentence], mode: ConceptMode) -> Result<Score, EvalError> {
    check_pairing(pred, gold)?;
    let mut counts = Counts::default();
    for (p, g) in pred.iter().zip(gold) {
        counts.predicted += p.quantities.len();
        counts.gold += g.quantities.len();
        counts.matches += align(&p.quantities, &g.quantities, Facet::Value)
            .into_iter()
            .filter(|&(i, j)| concepts_match(&p.quantities[i].concept, &g.quantities[j].concept, mode))
            .count();
    }
    Ok(counts.score())
}

fn f1_of(parts: impl Iterator<Item = Counts>) -> f64 {
    parts.sum::<Counts>().score().f1
}

/// Two-sided paired permutation test on corpus F1: each iteration swaps
/// the two systems' counts on every sentence with probability 1/2. Returns
/// `(hits + 1) / (iterations + 1)` where a hit is a shuffled difference at
/// least as large as the observed one.
pub fn permutation_test(a: &[Counts], b: &[Counts], iterations: usize, seed: u64) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            pred: a.len(),
            gold: b.len(),
        });
    }
    if iterations < 1000 {
        return Err(EvalError::TooFewIterations(iterations));
    }
    let observed = (f1_of(a.iter().copied()) - f1_of(b.iter().copied())).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut swap = vec![false; a.len()];
    for _ in 0..iterations {
        for s in swap.iter_mut() {
            *s = rng.random::<bool>();
        }
        let x = f1_of(a.iter().zip(b).zip(&swap).map(|((&x, &y), &s)| if s { y } else { x }));
        let y = f1_of(a.iter().zip(b).zip(&swap).map(|((&x, &y), &s)| if s { x } else { y }));
        if (x - y).abs() >= observed - 1e-12 {
            hits += 1;
        }
    }
    Ok((hits + 1) as f64 / (iterations + 1) as f64)
}

/// Aligned text table, one row per facet.
pub fn format_table(scores: &BTreeMap<Facet, Score>) -> String {
    let mut out = format!(
        "{:<14}{:>9}{:>9}{:>9}{:>9}{:>7}{:>7}\n",
        "facet (micro)", "matches", "pred", "gold", "P", "R", "F1"
    );
    for (facet, s) in scores {
        out.push_str(&format!(
            "{:<14}{:>9}{:>9}{:>9}{:>9.3}{:>7.3}{:>7.3}\n",
            facet.as_str(),
            s.counts.matches,
            s.counts.predicted,
            s.counts.gold,
            s.precision,
            s.recall,
            s.f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rust_decimal::Decimal;

    fn q(value: i64, unit: Option<&str>, change: ChangeCategory, concept: &[&str]) -> EvalQuantity {
        EvalQuantity {
            value: Magnitude::Scalar(Decimal::from(value)),
            unit: unit.map(String::from),
            change,
            concept: concept.iter().map(|c| c.to_string()).collect(),
        }
    }

    fn sent(text: &str, quantities: Vec<EvalQuantity>) -> GoldSentence {
        GoldSentence {
            text: text.into(),
            quantities,
        }
    }

    #[test]
    fn identity_scores_one() {
        let g = vec![sent(
            "x",
            vec![
                q(1, Some("dollar"), ChangeCategory::Up, &[]),
                q(2, None, ChangeCategory::Equals, &[]),
            ],
        )];
        let s = score(&g, &g, &Facet::ALL).unwrap();
        for f in Facet::ALL {
            assert_eq!(s[&f].f1, 1.0);
        }
    }

    #[test]
    fn facets_differ_on_unit() {
        let p = vec![sent("x", vec![q(4, Some("percentage"), ChangeCategory::Equals, &[])])];
        let g = vec![sent("x", vec![q(4, Some("point"), ChangeCategory::Equals, &[])])];
        let s = score(&p, &g, &Facet::ALL).unwrap();
        assert_eq!(s[&Facet::Value].counts.matches, 1);
        assert_eq!(s[&Facet::ValueUnit].counts.matches, 0);
        assert_eq!(s[&Facet::ValueChange].counts.matches, 1);
    }

    #[test]
    fn three_preds_two_golds() {
        let p = vec![sent(
            "x",
            vec![
                q(1, None, ChangeCategory::Equals, &[]),
                q(2, None, ChangeCategory::Equals, &[]),
                q(3, None, ChangeCategory::Equals, &[]),
            ],
        )];
        let g = vec![sent(
            "x",
            vec![
                q(1, None, ChangeCategory::Equals, &[]),
                q(2, None, ChangeCategory::Equals, &[]),
            ],
        )];
        let s = score(&p, &g, &[Facet::Value]).unwrap()[&Facet::Value];
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.recall, 1.0);
        // swapping roles swaps P and R
        let r = score(&g, &p, &[Facet::Value]).unwrap()[&Facet::Value];
        assert_eq!((r.precision, r.recall), (s.recall, s.precision));
    }

    #[test]
    fn greedy_alignment_prefers_earliest_gold() {
        let a = q(5, None, ChangeCategory::Equals, &[]);
        let pairs = align(std::slice::from_ref(&a), &[a.clone(), a.clone()], Facet::Value);
        assert_eq!(pairs, vec![(0, 0)]);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(score(&[], &[], &[Facet::Value]).unwrap_err(), EvalError::EmptyGold);
        let g = vec![sent("x", vec![q(1, None, ChangeCategory::Equals, &[])])];
        let empty = vec![sent("x", vec![])];
        let s = score(&empty, &g, &[Facet::Value]).unwrap()[&Facet::Value];
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert!(matches!(
            score(&[], &g, &[Facet::Value]),
            Err(EvalError::LengthMismatch { .. })
        ));
        let other = vec![sent("y", vec![])];
        assert!(matches!(
            score(&other, &g, &[Facet::Value]),
            Err(EvalError::TextMismatch { .. })
        ));
    }

    #[test]
    fn concept_modes() {
        let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let gold = words(&["German", "DAX"]);
        assert!(concepts_match(&gold, &gold, ConceptMode::Strict));
        assert!(concepts_match(&words(&["DAX", "German"]), &gold, ConceptMode::Strict));
        assert!(!concepts_match(&words(&["DAX"]), &gold, ConceptMode::Strict));
        assert!(concepts_match(&words(&["DAX"]), &gold, ConceptMode::Relaxed));
        assert!(concepts_match(
            &words(&["France"]),
            &words(&["CAC40", "France"]),
            ConceptMode::Relaxed
        ));
        assert!(!concepts_match(
            &words(&["France"]),
            &words(&["CAC40", "France"]),
            ConceptMode::Strict
        ));
        assert!(concepts_match(&[], &[], ConceptMode::Strict));
        assert!(!concepts_match(&[], &gold, ConceptMode::Relaxed));
    }

    #[test]
    fn permutation_of_identical_systems_is_one() {
        let a = vec![
            Counts {
                matches: 1,
                predicted: 2,
                gold: 2,
            },
            Counts {
                matches: 0,
                predicted: 1,
                gold: 1,
            },
        ];
        assert_eq!(permutation_test(&a, &a, 1000, 3).unwrap(), 1.0);
        assert!(matches!(
            permutation_test(&a, &a, 10, 3),
            Err(EvalError::TooFewIterations(10))
        ));
        assert!(permutation_test(&a, &a[..1], 1000, 3).is_err());
        let b = vec![
            Counts {
                matches: 2,
                predicted: 2,
                gold: 2,
            },
            Counts {
                matches: 1,
                predicted: 1,
                gold: 1,
            },
        ];
        assert_eq!(
            permutation_test(&a, &b, 2000, 9).unwrap(),
            permutation_test(&a, &b, 2000, 9).unwrap()
        );
    }

    #[test]
    fn predictions_accept_json_lines_and_arrays() {
        let lines = "{\"text\":\"a\",\"quantities\":[{\"value\":1,\"unit\":null,\"change\":\"=\",\"concept\":[]}]}\n\n{\"text\":\"b\",\"quantities\":[]}\n";
        let p = parse_predictions(lines, "pred").unwrap();
        assert_eq!(p.len(), 2);
        let array = format!(
            "[{}]",
            p.iter().map(|s| s.to_json().to_string()).collect::<Vec<_>>().join(",")
        );
        assert_eq!(parse_predictions(&array, "pred").unwrap(), p);
        assert!(matches!(
            parse_gold("[{\"text\":1}]", "gold"),
            Err(EvalError::Schema { .. })
        ));
        assert!(matches!(parse_gold("{", "gold"), Err(EvalError::Json { .. })));
        assert!(parse_gold("[{\"text\":\"a\",\"quantities\":[{\"value\":[3,1]}]}]", "gold").is_err());
    }

    #[test]
    fn table_has_a_row_per_facet() {
        let g = vec![sent("x", vec![q(1, None, ChangeCategory::Equals, &[])])];
        let t = format_table(&score(&g, &g, &Facet::ALL).unwrap());
        assert_eq!(t.lines().count(), 4);
        assert!(t.contains("value+unit"));
    }
}
