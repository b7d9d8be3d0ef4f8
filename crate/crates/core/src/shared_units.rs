//! Unit sharing across coordinated sub-clauses.
//!
//! In "DAX fell 0.4 pc, while the CAC40 gained 0.1" the second value has no
//! unit of its own. When two sub-clauses around a connector word have
//! similar POS structure, a unitless quantity borrows the unit of the
//! quantity in the other sub-clause.

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::str::FromStr;

use crate::conllu::pos_string;
use crate::model::ParsedSentence;
use crate::rules::RawCandidate;

pub const DEFAULT_CONNECTORS: &str = include_str!("../data/connectors.txt");

/// Minimum structural similarity (exclusive) for a unit to be shared.
pub const SHARE_THRESHOLD: f64 = 60.0;

/// Edit distance with unit-cost insertion and deletion and substitution
/// cost 2, over chars.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + if ca == cb { 0 } else { 2 };
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Similarity in `[0, 100]`: `100 * (|a| + |b| - d) / (|a| + |b|)`.
pub fn levenshtein_ratio(a: &str, b: &str) -> f64 {
    let total = a.chars().count() + b.chars().count();
    if total == 0 {
        return 100.0;
    }
    100.0 * (total - edit_distance(a, b)) as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connectors(BTreeSet<String>);

impl FromStr for Connectors {
    type Err = Infallible;

    fn from_str(src: &str) -> Result<Self, Self::Err> {
        Ok(Connectors(
            src.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        ))
    }
}

impl Default for Connectors {
    fn default() -> Self {
        DEFAULT_CONNECTORS.parse().expect("infallible")
    }
}

impl Connectors {
    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Sub-clauses to the left and right of the connector at `index`. Each
/// runs to the nearest punctuation mark, other connector or sentence
/// edge; a comma right before the connector is skipped.
pub fn clauses_around(s: &ParsedSentence, index: usize, connectors: &Connectors) -> (Vec<usize>, Vec<usize>) {
    let boundary = |i: usize| {
        let t = s.token(i);
        t.is_punct() || connectors.contains(&t.surface)
    };
    let mut end = index;
    if end > 1 && s.token(end - 1).is_punct() {
        end -= 1;
    }
    let mut start = end;
    while start > 1 && !boundary(start - 1) {
        start -= 1;
    }
    let left: Vec<usize> = (start..end).collect();
    let mut stop = index + 1;
    while stop <= s.len() && !boundary(stop) {
        stop += 1;
    }
    let right: Vec<usize> = (index + 1..stop).collect();
    (left, right)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedUnit {
    pub recipient: usize,
    pub donor: usize,
    pub connector: usize,
    pub ratio: f64,
}

fn structure(s: &ParsedSentence, clause: &[usize]) -> String {
    let tokens: Vec<_> = clause.iter().map(|&i| s.token(i)).collect();
    pos_string(&tokens)
}

/// Gives each unitless candidate the unit tokens of a candidate in the
/// neighbouring sub-clause, when the clauses are similar enough. Only
/// units a candidate found itself are shared, so sharing never chains.
pub fn propagate_units(
    s: &ParsedSentence,
    candidates: &mut [RawCandidate],
    connectors: &Connectors,
) -> Vec<SharedUnit> {
    let links: Vec<usize> = (1..=s.len())
        .filter(|&i| connectors.contains(&s.token(i).surface))
        .collect();
    if links.is_empty() {
        return Vec::new();
    }
    let mut shared = Vec::new();
    for r in 0..candidates.len() {
        if candidates[r].has_unit() {
            continue;
        }
        let anchor = candidates[r].first_value_token();
        let mut by_distance = links.clone();
        by_distance.sort_by_key(|&c| (c.abs_diff(anchor), c));
        for connector in by_distance {
            let (left, right) = clauses_around(s, connector, connectors);
            let (own, other) = if left.contains(&anchor) {
                (&left, &right)
            } else if right.contains(&anchor) {
                (&right, &left)
            } else {
                continue;
            };
            let donor = candidates
                .iter()
                .enumerate()
                .filter(|(d, c)| *d != r && !c.unit_tokens.is_empty() && other.contains(&c.first_value_token()))
                .min_by_key(|(_, c)| (c.first_value_token().abs_diff(anchor), c.first_value_token()))
                .map(|(d, _)| d);
            let Some(donor) = donor else { continue };
            let ratio = levenshtein_ratio(&structure(s, own), &structure(s, other));
            if ratio > SHARE_THRESHOLD {
                candidates[r].shared_unit_from = Some(candidates[donor].unit_tokens.clone());
                shared.push(SharedUnit {
                    recipient: r,
                    donor,
                    connector,
                    ratio,
                });
            }
            break;
        }
    }
    shared
}
