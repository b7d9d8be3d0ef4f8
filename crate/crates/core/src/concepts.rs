//! Concept detection: which entity or property a quantity is about.
//!
//! Five strategies are tried in order and the first one that proposes any
//! token wins, even if filtering later empties its list:
//!
//! 1. nouns around a `for`/`of`/`at`/`by` keyword next to the quantity,
//! 2. the nominal subject of the closest verb above the value,
//! 3. the noun a relative clause containing the value modifies,
//! 4. the direct object of that verb,
//! 5. the only noun in the sentence not used by a quantity.

use std::collections::BTreeSet;
use std::convert::Infallible;
use std::str::FromStr;

use crate::model::{Concept, ConceptToken, ParsedSentence};
use crate::rules::RawCandidate;

pub const DEFAULT_STOPWORDS: &str = include_str!("../data/stopwords.txt");

const KEYWORDS: &[&str] = &["for", "of", "at", "by"];
const NOMINAL: &[&str] = &["NOUN", "PROPN", "PRON"];
const SUBJECTS: &[&str] = &["nsubj", "nsubjpass", "nsubj:pass"];
const OBJECTS: &[&str] = &["dobj", "obj"];
const CLAUSAL: &[&str] = &["relcl", "acl", "acl:relcl"];
const MODIFIERS: &[&str] = &["compound", "amod"];
const RELATIVE_XPOS: &[&str] = &["WDT", "WP"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stopwords(BTreeSet<String>);

impl FromStr for Stopwords {
    type Err = Infallible;

    fn from_str(src: &str) -> Result<Self, Self::Err> {
        Ok(Stopwords(
            src.lines()
                .map(|l| l.split('#').next().unwrap_or("").trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        ))
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        DEFAULT_STOPWORDS.parse().expect("infallible")
    }
}

impl Stopwords {
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strategy {
    Keyword = 1,
    Subject = 2,
    RelativeClause = 3,
    DirectObject = 4,
    SingleNoun = 5,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptResult {
    pub concept: Concept,
    /// The strategy that proposed the tokens, if any did.
    pub strategy: Option<Strategy>,
}

/// Finds the concept of `candidate`. `claimed` holds value and unit tokens
/// of every quantity in the sentence. The candidate's own value, unit and
/// change tokens never end up in its concept.
pub fn detect_concept(
    s: &ParsedSentence,
    candidate: &RawCandidate,
    claimed: &BTreeSet<usize>,
    stopwords: &Stopwords,
) -> ConceptResult {
    let values = candidate.all_value_tokens();
    let own: BTreeSet<usize> = values.iter().chain(&candidate.unit_tokens).copied().collect();
    let verb = closest_verb(s, &values);
    let strategies: [(Strategy, &dyn Fn() -> BTreeSet<usize>); 5] = [
        (Strategy::Keyword, &|| keyword_nouns(s, &own)),
        (Strategy::Subject, &|| verb.map(|v| subject(s, v)).unwrap_or_default()),
        (Strategy::RelativeClause, &|| {
            verb.map(|v| relative_head(s, v)).unwrap_or_default()
        }),
        (Strategy::DirectObject, &|| {
            verb.map(|v| direct_object(s, v)).unwrap_or_default()
        }),
        (Strategy::SingleNoun, &|| single_noun(s, claimed)),
    ];
    let used: BTreeSet<usize> = own.iter().chain(&candidate.change_tokens).copied().collect();
    for (strategy, run) in strategies {
        let raw = run();
        if raw.is_empty() {
            continue;
        }
        let tokens = raw
            .into_iter()
            .filter(|i| !used.contains(i))
            .map(|i| s.token(i))
            .filter(|t| !t.is_punct() && !stopwords.contains(&t.surface))
            .map(|t| ConceptToken {
                surface: t.surface.clone(),
                index: t.index,
            })
            .collect();
        return ConceptResult {
            concept: Concept { tokens },
            strategy: Some(strategy),
        };
    }
    ConceptResult {
        concept: Concept::default(),
        strategy: None,
    }
}

fn is_verb(s: &ParsedSentence, i: usize) -> bool {
    matches!(s.token(i).upos.as_str(), "VERB" | "AUX")
}

fn is_nominal(s: &ParsedSentence, i: usize) -> bool {
    NOMINAL.contains(&s.token(i).upos.as_str())
}

/// A nominal with its compound and adjectival modifiers.
fn with_modifiers(s: &ParsedSentence, i: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::from([i]);
    let mut stack = vec![i];
    while let Some(j) = stack.pop() {
        for c in s.children(j) {
            if MODIFIERS.contains(&c.deprel.as_str()) && out.insert(c.index) {
                stack.push(c.index);
            }
        }
    }
    out
}

fn keyword_nouns(s: &ParsedSentence, own: &BTreeSet<usize>) -> BTreeSet<usize> {
    let (Some(&first), Some(&last)) = (own.first(), own.last()) else {
        return BTreeSet::new();
    };
    let is_keyword = |i: usize| !own.contains(&i) && KEYWORDS.contains(&s.token(i).lemma.to_lowercase().as_str());
    let mut keywords = BTreeSet::new();
    for i in [first.wrapping_sub(1), last + 1] {
        if (1..=s.len()).contains(&i) && is_keyword(i) {
            keywords.insert(i);
        }
    }
    for &o in own {
        let head = s.token(o).head;
        if head != 0 && is_keyword(head) {
            keywords.insert(head);
        }
        keywords.extend(s.children(o).map(|c| c.index).filter(|&c| is_keyword(c)));
    }
    let mut out = BTreeSet::new();
    for k in keywords {
        let head = s.token(k).head;
        let mut neighbours: Vec<usize> = s.children(k).map(|c| c.index).collect();
        if head != 0 {
            neighbours.push(head);
        }
        for n in neighbours {
            if is_nominal(s, n) {
                out.extend(with_modifiers(s, n));
            }
        }
    }
    out
}

/// The verb ancestor nearest to any value token (tree distance, then
/// token distance); without one, the root verb or a verb child of the root.
pub fn closest_verb(s: &ParsedSentence, values: &[usize]) -> Option<usize> {
    let mut best: Option<((usize, usize), usize)> = None;
    for &v in values {
        for (depth, a) in s.ancestors(v).into_iter().enumerate() {
            if is_verb(s, a) {
                let key = (depth, a.abs_diff(v));
                if best.is_none_or(|(k, _)| key < k) {
                    best = Some((key, a));
                }
                break;
            }
        }
    }
    if let Some((_, verb)) = best {
        return Some(verb);
    }
    let root = s.root()?;
    if is_verb(s, root) {
        return Some(root);
    }
    s.children(root).map(|c| c.index).find(|&c| is_verb(s, c))
}

/// Subtree of `i` without nested clauses or punctuation.
fn phrase(s: &ParsedSentence, i: usize) -> BTreeSet<usize> {
    let mut out = s.subtree(i);
    for j in out.clone() {
        let t = s.token(j);
        if j != i && CLAUSAL.contains(&t.deprel.as_str()) {
            for k in s.subtree(j) {
                out.remove(&k);
            }
        }
    }
    out.retain(|&j| !s.token(j).is_punct());
    out
}

fn subject(s: &ParsedSentence, verb: usize) -> BTreeSet<usize> {
    let Some(subj) = s.children(verb).find(|c| SUBJECTS.contains(&c.deprel.as_str())) else {
        return BTreeSet::new();
    };
    // a relative pronoun only points back at the noun the clause modifies
    if RELATIVE_XPOS.contains(&subj.xpos.as_str()) {
        return BTreeSet::new();
    }
    phrase(s, subj.index)
}

fn relative_head(s: &ParsedSentence, verb: usize) -> BTreeSet<usize> {
    let t = s.token(verb);
    if !CLAUSAL.contains(&t.deprel.as_str()) || t.head == 0 {
        return BTreeSet::new();
    }
    let clause = s.subtree(verb);
    let mut out = s.subtree(t.head);
    out.retain(|j| !clause.contains(j) && !s.token(*j).is_punct());
    out
}

fn direct_object(s: &ParsedSentence, verb: usize) -> BTreeSet<usize> {
    s.children(verb)
        .find(|c| OBJECTS.contains(&c.deprel.as_str()))
        .map(|o| phrase(s, o.index))
        .unwrap_or_default()
}

fn single_noun(s: &ParsedSentence, claimed: &BTreeSet<usize>) -> BTreeSet<usize> {
    let nouns: Vec<usize> = (1..=s.len())
        .filter(|i| !claimed.contains(i) && matches!(s.token(*i).upos.as_str(), "NOUN" | "PROPN"))
        .collect();
    match nouns.as_slice() {
        [only] => BTreeSet::from([*only]),
        _ => BTreeSet::new(),
    }
}
