//! Lexicon-driven normalization of values, units and changes.
//!
//! Three JSON files back this module:
//!
//! * `units.json`: `{"euro": {"surfaces": [...], "symbols": [...], "kind": "currency"}, ...}`
//! * `values.json`: `{"scales": {"k": 1000, ...}, "numbers": {"two": 2, ...}, "fractions": {"half": 0.5}}`
//! * `changes.json`: `{"=": ["exactly", ...], "up": ["gained", ...], ...}`

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use rust_decimal::Decimal;
use serde::Deserialize;
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    decimal_from_json, Change, ChangeCategory, Magnitude, NumericValue, ParsedSentence, Unit, UnitKind, UnitPart,
};

pub const UNITS_JSON: &str = include_str!("../data/lexicons/units.json");
pub const VALUES_JSON: &str = include_str!("../data/lexicons/values.json");
pub const CHANGES_JSON: &str = include_str!("../data/lexicons/changes.json");

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{file}: {message}")]
    Json { file: String, message: String },
    #[error("{file}: entry {name:?}: {message}")]
    Entry {
        file: String,
        name: String,
        message: String,
    },
    #[error("{file}: no entries")]
    Empty { file: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// A value token sequence that none of the value rules could read.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("cannot standardize value {surface:?}")]
pub struct StandardizeError {
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitEntry {
    pub name: String,
    pub surfaces: Vec<String>,
    pub symbols: Vec<String>,
    pub kind: UnitKind,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUnitEntry {
    #[serde(default)]
    surfaces: Vec<String>,
    #[serde(default)]
    symbols: Vec<String>,
    kind: String,
}

/// Canonical units with a reverse index from surfaces and symbols.
#[derive(Debug, Clone)]
pub struct UnitDictionary {
    entries: BTreeMap<String, UnitEntry>,
    exact: HashMap<String, BTreeSet<String>>,
    folded: HashMap<String, BTreeSet<String>>,
}

/// Case-insensitive lookup applies only to surfaces this long (in chars),
/// so that "C" and "c" or "B" and "b" stay distinct.
const FOLD_MIN_CHARS: usize = 3;

impl UnitDictionary {
    pub fn from_json(text: &str, file: &str) -> Result<Self, LexiconError> {
        let raw: BTreeMap<String, Value> = serde_json::from_str(text).map_err(|e| LexiconError::Json {
            file: file.into(),
            message: e.to_string(),
        })?;
        if raw.is_empty() {
            return Err(LexiconError::Empty { file: file.into() });
        }
        let mut entries = BTreeMap::new();
        for (name, value) in raw {
            let entry_err = |message: String| LexiconError::Entry {
                file: file.into(),
                name: name.clone(),
                message,
            };
            if name.trim().is_empty() {
                return Err(entry_err("empty unit name".into()));
            }
            let parsed: RawUnitEntry = serde_json::from_value(value).map_err(|e| entry_err(e.to_string()))?;
            let kind = match parsed.kind.as_str() {
                "scientific" => UnitKind::Scientific,
                "currency" => UnitKind::Currency,
                other => return Err(entry_err(format!("kind must be scientific or currency, got {other:?}"))),
            };
            if let Some(blank) = parsed.surfaces.iter().chain(&parsed.symbols).find(|s| s.is_empty()) {
                return Err(entry_err(format!("empty surface {blank:?}")));
            }
            entries.insert(
                name.clone(),
                UnitEntry {
                    name,
                    surfaces: parsed.surfaces,
                    symbols: parsed.symbols,
                    kind,
                },
            );
        }
        Ok(Self::from_entries(entries))
    }

    fn from_entries(entries: BTreeMap<String, UnitEntry>) -> Self {
        let mut exact: HashMap<String, BTreeSet<String>> = HashMap::new();
        let mut folded: HashMap<String, BTreeSet<String>> = HashMap::new();
        for entry in entries.values() {
            let forms = std::iter::once(&entry.name)
                .chain(&entry.surfaces)
                .chain(&entry.symbols);
            for form in forms {
                exact.entry(form.clone()).or_default().insert(entry.name.clone());
                if form.chars().count() >= FOLD_MIN_CHARS {
                    folded
                        .entry(form.to_lowercase())
                        .or_default()
                        .insert(entry.name.clone());
                }
            }
        }
        UnitDictionary { entries, exact, folded }
    }

    pub fn bundled() -> &'static UnitDictionary {
        static DICT: OnceLock<UnitDictionary> = OnceLock::new();
        DICT.get_or_init(|| UnitDictionary::from_json(UNITS_JSON, "units.json").expect("bundled units are valid"))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, name: &str) -> Option<&UnitEntry> {
        self.entries.get(name)
    }

    pub fn entries(&self) -> impl Iterator<Item = &UnitEntry> {
        self.entries.values()
    }

    /// Canonical names a surface resolves to, sorted. Exact match first,
    /// then case-folded for surfaces of three or more characters.
    pub fn lookup(&self, surface: &str) -> Vec<&str> {
        if let Some(names) = self.exact.get(surface) {
            return names.iter().map(String::as_str).collect();
        }
        if surface.chars().count() >= FOLD_MIN_CHARS {
            if let Some(names) = self.folded.get(&surface.to_lowercase()) {
                return names.iter().map(String::as_str).collect();
            }
        }
        Vec::new()
    }

    /// Surfaces (exact forms) that resolve to more than one canonical unit.
    pub fn ambiguous_surfaces(&self) -> BTreeMap<&str, Vec<&str>> {
        self.exact
            .iter()
            .filter(|(_, names)| names.len() > 1)
            .map(|(s, names)| (s.as_str(), names.iter().map(String::as_str).collect()))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ValueLexicon {
    pub scales: BTreeMap<String, Decimal>,
    pub numbers: BTreeMap<String, Decimal>,
    pub fractions: BTreeMap<String, Decimal>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawValueLexicon {
    scales: BTreeMap<String, Value>,
    numbers: BTreeMap<String, Value>,
    #[serde(default)]
    fractions: BTreeMap<String, Value>,
}

const SIGN_WORDS: &[&str] = &["-", "−", "minus", "negative"];
const FILLER_WORDS: &[&str] = &["and", "a", "an"];

impl ValueLexicon {
    pub fn from_json(text: &str, file: &str) -> Result<Self, LexiconError> {
        let raw: RawValueLexicon = serde_json::from_str(text).map_err(|e| LexiconError::Json {
            file: file.into(),
            message: e.to_string(),
        })?;
        let table = |map: BTreeMap<String, Value>, positive: bool| {
            map.into_iter()
                .map(|(name, v)| {
                    let d = decimal_from_json(&v).map_err(|e| LexiconError::Entry {
                        file: file.into(),
                        name: name.clone(),
                        message: e.to_string(),
                    })?;
                    if (positive && d <= Decimal::ZERO) || d < Decimal::ZERO {
                        return Err(LexiconError::Entry {
                            file: file.into(),
                            name,
                            message: "multiplier must be positive".into(),
                        });
                    }
                    Ok((name, d))
                })
                .collect::<Result<BTreeMap<_, _>, _>>()
        };
        let lexicon = ValueLexicon {
            scales: table(raw.scales, true)?,
            numbers: table(raw.numbers, false)?,
            fractions: table(raw.fractions, true)?,
        };
        if lexicon.scales.is_empty() && lexicon.numbers.is_empty() {
            return Err(LexiconError::Empty { file: file.into() });
        }
        Ok(lexicon)
    }

    pub fn bundled() -> &'static ValueLexicon {
        static LEX: OnceLock<ValueLexicon> = OnceLock::new();
        LEX.get_or_init(|| ValueLexicon::from_json(VALUES_JSON, "values.json").expect("bundled values are valid"))
    }

    /// Multiplier for a free-standing scale word ("million", "bn").
    pub fn scale_word(&self, word: &str) -> Option<Decimal> {
        self.scales
            .get(word)
            .or_else(|| self.scales.get(&word.to_lowercase()))
            .copied()
    }

    pub fn is_scale_word(&self, word: &str) -> bool {
        self.scale_word(word).is_some()
    }

    /// Reads a spelled number such as "forty-two" or "seven".
    pub fn spelled(&self, word: &str) -> Option<Decimal> {
        let lower = word.to_lowercase();
        if let Some(d) = self.numbers.get(&lower).or_else(|| self.fractions.get(&lower)) {
            return Some(*d);
        }
        let mut total = Decimal::ZERO;
        let mut pieces = 0;
        for piece in lower.split('-') {
            total = total.checked_add(*self.numbers.get(piece)?)?;
            pieces += 1;
        }
        (pieces > 1).then_some(total)
    }

    /// Standardizes the value tokens of a candidate. With `range`, both
    /// bounds are read; a single hyphenated token ("40-60") serving as both
    /// bounds is split at the hyphen.
    pub fn standardize_value(
        &self,
        s: &ParsedSentence,
        value_tokens: &[usize],
        range: Option<(&[usize], &[usize])>,
    ) -> Result<NumericValue, StandardizeError> {
        let surfaces = |idx: &[usize]| idx.iter().map(|&i| s.token(i).surface.as_str()).collect::<Vec<_>>();
        match range {
            None => Ok(NumericValue {
                magnitude: Magnitude::Scalar(self.parse(&surfaces(value_tokens))?),
                token_indices: sorted_union(value_tokens, &[]),
            }),
            Some((lower, upper)) => {
                let (a, b) = if lower == upper {
                    let joined = surfaces(lower).join(" ");
                    let (a, b) = split_hyphen_range(&joined).ok_or_else(|| StandardizeError {
                        surface: joined.clone(),
                    })?;
                    (self.parse(&[a])?, self.parse(&[b])?)
                } else {
                    (self.parse(&surfaces(lower))?, self.parse(&surfaces(upper))?)
                };
                let mut tokens = sorted_union(lower, upper);
                tokens.extend(value_tokens.iter().copied());
                tokens.sort_unstable();
                tokens.dedup();
                Ok(NumericValue {
                    magnitude: Magnitude::range(a, b),
                    token_indices: tokens,
                })
            }
        }
    }

    /// Reads a sequence of value surfaces ("1", "million") into a decimal.
    pub fn parse(&self, surfaces: &[&str]) -> Result<Decimal, StandardizeError> {
        let err = || StandardizeError {
            surface: surfaces.join(" "),
        };
        let mut rest = surfaces;
        let mut negative = false;
        if let Some((first, tail)) = rest.split_first() {
            if SIGN_WORDS.contains(&first.to_lowercase().as_str()) {
                negative = true;
                rest = tail;
            }
        }
        if rest.is_empty() {
            return Err(err());
        }
        // Separate tokens are summed ("1 1/2" is 1.5) unless they read as
        // space-grouped thousands ("14 760"); concatenation otherwise only
        // rescues forms a tokenizer split apart ("10" "k").
        let mut magnitude = match rest {
            [one] => self.parse_glued(one).or_else(|| self.accumulate(rest)),
            _ if is_space_grouped(rest) => self.parse_glued(&rest.concat()),
            _ => self.accumulate(rest).or_else(|| self.parse_glued(&rest.concat())),
        }
        .ok_or_else(err)?;
        if negative {
            magnitude = -magnitude;
        }
        Ok(magnitude.normalize())
    }

    /// Sums number words and digits, multiplying by scale words in the
    /// usual English way: "two hundred thousand" is 200000.
    fn accumulate(&self, words: &[&str]) -> Option<Decimal> {
        let mut total = Decimal::ZERO;
        let mut current = Decimal::ZERO;
        let mut seen_number = false;
        for word in words {
            let lower = word.to_lowercase();
            if FILLER_WORDS.contains(&lower.as_str()) {
                continue;
            }
            if let Some(scale) = self.scale_word(word) {
                let base = if seen_number { current } else { Decimal::ONE };
                if scale < Decimal::from(1000) {
                    current = base.checked_mul(scale)?;
                } else {
                    total = total.checked_add(base.checked_mul(scale)?)?;
                    current = Decimal::ZERO;
                }
                seen_number = true;
                continue;
            }
            let n = self.parse_glued(word).or_else(|| self.spelled(word))?;
            current = current.checked_add(n)?;
            seen_number = true;
        }
        seen_number.then(|| total.checked_add(current)).flatten()
    }

    /// Reads one numeric surface, optionally carrying a leading sign or a
    /// glued scale suffix ("10k", "2bn").
    fn parse_glued(&self, surface: &str) -> Option<Decimal> {
        let (negative, body) = match surface.strip_prefix(['-', '−']) {
            Some(rest) => (true, rest),
            None => (false, surface.strip_prefix('+').unwrap_or(surface)),
        };
        let value = parse_numeric(body).or_else(|| {
            let split = body.find(|c: char| !(c.is_ascii_digit() || c == '.' || c == ','))?;
            let (digits, suffix) = body.split_at(split);
            let scale = self.scales.get(suffix)?;
            parse_numeric(digits)?.checked_mul(*scale)
        })?;
        Some(if negative { -value } else { value })
    }
}

fn is_space_grouped(tokens: &[&str]) -> bool {
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    tokens[0].len() <= 3 && digits(tokens[0]) && tokens[1..].iter().all(|t| t.len() == 3 && digits(t))
}

fn numeric_patterns() -> &'static [Regex; 5] {
    static PATTERNS: OnceLock<[Regex; 5]> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            Regex::new(r"^(?:\d+(?:\.\d+)?|\.\d+)$").unwrap(),
            Regex::new(r"^\d{1,3}(?:,\d{3})+(?:\.\d+)?$").unwrap(),
            Regex::new(r"^(\d+)/(\d+)$").unwrap(),
            Regex::new(r"^(\d+(?:\.\d+)?)[eE]([+\-−]?\d{1,3})$").unwrap(),
            Regex::new(r"^(?:(\d+(?:\.\d+)?)[×xX*·])?10\^([+\-−]?\d{1,3})$").unwrap(),
        ]
    })
}

/// Digit-only forms: plain and comma-grouped decimals, fractions and the
/// two scientific notations.
fn parse_numeric(text: &str) -> Option<Decimal> {
    let text = &superscript_exponent(text);
    let [plain, grouped, fraction, e_notation, power] = numeric_patterns();
    if plain.is_match(text) {
        return Decimal::from_str(text).ok();
    }
    if grouped.is_match(text) {
        return Decimal::from_str(&text.replace(',', "")).ok();
    }
    if let Some(c) = fraction.captures(text) {
        let num = Decimal::from_str(&c[1]).ok()?;
        let den = Decimal::from_str(&c[2]).ok()?;
        return num.checked_div(den);
    }
    let (mantissa, exponent) = if let Some(c) = e_notation.captures(text) {
        (Decimal::from_str(&c[1]).ok()?, c[2].replace('−', "-"))
    } else {
        let c = power.captures(text)?;
        let mantissa = match c.get(1) {
            Some(m) => Decimal::from_str(m.as_str()).ok()?,
            None => Decimal::ONE,
        };
        (mantissa, c[2].replace('−', "-"))
    };
    let exponent: i32 = exponent.parse().ok()?;
    scale_by_power_of_ten(mantissa, exponent)
}

/// Rewrites a superscript exponent ("10²") as "10^2".
fn superscript_exponent(text: &str) -> String {
    const SUPERSCRIPTS: &str = "⁰¹²³⁴⁵⁶⁷⁸⁹";
    let mut out = String::with_capacity(text.len());
    let mut in_exponent = false;
    for c in text.chars() {
        let digit = SUPERSCRIPTS.chars().position(|s| s == c);
        if digit.is_some() || c == '⁻' {
            if !in_exponent {
                out.push('^');
                in_exponent = true;
            }
            match digit {
                Some(d) => out.push(char::from(b'0' + d as u8)),
                None => out.push('-'),
            }
        } else {
            in_exponent = false;
            out.push(c);
        }
    }
    out
}

fn scale_by_power_of_ten(mantissa: Decimal, exponent: i32) -> Option<Decimal> {
    let ten = Decimal::TEN;
    let mut out = mantissa;
    for _ in 0..exponent.unsigned_abs() {
        out = if exponent > 0 {
            out.checked_mul(ten)?
        } else {
            out.checked_div(ten)?
        };
    }
    Some(out)
}

fn split_hyphen_range(surface: &str) -> Option<(&str, &str)> {
    let bytes = surface.as_bytes();
    (1..bytes.len().saturating_sub(1))
        .filter(|&i| bytes[i] == b'-' && bytes[i - 1].is_ascii_digit())
        .map(|i| (&surface[..i], &surface[i + 1..]))
        .next()
}

fn sorted_union(a: &[usize], b: &[usize]) -> Vec<usize> {
    let set: BTreeSet<usize> = a.iter().chain(b).copied().collect();
    set.into_iter().collect()
}

/// Trigger phrases for the six change categories.
#[derive(Debug, Clone)]
pub struct ChangeLexicon {
    phrases: HashMap<Vec<String>, ChangeCategory>,
    longest: usize,
}

impl ChangeLexicon {
    pub fn from_json(text: &str, file: &str) -> Result<Self, LexiconError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text).map_err(|e| LexiconError::Json {
            file: file.into(),
            message: e.to_string(),
        })?;
        let mut phrases = HashMap::new();
        for (symbol, triggers) in raw {
            let category = ChangeCategory::from_str(&symbol).map_err(|e| LexiconError::Entry {
                file: file.into(),
                name: symbol.clone(),
                message: e.to_string(),
            })?;
            for trigger in triggers {
                let key: Vec<String> = trigger.split_whitespace().map(str::to_lowercase).collect();
                if key.is_empty() {
                    return Err(LexiconError::Entry {
                        file: file.into(),
                        name: symbol.clone(),
                        message: "empty trigger".into(),
                    });
                }
                if let Some(previous) = phrases.insert(key, category) {
                    if previous != category {
                        return Err(LexiconError::Entry {
                            file: file.into(),
                            name: trigger,
                            message: format!("listed under both {previous} and {category}"),
                        });
                    }
                }
            }
        }
        if phrases.is_empty() {
            return Err(LexiconError::Empty { file: file.into() });
        }
        let longest = phrases.keys().map(Vec::len).max().unwrap_or(1);
        Ok(ChangeLexicon { phrases, longest })
    }

    pub fn bundled() -> &'static ChangeLexicon {
        static LEX: OnceLock<ChangeLexicon> = OnceLock::new();
        LEX.get_or_init(|| ChangeLexicon::from_json(CHANGES_JSON, "changes.json").expect("bundled changes are valid"))
    }

    pub fn category_of(&self, phrase: &str) -> Option<ChangeCategory> {
        let key: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
        self.phrases.get(&key).copied()
    }

    /// True if the word starts or forms some trigger phrase.
    pub fn is_trigger_word(&self, word: &str) -> bool {
        let lower = word.to_lowercase();
        self.phrases.keys().any(|k| k[0] == lower)
    }

    /// True if the word occurs anywhere in some trigger phrase ("than").
    pub fn contains_word(&self, word: &str) -> bool {
        let lower = word.to_lowercase();
        self.phrases.keys().any(|k| k.contains(&lower))
    }

    /// Maps captured trigger tokens to a change. Phrases are matched
    /// longest-first over runs of adjacent tokens, on surface or lemma. A
    /// trend beats a bound; otherwise the match nearest the value wins.
    pub fn normalize_change(&self, s: &ParsedSentence, triggers: &[usize], value_tokens: &[usize]) -> Change {
        let mut sorted: Vec<usize> = triggers.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut matches: Vec<(ChangeCategory, Vec<usize>)> = Vec::new();
        let mut i = 0;
        while i < sorted.len() {
            let mut run = 1;
            while i + run < sorted.len() && sorted[i + run] == sorted[i + run - 1] + 1 {
                run += 1;
            }
            let max = run.min(self.longest);
            let found = (1..=max).rev().find_map(|len| {
                let window = &sorted[i..i + len];
                self.match_window(s, window).map(|c| (c, window.to_vec()))
            });
            match found {
                Some((category, window)) => {
                    i += window.len();
                    matches.push((category, window));
                }
                None => i += 1,
            }
        }
        let anchor = value_tokens.iter().copied().min().unwrap_or(0);
        let distance = |w: &Vec<usize>| w.iter().map(|&t| t.abs_diff(anchor)).min().unwrap_or(usize::MAX);
        matches
            .into_iter()
            .min_by_key(|(category, window)| (!category.is_trend(), distance(window), window[0]))
            .map(|(category, trigger_indices)| Change {
                category,
                trigger_indices,
            })
            .unwrap_or_default()
    }

    fn match_window(&self, s: &ParsedSentence, window: &[usize]) -> Option<ChangeCategory> {
        let surface: Vec<String> = window.iter().map(|&t| s.token(t).surface.to_lowercase()).collect();
        if let Some(c) = self.phrases.get(&surface) {
            return Some(*c);
        }
        let lemma: Vec<String> = window.iter().map(|&t| s.token(t).lemma.to_lowercase()).collect();
        self.phrases.get(&lemma).copied()
    }
}

/// The three lexicons an extraction engine needs.
#[derive(Debug, Clone)]
pub struct Lexicons {
    pub units: UnitDictionary,
    pub values: ValueLexicon,
    pub changes: ChangeLexicon,
}

impl Lexicons {
    pub fn bundled() -> Self {
        Lexicons {
            units: UnitDictionary::bundled().clone(),
            values: ValueLexicon::bundled().clone(),
            changes: ChangeLexicon::bundled().clone(),
        }
    }
}

/// Loads `units.json`, `values.json` and `changes.json` from a directory.
pub fn load_lexicons(dir: &Path) -> Result<Lexicons, LexiconError> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read_to_string(&path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })
    };
    Ok(Lexicons {
        units: UnitDictionary::from_json(&read("units.json")?, "units.json")?,
        values: ValueLexicon::from_json(&read("values.json")?, "values.json")?,
        changes: ChangeLexicon::from_json(&read("changes.json")?, "changes.json")?,
    })
}

const COMPOUND_SEPARATORS: &[&str] = &["/", "per", "a", "an"];
const NOUN_MODIFIERS: &[&str] = &["amod", "compound"];

/// Text of the given tokens, sorted. Tokens glued in the source text
/// (SpaceAfter=No) are joined without a space.
pub fn token_surface(s: &ParsedSentence, tokens: &[usize]) -> String {
    let mut sorted = tokens.to_vec();
    sorted.sort_unstable();
    let mut out = String::new();
    let mut prev_end: Option<usize> = None;
    for &i in &sorted {
        let t = s.token(i);
        if let Some(end) = prev_end {
            if !(end == t.char_span.0 && t.char_span.0 < t.char_span.1) {
                out.push(' ');
            }
        }
        out.push_str(&t.surface);
        prev_end = Some(t.char_span.1);
    }
    out
}

fn lemma_sequence(s: &ParsedSentence, tokens: &[usize]) -> String {
    tokens
        .iter()
        .map(|&i| s.token(i).lemma.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

impl UnitDictionary {
    /// Normalizes captured unit tokens. Order of attempts: whole surface,
    /// lemma sequence, compound split, then noun unit.
    pub fn normalize_unit(&self, s: &ParsedSentence, tokens: &[usize]) -> Unit {
        let mut tokens = tokens.to_vec();
        tokens.sort_unstable();
        tokens.dedup();
        if tokens.is_empty() {
            return Unit::none();
        }
        let surface = token_surface(s, &tokens);
        if let Some(unit) = self.dictionary_unit(&surface, &lemma_sequence(s, &tokens), &surface) {
            return Unit {
                token_indices: tokens,
                ..unit
            };
        }
        if let Some(unit) = self.compound_unit(s, &tokens, &surface) {
            return unit;
        }
        self.noun_unit(s, &tokens)
    }

    fn dictionary_unit(&self, surface: &str, lemma: &str, display: &str) -> Option<Unit> {
        let mut names = self.lookup(surface);
        if names.is_empty() {
            names = self.lookup(lemma);
        }
        // an ambiguous surface that is itself a canonical name ("dram")
        // keeps that name until the disambiguator decides
        let first = names
            .iter()
            .find(|n| **n == surface || **n == lemma)
            .or(names.first())
            .copied()?;
        let entry = &self.entries[first];
        Some(Unit {
            normalized: entry.name.clone(),
            surface: display.to_string(),
            kind: entry.kind,
            parts: Vec::new(),
            token_indices: Vec::new(),
            derived: false,
            ambiguous: names.len() > 1,
        })
    }

    fn compound_unit(&self, s: &ParsedSentence, tokens: &[usize], surface: &str) -> Option<Unit> {
        // (surface, lemma) pieces with the exponent sign of each.
        let mut groups: Vec<(Vec<String>, Vec<String>, i8)> = vec![(Vec::new(), Vec::new(), 1)];
        let mut separated = false;
        for &i in tokens {
            let t = s.token(i);
            if COMPOUND_SEPARATORS.contains(&t.surface.to_lowercase().as_str()) {
                groups.push((Vec::new(), Vec::new(), -1));
                separated = true;
                continue;
            }
            let pieces: Vec<&str> = t.surface.split('/').collect();
            let lemmas: Vec<&str> = t.lemma.split('/').collect();
            let lemmas = if lemmas.len() == pieces.len() {
                lemmas
            } else {
                pieces.clone()
            };
            for (k, (piece, lemma)) in pieces.iter().zip(&lemmas).enumerate() {
                if k > 0 {
                    groups.push((Vec::new(), Vec::new(), -1));
                    separated = true;
                }
                if !piece.is_empty() {
                    let last = groups.last_mut().expect("at least one group");
                    last.0.push(piece.to_string());
                    last.1.push(lemma.to_lowercase());
                }
            }
        }
        if !separated || groups.iter().any(|g| g.0.is_empty()) {
            return None;
        }
        let mut parts = Vec::new();
        let mut resolved = Vec::new();
        for (surfaces, lemmas, exponent) in &groups {
            let hit = self.dictionary_unit(&surfaces.join(" "), &lemmas.join(" "), "");
            resolved.push(hit.as_ref().map(|u| u.kind));
            let name = hit.map(|u| u.normalized).unwrap_or_else(|| lemmas.join(" "));
            parts.push(UnitPart {
                name,
                exponent: *exponent,
            });
        }
        if resolved.iter().all(Option::is_none) {
            return None;
        }
        let kind = match resolved[0] {
            Some(UnitKind::Currency) => UnitKind::Currency,
            Some(_) => UnitKind::Scientific,
            None => UnitKind::Noun,
        };
        Some(Unit {
            normalized: Unit::compose_parts(&parts),
            surface: surface.to_string(),
            kind,
            parts,
            token_indices: tokens.to_vec(),
            derived: false,
            ambiguous: false,
        })
    }

    /// Lemmatized noun phrase, extended leftwards with the adjectival and
    /// compound modifiers directly before it ("residential suite").
    fn noun_unit(&self, s: &ParsedSentence, tokens: &[usize]) -> Unit {
        let mut tokens = tokens.to_vec();
        let set: BTreeSet<usize> = tokens.iter().copied().collect();
        let mut left = tokens[0];
        while left > 1 {
            let cand = s.token(left - 1);
            let attached = set.contains(&cand.head) || tokens.contains(&cand.head);
            if attached && NOUN_MODIFIERS.contains(&cand.deprel.as_str()) && cand.upos != "NUM" {
                left -= 1;
                tokens.insert(0, left);
            } else {
                break;
            }
        }
        Unit {
            normalized: lemma_sequence(s, &tokens),
            surface: token_surface(s, &tokens),
            kind: UnitKind::Noun,
            parts: Vec::new(),
            token_indices: tokens,
            derived: false,
            ambiguous: false,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::conllu::read_conllu_str;

    fn dec(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    fn parse(surfaces: &[&str]) -> Decimal {
        ValueLexicon::bundled().parse(surfaces).unwrap()
    }

    /// One-line builder: `form/lemma/UPOS/head/deprel` items; lemma `=`
    /// means the lowercased form.
    pub(crate) fn sentence(layout: &str) -> ParsedSentence {
        let mut rows = String::new();
        for (i, item) in layout.split_whitespace().enumerate() {
            let f: Vec<&str> = item.rsplitn(5, '/').collect();
            let (form, lemma, upos, head, deprel) = (f[4], f[3], f[2], f[1], f[0]);
            let lemma = if lemma == "=" {
                form.to_lowercase()
            } else {
                lemma.to_string()
            };
            rows.push_str(&format!(
                "{}\t{form}\t{lemma}\t{upos}\t_\t_\t{head}\t{deprel}\t_\t_\n",
                i + 1
            ));
        }
        read_conllu_str(&rows).unwrap().remove(0)
    }

    #[test]
    fn value_micro_suite() {
        assert_eq!(parse(&["10k"]), dec("10000"));
        assert_eq!(parse(&["1/5"]), dec("0.2"));
        assert_eq!(parse(&["1.9×10^2"]), dec("190"));
        assert_eq!(parse(&["1.9×10²"]), dec("190"));
        assert_eq!(parse(&["-5"]), dec("-5"));
        assert_eq!(parse(&["half"]), dec("0.5"));
        assert_eq!(parse(&["1", "million"]), dec("1000000"));
    }

    #[test]
    fn more_value_forms() {
        assert_eq!(parse(&["2.33E-3"]), dec("0.00233"));
        assert_eq!(parse(&["2.3E2"]), dec("230"));
        assert_eq!(parse(&["10^2"]), dec("100"));
        assert_eq!(parse(&["5×10⁻³"]), dec("0.005"));
        assert_eq!(parse(&["1.9", "×", "10^2"]), dec("190"));
        assert_eq!(parse(&["14,760"]), dec("14760"));
        assert_eq!(parse(&["forty-two"]), dec("42"));
        assert_eq!(parse(&["fourty-two"]), dec("42"));
        assert_eq!(parse(&["two"]), dec("2"));
        assert_eq!(parse(&["two", "hundred", "thousand"]), dec("200000"));
        assert_eq!(parse(&["200", "million"]), dec("200000000"));
        assert_eq!(parse(&["2bn"]), dec("2000000000"));
        assert_eq!(parse(&["minus", "3"]), dec("-3"));
        assert_eq!(parse(&["-", "5"]), dec("-5"));
        assert_eq!(parse(&["two", "and", "a", "half"]), dec("2.5"));
        assert_eq!(parse(&["0.1"]), dec("0.1"));
        assert_eq!(parse(&["1", "1/2"]), dec("1.5"));
        assert_eq!(parse(&["14", "760"]), dec("14760"));
        assert_eq!(parse(&["10", "k"]), dec("10000"));
        assert_eq!(parse(&["−5"]), dec("-5"));
    }

    #[test]
    fn unreadable_values_carry_surface() {
        let lex = ValueLexicon::bundled();
        assert_eq!(lex.parse(&["abc"]).unwrap_err().surface, "abc");
        assert!(lex.parse(&[]).is_err());
        assert!(lex.parse(&["-"]).is_err());
        assert!(lex.parse(&["1/0"]).is_err());
        assert!(lex.parse(&["1e999"]).is_err());
        assert!(lex.parse(&["40-60"]).is_err());
    }

    #[test]
    fn hyphen_range_splits() {
        let s = sentence("40-60/=/NUM/2/nummod km/h/=/NOUN/0/ROOT");
        let v = ValueLexicon::bundled()
            .standardize_value(&s, &[], Some((&[1], &[1])))
            .unwrap();
        assert_eq!(v.magnitude, Magnitude::range(dec("40"), dec("60")));
        assert_eq!(v.token_indices, vec![1]);
    }

    #[test]
    fn dictionary_lookups() {
        let d = UnitDictionary::bundled();
        assert_eq!(d.lookup("€"), vec!["euro"]);
        assert_eq!(d.lookup("euros"), vec!["euro"]);
        assert_eq!(d.lookup("cm"), vec!["centimetre"]);
        assert_eq!(d.lookup("pound"), vec!["pound sterling", "pound-mass"]);
        assert_eq!(d.lookup("c"), vec!["celsius", "cent"]);
        assert_eq!(d.lookup("C"), vec!["celsius", "coulomb"]);
        assert_eq!(d.lookup("EUROS"), vec!["euro"]);
        assert!(d.lookup("KM").is_empty());
    }

    #[test]
    fn eighteen_ambiguous_surfaces() {
        let amb = UnitDictionary::bundled().ambiguous_surfaces();
        let surfaces: Vec<&str> = amb.keys().copied().collect();
        let mut expected = vec![
            "c", "¥", "kn", "p", "R", "b", "'", "′", "\"", "″", "C", "F", "kt", "B", "P", "dram", "pound", "a",
        ];
        expected.sort_unstable();
        assert_eq!(surfaces, expected);
        assert!(amb.values().all(|names| names.len() == 2));
    }

    #[test]
    fn unit_normalization_examples() {
        let d = UnitDictionary::bundled();
        let s = sentence("10/=/NUM/2/nummod euros/euro/NOUN/0/ROOT");
        let u = d.normalize_unit(&s, &[2]);
        assert_eq!((u.normalized.as_str(), u.kind), ("euro", UnitKind::Currency));

        let s = sentence("5/=/NUM/2/nummod cm/=/NOUN/0/ROOT");
        assert_eq!(d.normalize_unit(&s, &[2]).normalized, "centimetre");

        let s = sentence("3/=/NUM/2/nummod kV/cm/=/NOUN/0/ROOT");
        let u = d.normalize_unit(&s, &[2]);
        assert_eq!(u.normalized, "kilovolt per centimetre");
        assert_eq!(u.parts.len(), 2);
        assert!(u.validate().is_ok());

        let s = sentence("10/=/NUM/2/nummod students/student/NOUN/0/ROOT");
        let u = d.normalize_unit(&s, &[2]);
        assert_eq!((u.normalized.as_str(), u.kind), ("student", UnitKind::Noun));

        let s = sentence("two/=/NUM/3/nummod residential/=/ADJ/3/amod suites/suite/NOUN/0/ROOT");
        let u = d.normalize_unit(&s, &[3]);
        assert_eq!(u.normalized, "residential suite");
        assert_eq!(u.token_indices, vec![2, 3]);

        assert!(d.normalize_unit(&s, &[]).is_none());
    }

    #[test]
    fn compound_with_article_separator() {
        let d = UnitDictionary::bundled();
        let s = sentence("$/=/SYM/0/ROOT 3500/=/NUM/1/nummod a/=/DET/4/det month/=/NOUN/1/npadvmod");
        let u = d.normalize_unit(&s, &[1, 3, 4]);
        assert_eq!(u.normalized, "dollar per month");
        assert_eq!(u.kind, UnitKind::Currency);
    }

    #[test]
    fn ambiguous_flag_set_for_pounds() {
        let d = UnitDictionary::bundled();
        let s = sentence("50/=/NUM/2/nummod pounds/pound/NOUN/0/ROOT");
        assert!(d.normalize_unit(&s, &[2]).ambiguous);
        let s = sentence("50/=/NUM/2/nummod kg/=/NOUN/0/ROOT");
        assert!(!d.normalize_unit(&s, &[2]).ambiguous);
    }

    #[test]
    fn canonical_names_are_fixed_points() {
        let d = UnitDictionary::bundled();
        for entry in d.entries() {
            let items: Vec<String> = entry
                .name
                .split(' ')
                .enumerate()
                .map(|(i, w)| format!("{w}/=/NOUN/{}/dep", if i == 0 { 0 } else { 1 }))
                .collect();
            let layout = items.join(" ").replacen("/0/dep", "/0/ROOT", 1);
            let s = sentence(&layout);
            let all: Vec<usize> = (1..=s.len()).collect();
            assert_eq!(d.normalize_unit(&s, &all).normalized, entry.name);
        }
    }

    #[test]
    fn change_examples() {
        let c = ChangeLexicon::bundled();
        let s = sentence("DAX/=/PROPN/2/nsubj fell/fall/VERB/0/ROOT 2/=/NUM/4/nummod %/=/NOUN/2/dobj");
        assert_eq!(c.normalize_change(&s, &[2], &[3]).category, ChangeCategory::Down);
        let s = sentence("more/=/ADJ/2/advmod than/=/ADP/3/quantmod 50/=/NUM/4/nummod kg/=/NOUN/0/ROOT");
        let ch = c.normalize_change(&s, &[1, 2], &[3]);
        assert_eq!((ch.category, ch.trigger_indices), (ChangeCategory::Greater, vec![1, 2]));
        let s = sentence("roughly/=/ADV/2/advmod 35/=/NUM/3/nummod $/=/SYM/0/ROOT");
        assert_eq!(c.normalize_change(&s, &[1], &[2]).category, ChangeCategory::Approx);
        assert_eq!(c.normalize_change(&s, &[], &[2]), Change::default());
        let s = sentence("zzz/=/ADV/2/advmod 35/=/NUM/0/ROOT");
        assert_eq!(c.normalize_change(&s, &[1], &[2]), Change::default());
    }

    #[test]
    fn trend_beats_bound() {
        let c = ChangeLexicon::bundled();
        let s = sentence("S&P/=/PROPN/2/nsubj gained/gain/VERB/0/ROOT more/=/ADJ/4/advmod than/=/ADP/5/quantmod 2/=/NUM/6/nummod %/=/NOUN/2/dobj");
        let ch = c.normalize_change(&s, &[2, 3, 4], &[5]);
        assert_eq!((ch.category, ch.trigger_indices), (ChangeCategory::Up, vec![2]));
    }

    #[test]
    fn lexicon_load_errors() {
        assert!(matches!(
            UnitDictionary::from_json("{}", "u"),
            Err(LexiconError::Empty { .. })
        ));
        match UnitDictionary::from_json(r#"{"euro": {"surfaces": ["euro"], "kind": "money"}}"#, "u") {
            Err(LexiconError::Entry { name, .. }) => assert_eq!(name, "euro"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(UnitDictionary::from_json(r#"{"euro": {"surfaces": 3, "kind": "currency"}}"#, "u").is_err());
        assert!(ChangeLexicon::from_json(r#"{"up": ["x"], "down": ["x"]}"#, "c").is_err());
        assert!(ChangeLexicon::from_json(r#"{"sideways": ["x"]}"#, "c").is_err());
        assert!(ValueLexicon::from_json(r#"{"scales": {"k": -1}, "numbers": {}}"#, "v").is_err());
    }

    #[test]
    fn load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        for (name, body) in [
            ("units.json", UNITS_JSON),
            ("values.json", VALUES_JSON),
            ("changes.json", CHANGES_JSON),
        ] {
            fs::write(dir.path().join(name), body).unwrap();
        }
        let lex = load_lexicons(dir.path()).unwrap();
        assert_eq!(lex.units.len(), UnitDictionary::bundled().len());
        fs::remove_file(dir.path().join("values.json")).unwrap();
        assert!(matches!(load_lexicons(dir.path()), Err(LexiconError::Io { .. })));
    }
}
