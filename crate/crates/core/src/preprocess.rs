//! Text cleaning, tokenizer protection and non-quantity masking.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

pub const DEFAULT_PATTERNS: &str = include_str!("../data/nonquantity_patterns.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MaskReason {
    Date,
    Phone,
    Time,
    Identifier,
}

impl MaskReason {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskReason::Date => "date",
            MaskReason::Phone => "phone",
            MaskReason::Time => "time",
            MaskReason::Identifier => "identifier",
        }
    }
}

impl fmt::Display for MaskReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedSpan {
    pub span: Range<usize>,
    pub reason: MaskReason,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatternError {
    #[error("pattern line {line}: expected `<reason> <regex>`")]
    Shape { line: usize },
    #[error("pattern line {line}: unknown reason {reason:?}")]
    Reason { line: usize, reason: String },
    #[error("pattern line {line}: {message}")]
    Regex { line: usize, message: String },
}

/// Ordered list of masking patterns loaded from a data file.
#[derive(Debug, Clone)]
pub struct NonQuantityPatterns {
    patterns: Vec<(MaskReason, Regex)>,
}

impl FromStr for NonQuantityPatterns {
    type Err = PatternError;

    fn from_str(data: &str) -> Result<Self, Self::Err> {
        let mut patterns = Vec::new();
        for (n, raw) in data.lines().enumerate() {
            let line = n + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (reason, regex) = trimmed
                .split_once(char::is_whitespace)
                .ok_or(PatternError::Shape { line })?;
            let reason = match reason {
                "date" => MaskReason::Date,
                "phone" => MaskReason::Phone,
                "time" => MaskReason::Time,
                "identifier" => MaskReason::Identifier,
                other => {
                    return Err(PatternError::Reason {
                        line,
                        reason: other.to_string(),
                    })
                }
            };
            let regex = Regex::new(regex.trim()).map_err(|e| PatternError::Regex {
                line,
                message: e.to_string(),
            })?;
            patterns.push((reason, regex));
        }
        Ok(NonQuantityPatterns { patterns })
    }
}

impl Default for NonQuantityPatterns {
    fn default() -> Self {
        default_patterns().clone()
    }
}

fn default_patterns() -> &'static NonQuantityPatterns {
    static PATTERNS: OnceLock<NonQuantityPatterns> = OnceLock::new();
    PATTERNS.get_or_init(|| DEFAULT_PATTERNS.parse().expect("bundled patterns are valid"))
}

impl NonQuantityPatterns {
    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    /// Non-overlapping masked spans, leftmost-longest first.
    pub fn mask(&self, text: &str) -> Vec<MaskedSpan> {
        let mut found: Vec<MaskedSpan> = Vec::new();
        for (reason, regex) in &self.patterns {
            for caps in regex.captures_iter(text) {
                let m = caps.get(1).or_else(|| caps.get(0)).expect("group 0 always matches");
                if m.start() < m.end() {
                    found.push(MaskedSpan {
                        span: m.range(),
                        reason: *reason,
                    });
                }
            }
        }
        select_non_overlapping(found, |m| m.span.clone())
    }
}

fn select_non_overlapping<T>(mut items: Vec<T>, span: impl Fn(&T) -> Range<usize>) -> Vec<T> {
    items.sort_by(|a, b| {
        let (a, b) = (span(a), span(b));
        a.start.cmp(&b.start).then(b.end.cmp(&a.end))
    });
    let mut out: Vec<T> = Vec::new();
    for item in items {
        let s = span(&item);
        if out.last().is_none_or(|last| span(last).end <= s.start) {
            out.push(item);
        }
    }
    out
}

/// Masks dates, phone numbers and clock times with the bundled patterns.
pub fn mask_nonquantities(text: &str) -> Vec<MaskedSpan> {
    default_patterns().mask(text)
}

/// Result of [`clean_text`]. `offset_map[i]` is the original byte offset of
/// cleaned byte `i`; the final entry maps the end of the text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanedText {
    pub text: String,
    pub offset_map: Vec<usize>,
    pub masked_spans: Vec<MaskedSpan>,
}

impl CleanedText {
    /// Maps a span in the cleaned text back to the original text.
    pub fn to_original(&self, span: Range<usize>) -> Range<usize> {
        let start = self.offset_map[span.start];
        if span.end <= span.start {
            return start..start;
        }
        let end = self.offset_map[span.end - 1] + 1;
        start..end.min(*self.offset_map.last().expect("sentinel entry"))
    }
}

const GLUED_SYMBOLS: &[char] = &['$', '€', '£', '¥', '₹', '₩', '%', '°'];

/// Collapses dotted abbreviations ("m.p.h" to "mph") and separates digits
/// from glued currency/percent symbols ("$3500" to "$ 3500").
pub fn clean_text(raw: &str) -> CleanedText {
    let chars: Vec<(usize, char)> = raw.char_indices().collect();
    let drop_dot = dotted_abbreviation_dots(&chars);

    let mut text = String::with_capacity(raw.len() + 8);
    let mut offset_map = Vec::with_capacity(raw.len() + 9);
    let mut prev: Option<char> = None;
    for (i, &(offset, c)) in chars.iter().enumerate() {
        if drop_dot[i] {
            continue;
        }
        if let Some(p) = prev {
            let split = (p.is_ascii_digit() && GLUED_SYMBOLS.contains(&c))
                || (GLUED_SYMBOLS.contains(&p) && c.is_ascii_digit());
            if split {
                text.push(' ');
                offset_map.push(offset);
            }
        }
        text.push(c);
        offset_map.extend((0..c.len_utf8()).map(|k| offset + k));
        prev = Some(c);
    }
    offset_map.push(raw.len());
    let masked_spans = mask_nonquantities(&text);
    CleanedText {
        text,
        offset_map,
        masked_spans,
    }
}

/// Marks the dots of runs like `m.p.h` or `U.S.A`: single letters separated
/// by dots, not attached to a longer word.
fn dotted_abbreviation_dots(chars: &[(usize, char)]) -> Vec<bool> {
    let at = |i: usize| chars.get(i).map(|&(_, c)| c);
    let letter = |i: usize| at(i).is_some_and(|c| c.is_ascii_alphabetic());
    let wordish = |i: usize| at(i).is_some_and(|c| c.is_alphanumeric());
    let mut drop = vec![false; chars.len()];
    let mut i = 0;
    while i < chars.len() {
        if !letter(i) || (i > 0 && wordish(i - 1)) {
            i += 1;
            continue;
        }
        let mut j = i;
        while at(j + 1) == Some('.') && letter(j + 2) && !wordish(j + 3) {
            drop[j + 1] = true;
            j += 2;
        }
        i = j + 1;
    }
    drop
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtectKind {
    SlashUnit,
    Scientific,
    Decimal,
    HyphenRange,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectedSpan {
    pub span: Range<usize>,
    pub kind: ProtectKind,
}

fn protect_patterns() -> &'static [(ProtectKind, Regex)] {
    static PATTERNS: OnceLock<Vec<(ProtectKind, Regex)>> = OnceLock::new();
    PATTERNS.get_or_init(|| {
        [
            (ProtectKind::Scientific, r"\d+(?:\.\d+)?\s?[×x]\s?10\^[-+]?\d+"),
            (ProtectKind::Scientific, r"\b\d+(?:\.\d+)?[eE][-+]?\d+\b"),
            (ProtectKind::HyphenRange, r"\b\d+(?:\.\d+)?[-–]\d+(?:\.\d+)?\b"),
            (ProtectKind::Decimal, r"\b\d{1,3}(?:,\d{3})+(?:\.\d+)?\b"),
            (ProtectKind::Decimal, r"\b\d+\.\d+\b"),
            (ProtectKind::SlashUnit, r"[A-Za-zµ°Ω]{1,6}/[A-Za-zµ°Ω]{1,6}\d?\b"),
        ]
        .into_iter()
        .map(|(k, p)| (k, Regex::new(p).expect("static pattern")))
        .collect()
    })
}

/// Spans a tokenizer must keep as single tokens.
pub fn protect_tokens(text: &str) -> Vec<ProtectedSpan> {
    let mut found = Vec::new();
    for (kind, regex) in protect_patterns() {
        for m in regex.find_iter(text) {
            found.push(ProtectedSpan {
                span: m.range(),
                kind: *kind,
            });
        }
    }
    select_non_overlapping(found, |p| p.span.clone())
}
