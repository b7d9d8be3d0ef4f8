//! Domain types shared across the extraction stages.
//!
//! A [`Quantity`] is the tuple of value, unit, change and concept. Token
//! indices are 1-based and refer to the owning [`ParsedSentence`].

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde_json::{json, Map, Value};
use thiserror::Error;

/// Errors raised when a value violates a type invariant or a JSON document
/// does not have the quantity shape.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid quantity: {0}")]
    Invariant(String),
    #[error("malformed quantity JSON: {0}")]
    Json(String),
}

/// One token of a dependency-parsed sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedToken {
    pub index: usize,
    pub surface: String,
    pub lemma: String,
    pub upos: String,
    pub xpos: String,
    /// Index of the syntactic head, 0 for the root.
    pub head: usize,
    pub deprel: String,
    /// Byte offsets `(start, end)` into [`ParsedSentence::text`].
    pub char_span: (usize, usize),
}

impl AnnotatedToken {
    pub fn is_root(&self) -> bool {
        self.head == 0
    }

    pub fn is_punct(&self) -> bool {
        self.upos == "PUNCT"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSentence {
    pub text: String,
    pub tokens: Vec<AnnotatedToken>,
}

impl ParsedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Token by 1-based index.
    pub fn token(&self, index: usize) -> &AnnotatedToken {
        &self.tokens[index - 1]
    }

    pub fn get(&self, index: usize) -> Option<&AnnotatedToken> {
        index.checked_sub(1).and_then(|i| self.tokens.get(i))
    }

    pub fn root(&self) -> Option<usize> {
        self.tokens.iter().find(|t| t.head == 0).map(|t| t.index)
    }

    /// Direct dependents of `index`, in sentence order.
    pub fn children(&self, index: usize) -> impl Iterator<Item = &AnnotatedToken> + '_ {
        self.tokens.iter().filter(move |t| t.head == index && t.index != index)
    }

    /// Heads of `index` walking up to the root, nearest first.
    pub fn ancestors(&self, index: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut current = self.token(index).head;
        while current != 0 && out.len() <= self.tokens.len() {
            out.push(current);
            current = self.token(current).head;
        }
        out
    }

    /// `index` and everything it dominates, sorted.
    pub fn subtree(&self, index: usize) -> BTreeSet<usize> {
        let mut out = BTreeSet::new();
        let mut stack = vec![index];
        while let Some(i) = stack.pop() {
            if out.insert(i) {
                stack.extend(self.children(i).map(|t| t.index));
            }
        }
        out
    }

    /// Surfaces of the given tokens joined by single spaces.
    pub fn surfaces(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .map(|&i| self.token(i).surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// The magnitude of a value: a single decimal or a closed range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Magnitude {
    Scalar(Decimal),
    Range { lower: Decimal, upper: Decimal },
}

impl Magnitude {
    pub fn range(a: Decimal, b: Decimal) -> Self {
        if a <= b {
            Magnitude::Range { lower: a, upper: b }
        } else {
            Magnitude::Range { lower: b, upper: a }
        }
    }

    fn normalized(&self) -> Self {
        match *self {
            Magnitude::Scalar(d) => Magnitude::Scalar(d.normalize()),
            Magnitude::Range { lower, upper } => Magnitude::Range {
                lower: lower.normalize(),
                upper: upper.normalize(),
            },
        }
    }

    pub fn to_json(&self) -> Value {
        match self {
            Magnitude::Scalar(d) => decimal_to_json(*d),
            Magnitude::Range { lower, upper } => Value::Array(vec![decimal_to_json(*lower), decimal_to_json(*upper)]),
        }
    }

    pub fn from_json(value: &Value) -> Result<Self, ModelError> {
        match value {
            Value::Array(items) if items.len() == 2 => {
                let lower = decimal_from_json(&items[0])?;
                let upper = decimal_from_json(&items[1])?;
                if lower > upper {
                    return Err(ModelError::Invariant(format!(
                        "range lower bound {lower} exceeds upper bound {upper}"
                    )));
                }
                Ok(Magnitude::Range { lower, upper })
            }
            Value::Array(_) => Err(ModelError::Json("range must have two bounds".into())),
            other => Ok(Magnitude::Scalar(decimal_from_json(other)?)),
        }
    }
}

impl fmt::Display for Magnitude {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Magnitude::Scalar(d) => write!(f, "{}", d.normalize()),
            Magnitude::Range { lower, upper } => {
                write!(f, "({}, {})", lower.normalize(), upper.normalize())
            }
        }
    }
}

/// Plain decimal notation as a JSON number, trailing zeros stripped.
pub fn decimal_to_json(d: Decimal) -> Value {
    let text = d.normalize().to_string();
    Value::Number(serde_json::Number::from_str(&text).expect("decimal renders as a JSON number"))
}

pub fn decimal_from_json(value: &Value) -> Result<Decimal, ModelError> {
    match value {
        Value::Number(n) => {
            let text = n.to_string();
            Decimal::from_str(&text)
                .or_else(|_| Decimal::from_scientific(&text))
                .map(|d| d.normalize())
                .map_err(|e| ModelError::Json(format!("bad number {text}: {e}")))
        }
        Value::String(s) => Decimal::from_str(s)
            .map(|d| d.normalize())
            .map_err(|e| ModelError::Json(format!("bad number {s:?}: {e}"))),
        other => Err(ModelError::Json(format!("expected number, found {other}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NumericValue {
    pub magnitude: Magnitude,
    pub token_indices: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnitKind {
    Scientific,
    Currency,
    Noun,
    None,
}

impl UnitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitKind::Scientific => "scientific",
            UnitKind::Currency => "currency",
            UnitKind::Noun => "noun",
            UnitKind::None => "none",
        }
    }
}

impl FromStr for UnitKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scientific" => Ok(UnitKind::Scientific),
            "currency" => Ok(UnitKind::Currency),
            "noun" => Ok(UnitKind::Noun),
            "none" => Ok(UnitKind::None),
            other => Err(ModelError::Json(format!("unknown unit kind {other:?}"))),
        }
    }
}

/// One component of a compound unit; `exponent` is +1 for numerator parts
/// and -1 for denominator parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitPart {
    pub name: String,
    pub exponent: i8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Unit {
    pub normalized: String,
    pub surface: String,
    pub kind: UnitKind,
    pub parts: Vec<UnitPart>,
    pub token_indices: Vec<usize>,
    pub derived: bool,
    pub ambiguous: bool,
}

impl Unit {
    pub fn none() -> Self {
        Unit {
            normalized: String::new(),
            surface: String::new(),
            kind: UnitKind::None,
            parts: Vec::new(),
            token_indices: Vec::new(),
            derived: false,
            ambiguous: false,
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == UnitKind::None
    }

    /// Canonical rendering of compound parts: numerators joined by spaces,
    /// each denominator introduced by "per".
    pub fn compose_parts(parts: &[UnitPart]) -> String {
        let mut out = String::new();
        for part in parts {
            if !out.is_empty() {
                out.push(' ');
            }
            if part.exponent < 0 {
                out.push_str("per ");
            }
            out.push_str(&part.name);
        }
        out
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.kind != UnitKind::None && self.normalized.is_empty() {
            return Err(ModelError::Invariant("unit with a kind needs a name".into()));
        }
        if self.derived && !self.token_indices.is_empty() {
            return Err(ModelError::Invariant("derived unit must not own tokens".into()));
        }
        if !self.parts.is_empty() && Unit::compose_parts(&self.parts) != self.normalized {
            return Err(ModelError::Invariant(format!(
                "unit parts do not compose to {:?}",
                self.normalized
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ChangeCategory {
    Approx,
    Equals,
    Greater,
    Less,
    Up,
    Down,
}

impl ChangeCategory {
    pub const ALL: [ChangeCategory; 6] = [
        ChangeCategory::Approx,
        ChangeCategory::Equals,
        ChangeCategory::Greater,
        ChangeCategory::Less,
        ChangeCategory::Up,
        ChangeCategory::Down,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            ChangeCategory::Approx => "~",
            ChangeCategory::Equals => "=",
            ChangeCategory::Greater => ">",
            ChangeCategory::Less => "<",
            ChangeCategory::Up => "up",
            ChangeCategory::Down => "down",
        }
    }

    pub fn is_trend(self) -> bool {
        matches!(self, ChangeCategory::Up | ChangeCategory::Down)
    }
}

impl FromStr for ChangeCategory {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChangeCategory::ALL
            .into_iter()
            .find(|c| c.symbol() == s)
            .ok_or_else(|| ModelError::Json(format!("unknown change category {s:?}")))
    }
}

impl fmt::Display for ChangeCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Change {
    pub category: ChangeCategory,
    pub trigger_indices: Vec<usize>,
}

impl Default for Change {
    fn default() -> Self {
        Change {
            category: ChangeCategory::Equals,
            trigger_indices: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptToken {
    pub surface: String,
    pub index: usize,
}

/// Ordered, possibly discontinuous token list. Empty means no concept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Concept {
    pub tokens: Vec<ConceptToken>,
}

impl Concept {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.index).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quantity {
    pub value: NumericValue,
    pub unit: Unit,
    pub change: Change,
    pub concept: Concept,
}

impl Quantity {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.value.token_indices.is_empty() {
            return Err(ModelError::Invariant("value has no tokens".into()));
        }
        if let Magnitude::Range { lower, upper } = self.value.magnitude {
            if lower > upper {
                return Err(ModelError::Invariant("range bounds out of order".into()));
            }
        }
        self.unit.validate()?;
        if self.concept.tokens.windows(2).any(|w| w[0].index >= w[1].index) {
            return Err(ModelError::Invariant("concept indices must increase".into()));
        }
        let value: BTreeSet<_> = self.value.token_indices.iter().copied().collect();
        let unit: BTreeSet<_> = self.unit.token_indices.iter().copied().collect();
        let concept: BTreeSet<_> = self.concept.indices().into_iter().collect();
        if !value.is_disjoint(&unit) || !value.is_disjoint(&concept) || !unit.is_disjoint(&concept) {
            return Err(ModelError::Invariant("value, unit and concept tokens overlap".into()));
        }
        Ok(())
    }

    /// Canonical unit name, `None` when the quantity is unitless.
    pub fn unit_name(&self) -> Option<&str> {
        (!self.unit.is_none()).then_some(self.unit.normalized.as_str())
    }

    pub fn to_json(&self) -> Value {
        let unit = match self.unit_name() {
            Some(name) => Value::String(name.to_string()),
            None => Value::Null,
        };
        let parts: Vec<Value> = self.unit.parts.iter().map(|p| json!([p.name, p.exponent])).collect();
        json!({
            "value": self.value.magnitude.to_json(),
            "unit": unit,
            "change": self.change.category.symbol(),
            "concept": self.concept.surfaces(),
            "detail": {
                "value_tokens": self.value.token_indices,
                "unit": {
                    "surface": self.unit.surface,
                    "kind": self.unit.kind.as_str(),
                    "parts": parts,
                    "tokens": self.unit.token_indices,
                    "derived": self.unit.derived,
                    "ambiguous": self.unit.ambiguous,
                },
                "change_tokens": self.change.trigger_indices,
                "concept_tokens": self.concept.indices(),
            }
        })
    }

    pub fn from_json(value: &Value) -> Result<Self, ModelError> {
        let obj = value
            .as_object()
            .ok_or_else(|| ModelError::Json("quantity must be an object".into()))?;
        let magnitude = Magnitude::from_json(field(obj, "value")?)?;
        let unit_name = match field(obj, "unit")? {
            Value::Null => None,
            Value::String(s) => Some(s.clone()),
            other => return Err(ModelError::Json(format!("unit must be string or null: {other}"))),
        };
        let category: ChangeCategory = str_field(obj, "change")?.parse()?;
        let concept_surfaces = string_list(field(obj, "concept")?)?;

        let empty = Map::new();
        let detail = match obj.get("detail") {
            Some(Value::Object(d)) => d,
            Some(_) => return Err(ModelError::Json("detail must be an object".into())),
            None => &empty,
        };
        let value_tokens = opt_index_list(detail.get("value_tokens"))?;
        let change_tokens = opt_index_list(detail.get("change_tokens"))?;
        let concept_tokens = opt_index_list(detail.get("concept_tokens"))?;
        let unit_detail = match detail.get("unit") {
            Some(Value::Object(u)) => Some(u),
            Some(_) => return Err(ModelError::Json("detail.unit must be an object".into())),
            None => None,
        };

        let unit = match (unit_name, unit_detail) {
            (None, _) => Unit::none(),
            (Some(name), None) => Unit {
                surface: name.clone(),
                normalized: name,
                kind: UnitKind::Noun,
                ..Unit::none()
            },
            (Some(name), Some(u)) => {
                let parts = match u.get("parts") {
                    Some(Value::Array(items)) => items
                        .iter()
                        .map(|p| match p.as_array().map(Vec::as_slice) {
                            Some([Value::String(n), Value::Number(e)]) => Ok(UnitPart {
                                name: n.clone(),
                                exponent: e
                                    .as_i64()
                                    .filter(|e| *e == 1 || *e == -1)
                                    .ok_or_else(|| ModelError::Json("bad exponent".into()))?
                                    as i8,
                            }),
                            _ => Err(ModelError::Json("unit part must be [name, exponent]".into())),
                        })
                        .collect::<Result<Vec<_>, _>>()?,
                    None => Vec::new(),
                    Some(_) => return Err(ModelError::Json("parts must be an array".into())),
                };
                Unit {
                    normalized: name,
                    surface: str_field(u, "surface")?.to_string(),
                    kind: str_field(u, "kind")?.parse()?,
                    parts,
                    token_indices: opt_index_list(u.get("tokens"))?,
                    derived: bool_field(u, "derived")?,
                    ambiguous: bool_field(u, "ambiguous")?,
                }
            }
        };

        let concept = if concept_tokens.len() == concept_surfaces.len() {
            Concept {
                tokens: concept_surfaces
                    .into_iter()
                    .zip(concept_tokens)
                    .map(|(surface, index)| ConceptToken { surface, index })
                    .collect(),
            }
        } else if concept_tokens.is_empty() {
            // Gold annotations carry surfaces only.
            Concept {
                tokens: concept_surfaces
                    .into_iter()
                    .map(|surface| ConceptToken { surface, index: 0 })
                    .collect(),
            }
        } else {
            return Err(ModelError::Json("concept tokens and surfaces differ in length".into()));
        };

        Ok(Quantity {
            value: NumericValue {
                magnitude: magnitude.normalized(),
                token_indices: value_tokens,
            },
            unit,
            change: Change {
                category,
                trigger_indices: change_tokens,
            },
            concept,
        })
    }
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, ModelError> {
    obj.get(key)
        .ok_or_else(|| ModelError::Json(format!("missing key {key:?}")))
}

fn str_field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str, ModelError> {
    field(obj, key)?
        .as_str()
        .ok_or_else(|| ModelError::Json(format!("{key:?} must be a string")))
}

fn bool_field(obj: &Map<String, Value>, key: &str) -> Result<bool, ModelError> {
    match obj.get(key) {
        None => Ok(false),
        Some(Value::Bool(b)) => Ok(*b),
        Some(_) => Err(ModelError::Json(format!("{key:?} must be a boolean"))),
    }
}

fn string_list(value: &Value) -> Result<Vec<String>, ModelError> {
    value
        .as_array()
        .ok_or_else(|| ModelError::Json("expected a list of strings".into()))?
        .iter()
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| ModelError::Json("expected a string".into()))
        })
        .collect()
}

fn opt_index_list(value: Option<&Value>) -> Result<Vec<usize>, ModelError> {
    match value {
        None => Ok(Vec::new()),
        Some(Value::Array(items)) => items
            .iter()
            .map(|v| {
                v.as_u64()
                    .map(|n| n as usize)
                    .ok_or_else(|| ModelError::Json("token index must be a non-negative integer".into()))
            })
            .collect(),
        Some(_) => Err(ModelError::Json("token indices must be an array".into())),
    }
}

/// Deterministic JSON for one quantity. The leading keys are `value`,
/// `unit`, `change` and `concept`; `detail` carries the token provenance
/// needed for a lossless round trip.
pub fn serialize_quantity(q: &Quantity) -> String {
    q.to_json().to_string()
}

pub fn deserialize_quantity(text: &str) -> Result<Quantity, ModelError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ModelError::Json(e.to_string()))?;
    Quantity::from_json(&value)
}
