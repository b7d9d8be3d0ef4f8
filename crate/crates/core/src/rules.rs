//! Dependency-pattern rules that locate value, unit and change tokens.
//!
//! Rules live in a line-based rulebook (see `data/default.rules` for the
//! grammar). Each rule is a small graph pattern over tokens: node
//! predicates plus edge and adjacency constraints, with some nodes captured
//! under a role. Matches with overlapping value tokens are merged into one
//! [`RawCandidate`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::model::ParsedSentence;
use crate::normalize::Lexicons;
use crate::preprocess::MaskedSpan;

pub const DEFAULT_RULEBOOK: &str = include_str!("../data/default.rules");

/// Upper bound on matches collected per rule and sentence.
const MAX_MATCHES: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("rulebook line {line}: {message}")]
pub struct RulebookError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Upos,
    Xpos,
    Lemma,
    Surface,
    Deprel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexClass {
    Unit,
    Scale,
    Change,
    Number,
    HyphenRange,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    Field {
        field: Field,
        values: Vec<String>,
        negated: bool,
    },
    Lex {
        class: LexClass,
        negated: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub var: String,
    pub predicates: Vec<Predicate>,
}

/// Constraints refer to nodes by their position in the rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    Edge {
        child: usize,
        head: usize,
        relations: Vec<String>,
    },
    Adjacent(usize, usize),
    Before(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Value,
    Unit,
    Change,
    BoundLower,
    BoundUpper,
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "value" => Ok(Role::Value),
            "unit" => Ok(Role::Unit),
            "change" => Ok(Role::Change),
            "bound_lower" => Ok(Role::BoundLower),
            "bound_upper" => Ok(Role::BoundUpper),
            other => Err(format!("unknown capture role {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub nodes: Vec<Node>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub name: String,
    pub priority: i32,
    pub fallback: bool,
    pub pattern: Pattern,
    pub captures: BTreeMap<Role, Vec<usize>>,
}

impl Rule {
    pub fn is_range(&self) -> bool {
        self.captures.contains_key(&Role::BoundLower)
    }
}

/// Drops candidates whose value token is matched by the `drop` node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Filter {
    pub name: String,
    pub priority: i32,
    pub unitless_only: bool,
    pub pattern: Pattern,
    pub drop: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rulebook {
    pub rules: Vec<Rule>,
    pub filters: Vec<Filter>,
}

impl FromStr for Rulebook {
    type Err = RulebookError;

    fn from_str(src: &str) -> Result<Self, Self::Err> {
        parse_rulebook(src)
    }
}

impl Rulebook {
    pub fn bundled() -> &'static Rulebook {
        static BOOK: OnceLock<Rulebook> = OnceLock::new();
        BOOK.get_or_init(|| DEFAULT_RULEBOOK.parse().expect("bundled rulebook is valid"))
    }

    pub fn rule(&self, name: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| r.name == name)
    }
}

pub fn load_rulebook(src: &str) -> Result<Rulebook, RulebookError> {
    parse_rulebook(src)
}

enum Block {
    Rule {
        name: String,
        priority: i32,
        fallback: bool,
    },
    Filter {
        name: String,
        priority: i32,
        unitless: bool,
    },
}

struct Builder {
    block: Block,
    start: usize,
    nodes: Vec<Node>,
    constraints: Vec<Constraint>,
    captures: BTreeMap<Role, Vec<usize>>,
    drop: Option<usize>,
}

impl Builder {
    fn var(&self, name: &str, line: usize) -> Result<usize, RulebookError> {
        self.nodes
            .iter()
            .position(|n| n.var == name)
            .ok_or_else(|| err(line, format!("unknown node {name:?}")))
    }
}

fn err(line: usize, message: impl Into<String>) -> RulebookError {
    RulebookError {
        line,
        message: message.into(),
    }
}

fn parse_rulebook(src: &str) -> Result<Rulebook, RulebookError> {
    let mut rules: Vec<Rule> = Vec::new();
    let mut filters: Vec<Filter> = Vec::new();
    let mut names = BTreeSet::new();
    let mut current: Option<Builder> = None;
    for (n, raw) in src.lines().enumerate() {
        let line = n + 1;
        let text = raw.split('#').next().unwrap_or("").trim();
        if text.is_empty() {
            continue;
        }
        let words: Vec<&str> = text.split_whitespace().collect();
        match (words[0], current.as_mut()) {
            ("rule" | "filter", None) => {
                let (name, priority, flag) = match words.as_slice() {
                    [_, name, "priority", p] => (*name, *p, None),
                    [_, name, "priority", p, flag] => (*name, *p, Some(*flag)),
                    _ => return Err(err(line, format!("expected `{} NAME priority N`", words[0]))),
                };
                if !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(err(line, format!("bad name {name:?}")));
                }
                if !names.insert(name.to_string()) {
                    return Err(err(line, format!("duplicate name {name:?}")));
                }
                let priority: i32 = priority
                    .parse()
                    .map_err(|_| err(line, format!("bad priority {priority:?}")))?;
                let block = match (words[0], flag) {
                    ("rule", None) => Block::Rule {
                        name: name.into(),
                        priority,
                        fallback: false,
                    },
                    ("rule", Some("fallback")) => Block::Rule {
                        name: name.into(),
                        priority,
                        fallback: true,
                    },
                    ("filter", None) => Block::Filter {
                        name: name.into(),
                        priority,
                        unitless: false,
                    },
                    ("filter", Some("unitless")) => Block::Filter {
                        name: name.into(),
                        priority,
                        unitless: true,
                    },
                    (_, Some(flag)) => return Err(err(line, format!("unknown flag {flag:?}"))),
                    _ => unreachable!(),
                };
                current = Some(Builder {
                    block,
                    start: line,
                    nodes: Vec::new(),
                    constraints: Vec::new(),
                    captures: BTreeMap::new(),
                    drop: None,
                });
            }
            ("rule" | "filter", Some(_)) => return Err(err(line, "missing `end` before new block")),
            (_, None) => return Err(err(line, format!("{:?} outside a rule", words[0]))),
            ("end", Some(_)) => {
                let b = current.take().expect("inside a block");
                finish_block(b, &mut rules, &mut filters)?;
            }
            ("node", Some(b)) => {
                let var = *words.get(1).ok_or_else(|| err(line, "node needs a name"))?;
                if b.nodes.iter().any(|n| n.var == var) {
                    return Err(err(line, format!("duplicate node {var:?}")));
                }
                let rest = text.splitn(3, char::is_whitespace).nth(2).unwrap_or("");
                let predicates = rest
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(|p| parse_predicate(p, line))
                    .collect::<Result<Vec<_>, _>>()?;
                b.nodes.push(Node {
                    var: var.to_string(),
                    predicates,
                });
            }
            ("edge", Some(b)) => {
                let (child, head, relations) = match words.as_slice() {
                    [_, c, "->", h] => (*c, *h, Vec::new()),
                    [_, c, "->", h, ":", rels] => (*c, *h, rels.split('|').map(String::from).collect()),
                    _ => return Err(err(line, "expected `edge CHILD -> HEAD [: rel|rel]`")),
                };
                let constraint = Constraint::Edge {
                    child: b.var(child, line)?,
                    head: b.var(head, line)?,
                    relations,
                };
                b.constraints.push(constraint);
            }
            ("adjacent" | "before", Some(b)) => {
                let [_, l, r] = words.as_slice() else {
                    return Err(err(line, format!("expected `{} LEFT RIGHT`", words[0])));
                };
                let (l, r) = (b.var(l, line)?, b.var(r, line)?);
                b.constraints.push(if words[0] == "adjacent" {
                    Constraint::Adjacent(l, r)
                } else {
                    Constraint::Before(l, r)
                });
            }
            ("capture", Some(b)) => {
                if !matches!(b.block, Block::Rule { .. }) {
                    return Err(err(line, "filters cannot capture"));
                }
                let role: Role = words
                    .get(1)
                    .ok_or_else(|| err(line, "capture needs a role"))?
                    .parse()
                    .map_err(|m: String| err(line, m))?;
                let vars = words[2..]
                    .iter()
                    .map(|v| b.var(v, line))
                    .collect::<Result<Vec<_>, _>>()?;
                if vars.is_empty() {
                    return Err(err(line, "capture needs at least one node"));
                }
                if matches!(role, Role::Value | Role::BoundLower | Role::BoundUpper) && vars.len() != 1 {
                    return Err(err(line, "value and bound captures take exactly one node"));
                }
                if b.captures.insert(role, vars).is_some() {
                    return Err(err(line, format!("role {role:?} captured twice")));
                }
            }
            ("drop", Some(b)) => {
                if !matches!(b.block, Block::Filter { .. }) {
                    return Err(err(line, "only filters can drop"));
                }
                let [_, v] = words.as_slice() else {
                    return Err(err(line, "expected `drop VAR`"));
                };
                b.drop = Some(b.var(v, line)?);
            }
            (other, Some(_)) => return Err(err(line, format!("unknown statement {other:?}"))),
        }
    }
    if let Some(b) = current {
        return Err(err(b.start, "block is missing `end`"));
    }
    Ok(Rulebook { rules, filters })
}

fn finish_block(b: Builder, rules: &mut Vec<Rule>, filters: &mut Vec<Filter>) -> Result<(), RulebookError> {
    if b.nodes.is_empty() {
        return Err(err(b.start, "block has no nodes"));
    }
    let pattern = Pattern {
        nodes: b.nodes,
        constraints: b.constraints,
    };
    match b.block {
        Block::Rule {
            name,
            priority,
            fallback,
        } => {
            let value = b.captures.contains_key(&Role::Value);
            let lower = b.captures.contains_key(&Role::BoundLower);
            let upper = b.captures.contains_key(&Role::BoundUpper);
            if value && (lower || upper) {
                return Err(err(b.start, format!("{name}: value and bound captures are exclusive")));
            }
            if lower != upper {
                return Err(err(b.start, format!("{name}: range rules need both bounds")));
            }
            if !value && !lower {
                return Err(err(b.start, format!("{name}: rule captures no value")));
            }
            rules.push(Rule {
                name,
                priority,
                fallback,
                pattern,
                captures: b.captures,
            });
        }
        Block::Filter {
            name,
            priority,
            unitless,
        } => {
            let drop = b
                .drop
                .ok_or_else(|| err(b.start, format!("{name}: filter needs `drop`")))?;
            filters.push(Filter {
                name,
                priority,
                unitless_only: unitless,
                pattern,
                drop,
            });
        }
    }
    Ok(())
}

fn parse_predicate(text: &str, line: usize) -> Result<Predicate, RulebookError> {
    let (negated, body) = match text.strip_prefix('!') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (key, values) = body
        .split_once('=')
        .ok_or_else(|| err(line, format!("predicate {text:?} needs `=`")))?;
    let values: Vec<String> = values.split('|').map(String::from).collect();
    if values.iter().any(String::is_empty) {
        return Err(err(line, format!("empty alternative in {text:?}")));
    }
    let field = match key.trim() {
        "upos" => Field::Upos,
        "xpos" => Field::Xpos,
        "lemma" => Field::Lemma,
        "surface" => Field::Surface,
        "deprel" => Field::Deprel,
        "lex" => {
            let [class] = values.as_slice() else {
                return Err(err(line, "lex takes a single class"));
            };
            let class = match class.as_str() {
                "unit" => LexClass::Unit,
                "scale" => LexClass::Scale,
                "change" => LexClass::Change,
                "number" => LexClass::Number,
                "hyphen_range" => LexClass::HyphenRange,
                other => return Err(err(line, format!("unknown lexicon class {other:?}"))),
            };
            return Ok(Predicate::Lex { class, negated });
        }
        other => return Err(err(line, format!("unknown predicate {other:?}"))),
    };
    let values = match field {
        Field::Lemma | Field::Surface => values.iter().map(|v| v.to_lowercase()).collect(),
        _ => values,
    };
    Ok(Predicate::Field { field, values, negated })
}

fn hyphen_range_shape() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[-−]?\d+(?:[.,]\d+)?-\d+(?:[.,]\d+)?$").unwrap())
}

struct Context<'a> {
    s: &'a ParsedSentence,
    lex: &'a Lexicons,
}

impl Context<'_> {
    fn satisfies(&self, token: usize, node: &Node) -> bool {
        node.predicates.iter().all(|p| self.predicate(token, p))
    }

    fn predicate(&self, token: usize, p: &Predicate) -> bool {
        let t = self.s.token(token);
        match p {
            Predicate::Field { field, values, negated } => {
                let hit = match field {
                    Field::Upos => values.contains(&t.upos),
                    Field::Xpos => values.contains(&t.xpos),
                    Field::Deprel => values.contains(&t.deprel),
                    Field::Lemma => values.contains(&t.lemma.to_lowercase()),
                    Field::Surface => values.contains(&t.surface.to_lowercase()),
                };
                hit != *negated
            }
            Predicate::Lex { class, negated } => self.lex_class(token, *class) != *negated,
        }
    }

    fn lex_class(&self, token: usize, class: LexClass) -> bool {
        let t = self.s.token(token);
        match class {
            LexClass::Unit => {
                !self.lex.units.lookup(&t.surface).is_empty() || !self.lex.units.lookup(&t.lemma).is_empty()
            }
            LexClass::Scale => self.lex.values.is_scale_word(&t.surface),
            LexClass::Change => self.lex.changes.contains_word(&t.surface) || self.lex.changes.contains_word(&t.lemma),
            LexClass::Number => self.lex.values.parse(&[t.surface.as_str()]).is_ok(),
            LexClass::HyphenRange => hyphen_range_shape().is_match(&t.surface),
        }
    }

    fn constraint_holds(&self, c: &Constraint, assigned: &[usize]) -> bool {
        match *c {
            Constraint::Edge {
                child,
                head,
                ref relations,
            } => {
                let t = self.s.token(assigned[child]);
                t.head == assigned[head] && (relations.is_empty() || relations.contains(&t.deprel))
            }
            Constraint::Adjacent(l, r) => assigned[l] + 1 == assigned[r],
            Constraint::Before(l, r) => assigned[l] < assigned[r],
        }
    }

    /// Every assignment of pattern nodes to distinct tokens that satisfies
    /// all predicates and constraints.
    fn matches(&self, pattern: &Pattern) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut assigned = Vec::with_capacity(pattern.nodes.len());
        self.extend(pattern, &mut assigned, &mut out);
        out
    }

    fn extend(&self, pattern: &Pattern, assigned: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if out.len() >= MAX_MATCHES {
            return;
        }
        let k = assigned.len();
        if k == pattern.nodes.len() {
            out.push(assigned.clone());
            return;
        }
        for token in self.candidates(pattern, k, assigned) {
            if assigned.contains(&token) || !self.satisfies(token, &pattern.nodes[k]) {
                continue;
            }
            assigned.push(token);
            let ok = pattern.constraints.iter().all(|c| {
                let (a, b) = constraint_nodes(c);
                a.max(b) != k || self.constraint_holds(c, assigned)
            });
            if ok {
                self.extend(pattern, assigned, out);
            }
            assigned.pop();
        }
    }

    /// Tokens worth trying for node `k`, narrowed through any constraint
    /// that links it to an already assigned node.
    fn candidates(&self, pattern: &Pattern, k: usize, assigned: &[usize]) -> Vec<usize> {
        for c in &pattern.constraints {
            let narrowed = match *c {
                Constraint::Edge { child, head, .. } if child == k && head < k => {
                    Some(self.s.children(assigned[head]).map(|t| t.index).collect())
                }
                Constraint::Edge { child, head, .. } if head == k && child < k => {
                    let h = self.s.token(assigned[child]).head;
                    Some(if h == 0 { Vec::new() } else { vec![h] })
                }
                Constraint::Adjacent(l, r) if r == k && l < k => {
                    let next = assigned[l] + 1;
                    Some(if next <= self.s.len() { vec![next] } else { Vec::new() })
                }
                Constraint::Adjacent(l, r) if l == k && r < k => Some(if assigned[r] > 1 {
                    vec![assigned[r] - 1]
                } else {
                    Vec::new()
                }),
                _ => None,
            };
            if let Some(list) = narrowed {
                return list;
            }
        }
        (1..=self.s.len()).collect()
    }
}

fn constraint_nodes(c: &Constraint) -> (usize, usize) {
    match *c {
        Constraint::Edge { child, head, .. } => (child, head),
        Constraint::Adjacent(a, b) | Constraint::Before(a, b) => (a, b),
    }
}

/// One rule match, with captured roles resolved to token indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMatch {
    pub rule: String,
    pub priority: i32,
    pub fallback: bool,
    pub captures: BTreeMap<Role, Vec<usize>>,
}

/// All matches of every rule on the sentence, in rulebook order.
pub fn match_rules(s: &ParsedSentence, rulebook: &Rulebook, lex: &Lexicons) -> Vec<RuleMatch> {
    let ctx = Context { s, lex };
    let mut out = Vec::new();
    for rule in &rulebook.rules {
        for assignment in ctx.matches(&rule.pattern) {
            let captures = rule
                .captures
                .iter()
                .map(|(role, vars)| {
                    let mut toks: Vec<usize> = vars.iter().map(|&v| assignment[v]).collect();
                    toks.sort_unstable();
                    toks.dedup();
                    (*role, toks)
                })
                .collect();
            out.push(RuleMatch {
                rule: rule.name.clone(),
                priority: rule.priority,
                fallback: rule.fallback,
                captures,
            });
        }
    }
    out
}

/// Tokens of a value, found by a rule or merged from several.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCandidate {
    pub value_tokens: Vec<usize>,
    pub unit_tokens: Vec<usize>,
    pub change_tokens: Vec<usize>,
    /// Lower and upper bound tokens; `value_tokens` is empty for ranges.
    pub range: Option<(Vec<usize>, Vec<usize>)>,
    /// The strongest contributing rule.
    pub rule_name: String,
    /// Every contributing rule, strongest first.
    pub rules: Vec<String>,
    /// Unit tokens of the candidate a shared unit was copied from.
    pub shared_unit_from: Option<Vec<usize>>,
    priority: i32,
    unit_rank: (i32, usize),
}

impl RawCandidate {
    /// Value tokens, including both bounds of a range, sorted.
    pub fn all_value_tokens(&self) -> Vec<usize> {
        let mut out: BTreeSet<usize> = self.value_tokens.iter().copied().collect();
        if let Some((lo, hi)) = &self.range {
            out.extend(lo.iter().chain(hi).copied());
        }
        out.into_iter().collect()
    }

    pub fn first_value_token(&self) -> usize {
        self.all_value_tokens().first().copied().unwrap_or(0)
    }

    pub fn has_unit(&self) -> bool {
        !self.unit_tokens.is_empty() || self.shared_unit_from.is_some()
    }
}

impl fmt::Display for RawCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} value={:?} range={:?} unit={:?} change={:?}",
            self.rule_name, self.value_tokens, self.range, self.unit_tokens, self.change_tokens
        )
    }
}

const CLOSURE_RELATIONS: &[&str] = &["compound", "nummod", "quantmod"];
const SIGN_TOKENS: &[&str] = &["-", "−", "minus"];

/// The value token plus the numbers and scale words tied to it ("1" and
/// "million"), and a sign token directly before.
pub fn value_closure(s: &ParsedSentence, seed: usize, lex: &Lexicons) -> Vec<usize> {
    let numeric = |i: usize| {
        let t = s.token(i);
        t.upos == "NUM" || lex.values.is_scale_word(&t.surface)
    };
    let mut seen = BTreeSet::from([seed]);
    let mut stack = vec![seed];
    while let Some(i) = stack.pop() {
        let t = s.token(i);
        let mut linked: Vec<usize> = s
            .children(i)
            .filter(|c| CLOSURE_RELATIONS.contains(&c.deprel.as_str()))
            .map(|c| c.index)
            .collect();
        if t.head != 0 && CLOSURE_RELATIONS.contains(&t.deprel.as_str()) {
            linked.push(t.head);
        }
        for j in linked {
            if numeric(j) && seen.insert(j) {
                stack.push(j);
            }
        }
    }
    let first = *seen.first().expect("seed present");
    if first > 1 && SIGN_TOKENS.contains(&s.token(first - 1).surface.to_lowercase().as_str()) {
        seen.insert(first - 1);
    }
    seen.into_iter().collect()
}

struct Scored {
    value: Vec<usize>,
    m: RuleMatch,
}

/// Runs the rulebook and merges matches into candidates: matches whose
/// value tokens overlap form one candidate, the unit comes from the
/// strongest unit-bearing match, and change tokens are pooled. Range rules
/// yield separate range candidates for [`detect_ranges`] to merge.
pub fn extract_candidates(s: &ParsedSentence, rulebook: &Rulebook, lex: &Lexicons) -> Vec<RawCandidate> {
    let matches = match_rules(s, rulebook, lex);
    let mut scalar: Vec<Scored> = Vec::new();
    let mut ranges: Vec<RawCandidate> = Vec::new();
    for m in matches {
        if let (Some(lo), Some(hi)) = (m.captures.get(&Role::BoundLower), m.captures.get(&Role::BoundUpper)) {
            let lower = value_closure(s, lo[0], lex);
            let upper = value_closure(s, hi[0], lex);
            let unit = m.captures.get(&Role::Unit).cloned().unwrap_or_default();
            ranges.push(RawCandidate {
                value_tokens: Vec::new(),
                unit_rank: (m.priority, unit.len()),
                unit_tokens: unit,
                change_tokens: m.captures.get(&Role::Change).cloned().unwrap_or_default(),
                range: Some((lower, upper)),
                rule_name: m.rule.clone(),
                rules: vec![m.rule.clone()],
                shared_unit_from: None,
                priority: m.priority,
            });
        } else if let Some(v) = m.captures.get(&Role::Value) {
            scalar.push(Scored {
                value: value_closure(s, v[0], lex),
                m,
            });
        }
    }

    // fallback rules only fire where nothing else did
    let claimed: BTreeSet<usize> = scalar
        .iter()
        .filter(|x| !x.m.fallback)
        .flat_map(|x| x.value.iter().copied())
        .collect();
    scalar.retain(|x| !x.m.fallback || x.value.iter().all(|t| !claimed.contains(t)));

    let mut candidates = group_scalar(scalar);
    candidates.extend(dedup_ranges(ranges));

    // a number serving as another candidate's unit ("parts per million")
    let unit_owned: Vec<BTreeSet<usize>> = candidates
        .iter()
        .map(|c| c.unit_tokens.iter().copied().collect())
        .collect();
    let keep: Vec<bool> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let values = c.all_value_tokens();
            !unit_owned
                .iter()
                .enumerate()
                .any(|(j, units)| i != j && values.iter().any(|v| units.contains(v)))
        })
        .collect();
    let mut candidates: Vec<RawCandidate> = candidates
        .into_iter()
        .zip(keep)
        .filter_map(|(c, k)| k.then_some(c))
        .collect();
    for c in &mut candidates {
        let values = c.all_value_tokens();
        c.unit_tokens.retain(|u| !values.contains(u));
        c.change_tokens
            .retain(|u| !values.contains(u) && !c.unit_tokens.contains(u));
    }
    sort_candidates(&mut candidates);
    candidates
}

fn sort_candidates(candidates: &mut [RawCandidate]) {
    candidates.sort_by_key(|c| (c.first_value_token(), c.range.is_some()));
}

/// Key for competing unit captures; the smallest wins (priority number,
/// then longer span, then rule name).
type UnitRank = (i32, std::cmp::Reverse<usize>, String);

fn group_scalar(scalar: Vec<Scored>) -> Vec<RawCandidate> {
    // union-find over matches sharing a value token
    let mut parent: Vec<usize> = (0..scalar.len()).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        let mut j = i;
        while parent[j] != r {
            let next = parent[j];
            parent[j] = r;
            j = next;
        }
        r
    }
    let mut owner: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, x) in scalar.iter().enumerate() {
        for &t in &x.value {
            match owner.get(&t) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
                None => {
                    owner.insert(t, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..scalar.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups
        .into_values()
        .map(|members| {
            let mut value = BTreeSet::new();
            let mut change = BTreeSet::new();
            let mut rules: Vec<(i32, String)> = Vec::new();
            let mut best_unit: Option<(UnitRank, Vec<usize>)> = None;
            for &i in &members {
                let x = &scalar[i];
                value.extend(x.value.iter().copied());
                if let Some(c) = x.m.captures.get(&Role::Change) {
                    change.extend(c.iter().copied());
                }
                rules.push((x.m.priority, x.m.rule.clone()));
                if let Some(u) = x.m.captures.get(&Role::Unit) {
                    let key = (x.m.priority, std::cmp::Reverse(u.len()), x.m.rule.clone());
                    if best_unit.as_ref().is_none_or(|(k, _)| key < *k) {
                        best_unit = Some((key, u.clone()));
                    }
                }
            }
            rules.sort();
            rules.dedup();
            let unit_rank = best_unit.as_ref().map(|(k, u)| (k.0, u.len())).unwrap_or((i32::MAX, 0));
            RawCandidate {
                value_tokens: value.into_iter().collect(),
                unit_tokens: best_unit.map(|(_, u)| u).unwrap_or_default(),
                change_tokens: change.into_iter().collect(),
                range: None,
                rule_name: rules[0].1.clone(),
                priority: rules[0].0,
                rules: rules.into_iter().map(|(_, r)| r).collect(),
                shared_unit_from: None,
                unit_rank,
            }
        })
        .collect()
}

/// Keeps the strongest of several range matches over the same bounds.
fn dedup_ranges(mut ranges: Vec<RawCandidate>) -> Vec<RawCandidate> {
    ranges.sort_by(|a, b| (a.priority, &a.rule_name).cmp(&(b.priority, &b.rule_name)));
    let mut kept: Vec<RawCandidate> = Vec::new();
    for r in ranges {
        let tokens = r.all_value_tokens();
        if let Some(k) = kept
            .iter_mut()
            .find(|k| k.all_value_tokens().iter().any(|t| tokens.contains(t)))
        {
            if !k.rules.contains(&r.rule_name) {
                k.rules.push(r.rule_name.clone());
            }
            continue;
        }
        kept.push(r);
    }
    kept
}

/// Folds scalar candidates into the range candidates whose bounds they
/// overlap. The range's own unit wins, then the upper bound's, then the
/// lower bound's.
pub fn detect_ranges(_s: &ParsedSentence, candidates: Vec<RawCandidate>) -> Vec<RawCandidate> {
    let (mut ranges, scalars): (Vec<RawCandidate>, Vec<RawCandidate>) =
        candidates.into_iter().partition(|c| c.range.is_some());
    let mut out = Vec::new();
    let mut absorbed_by: Vec<Vec<RawCandidate>> = vec![Vec::new(); ranges.len()];
    for c in scalars {
        let target = ranges.iter().position(|r| {
            let (lo, hi) = r.range.as_ref().expect("range candidate");
            c.value_tokens.iter().any(|t| lo.contains(t) || hi.contains(t))
        });
        match target {
            Some(i) => absorbed_by[i].push(c),
            None => out.push(c),
        }
    }
    for (r, absorbed) in ranges.iter_mut().zip(absorbed_by) {
        let (lo, hi) = r.range.clone().expect("range candidate");
        let mut lower: BTreeSet<usize> = lo.iter().copied().collect();
        let mut upper: BTreeSet<usize> = hi.iter().copied().collect();
        let mut upper_unit: Option<Vec<usize>> = None;
        let mut lower_unit: Option<Vec<usize>> = None;
        let mut change: BTreeSet<usize> = r.change_tokens.iter().copied().collect();
        for c in &absorbed {
            let in_upper = c.value_tokens.iter().any(|t| hi.contains(t));
            let in_lower = c.value_tokens.iter().any(|t| lo.contains(t));
            if in_upper {
                upper.extend(c.value_tokens.iter().copied());
                if !c.unit_tokens.is_empty() && upper_unit.is_none() {
                    upper_unit = Some(c.unit_tokens.clone());
                }
            }
            if in_lower {
                lower.extend(c.value_tokens.iter().copied());
                if !c.unit_tokens.is_empty() && lower_unit.is_none() {
                    lower_unit = Some(c.unit_tokens.clone());
                }
            }
            change.extend(c.change_tokens.iter().copied());
            for rule in &c.rules {
                if !r.rules.contains(rule) {
                    r.rules.push(rule.clone());
                }
            }
        }
        if r.unit_tokens.is_empty() {
            r.unit_tokens = upper_unit.or(lower_unit).unwrap_or_default();
        }
        let values: BTreeSet<usize> = lower.union(&upper).copied().collect();
        r.change_tokens = change.into_iter().filter(|t| !values.contains(t)).collect();
        r.range = Some((lower.into_iter().collect(), upper.into_iter().collect()));
    }
    out.extend(ranges);
    sort_candidates(&mut out);
    out
}

const NAME_RELATIONS: &[&str] = &["compound", "flat", "appos"];

/// Drops candidates that are names rather than quantities ("S&P 500"),
/// that fall inside masked spans, or that a rulebook filter rejects.
pub fn filter_nonquantities(
    s: &ParsedSentence,
    candidates: Vec<RawCandidate>,
    masked: &[MaskedSpan],
    rulebook: &Rulebook,
    lex: &Lexicons,
) -> Vec<RawCandidate> {
    let ctx = Context { s, lex };
    let mut filtered: BTreeSet<usize> = BTreeSet::new();
    let mut unitless_filtered: BTreeSet<usize> = BTreeSet::new();
    for f in &rulebook.filters {
        for assignment in ctx.matches(&f.pattern) {
            let target = if f.unitless_only {
                &mut unitless_filtered
            } else {
                &mut filtered
            };
            target.insert(assignment[f.drop]);
        }
    }
    candidates
        .into_iter()
        .filter(|c| {
            let values = c.all_value_tokens();
            let unitless = c.unit_tokens.is_empty();
            let name_part = unitless && values.iter().any(|&v| is_name_component(s, v));
            let in_mask = values.iter().any(|&v| token_masked(s, v, masked));
            let by_rule = values
                .iter()
                .any(|v| filtered.contains(v) || (unitless && unitless_filtered.contains(v)));
            !(name_part || in_mask || by_rule)
        })
        .collect()
}

fn is_name_component(s: &ParsedSentence, index: usize) -> bool {
    let t = s.token(index);
    if NAME_RELATIONS.contains(&t.deprel.as_str()) && t.head != 0 && s.token(t.head).upos == "PROPN" {
        return true;
    }
    s.children(index)
        .any(|c| c.upos == "PROPN" && NAME_RELATIONS.contains(&c.deprel.as_str()))
}

fn token_masked(s: &ParsedSentence, index: usize, masked: &[MaskedSpan]) -> bool {
    let (start, end) = s.token(index).char_span;
    start < end && masked.iter().any(|m| m.span.start <= start && end <= m.span.end)
}

/// The full rule stage: candidates, range merging and filtering.
pub fn find_candidates(
    s: &ParsedSentence,
    rulebook: &Rulebook,
    lex: &Lexicons,
    masked: &[MaskedSpan],
) -> Vec<RawCandidate> {
    let candidates = extract_candidates(s, rulebook, lex);
    let candidates = detect_ranges(s, candidates);
    filter_nonquantities(s, candidates, masked, rulebook, lex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::tests::sentence;
    use crate::preprocess::mask_nonquantities;

    fn lex() -> Lexicons {
        Lexicons::bundled()
    }

    fn run(s: &ParsedSentence) -> Vec<RawCandidate> {
        let masked = mask_nonquantities(&s.text);
        find_candidates(s, Rulebook::bundled(), &lex(), &masked)
    }

    #[test]
    fn default_rulebook_loads() {
        let book = Rulebook::bundled();
        for name in [
            "NOUN_NUM",
            "LONELY_NUM",
            "QUANTMOD_DIRECT_NUM",
            "NUM_NUM",
            "NOUN_NUM_ADP_RIGHT_NOUN",
            "NUM_SYMBOL",
            "NOUN_NUM_QUANT",
            "UNIT_FRAC_2",
            "RANGE_FROM_TO",
            "RANGE_BETWEEN_AND",
        ] {
            assert!(book.rule(name).is_some(), "{name}");
        }
        assert!(book.rules.len() >= 9);
        assert!(book.rule("LONELY_NUM").unwrap().fallback);
        assert!(!book.filters.is_empty());
    }

    #[test]
    fn load_errors() {
        let dup = "rule A priority 1\n node n upos=NUM\n capture value n\nend\nrule A priority 2\n node n upos=NUM\n capture value n\nend\n";
        assert_eq!(load_rulebook(dup).unwrap_err().line, 5);
        let two_values = "rule A priority 1\n node n upos=NUM\n node m upos=NUM\n capture value n m\nend\n";
        assert!(load_rulebook(two_values).is_err());
        let twice = "rule A priority 1\n node n upos=NUM\n capture value n\n capture value n\nend\n";
        assert!(load_rulebook(twice).is_err());
        let unknown = "rule A priority 1\n node n colour=NUM\n capture value n\nend\n";
        assert!(load_rulebook(unknown)
            .unwrap_err()
            .message
            .contains("unknown predicate"));
        let lexclass = "rule A priority 1\n node n lex=colour\n capture value n\nend\n";
        assert!(load_rulebook(lexclass).is_err());
        assert!(load_rulebook("rule A priority 1\n node n upos=NUM\n").is_err());
        assert!(load_rulebook("rule A priority 1\n node n upos=NUM\nend\n").is_err());
        assert!(load_rulebook("rule A priority x\nend\n").is_err());
        assert!(load_rulebook("node n upos=NUM\n").is_err());
        let half_range = "rule A priority 1\n node n upos=NUM\n capture bound_lower n\nend\n";
        assert!(load_rulebook(half_range).is_err());
        let undefined = "rule A priority 1\n node n upos=NUM\n edge n -> m\n capture value n\nend\n";
        assert!(load_rulebook(undefined).is_err());
        assert!(load_rulebook("filter F priority 1\n node n upos=NUM\nend\n").is_err());
        assert!(load_rulebook("").unwrap().rules.is_empty());
    }

    #[test]
    fn market_sentence_candidates() {
        let s = sentence(
            "In/=/ADP/6/prep Europe/=/PROPN/1/pobj ,/=/PUNCT/6/punct German/=/ADJ/5/amod DAX/=/PROPN/6/nsubj \
             fell/fall/VERB/0/ROOT 0.4/=/NUM/8/nummod pc/=/NOUN/6/dobj ,/=/PUNCT/6/punct while/=/SCONJ/15/mark \
             the/=/DET/12/det CAC40/=/PROPN/15/nsubj in/=/ADP/12/prep France/=/PROPN/13/pobj gained/gain/VERB/6/advcl \
             0.1/=/NUM/15/dobj ./=/PUNCT/6/punct",
        );
        let c = run(&s);
        assert_eq!(c.len(), 2);
        assert_eq!(
            (c[0].value_tokens.clone(), c[0].unit_tokens.clone()),
            (vec![7], vec![8])
        );
        assert!(c[0].change_tokens.contains(&6));
        assert_eq!(
            (c[1].value_tokens.clone(), c[1].unit_tokens.clone()),
            (vec![16], vec![])
        );
        assert_eq!(c[1].change_tokens, vec![15]);
    }

    #[test]
    fn lonely_num_is_suppressed_by_noun_num() {
        let s = sentence("500/=/NUM/2/nummod apples/apple/NOUN/0/ROOT");
        let c = run(&s);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].rule_name, "NOUN_NUM");
        assert!(!c[0].rules.contains(&"LONELY_NUM".to_string()));
    }

    #[test]
    fn scale_words_join_the_value() {
        let s = sentence("about/=/ADV/2/advmod 1/=/NUM/3/compound million/=/NUM/4/nummod barrels/barrel/NOUN/0/ROOT of/=/ADP/4/prep oil/=/NOUN/5/pobj");
        let c = run(&s);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].value_tokens, vec![2, 3]);
        assert_eq!(c[0].unit_tokens, vec![4, 5, 6]);
        assert_eq!(c[0].change_tokens, vec![1]);
        assert_eq!(c[0].rule_name, "NOUN_NUM_ADP_RIGHT_NOUN");
    }

    #[test]
    fn ranges_merge_units() {
        let s = sentence("from/=/ADP/0/ROOT 0/=/NUM/1/pobj to/=/ADP/1/prep 72/=/NUM/5/nummod km/h/=/NOUN/3/pobj");
        let c = run(&s);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].range, Some((vec![2], vec![4])));
        assert_eq!(c[0].unit_tokens, vec![5]);

        let s = sentence("40-60/=/NUM/2/nummod km/h/=/NOUN/0/ROOT");
        let c = run(&s);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].range, Some((vec![1], vec![1])));
        assert_eq!(c[0].unit_tokens, vec![2]);
    }

    #[test]
    fn names_and_masks_are_filtered() {
        let s = sentence("S&P/=/PROPN/2/compound 500/=/NUM/3/nsubj closed/close/VERB/0/ROOT higher/=/ADV/3/advmod");
        assert!(run(&s).is_empty());
        let s = sentence("The/=/DET/2/det iPhone/=/PROPN/4/nsubj 11/=/NUM/2/nummod has/have/VERB/0/ROOT 64/=/NUM/6/nummod GB/=/NOUN/4/dobj");
        let c = run(&s);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].value_tokens, vec![5]);
        let s = sentence("2/=/NUM/2/nummod pm/=/NOUN/0/ROOT");
        assert!(run(&s).is_empty());
        let s = sentence("500/=/NUM/2/nummod apples/apple/NOUN/0/ROOT");
        assert_eq!(run(&s).len(), 1);
    }

    #[test]
    fn unit_numbers_are_not_values() {
        let s = sentence("1200/=/NUM/2/nummod parts/part/NOUN/0/ROOT per/=/ADP/2/prep million/=/NUM/3/pobj");
        let c = run(&s);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].unit_tokens, vec![2, 3, 4]);
    }

    #[test]
    fn sign_merges_into_value() {
        let s = sentence("-/=/PUNCT/2/punct 5/=/NUM/3/nummod C/=/NOUN/0/ROOT");
        let c = run(&s);
        assert_eq!(c[0].value_tokens, vec![1, 2]);
    }

    #[test]
    fn empty_sentence_like_inputs() {
        let s = sentence("hello/=/INTJ/0/ROOT");
        assert!(run(&s).is_empty());
    }
}
