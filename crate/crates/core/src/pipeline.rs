//! End-to-end extraction over one parsed sentence.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use crate::concepts::{detect_concept, Stopwords, Strategy};
use crate::disambiguate::Disambiguator;
use crate::model::{ParsedSentence, Quantity, Unit, UnitKind};
use crate::normalize::Lexicons;
use crate::preprocess::{MaskReason, NonQuantityPatterns};
use crate::rules::{detect_ranges, extract_candidates, filter_nonquantities, RawCandidate, Rulebook};
use crate::shared_units::{propagate_units, Connectors};

/// Side-channel records explaining how the quantities came about.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostic {
    Masked {
        start: usize,
        end: usize,
        reason: MaskReason,
    },
    Filtered {
        value_tokens: Vec<usize>,
        rule: String,
    },
    Dropped {
        value_tokens: Vec<usize>,
        reason: String,
    },
    Provenance {
        value_tokens: Vec<usize>,
        rules: Vec<String>,
        concept_strategy: Option<Strategy>,
    },
    SharedUnit {
        value_tokens: Vec<usize>,
        donor_unit_tokens: Vec<usize>,
        ratio: f64,
    },
    Disambiguated {
        surface: String,
        unit: String,
        score: f64,
    },
}

impl Diagnostic {
    pub fn to_json(&self) -> Value {
        match self {
            Diagnostic::Masked { start, end, reason } => {
                json!({"kind": "masked", "span": [start, end], "reason": reason.as_str()})
            }
            Diagnostic::Filtered { value_tokens, rule } => {
                json!({"kind": "filtered", "value_tokens": value_tokens, "rule": rule})
            }
            Diagnostic::Dropped { value_tokens, reason } => {
                json!({"kind": "dropped", "value_tokens": value_tokens, "reason": reason})
            }
            Diagnostic::Provenance {
                value_tokens,
                rules,
                concept_strategy,
            } => json!({
                "kind": "provenance",
                "value_tokens": value_tokens,
                "rules": rules,
                "concept_strategy": concept_strategy.map(|s| s as u8),
            }),
            Diagnostic::SharedUnit {
                value_tokens,
                donor_unit_tokens,
                ratio,
            } => json!({
                "kind": "shared_unit",
                "value_tokens": value_tokens,
                "donor_unit_tokens": donor_unit_tokens,
                "ratio": ratio,
            }),
            Diagnostic::Disambiguated { surface, unit, score } => {
                json!({"kind": "disambiguated", "surface": surface, "unit": unit, "score": score})
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub quantities: Vec<Quantity>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Extraction {
    /// `{"text", "quantities"}` for one sentence.
    pub fn to_json(&self, text: &str) -> Value {
        json!({
            "text": text,
            "quantities": self.quantities.iter().map(Quantity::to_json).collect::<Vec<_>>(),
        })
    }
}

/// Immutable extraction configuration; share it across threads freely.
#[derive(Debug, Clone)]
pub struct Engine {
    pub lexicons: Lexicons,
    pub rulebook: Rulebook,
    pub patterns: NonQuantityPatterns,
    pub connectors: Connectors,
    pub stopwords: Stopwords,
    pub disambiguator: Disambiguator,
    pub concepts: bool,
}

impl Default for Engine {
    fn default() -> Self {
        Engine::bundled()
    }
}

impl Engine {
    /// Bundled lexicons, rules and data, with models trained in memory.
    pub fn bundled() -> Self {
        Engine {
            lexicons: Lexicons::bundled(),
            rulebook: Rulebook::bundled().clone(),
            patterns: NonQuantityPatterns::default(),
            connectors: Connectors::default(),
            stopwords: Stopwords::default(),
            disambiguator: Disambiguator::bundled().clone(),
            concepts: true,
        }
    }

    pub fn with_lexicons(mut self, lexicons: Lexicons) -> Self {
        self.lexicons = lexicons;
        self
    }

    pub fn with_disambiguator(mut self, disambiguator: Disambiguator) -> Self {
        self.disambiguator = disambiguator;
        self
    }

    pub fn with_concepts(mut self, enabled: bool) -> Self {
        self.concepts = enabled;
        self
    }

    pub fn extract(&self, s: &ParsedSentence) -> Extraction {
        let mut diagnostics = Vec::new();
        let masked = self.patterns.mask(&s.text);
        diagnostics.extend(masked.iter().map(|m| Diagnostic::Masked {
            start: m.span.start,
            end: m.span.end,
            reason: m.reason,
        }));

        let found = detect_ranges(s, extract_candidates(s, &self.rulebook, &self.lexicons));
        let kept = filter_nonquantities(s, found.clone(), &masked, &self.rulebook, &self.lexicons);
        for c in found.iter().filter(|c| !kept.contains(c)) {
            diagnostics.push(Diagnostic::Filtered {
                value_tokens: c.all_value_tokens(),
                rule: c.rule_name.clone(),
            });
        }
        let mut candidates = kept;
        for shared in propagate_units(s, &mut candidates, &self.connectors) {
            diagnostics.push(Diagnostic::SharedUnit {
                value_tokens: candidates[shared.recipient].all_value_tokens(),
                donor_unit_tokens: candidates[shared.donor].unit_tokens.clone(),
                ratio: shared.ratio,
            });
        }

        let mut built: Vec<(RawCandidate, Quantity)> = Vec::new();
        for c in candidates {
            let range = c.range.as_ref().map(|(lo, hi)| (lo.as_slice(), hi.as_slice()));
            let value = match self.lexicons.values.standardize_value(s, &c.value_tokens, range) {
                Ok(v) => v,
                Err(e) => {
                    diagnostics.push(Diagnostic::Dropped {
                        value_tokens: c.all_value_tokens(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            };
            let unit = self.unit_for(s, &c, &value.token_indices, &mut diagnostics);
            let mut c = c;
            if !unit.derived {
                c.unit_tokens = unit.token_indices.clone();
            }
            let taken: BTreeSet<usize> = value.token_indices.iter().chain(&unit.token_indices).copied().collect();
            c.change_tokens.retain(|t| !taken.contains(t));
            let change = self
                .lexicons
                .changes
                .normalize_change(s, &c.change_tokens, &value.token_indices);
            built.push((
                c,
                Quantity {
                    value,
                    unit,
                    change,
                    concept: Default::default(),
                },
            ));
        }

        let claimed: BTreeSet<usize> = built
            .iter()
            .flat_map(|(_, q)| q.value.token_indices.iter().chain(&q.unit.token_indices).copied())
            .collect();
        let mut quantities = Vec::with_capacity(built.len());
        for (c, mut q) in built {
            let strategy = if self.concepts {
                let found = detect_concept(s, &c, &claimed, &self.stopwords);
                q.concept = found.concept;
                found.strategy
            } else {
                None
            };
            if let Err(e) = q.validate() {
                diagnostics.push(Diagnostic::Dropped {
                    value_tokens: q.value.token_indices.clone(),
                    reason: e.to_string(),
                });
                continue;
            }
            diagnostics.push(Diagnostic::Provenance {
                value_tokens: q.value.token_indices.clone(),
                rules: c.rules.clone(),
                concept_strategy: strategy,
            });
            quantities.push(q);
        }
        quantities.sort_by_key(|q| q.value.token_indices.first().copied().unwrap_or(0));
        Extraction {
            quantities,
            diagnostics,
        }
    }

    fn unit_for(
        &self,
        s: &ParsedSentence,
        c: &RawCandidate,
        value_tokens: &[usize],
        diagnostics: &mut Vec<Diagnostic>,
    ) -> Unit {
        let units = &self.lexicons.units;
        let (tokens, derived) = match &c.shared_unit_from {
            Some(donor) if c.unit_tokens.is_empty() => (donor.clone(), true),
            _ => (c.unit_tokens.clone(), false),
        };
        let mut unit = units.normalize_unit(s, &tokens);
        if !derived {
            // modifiers pulled into a noun unit must not swallow the value
            unit.token_indices.retain(|t| !value_tokens.contains(t));
        }
        if unit.ambiguous && unit.parts.is_empty() {
            let lemma = tokens
                .iter()
                .map(|&i| s.token(i).lemma.to_lowercase())
                .collect::<Vec<_>>()
                .join(" ");
            let mut readings = units.lookup(&unit.surface);
            if readings.is_empty() {
                readings = units.lookup(&lemma);
            }
            if let Some(p) = self.disambiguator.resolve(&s.text, &unit.surface, &lemma, &readings) {
                if let Some(entry) = units.entry(&p.unit) {
                    unit.normalized = entry.name.clone();
                    unit.kind = entry.kind;
                }
                diagnostics.push(Diagnostic::Disambiguated {
                    surface: unit.surface.clone(),
                    unit: p.unit,
                    score: p.score,
                });
            }
        }
        if derived {
            unit.token_indices.clear();
            unit.derived = unit.kind != UnitKind::None;
        }
        unit
    }
}
