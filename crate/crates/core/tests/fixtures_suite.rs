use quantex::conllu::read_conllu_str;
use quantex::evaluate::{parse_gold, EvalQuantity, GoldSentence};
use quantex::pipeline::Engine;

const CONLLU: &str = include_str!("fixtures/sentences.conllu");
const GOLD: &str = include_str!("fixtures/sentences.gold.json");

fn predicted() -> Vec<GoldSentence> {
    let engine = Engine::bundled();
    read_conllu_str(CONLLU)
        .unwrap()
        .iter()
        .map(|s| GoldSentence {
            text: s.text.clone(),
            quantities: engine.extract(s).quantities.iter().map(EvalQuantity::from).collect(),
        })
        .collect()
}

fn strip_concept(q: &EvalQuantity) -> (String, Option<String>, &'static str) {
    (q.value.to_json().to_string(), q.unit.clone(), q.change.symbol())
}

#[test]
fn every_fixture_matches_value_unit_and_change() {
    let gold = parse_gold(GOLD, "gold").unwrap();
    let pred = predicted();
    assert_eq!(gold.len(), pred.len());
    let mut failures = Vec::new();
    for (p, g) in pred.iter().zip(&gold) {
        assert_eq!(p.text, g.text);
        let ps: Vec<_> = p.quantities.iter().map(strip_concept).collect();
        let gs: Vec<_> = g.quantities.iter().map(strip_concept).collect();
        if ps != gs {
            failures.push(format!("{}\n  got  {ps:?}\n  gold {gs:?}", g.text));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

/// The keyword strategy picks the head of "of" in these two, where the
/// annotation names the subject.
const KNOWN_CONCEPT_DEVIATIONS: &[&str] = &[
    "The BMW Group is investing a total of $200 million",
    "The iPhone 11 has 64GB of storage.",
];

#[test]
fn fixture_concepts_match_except_known_deviations() {
    let gold = parse_gold(GOLD, "gold").unwrap();
    let pred = predicted();
    let mut failures = Vec::new();
    for (p, g) in pred.iter().zip(&gold) {
        let pc: Vec<_> = p.quantities.iter().map(|q| &q.concept).collect();
        let gc: Vec<_> = g.quantities.iter().map(|q| &q.concept).collect();
        if pc != gc {
            failures.push(g.text.as_str());
        }
    }
    assert_eq!(failures, KNOWN_CONCEPT_DEVIATIONS);
}
