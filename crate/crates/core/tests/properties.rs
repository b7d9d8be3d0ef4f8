mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use quantex::conllu::{read_conllu_str, write_conllu};
use quantex::model::Quantity;
use quantex::normalize::ValueLexicon;
use quantex::pipeline::Engine;
use quantex::preprocess::clean_text;
use rust_decimal::Decimal;

fn engine() -> &'static Engine {
    static E: std::sync::OnceLock<Engine> = std::sync::OnceLock::new();
    E.get_or_init(Engine::bundled)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn extraction_is_deterministic(s in common::arb_sentence()) {
        let a = engine().extract(&s).to_json(&s.text).to_string();
        let b = engine().extract(&s).to_json(&s.text).to_string();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn value_tokens_never_overlap(s in common::arb_sentence()) {
        let mut seen = BTreeSet::new();
        for q in engine().extract(&s).quantities {
            for t in q.value.token_indices {
                prop_assert!(seen.insert(t), "token {} claimed twice in {:?}", t, s.text);
            }
        }
    }

    #[test]
    fn quantities_round_trip_through_json(s in common::arb_sentence()) {
        for q in engine().extract(&s).quantities {
            let back = Quantity::from_json(&q.to_json()).unwrap();
            prop_assert_eq!(back, q);
        }
    }

    #[test]
    fn conllu_round_trips(s in common::arb_sentence()) {
        let back = read_conllu_str(&write_conllu(std::slice::from_ref(&s))).unwrap();
        prop_assert_eq!(back, vec![s]);
    }

    #[test]
    fn cleaning_is_idempotent(raw in "[ a-z0-9$%€.]{0,40}") {
        let once = clean_text(&raw).text;
        prop_assert_eq!(clean_text(&once).text, once);
    }

    #[test]
    fn canonical_values_are_fixed_points(mantissa in -10_000_000i64..10_000_000, scale in 0u32..6) {
        let d = Decimal::new(mantissa, scale).normalize();
        let text = d.to_string();
        let parsed = ValueLexicon::bundled().parse(&[text.as_str()]).unwrap();
        prop_assert_eq!(parsed, d);
        prop_assert_eq!(parsed.normalize().to_string(), text);
    }
}
