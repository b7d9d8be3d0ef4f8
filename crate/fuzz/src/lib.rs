//! Target bodies, shared by the libFuzzer binaries and the seed replay test.

use std::sync::OnceLock;

use quantex::conllu::{read_conllu, read_conllu_str, write_conllu};
use quantex::disambiguate::{parse_examples, NaiveBayes};
use quantex::evaluate::{parse_gold, parse_predictions, score, EvalError, Facet};
use quantex::model::{Magnitude, Quantity};
use quantex::normalize::{ChangeLexicon, UnitDictionary, ValueLexicon};
use quantex::pipeline::Engine;
use quantex::preprocess::{clean_text, mask_nonquantities, protect_tokens, NonQuantityPatterns};
use quantex::rules::load_rulebook;

fn engine() -> &'static Engine {
    static E: OnceLock<Engine> = OnceLock::new();
    E.get_or_init(Engine::bundled)
}

pub fn conllu(data: &[u8]) {
    if let Ok(sentences) = read_conllu(data) {
        let again = read_conllu_str(&write_conllu(&sentences)).expect("written CoNLL-U reads back");
        assert_eq!(again.len(), sentences.len());
    }
}

pub fn extract(data: &[u8]) {
    if let Ok(sentences) = read_conllu(data) {
        for s in sentences.iter().take(8) {
            let out = engine().extract(s);
            for q in &out.quantities {
                assert_eq!(Quantity::from_json(&q.to_json()).as_ref().ok(), Some(q));
            }
        }
    }
}

pub fn rulebook(data: &[u8]) {
    if let Ok(src) = std::str::from_utf8(data) {
        let _ = load_rulebook(src);
    }
}

pub fn lexicons(data: &[u8]) {
    let Some((&which, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    match which % 3 {
        0 => drop(UnitDictionary::from_json(text, "units.json")),
        1 => {
            if let Ok(lex) = ValueLexicon::from_json(text, "values.json") {
                let _ = lex.parse(&["two", "million"]);
            }
        }
        _ => drop(ChangeLexicon::from_json(text, "changes.json")),
    }
}

pub fn disambig_model(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = NaiveBayes::from_json(text) {
        let _ = model.predict("she weighs fifty");
        let back = NaiveBayes::from_json(&model.to_json()).expect("serialized model reloads");
        assert_eq!(back.classes(), model.classes());
    }
    if let Ok(examples) = parse_examples(text, "fuzz") {
        let _ = NaiveBayes::train("x", &examples, 1.0);
    }
}

pub fn eval_json(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let gold = parse_gold(text, "gold");
    let pred = parse_predictions(text, "pred");
    if let (Ok(g), Ok(p)) = (gold, pred) {
        match score(&p, &g, &Facet::ALL) {
            Ok(s) => {
                for v in s.values() {
                    assert!(v.f1 == 1.0 || v.counts.gold == 0);
                }
            }
            Err(e) => assert!(matches!(e, EvalError::EmptyGold), "{e}"),
        }
    }
}

pub fn preprocess(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let cleaned = clean_text(text);
    assert_eq!(cleaned.offset_map.len(), cleaned.text.len() + 1);
    let _ = cleaned.to_original(0..cleaned.text.len());
    let _ = mask_nonquantities(text);
    let _ = protect_tokens(text);
    if let Ok(patterns) = text.parse::<NonQuantityPatterns>() {
        let _ = patterns.mask("on 12/05/2020 at 2 pm");
    }
}

pub fn value_parse(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let surfaces: Vec<&str> = text.split_whitespace().take(16).collect();
    let _ = ValueLexicon::bundled().parse(&surfaces);
}

pub fn quantity_json(data: &[u8]) {
    let Ok(value) = serde_json::from_slice::<serde_json::Value>(data) else {
        return;
    };
    if let Ok(q) = Quantity::from_json(&value) {
        assert_eq!(Quantity::from_json(&q.to_json()).ok(), Some(q));
    }
    if let Ok(m) = Magnitude::from_json(&value) {
        assert_eq!(Magnitude::from_json(&m.to_json()).ok(), Some(m));
    }
}

#[cfg(test)]
mod tests {
    use std::fs;
    use std::path::Path;

    fn replay(target: &str, f: fn(&[u8])) {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(target);
        let mut n = 0;
        for entry in fs::read_dir(&dir).unwrap() {
            f(&fs::read(entry.unwrap().path()).unwrap());
            n += 1;
        }
        assert!(n > 0, "no seeds in {}", dir.display());
    }

    #[test]
    fn seeds_replay_cleanly() {
        replay("conllu", super::conllu);
        replay("extract", super::extract);
        replay("rulebook", super::rulebook);
        replay("lexicons", super::lexicons);
        replay("disambig_model", super::disambig_model);
        replay("eval_json", super::eval_json);
        replay("preprocess", super::preprocess);
        replay("value_parse", super::value_parse);
        replay("quantity_json", super::quantity_json);
    }
}
