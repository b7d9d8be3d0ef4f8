#![allow(dead_code)]

use proptest::prelude::*;
use quantex::conllu::read_conllu_str;
use quantex::model::ParsedSentence;

const VOCAB: &[(&str, &str, &str, &str)] = &[
    ("2", "2", "NUM", "CD"),
    ("50", "50", "NUM", "CD"),
    ("0.4", "0.4", "NUM", "CD"),
    ("1k", "1k", "NUM", "CD"),
    ("40-60", "40-60", "NUM", "CD"),
    ("two", "two", "NUM", "CD"),
    ("million", "million", "NUM", "CD"),
    ("km", "km", "NOUN", "NN"),
    ("kg", "kg", "NOUN", "NN"),
    ("%", "%", "NOUN", "NN"),
    ("$", "$", "SYM", "$"),
    ("euros", "euro", "NOUN", "NNS"),
    ("pounds", "pound", "NOUN", "NNS"),
    ("C", "C", "NOUN", "NN"),
    ("seconds", "second", "NOUN", "NNS"),
    ("month", "month", "NOUN", "NN"),
    ("car", "car", "NOUN", "NN"),
    ("people", "people", "NOUN", "NNS"),
    ("DAX", "DAX", "PROPN", "NNP"),
    ("iPhone", "iPhone", "PROPN", "NNP"),
    ("fell", "fall", "VERB", "VBD"),
    ("gained", "gain", "VERB", "VBD"),
    ("weighs", "weigh", "VERB", "VBZ"),
    ("is", "be", "AUX", "VBZ"),
    ("of", "of", "ADP", "IN"),
    ("from", "from", "ADP", "IN"),
    ("to", "to", "ADP", "IN"),
    ("per", "per", "ADP", "IN"),
    ("at", "at", "ADP", "IN"),
    ("than", "than", "ADP", "IN"),
    ("and", "and", "CCONJ", "CC"),
    ("more", "more", "ADJ", "JJR"),
    ("about", "about", "ADV", "RB"),
    ("which", "which", "PRON", "WDT"),
    ("the", "the", "DET", "DT"),
    (",", ",", "PUNCT", ","),
];

const DEPRELS: &[&str] = &[
    "nummod", "compound", "dobj", "nsubj", "pobj", "prep", "amod", "advmod", "quantmod", "conj", "cc", "punct",
    "npadvmod", "nmod", "relcl", "attr", "appos", "det",
];

/// Renders a sentence from vocabulary picks and a random tree: `attach[k]`
/// selects the head of the k-th token in `order` among the tokens placed
/// before it.
fn render(words: &[usize], order: &[usize], attach: &[usize], rels: &[usize]) -> String {
    let n = words.len();
    let mut head = vec![0usize; n];
    for k in 1..n {
        head[order[k]] = order[attach[k] % k] + 1;
    }
    let forms: Vec<&str> = words.iter().map(|&w| VOCAB[w].0).collect();
    let mut out = format!("# text = {}\n", forms.join(" "));
    for i in 0..n {
        let (form, lemma, upos, xpos) = VOCAB[words[i]];
        let rel = if head[i] == 0 {
            "ROOT"
        } else if upos == "PUNCT" {
            "punct"
        } else {
            DEPRELS[rels[i] % DEPRELS.len()]
        };
        out.push_str(&format!(
            "{}\t{form}\t{lemma}\t{upos}\t{xpos}\t_\t{}\t{rel}\t_\t_\n",
            i + 1,
            head[i]
        ));
    }
    out.push('\n');
    out
}

pub fn arb_sentence() -> impl Strategy<Value = ParsedSentence> {
    (1usize..14)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0..VOCAB.len(), n),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
                prop::collection::vec(0usize..64, n),
                prop::collection::vec(0usize..64, n),
            )
        })
        .prop_map(|(words, order, attach, rels)| {
            let src = render(&words, &order, &attach, &rels);
            read_conllu_str(&src)
                .expect("generated CoNLL-U is well formed")
                .remove(0)
        })
}
