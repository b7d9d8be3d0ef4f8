use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn core(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core").join(rel)
}

fn fixture(name: &str) -> PathBuf {
    core("tests/fixtures").join(name)
}

fn quantex(args: &[&str], stdin: &[u8]) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_quantex"))
        .args(args)
        .env_remove("QUANTEX_DATA")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn first_block() -> String {
    let all = std::fs::read_to_string(fixture("sentences.conllu")).unwrap();
    all.split("\n\n").next().unwrap().to_string() + "\n\n"
}

#[test]
fn market_sentence_gives_one_line_with_two_quantities() {
    let o = quantex(&["extract"], first_block().as_bytes());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 1);
    let v: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["quantities"].as_array().unwrap().len(), 2);
    assert_eq!(v["quantities"][1]["detail"]["unit"]["derived"], Value::Bool(true));
}

#[test]
fn empty_input_prints_nothing() {
    let o = quantex(&["extract"], b"");
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
}

#[test]
fn garbage_bytes_are_an_input_error() {
    let o = quantex(&["extract"], b"\xff\xfe\x00\x01garbage");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_rows_report_their_line() {
    let o = quantex(
        &["extract"],
        b"# text = a b\n1\ta\ta\tNOUN\tNN\t_\t0\tROOT\t_\t_\n2\tb\n\n",
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn diagnostics_go_to_stderr_only() {
    let plain = quantex(&["extract"], first_block().as_bytes());
    let o = quantex(&["extract", "--diagnostics"], first_block().as_bytes());
    assert_eq!(stdout(&o), stdout(&plain));
    let kinds: Vec<String> = stderr(&o)
        .lines()
        .map(|l| {
            serde_json::from_str::<Value>(l).unwrap()["kind"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    assert!(kinds.iter().any(|k| k == "shared_unit"), "{kinds:?}");
}

#[test]
fn missing_dictionaries_are_a_configuration_error() {
    let o = quantex(&["extract", "--dicts", "/nonexistent/quantex"], b"");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dictionary_directory_comes_from_the_environment() {
    let run = |dir: &Path| {
        let mut child = Command::new(env!("CARGO_BIN_EXE_quantex"))
            .arg("extract")
            .env("QUANTEX_DATA", dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        child.stdin.take().unwrap().write_all(first_block().as_bytes()).unwrap();
        child.wait_with_output().unwrap()
    };
    let good = run(&core("data/lexicons"));
    assert_eq!(good.status.code(), Some(0), "{}", stderr(&good));
    assert_eq!(stdout(&good), stdout(&quantex(&["extract"], first_block().as_bytes())));
    let bad = run(Path::new("/nonexistent/quantex"));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn extraction_is_deterministic() {
    let input = std::fs::read(fixture("sentences.conllu")).unwrap();
    let a = quantex(&["extract"], &input);
    let b = quantex(&["extract"], &input);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(stdout(&a).lines().count(), 33);
}

#[test]
fn gold_against_itself_scores_one() {
    let gold = fixture("sentences.gold.json");
    let g = gold.to_str().unwrap();
    let o = quantex(
        &[
            "evaluate",
            "--pred",
            g,
            "--gold",
            g,
            "--permutation-against",
            g,
            "--json",
        ],
        b"",
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    for facet in ["value", "value+unit", "value+change"] {
        assert_eq!(v["facets"][facet]["f1"].as_f64(), Some(1.0));
        assert_eq!(v["permutation"]["p_values"][facet].as_f64(), Some(1.0));
    }
}

#[test]
fn extractor_output_scores_against_gold() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.jsonl");
    let input = std::fs::read(fixture("sentences.conllu")).unwrap();
    std::fs::write(&pred, quantex(&["extract"], &input).stdout).unwrap();
    let gold = fixture("sentences.gold.json");
    let o = quantex(
        &[
            "evaluate",
            "--pred",
            pred.to_str().unwrap(),
            "--gold",
            gold.to_str().unwrap(),
            "--facets",
            "value+unit",
        ],
        b"",
    );
    assert_eq!(o.status.code(), Some(0));
    let table = stdout(&o);
    assert!(table.contains("value+unit"));
    assert!(!table.contains("value+change"));
    assert!(table.lines().nth(1).unwrap().trim_end().ends_with("1.000"), "{table}");
}

#[test]
fn mixed_fixture_counts() {
    let o = quantex(
        &[
            "evaluate",
            "--pred",
            fixture("mixed.pred.jsonl").to_str().unwrap(),
            "--gold",
            fixture("mixed.gold.json").to_str().unwrap(),
            "--json",
        ],
        b"",
    );
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["facets"]["value"]["matches"].as_u64(), Some(8));
    assert_eq!(v["facets"]["value+unit"]["matches"].as_u64(), Some(6));
    assert_eq!(v["facets"]["value+change"]["matches"].as_u64(), Some(7));
    assert_eq!(v["facets"]["value"]["predicted"].as_u64(), Some(11));
    assert_eq!(v["facets"]["value"]["gold"].as_u64(), Some(12));
}

#[test]
fn mismatched_sentence_counts_exit_one() {
    let o = quantex(
        &[
            "evaluate",
            "--pred",
            fixture("mixed.pred.jsonl").to_str().unwrap(),
            "--gold",
            fixture("sentences.gold.json").to_str().unwrap(),
        ],
        b"",
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("10 predicted sentences but 33 gold"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn schema_violations_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"[{"text": "x", "quantities": [{"unit": "kg"}]}]"#).unwrap();
    let b = bad.to_str().unwrap();
    let o = quantex(&["evaluate", "--pred", b, "--gold", b], b"");
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("value"), "{}", stderr(&o));
}

#[test]
fn pound_model_trains_and_evaluates_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("pound.model.json");
    let data = core("data/disambiguation/pound.json");
    let o = quantex(
        &[
            "disambig",
            "train",
            "--data",
            data.to_str().unwrap(),
            "--surface",
            "pound",
            "--model-out",
            model.to_str().unwrap(),
        ],
        b"",
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let o = quantex(
        &[
            "disambig",
            "eval",
            "--data",
            data.to_str().unwrap(),
            "--surface",
            "pound",
            "--model-in",
            model.to_str().unwrap(),
            "--json",
        ],
        b"",
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["classes"].as_array().unwrap().len(), 2);
    assert_eq!(v["total"].as_u64(), Some(6));

    // The pound model refuses another surface.
    let o = quantex(
        &[
            "disambig",
            "eval",
            "--surface",
            "kt",
            "--model-in",
            model.to_str().unwrap(),
        ],
        b"",
    );
    assert_eq!(o.status.code(), Some(1));

    // A model directory feeds extraction.
    let o = quantex(
        &["extract", "--models", dir.path().to_str().unwrap()],
        first_block().as_bytes(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn untrained_surface_exits_one() {
    let o = quantex(&["disambig", "eval", "--surface", "furlong"], b"");
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn all_surfaces_end_with_a_weighted_row() {
    let o = quantex(&["disambig", "eval", "--all"], b"");
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1 + 18 + 1);
    assert!(text.lines().last().unwrap().starts_with("weighted"));
}

#[test]
fn bad_flags_exit_two() {
    let o = quantex(&["evaluate", "--pred", "x", "--gold", "y", "--facets", "colour"], b"");
    assert_eq!(o.status.code(), Some(2));
}
