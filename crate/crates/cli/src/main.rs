//! `quantex`: extraction over CoNLL-U, scoring against gold JSON, and
//! unit disambiguator training.
//!
//! Exit codes: 0 ok, 1 input error (malformed or mismatched data, unknown
//! surface), 2 configuration error (bad flags, unreadable dictionaries or
//! models).

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use quantex::conllu::read_conllu;
use quantex::disambiguate::{
    load_examples, parse_examples, predictions, report, split_examples, Disambiguator, Example, NaiveBayes, Report,
    BUNDLED_DATA, DEFAULT_ALPHA,
};
use quantex::evaluate::{
    concept_score, format_table, parse_gold, parse_predictions, permutation_test, score, sentence_counts, ConceptMode,
    Facet, GoldSentence,
};
use quantex::normalize::load_lexicons;
use quantex::pipeline::Engine;
use quantex::rules::load_rulebook;
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "quantex", version, about = "Quantity extraction from dependency-parsed text")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract quantities from CoNLL-U; one JSON object per sentence on stdout.
    Extract(ExtractArgs),
    /// Score predictions against gold annotations.
    Evaluate(EvaluateArgs),
    /// Train or evaluate a unit disambiguation model.
    #[command(subcommand)]
    Disambig(DisambigCommand),
}

#[derive(Args)]
struct ExtractArgs {
    /// CoNLL-U file; stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory with units.json, values.json and changes.json.
    #[arg(long, env = "QUANTEX_DATA")]
    dicts: Option<PathBuf>,
    /// Directory of trained disambiguation models (*.json).
    #[arg(long)]
    models: Option<PathBuf>,
    /// Rulebook file replacing the bundled rules.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Skip concept detection.
    #[arg(long)]
    no_concepts: bool,
    /// Write per-sentence diagnostics to stderr as JSON lines.
    #[arg(long)]
    diagnostics: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Predictions: a JSON array or JSON lines (the output of `extract`).
    #[arg(long)]
    pred: PathBuf,
    /// Gold annotations: a JSON array of {"text", "quantities"}.
    #[arg(long)]
    gold: PathBuf,
    /// Comma-separated facets.
    #[arg(long, value_delimiter = ',', default_value = "value,value+unit,value+change")]
    facets: Vec<Facet>,
    /// Also score concepts in this mode.
    #[arg(long)]
    concepts: Option<ConceptMode>,
    /// Second prediction file for a paired permutation test.
    #[arg(long)]
    permutation_against: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand)]
enum DisambigCommand {
    /// Train on the 80% split (or all examples with --full) and write the model.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        surface: String,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long)]
        full: bool,
    },
    /// Per-class precision, recall and F1 on the held-out 20% (or all
    /// examples with --full).
    Eval {
        /// Examples file; the bundled examples for SURFACE when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, required_unless_present = "all")]
        surface: Option<String>,
        /// Trained model; otherwise one is trained on the 80% split.
        #[arg(long)]
        model_in: Option<PathBuf>,
        #[arg(long)]
        full: bool,
        /// Train and evaluate every bundled surface.
        #[arg(long, conflicts_with_all = ["data", "surface", "model_in"])]
        all: bool,
        #[arg(long)]
        json: bool,
    },
}

enum Failure {
    Input(anyhow::Error),
    Config(anyhow::Error),
}

trait Classify<T> {
    fn input(self) -> Result<T, Failure>;
    fn config(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn input(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Input(e.into()))
    }

    fn config(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(args) => extract(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Disambig(cmd) => disambig(cmd),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(e)) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {}", describe(&e));
            ExitCode::from(2)
        }
    }
}

/// The error chain joined with ": ", skipping causes a parent message
/// already spells out.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if out.ends_with(&text) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&text);
    }
    out
}

fn read_file(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn build_engine(args: &ExtractArgs) -> Result<Engine, Failure> {
    let mut engine = Engine::bundled().with_concepts(!args.no_concepts);
    if let Some(dir) = &args.dicts {
        engine = engine.with_lexicons(load_lexicons(dir).config()?);
    }
    if let Some(dir) = &args.models {
        let models = Disambiguator::load_dir(dir).config()?;
        engine = engine.with_disambiguator(models);
    }
    if let Some(path) = &args.rules {
        let src = read_file(path).config()?;
        engine.rulebook = load_rulebook(&src)
            .with_context(|| path.display().to_string())
            .config()?;
    }
    Ok(engine)
}

fn extract(args: ExtractArgs) -> Result<(), Failure> {
    let engine = build_engine(&args)?;
    let reader: Box<dyn BufRead> = match &args.input {
        Some(path) => Box::new(BufReader::new(
            fs::File::open(path)
                .with_context(|| format!("opening {}", path.display()))
                .input()?,
        )),
        None => Box::new(BufReader::new(io::stdin().lock())),
    };
    let context = args
        .input
        .as_ref()
        .map_or("<stdin>".to_string(), |p| p.display().to_string());
    let sentences = read_conllu(reader).with_context(|| context).input()?;

    let stdout = io::stdout();
    let mut out = io::BufWriter::new(stdout.lock());
    let mut err = io::stderr().lock();
    for (n, s) in sentences.iter().enumerate() {
        let extraction = engine.extract(s);
        writeln!(out, "{}", extraction.to_json(&s.text)).input()?;
        if args.diagnostics {
            for d in &extraction.diagnostics {
                let mut record = json!({"sentence": n + 1});
                if let (Value::Object(r), Value::Object(fields)) = (&mut record, d.to_json()) {
                    r.extend(fields);
                }
                writeln!(err, "{record}").input()?;
            }
        }
    }
    out.flush().input()
}

fn evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let load_pred = |path: &Path| -> Result<Vec<GoldSentence>, Failure> {
        parse_predictions(&read_file(path).input()?, &path.display().to_string()).input()
    };
    let gold = parse_gold(&read_file(&args.gold).input()?, &args.gold.display().to_string()).input()?;
    let pred = load_pred(&args.pred)?;
    let scores = score(&pred, &gold, &args.facets).input()?;
    let concepts = match args.concepts {
        Some(mode) => Some((mode, concept_score(&pred, &gold, mode).input()?)),
        None => None,
    };
    let mut p_values = BTreeMap::new();
    if let Some(other) = &args.permutation_against {
        let other = load_pred(other)?;
        for &facet in scores.keys() {
            let a = sentence_counts(&pred, &gold, facet).input()?;
            let b = sentence_counts(&other, &gold, facet).input()?;
            p_values.insert(facet, permutation_test(&a, &b, args.iterations, args.seed).config()?);
        }
    }

    if args.json {
        let facets: serde_json::Map<String, Value> = scores
            .iter()
            .map(|(f, s)| (f.as_str().to_string(), s.to_json()))
            .collect();
        let mut report = json!({"averaging": "micro", "facets": facets});
        if let Some((mode, s)) = &concepts {
            report["concepts"] = json!({"mode": mode_name(*mode), "score": s.to_json()});
        }
        if !p_values.is_empty() {
            let p: serde_json::Map<String, Value> = p_values
                .iter()
                .map(|(f, p)| (f.as_str().to_string(), json!(p)))
                .collect();
            report["permutation"] = json!({"iterations": args.iterations, "seed": args.seed, "p_values": p});
        }
        println!("{report}");
    } else {
        print!("{}", format_table(&scores));
        if let Some((mode, s)) = &concepts {
            println!(
                "concept ({}): P {:.3} R {:.3} F1 {:.3}",
                mode_name(*mode),
                s.precision,
                s.recall,
                s.f1
            );
        }
        for (facet, p) in &p_values {
            println!(
                "permutation p ({facet}, {} iterations, seed {}): {p:.4}",
                args.iterations, args.seed
            );
        }
    }
    Ok(())
}

fn mode_name(mode: ConceptMode) -> &'static str {
    match mode {
        ConceptMode::Strict => "strict",
        ConceptMode::Relaxed => "relaxed",
    }
}

fn bundled_examples(surface: &str) -> Result<Vec<Example>, Failure> {
    let (_, data) = BUNDLED_DATA
        .iter()
        .find(|(s, _)| *s == surface)
        .ok_or_else(|| Failure::Input(anyhow!("no bundled examples for surface {surface:?}")))?;
    parse_examples(data, surface).config()
}

fn disambig(cmd: DisambigCommand) -> Result<(), Failure> {
    match cmd {
        DisambigCommand::Train {
            data,
            surface,
            model_out,
            alpha,
            full,
        } => {
            let examples = load_examples(&data).input()?;
            let train = if full { examples } else { split_examples(&examples).0 };
            let model = NaiveBayes::train(&surface, &train, alpha).input()?;
            fs::write(&model_out, model.to_json())
                .with_context(|| format!("writing {}", model_out.display()))
                .config()?;
            eprintln!(
                "trained {surface:?} on {} examples, {} classes -> {}",
                train.len(),
                model.classes().len(),
                model_out.display()
            );
            Ok(())
        }
        DisambigCommand::Eval { all: true, json: j, .. } => {
            let mut pairs = Vec::new();
            let mut rows = Vec::new();
            for (surface, _) in BUNDLED_DATA {
                let examples = bundled_examples(surface)?;
                let (train, test) = split_examples(&examples);
                let model = NaiveBayes::train(surface, &train, DEFAULT_ALPHA).input()?;
                let p = predictions(&model, &test);
                rows.push((surface.to_string(), report(&p)));
                pairs.extend(p);
            }
            let summary = report(&pairs);
            if j {
                let per: serde_json::Map<String, Value> =
                    rows.iter().map(|(s, r)| (s.clone(), report_json(r))).collect();
                println!("{}", json!({"surfaces": per, "weighted": report_json(&summary)}));
            } else {
                println!("{:<10}{:>8}{:>9}{:>7}", "surface", "n", "acc", "F1");
                for (s, r) in &rows {
                    println!("{:<10}{:>8}{:>9.3}{:>7.3}", s, r.total, r.accuracy, r.weighted.f1);
                }
                println!(
                    "{:<10}{:>8}{:>9.3}{:>7.3}",
                    "weighted", summary.total, summary.accuracy, summary.weighted.f1
                );
            }
            Ok(())
        }
        DisambigCommand::Eval {
            data,
            surface,
            model_in,
            full,
            json: j,
            ..
        } => {
            let surface = surface.expect("clap requires --surface without --all");
            let examples = match &data {
                Some(path) => load_examples(path).input()?,
                None => bundled_examples(&surface)?,
            };
            let (train, test) = split_examples(&examples);
            let model = match &model_in {
                Some(path) => NaiveBayes::load_for(path, &surface).input()?,
                None => NaiveBayes::train(&surface, &train, DEFAULT_ALPHA).input()?,
            };
            let eval = if full { examples } else { test };
            let r = report(&predictions(&model, &eval));
            if j {
                println!("{}", report_json(&r));
            } else {
                print!("{}", report_table(&r));
            }
            Ok(())
        }
    }
}

fn report_json(r: &Report) -> Value {
    let row = |c: &quantex::disambiguate::ClassMetrics| json!({"label": c.label, "precision": c.precision, "recall": c.recall, "f1": c.f1, "support": c.support});
    json!({
        "classes": r.classes.iter().map(row).collect::<Vec<_>>(),
        "weighted": row(&r.weighted),
        "accuracy": r.accuracy,
        "correct": r.correct,
        "total": r.total,
    })
}

fn report_table(r: &Report) -> String {
    let mut out = format!("{:<22}{:>7}{:>7}{:>7}{:>9}\n", "class", "P", "R", "F1", "support");
    for c in r.classes.iter().chain(std::iter::once(&r.weighted)) {
        out.push_str(&format!(
            "{:<22}{:>7.3}{:>7.3}{:>7.3}{:>9}\n",
            c.label, c.precision, c.recall, c.f1, c.support
        ));
    }
    out.push_str(&format!("accuracy {:.3} ({}/{})\n", r.accuracy, r.correct, r.total));
    out
}
