//! CoNLL-U ingestion.
//!
//! Only the ID, FORM, LEMMA, UPOS, XPOS, HEAD and DEPREL columns are used.
//! Multiword token ranges (`3-4`) and empty nodes (`5.1`) are skipped.

use std::io::BufRead;

use thiserror::Error;

use crate::model::{AnnotatedToken, ParsedSentence};

#[derive(Debug, Error)]
pub enum ConlluError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sentence starting at line {line} ({text:?}): {message}")]
    Validation { line: usize, text: String, message: String },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

struct RawToken {
    id: usize,
    form: String,
    lemma: String,
    upos: String,
    xpos: String,
    head: usize,
    deprel: String,
    space_after: bool,
}

#[derive(Default)]
struct Block {
    start_line: usize,
    text: Option<String>,
    tokens: Vec<RawToken>,
}

/// Reads every sentence block from a CoNLL-U stream.
pub fn read_conllu<R: BufRead>(reader: R) -> Result<Vec<ParsedSentence>, ConlluError> {
    let mut sentences = Vec::new();
    let mut block = Block::default();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|e| match e.kind() {
            std::io::ErrorKind::InvalidData => ConlluError::Parse {
                line: line_no,
                message: "input is not valid UTF-8".into(),
            },
            _ => ConlluError::Io(e),
        })?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            if !block.tokens.is_empty() || block.text.is_some() {
                sentences.push(finish_block(std::mem::take(&mut block))?);
            }
            continue;
        }
        if block.tokens.is_empty() && block.text.is_none() {
            block.start_line = line_no;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(text) = comment.trim_start().strip_prefix("text") {
                if let Some(text) = text.trim_start().strip_prefix('=') {
                    block.text = Some(text.trim().to_string());
                }
            }
            continue;
        }
        if let Some(token) = parse_token_line(line, line_no)? {
            block.tokens.push(token);
        }
    }
    if !block.tokens.is_empty() || block.text.is_some() {
        sentences.push(finish_block(block)?);
    }
    Ok(sentences)
}

pub fn read_conllu_str(input: &str) -> Result<Vec<ParsedSentence>, ConlluError> {
    read_conllu(input.as_bytes())
}

fn parse_token_line(line: &str, line_no: usize) -> Result<Option<RawToken>, ConlluError> {
    let err = |message: String| ConlluError::Parse { line: line_no, message };
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != 10 {
        return Err(err(format!("expected 10 tab-separated columns, found {}", cols.len())));
    }
    let id = cols[0];
    if id.contains('-') || id.contains('.') {
        // multiword range or empty node
        let valid = id
            .split(['-', '.'])
            .all(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()));
        return if valid {
            Ok(None)
        } else {
            Err(err(format!("bad token id {id:?}")))
        };
    }
    let id: usize = id.parse().map_err(|_| err(format!("bad token id {:?}", cols[0])))?;
    let form = cols[1];
    if form.is_empty() {
        return Err(err("empty FORM".into()));
    }
    let head: usize = cols[6].parse().map_err(|_| err(format!("bad HEAD {:?}", cols[6])))?;
    let lemma = match cols[2] {
        "_" | "" if form != "_" => form.to_lowercase(),
        l => l.to_string(),
    };
    let space_after = !cols[9].split('|').any(|f| f == "SpaceAfter=No");
    Ok(Some(RawToken {
        id,
        form: form.to_string(),
        lemma,
        upos: cols[3].to_string(),
        xpos: cols[4].to_string(),
        head,
        deprel: cols[7].to_string(),
        space_after,
    }))
}

fn finish_block(block: Block) -> Result<ParsedSentence, ConlluError> {
    let line = block.start_line;
    let synthesized = block.tokens.iter().enumerate().fold(String::new(), |mut acc, (i, t)| {
        acc.push_str(&t.form);
        if t.space_after && i + 1 < block.tokens.len() {
            acc.push(' ');
        }
        acc
    });
    let text = block.text.unwrap_or(synthesized);
    let invalid = |message: String| ConlluError::Validation {
        line,
        text: text.clone(),
        message,
    };
    if block.tokens.is_empty() {
        return Err(invalid("sentence has no tokens".into()));
    }
    let n = block.tokens.len();
    for (i, t) in block.tokens.iter().enumerate() {
        if t.id != i + 1 {
            return Err(invalid(format!(
                "token ids must run 1..{n}; found {} at position {}",
                t.id,
                i + 1
            )));
        }
        if t.head > n {
            return Err(invalid(format!(
                "token {} has head {} outside the sentence",
                t.id, t.head
            )));
        }
        if t.head == t.id {
            return Err(invalid(format!("token {} is its own head", t.id)));
        }
    }
    let roots = block.tokens.iter().filter(|t| t.head == 0).count();
    if roots != 1 {
        return Err(invalid(format!("expected exactly one root, found {roots}")));
    }
    for t in &block.tokens {
        let mut current = t.head;
        let mut steps = 0;
        while current != 0 {
            steps += 1;
            if steps > n {
                return Err(invalid(format!("cyclic heads through token {}", t.id)));
            }
            current = block.tokens[current - 1].head;
        }
    }

    let spans = align_spans(&text, &block.tokens);
    let tokens = block
        .tokens
        .into_iter()
        .zip(spans)
        .map(|(t, char_span)| AnnotatedToken {
            index: t.id,
            surface: t.form,
            lemma: t.lemma,
            upos: t.upos,
            xpos: t.xpos,
            head: t.head,
            deprel: t.deprel,
            char_span,
        })
        .collect();
    Ok(ParsedSentence { text, tokens })
}

/// Locates each FORM in the sentence text, left to right. Tokens the text
/// does not contain get an empty span at the cursor.
fn align_spans(text: &str, tokens: &[RawToken]) -> Vec<(usize, usize)> {
    let mut cursor = 0;
    tokens
        .iter()
        .map(|t| match text[cursor..].find(&t.form) {
            Some(offset) => {
                let start = cursor + offset;
                cursor = start + t.form.len();
                (start, cursor)
            }
            None => (cursor, cursor),
        })
        .collect()
}

/// Renders sentences back to CoNLL-U. Columns the reader ignores are
/// written as `_`.
pub fn write_conllu(sentences: &[ParsedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str("# text = ");
        out.push_str(&s.text);
        out.push('\n');
        for (i, t) in s.tokens.iter().enumerate() {
            let glued = s
                .tokens
                .get(i + 1)
                .is_some_and(|next| next.char_span.0 == t.char_span.1 && t.char_span.1 > t.char_span.0);
            let misc = if glued { "SpaceAfter=No" } else { "_" };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t_\t{}\t{}\t_\t{}\n",
                t.index, t.surface, t.lemma, t.upos, t.xpos, t.head, t.deprel, misc
            ));
        }
        out.push('\n');
    }
    out
}

/// Space-joined XPOS tags of the given tokens, in token order.
pub fn pos_string(tokens: &[&AnnotatedToken]) -> String {
    tokens.iter().map(|t| t.xpos.as_str()).collect::<Vec<_>>().join(" ")
}
