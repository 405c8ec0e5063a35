//! Column formats.
//!
//! One token per line, tab-separated, blank line between sentences. Lines
//! starting with `#` before a sentence are comments attached to it.
//!
//! Annotated (13 columns):
//! `INDEX SURFACE POS DPOS INFL HEAD PRED NOM ACC DAT NOM_CAT ACC_CAT DAT_CAT`
//!
//! Raw: the first 7 columns. Indices are 0-based; `HEAD` is `-1` for the
//! root. Case columns hold a token index, `A` (author), `R` (reader), `N`
//! (null) or `X` (antecedent in a preceding sentence); non-predicates and
//! predicates without annotation use `_`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::types::*;
use super::CorpusError;

const ANNOTATED_COLUMNS: usize = 13;
const RAW_COLUMNS: usize = 7;

struct Block<'a> {
    /// 1-based line number of the first token line.
    first_line: usize,
    comments: Vec<String>,
    lines: Vec<(usize, &'a str)>,
}

fn blocks(text: &str) -> Vec<Block<'_>> {
    let mut out = Vec::new();
    let mut cur = Block {
        first_line: 0,
        comments: Vec::new(),
        lines: Vec::new(),
    };
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            if !cur.lines.is_empty() || !cur.comments.is_empty() {
                out.push(std::mem::replace(
                    &mut cur,
                    Block {
                        first_line: 0,
                        comments: Vec::new(),
                        lines: Vec::new(),
                    },
                ));
            }
        } else if let Some(c) = line.strip_prefix('#') {
            cur.comments.push(c.trim_start().to_string());
        } else {
            if cur.lines.is_empty() {
                cur.first_line = lineno;
            }
            cur.lines.push((lineno, line));
        }
    }
    if !cur.lines.is_empty() || !cur.comments.is_empty() {
        out.push(cur);
    }
    out
}

fn parse_err(line: usize, msg: impl Into<String>) -> CorpusError {
    CorpusError::Parse {
        line,
        message: msg.into(),
    }
}

struct TokenRow<'a> {
    lineno: usize,
    cols: Vec<&'a str>,
}

fn parse_sentence<'a>(block: &Block<'a>, min_cols: usize) -> Result<(Sentence, Vec<TokenRow<'a>>), CorpusError> {
    let mut s = Sentence {
        comments: block.comments.clone(),
        ..Default::default()
    };
    let mut rows = Vec::new();
    for (pos, &(lineno, line)) in block.lines.iter().enumerate() {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < min_cols {
            return Err(parse_err(
                lineno,
                format!("expected {min_cols} tab-separated columns, found {}", cols.len()),
            ));
        }
        let index: usize = cols[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad token index `{}`", cols[0])))?;
        if index != pos {
            return Err(parse_err(lineno, format!("token index {index} out of sequence (expected {pos})")));
        }
        if cols[1].is_empty() {
            return Err(parse_err(lineno, "empty surface"));
        }
        let head: i64 = cols[5]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad head `{}`", cols[5])))?;
        let head = match head {
            -1 => None,
            h if h >= 0 => Some(h as usize),
            h => return Err(parse_err(lineno, format!("bad head {h}"))),
        };
        let pred = match cols[6] {
            "Y" => true,
            "_" => false,
            other => return Err(parse_err(lineno, format!("PRED must be Y or _, found `{other}`"))),
        };
        s.tokens.push(Token::new(cols[1], cols[2], cols[3], cols[4]));
        s.heads.push(head);
        s.predicates.push(pred);
        rows.push(TokenRow { lineno, cols });
    }
    validate_tree(&s).map_err(|m| CorpusError::NotATree {
        line: block.first_line,
        message: m,
    })?;
    Ok((s, rows))
}

/// Checks that heads form a single-rooted acyclic tree.
pub fn validate_tree(s: &Sentence) -> Result<(), String> {
    let n = s.len();
    if n == 0 {
        return Err("empty sentence".into());
    }
    let roots = s.heads.iter().filter(|h| h.is_none()).count();
    if roots != 1 {
        return Err(format!("expected exactly one root, found {roots}"));
    }
    for (i, h) in s.heads.iter().enumerate() {
        if let Some(h) = *h {
            if h >= n {
                return Err(format!("token {i} has head {h} beyond sentence length {n}"));
            }
            if h == i {
                return Err(format!("token {i} is its own head"));
            }
        }
    }
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while let Some(h) = s.heads[cur] {
            cur = h;
            steps += 1;
            if steps > n {
                return Err(format!("head cycle reachable from token {start}"));
            }
        }
    }
    Ok(())
}

fn parse_filler(code: &str, lineno: usize) -> Result<(Filler, bool), CorpusError> {
    Ok(match code {
        "A" => (Filler::Author, false),
        "R" => (Filler::Reader, false),
        "N" => (Filler::Null, false),
        "X" => (Filler::Null, true),
        s => (
            Filler::Token(
                s.parse()
                    .map_err(|_| parse_err(lineno, format!("bad case filler `{s}`")))?,
            ),
            false,
        ),
    })
}

/// Parses annotated text, validating trees, fillers and slot categories.
pub fn parse_annotated_str(text: &str) -> Result<Corpus, CorpusError> {
    let mut corpus = Corpus::default();
    for block in blocks(text) {
        if block.lines.is_empty() {
            continue;
        }
        let (sentence, rows) = parse_sentence(&block, ANNOTATED_COLUMNS)?;
        let mut slots = BTreeMap::new();
        for (i, row) in rows.iter().enumerate() {
            if row.cols.len() != ANNOTATED_COLUMNS {
                return Err(parse_err(
                    row.lineno,
                    format!("expected {ANNOTATED_COLUMNS} columns, found {}", row.cols.len()),
                ));
            }
            let case_cols = &row.cols[7..10];
            let cat_cols = &row.cols[10..13];
            let all_blank = case_cols.iter().chain(cat_cols).all(|c| *c == "_");
            if !sentence.predicates[i] {
                if !all_blank {
                    return Err(parse_err(row.lineno, "non-predicate token carries case annotation"));
                }
                continue;
            }
            if all_blank {
                continue;
            }
            for (k, case) in CASES.iter().enumerate() {
                let (filler, inter) = parse_filler(case_cols[k], row.lineno)?;
                let category = Category::parse(cat_cols[k])
                    .ok_or_else(|| parse_err(row.lineno, format!("bad category `{}`", cat_cols[k])))?;
                if let Filler::Token(t) = filler {
                    if t >= sentence.len() {
                        return Err(parse_err(row.lineno, format!("{case} filler {t} beyond sentence length")));
                    }
                    if sentence.predicates[t] {
                        return Err(parse_err(
                            row.lineno,
                            format!("{case} filler {t} is a predicate; candidates are non-predicate tokens"),
                        ));
                    }
                }
                if !inter && !category_consistent(&sentence, i, filler, category) {
                    return Err(parse_err(
                        row.lineno,
                        format!("{case} category {category} inconsistent with filler {}", filler.code()),
                    ));
                }
                slots.insert(
                    (i, *case),
                    GoldSlot {
                        case: *case,
                        filler,
                        category,
                        inter_sentential: inter,
                        aliases: Vec::new(),
                    },
                );
            }
        }
        corpus.sentences.push(AnnotatedSentence { sentence, slots });
    }
    Ok(corpus)
}

/// Parses raw text (first seven columns; extra columns are ignored).
/// Sentences without any predicate are skipped and counted.
pub fn parse_raw_str(text: &str) -> Result<RawCorpus, CorpusError> {
    let mut corpus = RawCorpus::default();
    for block in blocks(text) {
        if block.lines.is_empty() {
            continue;
        }
        let (sentence, _) = parse_sentence(&block, RAW_COLUMNS)?;
        if sentence.has_predicate() {
            corpus.sentences.push(sentence);
        } else {
            corpus.skipped_without_predicate += 1;
        }
    }
    Ok(corpus)
}

pub fn parse_annotated(path: &Path) -> Result<Corpus, CorpusError> {
    parse_annotated_str(&read(path)?)
}

pub fn parse_raw(path: &Path) -> Result<RawCorpus, CorpusError> {
    parse_raw_str(&read(path)?)
}

fn read(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_comments(out: &mut String, s: &Sentence) {
    for c in &s.comments {
        let _ = writeln!(out, "# {c}");
    }
}

fn write_prefix(out: &mut String, s: &Sentence, i: usize) {
    let t = &s.tokens[i];
    let head = s.heads[i].map_or(-1, |h| h as i64);
    let _ = write!(
        out,
        "{i}\t{}\t{}\t{}\t{}\t{head}\t{}",
        t.surface,
        t.pos,
        t.detailed_pos,
        t.inflection,
        if s.predicates[i] { "Y" } else { "_" }
    );
}

pub fn serialize_annotated(corpus: &Corpus) -> String {
    let mut out = String::new();
    for (n, a) in corpus.sentences.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        write_comments(&mut out, &a.sentence);
        for i in 0..a.sentence.len() {
            write_prefix(&mut out, &a.sentence, i);
            let slots: Vec<Option<&GoldSlot>> = CASES.iter().map(|&c| a.slot(i, c)).collect();
            if slots.iter().all(Option::is_some) {
                for s in &slots {
                    let s = s.unwrap();
                    let code = if s.inter_sentential { "X".to_string() } else { s.filler.code() };
                    let _ = write!(out, "\t{code}");
                }
                for s in &slots {
                    let _ = write!(out, "\t{}", s.unwrap().category);
                }
            } else {
                out.push_str("\t_\t_\t_\t_\t_\t_");
            }
            out.push('\n');
        }
    }
    out
}

pub fn serialize_raw(corpus: &RawCorpus) -> String {
    serialize_sentences(corpus.sentences.iter())
}

pub fn serialize_sentences<'a>(sentences: impl Iterator<Item = &'a Sentence>) -> String {
    let mut out = String::new();
    for (n, s) in sentences.enumerate() {
        if n > 0 {
            out.push('\n');
        }
        write_comments(&mut out, s);
        for i in 0..s.len() {
            write_prefix(&mut out, s, i);
            out.push('\n');
        }
    }
    out
}
