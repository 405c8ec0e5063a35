use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::adcore::{RngStream, Tensor, EMBEDDING_INIT_STD};
use crate::scalar::Scalar;

pub const UNK: &str = "<unk>";
pub const AUTHOR: &str = "<author>";
pub const READER: &str = "<reader>";
pub const NULL_CANDIDATE: &str = "<null>";

/// Word vocabularies always start with these rows, in this order.
pub const WORD_RESERVED: [&str; 4] = [UNK, AUTHOR, READER, NULL_CANDIDATE];

/// String-to-row mapping. Reserved entries occupy the first rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
    reserved: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn with_reserved(reserved: &[&str]) -> Self {
        let mut v = Vocab {
            words: Vec::new(),
            reserved: reserved.len(),
            index: HashMap::new(),
        };
        for r in reserved {
            v.push(r);
        }
        v
    }

    /// Vocabulary with the UNK/AUTHOR/READER/NULL-candidate rows.
    pub fn words() -> Self {
        Vocab::with_reserved(&WORD_RESERVED)
    }

    /// Vocabulary with only an UNK row (POS and inflection tags).
    pub fn tags() -> Self {
        Vocab::with_reserved(&[UNK])
    }

    fn push(&mut self, w: &str) -> usize {
        let id = self.words.len();
        self.words.push(w.to_string());
        self.index.insert(w.to_string(), id);
        id
    }

    pub fn add(&mut self, w: &str) -> usize {
        match self.index.get(w) {
            Some(&i) => i,
            None => self.push(w),
        }
    }

    pub fn get(&self, w: &str) -> Option<usize> {
        self.index.get(w).copied()
    }

    /// Row for `w`, falling back to the UNK row (row 0).
    pub fn id(&self, w: &str) -> usize {
        self.get(w).unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn reserved_count(&self) -> usize {
        self.reserved
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.words.iter().enumerate().map(|(i, w)| (i, w.as_str()))
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }
}

/// Vectors read from a word-vector text file, in file order. Duplicate
/// words keep their last occurrence.
#[derive(Clone, Debug, Default)]
pub struct WordVectors {
    pub dim: usize,
    pub entries: Vec<(String, Vec<f64>)>,
    pub duplicates: Vec<String>,
}

impl WordVectors {
    pub fn lookup(&self) -> HashMap<&str, &[f64]> {
        self.entries.iter().map(|(w, v)| (w.as_str(), v.as_slice())).collect()
    }
}

/// Parses `word v1 ... vd` lines (space or tab separated). An optional
/// word2vec `count dim` header line is skipped.
pub fn parse_word_vectors(text: &str, dim: usize) -> Result<WordVectors, CorpusError> {
    let mut out = WordVectors {
        dim,
        ..Default::default()
    };
    let mut pos: HashMap<String, usize> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        if i == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        if rest.len() != dim {
            return Err(CorpusError::EmbeddingDim {
                line: lineno,
                expected: dim,
                found: rest.len(),
            });
        }
        let vals = rest
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CorpusError::Parse {
                line: lineno,
                message: format!("bad vector value: {e}"),
            })?;
        if let Some(&j) = pos.get(word) {
            log::warn!("duplicate embedding for `{word}` at line {lineno}; keeping the last one");
            out.duplicates.push(word.to_string());
            out.entries[j].1 = vals;
        } else {
            pos.insert(word.to_string(), out.entries.len());
            out.entries.push((word.to_string(), vals));
        }
    }
    Ok(out)
}

pub fn read_word_vectors(path: &Path, dim: usize) -> Result<WordVectors, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_word_vectors(&text, dim)
}

#[derive(Clone, Debug)]
pub struct EmbeddingTable<T> {
    pub vocab: Vocab,
    /// `|V| x d`.
    pub matrix: Tensor<T>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLoadReport {
    pub vocabulary_words: usize,
    pub found: usize,
    /// Share of non-reserved vocabulary words with a pre-trained vector.
    pub coverage: f64,
    pub duplicates: Vec<String>,
}

/// Fills a `|V| x d` table: rows for words present in `vectors` are
/// copied, all others (including reserved rows) drawn from `N(0, 0.01)`.
pub fn build_embedding_table<T: Scalar>(
    vectors: &WordVectors,
    vocab: Vocab,
    dim: usize,
    rng: &mut RngStream,
) -> Result<(EmbeddingTable<T>, EmbeddingLoadReport), CorpusError> {
    if !vectors.entries.is_empty() && vectors.dim != dim {
        return Err(CorpusError::EmbeddingDim {
            line: 0,
            expected: dim,
            found: vectors.dim,
        });
    }
    let lookup = vectors.lookup();
    let mut data = Vec::with_capacity(vocab.len() * dim);
    let mut found = 0;
    for (i, w) in vocab.iter() {
        match lookup.get(w) {
            Some(v) if i >= vocab.reserved_count() => {
                found += 1;
                data.extend(v.iter().map(|&x| T::c(x)));
            }
            _ => data.extend((0..dim).map(|_| T::c(rng.normal(0.0, EMBEDDING_INIT_STD)))),
        }
    }
    let words = vocab.len() - vocab.reserved_count();
    let report = EmbeddingLoadReport {
        vocabulary_words: words,
        found,
        coverage: if words == 0 { 0.0 } else { found as f64 / words as f64 },
        duplicates: vectors.duplicates.clone(),
    };
    let matrix = Tensor::matrix(vocab.len(), dim, data);
    Ok((EmbeddingTable { vocab, matrix }, report))
}

pub fn load_embeddings<T: Scalar>(
    path: &Path,
    vocab: Vocab,
    dim: usize,
    rng: &mut RngStream,
) -> Result<(EmbeddingTable<T>, EmbeddingLoadReport), CorpusError> {
    let vectors = read_word_vectors(path, dim)?;
    build_embedding_table(&vectors, vocab, dim, rng)
}
