//! Corpus data model, column formats, preprocessing, dependency paths and
//! embedding loading.

mod embeddings;
mod exophora;
mod format;
mod path;
mod preprocess;
mod types;

pub use embeddings::*;
pub use exophora::{aliases_for, map_exophora_expressions, AUTHOR_EXPRESSIONS, READER_EXPRESSIONS};
pub use format::{
    parse_annotated, parse_annotated_str, parse_raw, parse_raw_str, serialize_annotated, serialize_raw,
    serialize_sentences, validate_tree,
};
pub use path::dependency_path;
pub use preprocess::{preprocess, PreprocessReport};
pub use types::*;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("sentence starting at line {line} is not a tree: {message}")]
    NotATree { line: usize, message: String },
    #[error("embedding line {line}: expected {expected} values, found {found}")]
    EmbeddingDim { line: usize, expected: usize, found: usize },
    #[error("dependency path: {0}")]
    Path(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
