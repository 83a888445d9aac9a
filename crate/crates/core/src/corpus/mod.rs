//! Annotated documents and the readers for their on-disk formats.

pub mod bracket;
pub mod conllu;
mod io;
mod types;
mod validate;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use bracket::parse_bracketed_tree;
pub use conllu::parse_conllu;
pub use io::{load_corpus, load_schema, render_corpus, write_corpus, SplitFiles, SCHEMA_FILE};
pub use types::{
    AnnotatedDocument, ConstituencyNode, DependencyParse, Entity, LabelSchema, Mention,
    RelationFact, Token, NA_LABEL,
};
pub use validate::{validate_against, validate_document, Violation, ViolationKind};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}{}: field {field}: {message}", doc_id.as_ref().map(|d| format!(" (doc {d})")).unwrap_or_default())]
    Record {
        doc_id: Option<String>,
        line: usize,
        field: String,
        message: String,
    },
    #[error("conllu sentence {sentence}, line {line}: {message}")]
    Conllu {
        sentence: usize,
        line: usize,
        message: String,
    },
    #[error("bracketed tree at byte {position}: {message}")]
    Bracket { position: usize, message: String },
    #[error("tree has {leaves} leaves but the sentence has {tokens} tokens")]
    LeafCount { leaves: usize, tokens: usize },
    #[error("leaf {position} is {leaf:?} but the token is {token:?}")]
    LeafMismatch {
        position: usize,
        leaf: String,
        token: String,
    },
    #[error("doc {doc_id}, sentence {sentence} (line {line}): {source}")]
    Tree {
        doc_id: String,
        sentence: usize,
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("doc {doc_id}: no {kind} parse for sentence {sentence}")]
    MissingParse {
        doc_id: String,
        sentence: usize,
        kind: &'static str,
    },
    #[error("{}: parse file missing (needed for doc {doc_id}, sentence {sentence})", path.display())]
    MissingParseFile {
        path: PathBuf,
        doc_id: String,
        sentence: usize,
    },
    #[error("doc {doc_id}: {found} {kind} parses for {sentences} sentences")]
    ExtraParse {
        doc_id: String,
        kind: &'static str,
        found: usize,
        sentences: usize,
    },
    #[error("doc {doc_id}: {}", violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Validation {
        doc_id: String,
        violations: Vec<Violation>,
    },
    #[error("label schema: {0}")]
    Schema(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[cfg(test)]
mod tests;
