use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("corpus contains no tokens")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("word id {id} out of range for vocabulary of size {size}")]
    WordOutOfRange { id: u32, size: usize },

    #[error("vocabulary of size {0} is too small for a Huffman tree (need at least 2)")]
    VocabularyTooSmall(usize),

    #[error("n-gram order {0} is not supported (expected 1..=5)")]
    UnsupportedOrder(usize),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },

    #[error("unknown context index {0}")]
    UnknownContext(u64),

    #[error("context table is full ({0} entries)")]
    TableFull(u64),

    #[error("{which} index {value} does not fit in {bits} bits")]
    IndexOverflow { which: &'static str, value: u64, bits: u32 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid model file: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
