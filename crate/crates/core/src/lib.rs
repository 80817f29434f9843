//! RNNLM rescoring for lattice decoding: vocabulary and Huffman coding,
//! n-gram and recurrent language models, the context index table, the
//! request cache, the packed transfer format, a lattice decoder that
//! rescores on the fly, and the benchmark harness built on top of them.

pub mod arpa;
pub mod bench;

pub mod cache;
pub mod codec;
pub mod context_table;
pub mod decoder;
pub mod error;
pub mod huffman;
pub mod lattice;
pub mod ngram;
pub mod rnnlm;
pub mod vocab;

pub use cache::{rnnlm_prob, CacheKey, CacheStats, CacheValue, RescoreCache, RnnlmRescorer};
pub use context_table::{ContextIndex, IndexTable, MemoryReport};
pub use decoder::{nbest, rescore_onthefly, rescore_twopass, PathHypothesis, RescoreStack, TwoPassMode};
pub use error::{Error, Result};
pub use huffman::HuffmanTree;
pub use lattice::{generate_lattice, Lattice, LatticeArc, LatticeGenConfig};
pub use ngram::{NgramModel, Smoothing};
pub use rnnlm::{RnnlmConfig, RnnlmContext, RnnlmModel, TrainConfig};
pub use vocab::{Sentence, Vocabulary};
