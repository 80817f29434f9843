//! Vocabulary construction from a line-oriented, whitespace-tokenized corpus.
//!
//! Ids are dense. The three special tokens come first (`<s>`, `</s>`,
//! `<unk>`), followed by regular words in descending frequency order with
//! ties broken lexicographically.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

pub const SENTENCE_BEGIN: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
pub const UNKNOWN: &str = "<unk>";

/// A tokenized sentence without boundary markers.
pub type Sentence = Vec<u32>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, u32>,
    counts: Vec<u64>,
    unk_id: u32,
    sentence_begin_id: u32,
    sentence_end_id: u32,
}

impl Vocabulary {
    /// Counts every whitespace-separated token of `corpus`. Words seen fewer
    /// than `min_count` times are folded into `<unk>`.
    ///
    /// Boundary tokens are counted once per non-empty sentence. `<unk>`
    /// always keeps a count of at least one so it receives a Huffman code.
    pub fn build<R: BufRead>(corpus: R, min_count: u64) -> Result<Self> {
        if min_count == 0 {
            return Err(Error::InvalidArgument("min_count must be at least 1".into()));
        }
        let mut freq: HashMap<String, u64> = HashMap::new();
        let mut sentences = 0u64;
        for line in corpus.lines() {
            let line = line?;
            let mut any = false;
            for tok in line.split_whitespace() {
                *freq.entry(tok.to_string()).or_insert(0) += 1;
                any = true;
            }
            if any {
                sentences += 1;
            }
        }
        if sentences == 0 {
            return Err(Error::EmptyCorpus);
        }

        let mut folded = 0u64;
        let mut kept: Vec<(String, u64)> = Vec::new();
        for (word, count) in freq {
            let special = word == SENTENCE_BEGIN || word == SENTENCE_END || word == UNKNOWN;
            if special || count < min_count {
                folded += count;
            } else {
                kept.push((word, count));
            }
        }
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut entries = vec![
            (SENTENCE_BEGIN.to_string(), sentences),
            (SENTENCE_END.to_string(), sentences),
            (UNKNOWN.to_string(), folded.max(1)),
        ];
        entries.extend(kept);
        Self::from_entries(entries)
    }

    fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut words = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        let mut ids = HashMap::with_capacity(entries.len());
        for (i, (word, count)) in entries.into_iter().enumerate() {
            if count == 0 {
                return Err(Error::InvalidArgument(format!("word {word:?} has zero count")));
            }
            if ids.insert(word.clone(), i as u32).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate word {word:?}")));
            }
            words.push(word);
            counts.push(count);
        }
        let lookup = |w: &str| {
            ids.get(w)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("vocabulary lacks {w}")))
        };
        Ok(Vocabulary {
            unk_id: lookup(UNKNOWN)?,
            sentence_begin_id: lookup(SENTENCE_BEGIN)?,
            sentence_end_id: lookup(SENTENCE_END)?,
            words,
            counts,
            ids,
        })
    }

    /// Builds a vocabulary directly from `(word, count)` pairs in id order.
    /// The three special tokens must be among them.
    pub fn from_counts<S: Into<String>>(entries: impl IntoIterator<Item = (S, u64)>) -> Result<Self> {
        Self::from_entries(entries.into_iter().map(|(w, c)| (w.into(), c)).collect())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.ids.get(word).copied()
    }

    /// Id of `word`, or `<unk>` when it is out of vocabulary.
    pub fn id_or_unk(&self, word: &str) -> u32 {
        self.id(word).unwrap_or(self.unk_id)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn sentence_begin_id(&self) -> u32 {
        self.sentence_begin_id
    }

    pub fn sentence_end_id(&self) -> u32 {
        self.sentence_end_id
    }

    pub fn is_special(&self, id: u32) -> bool {
        id == self.unk_id || id == self.sentence_begin_id || id == self.sentence_end_id
    }

    pub fn check(&self, id: u32) -> Result<()> {
        if (id as usize) < self.words.len() {
            Ok(())
        } else {
            Err(Error::WordOutOfRange {
                id,
                size: self.words.len(),
            })
        }
    }

    pub fn tokenize(&self, line: &str) -> Sentence {
        line.split_whitespace().map(|w| self.id_or_unk(w)).collect()
    }

    /// Reads a corpus, one sentence per line. Blank lines are skipped.
    pub fn read_corpus<R: BufRead>(&self, corpus: R) -> Result<Vec<Sentence>> {
        let mut out = Vec::new();
        for line in corpus.lines() {
            let s = self.tokenize(&line?);
            if !s.is_empty() {
                out.push(s);
            }
        }
        Ok(out)
    }

    pub fn render(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.word(i).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Writes `word<TAB>count` lines; line order is id order.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for (w, c) in self.words.iter().zip(&self.counts) {
            writeln!(out, "{w}\t{c}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (w, c) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(n + 1, "expected word<TAB>count"))?;
            let c: u64 = c
                .trim()
                .parse()
                .map_err(|_| Error::parse(n + 1, format!("bad count {c:?}")))?;
            entries.push((w.to_string(), c));
        }
        Self::from_entries(entries)
    }
}
