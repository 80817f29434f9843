//! ARPA text import and export for [`NgramModel`].
//!
//! Values are written as log10 in shortest round-trip decimal form. Models
//! trained here keep their natural-log scores on values that map back to
//! themselves exactly, so a write followed by a read is bit-identical.

use std::collections::HashMap;
use std::f64::consts::LN_10;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::ngram::{NgramEntry, NgramModel};
use crate::vocab::Vocabulary;

pub fn write_arpa<W: Write>(model: &NgramModel, vocab: &Vocabulary, mut out: W) -> Result<()> {
    writeln!(out, "\\data\\")?;
    for (k, table) in model.tables().iter().enumerate() {
        writeln!(out, "ngram {}={}", k + 1, table.len())?;
    }
    for (k, table) in model.tables().iter().enumerate() {
        writeln!(out)?;
        writeln!(out, "\\{}-grams:", k + 1)?;
        let mut grams: Vec<_> = table.iter().collect();
        grams.sort_by(|a, b| a.0.cmp(b.0));
        for (gram, entry) in grams {
            let words: Vec<&str> = gram
                .iter()
                .map(|&w| {
                    vocab.word(w).ok_or(Error::WordOutOfRange {
                        id: w,
                        size: vocab.len(),
                    })
                })
                .collect::<Result<_>>()?;
            write!(out, "{}\t{}", entry.logprob / LN_10, words.join(" "))?;
            if entry.backoff != 0.0 {
                write!(out, "\t{}", entry.backoff / LN_10)?;
            }
            writeln!(out)?;
        }
    }
    writeln!(out)?;
    writeln!(out, "\\end\\")?;
    Ok(())
}

pub fn read_arpa<R: BufRead>(input: R, vocab: &Vocabulary) -> Result<NgramModel> {
    let mut declared: Vec<usize> = Vec::new();
    let mut tables: Vec<HashMap<Box<[u32]>, NgramEntry>> = Vec::new();
    let mut section: Option<usize> = None;
    let mut seen_data = false;
    let mut ended = false;

    for (n, line) in input.lines().enumerate() {
        let lineno = n + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "\\data\\" {
            seen_data = true;
            continue;
        }
        if line == "\\end\\" {
            ended = true;
            break;
        }
        if !seen_data {
            continue;
        }
        if let Some(rest) = line.strip_prefix("ngram ") {
            let (k, count) = rest
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno, "expected ngram k=count"))?;
            let k: usize = k.trim().parse().map_err(|_| Error::parse(lineno, "bad order"))?;
            let count: usize = count.trim().parse().map_err(|_| Error::parse(lineno, "bad count"))?;
            if k != declared.len() + 1 {
                return Err(Error::parse(lineno, "n-gram orders out of sequence"));
            }
            declared.push(count);
            continue;
        }
        if let Some(k) = line.strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
            let k: usize = k.parse().map_err(|_| Error::parse(lineno, "bad section header"))?;
            if k != tables.len() + 1 || k > declared.len() {
                return Err(Error::parse(lineno, "unexpected section"));
            }
            tables.push(HashMap::with_capacity(declared[k - 1]));
            section = Some(k);
            continue;
        }
        let k = section.ok_or_else(|| Error::parse(lineno, "entry outside a section"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != k + 1 && fields.len() != k + 2 {
            return Err(Error::parse(lineno, format!("expected {k}-gram entry")));
        }
        let logprob: f64 = fields[0].parse().map_err(|_| Error::parse(lineno, "bad probability"))?;
        let gram: Box<[u32]> = fields[1..=k]
            .iter()
            .map(|w| {
                vocab
                    .id(w)
                    .ok_or_else(|| Error::parse(lineno, format!("word {w:?} not in vocabulary")))
            })
            .collect::<Result<_>>()?;
        let backoff: f64 = match fields.get(k + 1) {
            Some(b) => b.parse().map_err(|_| Error::parse(lineno, "bad backoff"))?,
            None => 0.0,
        };
        tables[k - 1].insert(
            gram,
            NgramEntry {
                logprob: logprob * LN_10,
                backoff: backoff * LN_10,
            },
        );
    }
    if !ended {
        return Err(Error::Format("missing \\end\\ marker".into()));
    }
    for (k, (table, &count)) in tables.iter().zip(&declared).enumerate() {
        if table.len() != count {
            return Err(Error::Format(format!(
                "{}-gram section has {} entries, header declares {count}",
                k + 1,
                table.len()
            )));
        }
    }
    NgramModel::from_tables(declared.len(), vocab, tables)
}
