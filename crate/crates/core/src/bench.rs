//! Benchmark harness: cache capacity sweeps, transfer accounting and the
//! one-pass/two-pass comparison, all recorded as raw per-utterance ledgers
//! from which every table is derived.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::cache::{RescoreCache, RnnlmRescorer, ENTRY_BYTES};
use crate::codec::DEFAULT_RNN_BITS;
use crate::decoder::{
    edit_distance, nbest, rescore_hypothesis, rescore_onthefly, rescore_twopass, PathHypothesis, RescoreStack,
    TwoPassMode,
};
use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::lattice::Lattice;
use crate::ngram::NgramModel;
use crate::rnnlm::RnnlmModel;

pub const KB: u64 = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub reference: Vec<u32>,
    pub lattice: Lattice,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchModels<'a> {
    pub rnnlm: &'a RnnlmModel,
    pub tree: &'a HuffmanTree,
    /// The LM interpolated with the RNNLM in hybrid two-pass rescoring.
    pub ngram: &'a NgramModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub capacities_kb: Vec<u64>,
    pub beam: usize,
    pub nbest_n: usize,
    pub lm_weight: f64,
    pub interp_weight: f64,
    pub rnn_bits: u32,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            capacities_kb: vec![0, 250, 500, 750, 1000],
            beam: 10,
            nbest_n: 10,
            lm_weight: 1.0,
            interp_weight: 0.5,
            rnn_bits: DEFAULT_RNN_BITS,
        }
    }
}

/// One utterance of one cache configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheLedgerRow {
    /// Zero means no bound.
    pub capacity_kb: u64,
    pub retain: bool,
    pub utterance: String,
    pub lookups: u64,
    pub hits: u64,
    pub computations: u64,
    pub evictions: u64,
    /// Resident entries when the utterance finished.
    pub entries: u64,
    pub requests: u64,
    pub bytes_indexed: u64,
    pub bytes_baseline: u64,
    pub table_entries: u64,
    pub table_bytes: u64,
    /// Best on-the-fly path, space-separated word ids.
    pub best: String,
}

pub const CACHE_LEDGER_HEADER: &str = "capacity_kb\tretain\tutterance\tlookups\thits\tcomputations\tevictions\tentries\trequests\tbytes_indexed\tbytes_baseline\ttable_entries\ttable_bytes\tbest";

impl CacheLedgerRow {
    fn fields(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.capacity_kb,
            u8::from(self.retain),
            self.utterance,
            self.lookups,
            self.hits,
            self.computations,
            self.evictions,
            self.entries,
            self.requests,
            self.bytes_indexed,
            self.bytes_baseline,
            self.table_entries,
            self.table_bytes,
            self.best
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 14 {
            return Err(Error::parse(lineno, format!("expected 14 fields, found {}", f.len())));
        }
        let num = |i: usize| -> Result<u64> {
            f[i].parse()
                .map_err(|_| Error::parse(lineno, format!("bad number {:?}", f[i])))
        };
        Ok(CacheLedgerRow {
            capacity_kb: num(0)?,
            retain: num(1)? != 0,
            utterance: f[2].to_string(),
            lookups: num(3)?,
            hits: num(4)?,
            computations: num(5)?,
            evictions: num(6)?,
            entries: num(7)?,
            requests: num(8)?,
            bytes_indexed: num(9)?,
            bytes_baseline: num(10)?,
            table_entries: num(11)?,
            table_bytes: num(12)?,
            best: f[13].to_string(),
        })
    }

    pub fn hit_ratio(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.hits as f64 / self.lookups as f64
        }
    }
}

fn words_field(words: &[u32]) -> String {
    words.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}

/// Decodes every utterance on the fly with one cache configuration.
/// `capacity_kb == 0` removes the bound; `retain` keeps cache and context
/// table across utterances.
pub fn run_cache_config(
    models: BenchModels<'_>,
    utterances: &[Utterance],
    config: &BenchConfig,
    capacity_kb: u64,
    retain: bool,
) -> Result<Vec<CacheLedgerRow>> {
    if utterances.is_empty() {
        return Err(Error::InvalidArgument("no utterances to decode".into()));
    }
    let mut cache = RescoreCache::new();
    cache.set_capacity(capacity_kb * KB);
    let mut stack = RescoreStack::new(RnnlmRescorer::new(models.rnnlm, models.tree, cache), config.rnn_bits);
    let mut rows = Vec::with_capacity(utterances.len());
    for u in utterances {
        let r = rescore_onthefly(&u.lattice, &mut stack, config.lm_weight, config.beam)?;
        let table = stack.rescorer.table.memory_report();
        rows.push(CacheLedgerRow {
            capacity_kb,
            retain,
            utterance: u.id.clone(),
            lookups: r.cache.lookups,
            hits: r.cache.hits,
            computations: r.cache.computations,
            evictions: r.cache.evictions,
            entries: stack.rescorer.cache.len() as u64,
            requests: r.ledger.requests,
            bytes_indexed: r.ledger.bytes_indexed,
            bytes_baseline: r.ledger.bytes_full_baseline,
            table_entries: table.element_count,
            table_bytes: table.total_bytes,
            best: words_field(&r.best.words),
        });
        stack.reset_utterance(retain);
    }
    Ok(rows)
}

/// The capacity sweep: capacity 0 resets cache and table per utterance,
/// every other capacity retains both under that bound. An unbounded
/// retained run is appended as the reference for retention.
pub fn run_sweep(
    models: BenchModels<'_>,
    utterances: &[Utterance],
    config: &BenchConfig,
) -> Result<Vec<CacheLedgerRow>> {
    let mut rows = Vec::new();
    for &kb in &config.capacities_kb {
        rows.extend(run_cache_config(models, utterances, config, kb, kb > 0)?);
    }
    rows.extend(run_cache_config(models, utterances, config, 0, true)?);
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub capacity_kb: u64,
    pub retain: bool,
    pub utterances: u64,
    pub lookups: u64,
    pub hits: u64,
    pub misses: u64,
    pub computations: u64,
    pub evictions: u64,
    /// Largest end-of-utterance entry count.
    pub peak_entries: u64,
    pub resident_bytes: u64,
    pub table_entries: u64,
    pub table_bytes: u64,
}

pub const SWEEP_HEADER: &str = "capacity_kb\tretain\tutterances\tentries\tresident_mb\tresident_bytes\tcomputations\tlookups\thits\tmisses\thit_ratio\tevictions\ttable_entries\ttable_bytes";

impl SweepRow {
    pub fn hit_ratio(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.hits as f64 / self.lookups as f64
        }
    }

    pub fn fields(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}",
            self.capacity_kb,
            u8::from(self.retain),
            self.utterances,
            self.peak_entries,
            self.resident_bytes as f64 / (KB * KB) as f64,
            self.resident_bytes,
            self.computations,
            self.lookups,
            self.hits,
            self.misses,
            self.hit_ratio(),
            self.evictions,
            self.table_entries,
            self.table_bytes
        )
    }
}

/// Aggregates ledger rows per (capacity, retain), in first-seen order.
pub fn sweep_table(ledger: &[CacheLedgerRow]) -> Vec<SweepRow> {
    let mut out: Vec<SweepRow> = Vec::new();
    for r in ledger {
        let pos = out
            .iter()
            .position(|s| s.capacity_kb == r.capacity_kb && s.retain == r.retain);
        let s = match pos {
            Some(i) => &mut out[i],
            None => {
                out.push(SweepRow {
                    capacity_kb: r.capacity_kb,
                    retain: r.retain,
                    utterances: 0,
                    lookups: 0,
                    hits: 0,
                    misses: 0,
                    computations: 0,
                    evictions: 0,
                    peak_entries: 0,
                    resident_bytes: 0,
                    table_entries: 0,
                    table_bytes: 0,
                });
                out.last_mut().unwrap()
            }
        };
        s.utterances += 1;
        s.lookups += r.lookups;
        s.hits += r.hits;
        s.misses += r.lookups - r.hits;
        s.computations += r.computations;
        s.evictions += r.evictions;
        s.peak_entries = s.peak_entries.max(r.entries);
        s.resident_bytes = s.peak_entries * ENTRY_BYTES;
        s.table_entries = s.table_entries.max(r.table_entries);
        s.table_bytes = s.table_bytes.max(r.table_bytes);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRow {
    pub requests: u64,
    pub context_bytes: u64,
    pub bytes_indexed: u64,
    pub bytes_baseline: u64,
}

pub const TRANSFER_HEADER: &str = "requests\tcontext_bytes\tbytes_indexed\tbytes_baseline\tratio";

impl TransferRow {
    pub fn ratio(&self) -> f64 {
        if self.bytes_indexed == 0 {
            0.0
        } else {
            self.bytes_baseline as f64 / self.bytes_indexed as f64
        }
    }

    pub fn fields(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:.6}",
            self.requests,
            self.context_bytes,
            self.bytes_indexed,
            self.bytes_baseline,
            self.ratio()
        )
    }
}

/// Transfer totals of the first sweep configuration.
pub fn transfer_table(ledger: &[CacheLedgerRow]) -> Option<TransferRow> {
    let first = ledger.first()?;
    let rows = ledger
        .iter()
        .filter(|r| r.capacity_kb == first.capacity_kb && r.retain == first.retain);
    let mut t = TransferRow {
        requests: 0,
        context_bytes: 0,
        bytes_indexed: 0,
        bytes_baseline: 0,
    };
    for r in rows {
        t.requests += r.requests;
        t.bytes_indexed += r.bytes_indexed;
        t.bytes_baseline += r.bytes_baseline;
    }
    if t.requests > 0 {
        t.context_bytes = t.bytes_baseline / (2 * t.requests);
    }
    Some(t)
}

pub const SYSTEMS: [&str; 4] = ["1/ngram", "1/rnnlm", "2/hybrid", "2/rnnlm"];

/// One utterance decoded by one system.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonLedgerRow {
    pub system: String,
    pub utterance: String,
    pub ref_tokens: u64,
    pub errors: u64,
    /// The chosen path scored as acoustic + weight × RNNLM.
    pub rescored_score: f64,
    pub words: String,
}

pub const COMPARISON_LEDGER_HEADER: &str = "system\tutterance\tref_tokens\terrors\trescored_score\twords";

impl ComparisonLedgerRow {
    fn fields(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{:e}\t{}",
            self.system, self.utterance, self.ref_tokens, self.errors, self.rescored_score, self.words
        )
    }

    fn parse(line: &str, lineno: usize) -> Result<Self> {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse(lineno, format!("expected 6 fields, found {}", f.len())));
        }
        let bad = |s: &str| Error::parse(lineno, format!("bad number {s:?}"));
        Ok(ComparisonLedgerRow {
            system: f[0].to_string(),
            utterance: f[1].to_string(),
            ref_tokens: f[2].parse().map_err(|_| bad(f[2]))?,
            errors: f[3].parse().map_err(|_| bad(f[3]))?,
            rescored_score: f[4].parse().map_err(|_| bad(f[4]))?,
            words: f[5].to_string(),
        })
    }
}

pub fn run_comparison(
    models: BenchModels<'_>,
    utterances: &[Utterance],
    config: &BenchConfig,
) -> Result<Vec<ComparisonLedgerRow>> {
    if utterances.is_empty() {
        return Err(Error::InvalidArgument("no utterances to decode".into()));
    }
    let mut stack = RescoreStack::new(
        RnnlmRescorer::new(models.rnnlm, models.tree, RescoreCache::new()),
        config.rnn_bits,
    );
    let mut rows = Vec::new();
    for u in utterances {
        let hyps = nbest(&u.lattice, config.nbest_n, config.lm_weight)?;
        let onthefly = rescore_onthefly(&u.lattice, &mut stack, config.lm_weight, config.beam)?.best;
        stack.reset_utterance(false);
        let chosen: [PathHypothesis; 4] = [
            hyps[0].clone(),
            onthefly,
            rescore_twopass(
                &hyps,
                TwoPassMode::Hybrid {
                    ngram: models.ngram,
                    interp_weight: config.interp_weight,
                },
                models.rnnlm,
                models.tree,
            )?,
            rescore_twopass(&hyps, TwoPassMode::Rnnlm, models.rnnlm, models.tree)?,
        ];
        for (system, hyp) in SYSTEMS.iter().zip(chosen) {
            let scored = rescore_hypothesis(&hyp, TwoPassMode::Rnnlm, models.rnnlm, models.tree)?;
            rows.push(ComparisonLedgerRow {
                system: system.to_string(),
                utterance: u.id.clone(),
                ref_tokens: u.reference.len() as u64,
                errors: edit_distance(&u.reference, &hyp.words) as u64,
                rescored_score: scored.combined_score,
                words: words_field(&hyp.words),
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub system: String,
    pub utterances: u64,
    pub ref_tokens: u64,
    pub errors: u64,
    pub score_sum: f64,
}

pub const COMPARISON_HEADER: &str = "system\tpasses\tlm\tutterances\tref_tokens\terrors\tter\tmean_rescored_score";

impl ComparisonRow {
    pub fn ter(&self) -> f64 {
        if self.ref_tokens == 0 {
            0.0
        } else {
            self.errors as f64 / self.ref_tokens as f64
        }
    }

    pub fn mean_score(&self) -> f64 {
        self.score_sum / self.utterances.max(1) as f64
    }

    pub fn fields(&self) -> String {
        let (passes, lm) = self.system.split_once('/').unwrap_or(("", &self.system));
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            self.system,
            passes,
            lm,
            self.utterances,
            self.ref_tokens,
            self.errors,
            self.ter(),
            self.mean_score()
        )
    }
}

pub fn comparison_table(ledger: &[ComparisonLedgerRow]) -> Vec<ComparisonRow> {
    let mut by_system: BTreeMap<usize, ComparisonRow> = BTreeMap::new();
    for r in ledger {
        let rank = SYSTEMS.iter().position(|s| *s == r.system).unwrap_or(SYSTEMS.len());
        let row = by_system.entry(rank).or_insert_with(|| ComparisonRow {
            system: r.system.clone(),
            utterances: 0,
            ref_tokens: 0,
            errors: 0,
            score_sum: 0.0,
        });
        row.utterances += 1;
        row.ref_tokens += r.ref_tokens;
        row.errors += r.errors;
        row.score_sum += r.rescored_score;
    }
    by_system.into_values().collect()
}

/// Writes a report: optional `#` preamble lines, one header line, rows.
pub fn write_tsv<W: Write>(
    mut out: W,
    preamble: &[String],
    header: &str,
    rows: impl IntoIterator<Item = String>,
) -> Result<()> {
    for p in preamble {
        writeln!(out, "# {p}")?;
    }
    writeln!(out, "{header}")?;
    for r in rows {
        writeln!(out, "{r}")?;
    }
    Ok(())
}

pub fn write_cache_ledger<W: Write>(out: W, preamble: &[String], rows: &[CacheLedgerRow]) -> Result<()> {
    write_tsv(
        out,
        preamble,
        CACHE_LEDGER_HEADER,
        rows.iter().map(CacheLedgerRow::fields),
    )
}

pub fn write_comparison_ledger<W: Write>(out: W, preamble: &[String], rows: &[ComparisonLedgerRow]) -> Result<()> {
    write_tsv(
        out,
        preamble,
        COMPARISON_LEDGER_HEADER,
        rows.iter().map(ComparisonLedgerRow::fields),
    )
}

fn read_tsv<R: BufRead, T>(input: R, header: &str, parse: impl Fn(&str, usize) -> Result<T>) -> Result<Vec<T>> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if !seen_header {
            if line != header {
                return Err(Error::parse(i + 1, "unexpected header"));
            }
            seen_header = true;
            continue;
        }
        rows.push(parse(&line, i + 1)?);
    }
    if !seen_header {
        return Err(Error::Format("missing header line".into()));
    }
    Ok(rows)
}

pub fn read_cache_ledger<R: BufRead>(input: R) -> Result<Vec<CacheLedgerRow>> {
    read_tsv(input, CACHE_LEDGER_HEADER, CacheLedgerRow::parse)
}

pub fn read_comparison_ledger<R: BufRead>(input: R) -> Result<Vec<ComparisonLedgerRow>> {
    read_tsv(input, COMPARISON_LEDGER_HEADER, ComparisonLedgerRow::parse)
}

/// Shape of the synthetic repeated-commands corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandCorpusConfig {
    pub templates: usize,
    pub utterances: usize,
    pub vocabulary: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Exponent of the Zipf law over template ranks.
    pub zipf_exponent: f64,
}

impl Default for CommandCorpusConfig {
    fn default() -> Self {
        CommandCorpusConfig {
            templates: 50,
            utterances: 500,
            vocabulary: 120,
            min_len: 2,
            max_len: 6,
            zipf_exponent: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommandCorpus {
    pub templates: Vec<Vec<String>>,
    /// Template index of each utterance.
    pub choices: Vec<usize>,
}

impl CommandCorpus {
    pub fn utterance(&self, i: usize) -> &[String] {
        &self.templates[self.choices[i]]
    }

    /// Every utterance as a text line.
    pub fn lines(&self) -> Vec<String> {
        (0..self.choices.len()).map(|i| self.utterance(i).join(" ")).collect()
    }
}

/// Fixed command templates over words `cmd0 .. cmdN`, with utterances that
/// reuse them at Zipfian rates.
pub fn command_corpus(config: &CommandCorpusConfig, seed: u64) -> Result<CommandCorpus> {
    if config.templates == 0 || config.vocabulary == 0 || config.min_len == 0 || config.max_len < config.min_len {
        return Err(Error::InvalidArgument("degenerate command corpus shape".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates: Vec<Vec<String>> = (0..config.templates)
        .map(|_| {
            let len = rng.random_range(config.min_len..=config.max_len);
            (0..len)
                .map(|_| format!("cmd{}", rng.random_range(0..config.vocabulary)))
                .collect()
        })
        .collect();
    let zipf =
        Zipf::new(config.templates as f64, config.zipf_exponent).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let choices = (0..config.utterances)
        .map(|_| zipf.sample(&mut rng) as usize - 1)
        .collect();
    Ok(CommandCorpus { templates, choices })
}

/// One generated lattice per reference, ids `utt0000`, `utt0001`, ...
/// Each utterance draws its lattice from its own seed derived from `seed`.
pub fn make_utterances(
    references: &[Vec<u32>],
    vocab: &crate::vocab::Vocabulary,
    small_lm: &NgramModel,
    config: &crate::lattice::LatticeGenConfig,
    seed: u64,
) -> Result<Vec<Utterance>> {
    references
        .iter()
        .enumerate()
        .filter(|(_, r)| !r.is_empty())
        .map(|(i, r)| {
            let s = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64);
            Ok(Utterance {
                id: format!("utt{i:04}"),
                reference: r.clone(),
                lattice: crate::lattice::generate_lattice(r, vocab, small_lm, config, s)?,
            })
        })
        .collect()
}
