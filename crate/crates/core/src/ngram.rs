//! Backoff n-gram language model.
//!
//! Training produces an interpolated model (Kneser-Ney or plain absolute
//! discounting) and stores it in backoff form: every observed k-gram keeps
//! its full interpolated probability and every observed context keeps the
//! interpolation mass it hands to the next lower order. Querying an unseen
//! k-gram then multiplies that mass into the lower-order estimate, which
//! reproduces the interpolated distribution exactly.
//!
//! All probabilities are natural logs. Zero probabilities are stored as
//! [`LOG_ZERO`], the natural-log image of the ARPA `-99` convention.

use std::collections::HashMap;
use std::f64::consts::LN_10;

use crate::error::{Error, Result};
use crate::vocab::{Sentence, Vocabulary};

pub const MAX_ORDER: usize = 5;

/// ln(10^-99).
pub const LOG_ZERO: f64 = -99.0 * LN_10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    /// Interpolated Kneser-Ney, one discount per order from count-of-counts.
    KneserNey,
    /// Interpolated absolute discounting on raw counts with a fixed discount
    /// in `[0, 1]`. A discount of zero degenerates to interpolated maximum
    /// likelihood.
    AbsoluteDiscount(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramEntry {
    pub logprob: f64,
    pub backoff: f64,
}

type Gram = Box<[u32]>;

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    vocab_size: usize,
    sentence_begin: u32,
    sentence_end: u32,
    tables: Vec<HashMap<Gram, NgramEntry>>,
    discounts: Vec<f64>,
}

pub(crate) fn log_or_zero(p: f64) -> f64 {
    if p > 0.0 {
        p.ln().max(LOG_ZERO)
    } else {
        LOG_ZERO
    }
}

/// Returns a natural-log value that survives a trip through decimal log10
/// text unchanged, so ARPA export and import give bit-identical scores.
pub(crate) fn arpa_stable(x: f64) -> f64 {
    let mut cur = x;
    for _ in 0..8 {
        let next = (cur / LN_10) * LN_10;
        if next == cur {
            return cur;
        }
        cur = next;
    }
    cur
}

impl NgramModel {
    pub fn train(corpus: &[Sentence], vocab: &Vocabulary, order: usize, smoothing: Smoothing) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::UnsupportedOrder(order));
        }
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        if let Smoothing::AbsoluteDiscount(d) = smoothing {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::InvalidArgument(format!("absolute discount {d} outside [0, 1]")));
            }
        }
        let n = vocab.len();
        let bos = vocab.sentence_begin_id();
        let eos = vocab.sentence_end_id();
        for s in corpus {
            for &w in s {
                vocab.check(w)?;
            }
        }

        // raw[k-1]: counts of k-grams ending at a predicted position
        let mut raw: Vec<HashMap<Gram, u64>> = vec![HashMap::new(); order];
        let mut seq = Vec::new();
        for s in corpus.iter().filter(|s| !s.is_empty()) {
            seq.clear();
            seq.push(bos);
            seq.extend_from_slice(s);
            seq.push(eos);
            for i in 1..seq.len() {
                for k in 1..=order.min(i + 1) {
                    let g: Gram = seq[i + 1 - k..=i].into();
                    *raw[k - 1].entry(g).or_insert(0) += 1;
                }
            }
        }

        let adjusted: Vec<HashMap<Gram, u64>> = match smoothing {
            Smoothing::AbsoluteDiscount(_) => raw.clone(),
            Smoothing::KneserNey => {
                let mut adj: Vec<HashMap<Gram, u64>> = Vec::with_capacity(order);
                for k in 1..=order {
                    if k == order {
                        adj.push(raw[k - 1].clone());
                        continue;
                    }
                    let mut cont: HashMap<Gram, u64> = HashMap::new();
                    for g in raw[k].keys() {
                        *cont.entry(g[1..].into()).or_insert(0) += 1;
                    }
                    // grams anchored at sentence start have no left extension
                    let mut level = HashMap::with_capacity(raw[k - 1].len());
                    for (g, &c) in &raw[k - 1] {
                        let a = if g[0] == bos {
                            c
                        } else {
                            cont.get(g).copied().unwrap_or(0)
                        };
                        level.insert(g.clone(), a);
                    }
                    adj.push(level);
                }
                adj
            }
        };

        let discounts: Vec<f64> = adjusted
            .iter()
            .map(|level| match smoothing {
                Smoothing::AbsoluteDiscount(d) => d,
                Smoothing::KneserNey => {
                    let n1 = level.values().filter(|&&c| c == 1).count() as f64;
                    let n2 = level.values().filter(|&&c| c == 2).count() as f64;
                    if n1 > 0.0 && n2 > 0.0 {
                        n1 / (n1 + 2.0 * n2)
                    } else {
                        0.5
                    }
                }
            })
            .collect();

        let mut model = NgramModel {
            order,
            vocab_size: n,
            sentence_begin: bos,
            sentence_end: eos,
            tables: Vec::with_capacity(order),
            discounts: discounts.clone(),
        };

        // unigrams: discounted counts interpolated with the uniform distribution
        let level = &adjusted[0];
        let total: u64 = level.values().sum();
        let distinct = level.values().filter(|&&c| c > 0).count() as f64;
        let d = discounts[0];
        let floor = d * distinct / total as f64 / n as f64;
        let mut unigrams = HashMap::with_capacity(n);
        for w in 0..n as u32 {
            let c = level.get(&[w][..]).copied().unwrap_or(0) as f64;
            let p = (c - d).max(0.0) / total as f64 + floor;
            unigrams.insert(
                Box::from([w]),
                NgramEntry {
                    logprob: arpa_stable(log_or_zero(p)),
                    backoff: 0.0,
                },
            );
        }
        model.tables.push(unigrams);

        for k in 2..=order {
            let d = discounts[k - 1];
            let mut by_context: HashMap<&[u32], (u64, u64)> = HashMap::new();
            for (g, &c) in &adjusted[k - 1] {
                let e = by_context.entry(&g[..k - 1]).or_insert((0, 0));
                e.0 += c;
                e.1 += 1;
            }
            let mut table = HashMap::with_capacity(adjusted[k - 1].len());
            for (g, &c) in &adjusted[k - 1] {
                let (total, distinct) = by_context[&g[..k - 1]];
                let gamma = d * distinct as f64 / total as f64;
                let lower = model.logprob(&g[1..k - 1], g[k - 1]).exp();
                let p = (c as f64 - d).max(0.0) / total as f64 + gamma * lower;
                table.insert(
                    g.clone(),
                    NgramEntry {
                        logprob: arpa_stable(log_or_zero(p)),
                        backoff: 0.0,
                    },
                );
            }
            for (h, (total, distinct)) in by_context {
                let gamma = d * distinct as f64 / total as f64;
                let entry = model.tables[k - 2]
                    .get_mut(h)
                    .expect("every context is itself an observed gram");
                entry.backoff = arpa_stable(log_or_zero(gamma));
            }
            model.tables.push(table);
        }
        Ok(model)
    }

    pub(crate) fn from_tables(
        order: usize,
        vocab: &Vocabulary,
        tables: Vec<HashMap<Gram, NgramEntry>>,
    ) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::UnsupportedOrder(order));
        }
        if tables.len() != order {
            return Err(Error::Format(format!(
                "expected {order} n-gram sections, found {}",
                tables.len()
            )));
        }
        for w in 0..vocab.len() as u32 {
            if !tables[0].contains_key(&[w][..]) {
                return Err(Error::Format(format!(
                    "unigram for {:?} missing",
                    vocab.word(w).unwrap_or("?")
                )));
            }
        }
        Ok(NgramModel {
            order,
            vocab_size: vocab.len(),
            sentence_begin: vocab.sentence_begin_id(),
            sentence_end: vocab.sentence_end_id(),
            tables,
            discounts: Vec::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn sentence_begin(&self) -> u32 {
        self.sentence_begin
    }

    pub fn discounts(&self) -> &[f64] {
        &self.discounts
    }

    pub(crate) fn tables(&self) -> &[HashMap<Gram, NgramEntry>] {
        &self.tables
    }

    /// The suffix of `history` that can influence the next prediction.
    pub fn truncate<'a>(&self, history: &'a [u32]) -> &'a [u32] {
        &history[history.len().saturating_sub(self.order - 1)..]
    }

    /// ln P(w | context), following the longest stored context and backing
    /// off from there. Only the last `order - 1` words of `context` are used.
    ///
    /// Panics if `w` is out of range; use [`NgramModel::score`] for checked
    /// access.
    pub fn logprob(&self, context: &[u32], w: u32) -> f64 {
        let ctx = self.truncate(context);
        let mut gram = Vec::with_capacity(ctx.len() + 1);
        let mut backoff = 0.0;
        for start in 0..=ctx.len() {
            let h = &ctx[start..];
            gram.clear();
            gram.extend_from_slice(h);
            gram.push(w);
            if let Some(e) = self.tables[h.len()].get(&gram[..]) {
                return backoff + e.logprob;
            }
            if !h.is_empty() {
                if let Some(e) = self.tables[h.len() - 1].get(h) {
                    backoff += e.backoff;
                }
            }
        }
        panic!("word id {w} has no unigram entry");
    }

    pub fn score(&self, context: &[u32], w: u32) -> Result<f64> {
        if (w as usize) >= self.vocab_size {
            return Err(Error::WordOutOfRange {
                id: w,
                size: self.vocab_size,
            });
        }
        Ok(self.logprob(context, w))
    }

    /// Sum of ln P over every sentence including its end marker, and the
    /// number of scored tokens.
    pub fn corpus_logprob(&self, corpus: &[Sentence]) -> (f64, usize) {
        let mut total = 0.0;
        let mut tokens = 0;
        let mut history = Vec::new();
        for s in corpus.iter().filter(|s| !s.is_empty()) {
            history.clear();
            history.push(self.sentence_begin);
            for &w in s.iter().chain(std::iter::once(&self.sentence_end)) {
                total += self.logprob(&history, w);
                tokens += 1;
                history.push(w);
            }
        }
        (total, tokens)
    }

    pub fn perplexity(&self, corpus: &[Sentence]) -> Result<f64> {
        let (total, tokens) = self.corpus_logprob(corpus);
        if tokens == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok((-total / tokens as f64).exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(text: &str) -> (Vocabulary, Vec<Sentence>) {
        let v = Vocabulary::build(text.as_bytes(), 1).unwrap();
        let c = v.read_corpus(text.as_bytes()).unwrap();
        (v, c)
    }

    fn full_sum(m: &NgramModel, ctx: &[u32]) -> f64 {
        (0..m.vocab_size() as u32).map(|w| m.logprob(ctx, w).exp()).sum()
    }

    #[test]
    fn deterministic_successor_without_discount() {
        let (v, c) = setup("a b a b\n");
        let m = NgramModel::train(&c, &v, 2, Smoothing::AbsoluteDiscount(0.0)).unwrap();
        let (a, b) = (v.id("a").unwrap(), v.id("b").unwrap());
        assert_eq!(m.logprob(&[a], b), 0.0);
        assert_eq!(m.logprob(&[v.id("b").unwrap(), a], b), 0.0);
    }

    #[test]
    fn unigram_absolute_discount_by_hand() {
        // tokens: a a a b </s>; five scored tokens, three distinct, n = 5
        let (v, c) = setup("a a a b\n");
        let m = NgramModel::train(&c, &v, 1, Smoothing::AbsoluteDiscount(0.5)).unwrap();
        let floor = 0.5 * 3.0 / 5.0 / 5.0;
        let expect = [
            ("a", 2.5 / 5.0 + floor),
            ("b", 0.5 / 5.0 + floor),
            ("</s>", 0.5 / 5.0 + floor),
            ("<s>", floor),
            ("<unk>", floor),
        ];
        for (w, p) in expect {
            let got = m.logprob(&[], v.id(w).unwrap()).exp();
            assert!((got - p).abs() < 1e-12, "{w}: {got} vs {p}");
        }
    }

    #[test]
    fn unseen_context_backs_off() {
        let (v, c) = setup("a b c\nb c a\nc a b\n");
        let m = NgramModel::train(&c, &v, 2, Smoothing::AbsoluteDiscount(0.5)).unwrap();
        let (a, b, c_) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        // (a, c) never observed: P = gamma(a) * P1(c); a is followed by
        // b twice and </s> once
        let gamma: f64 = 0.5 * 2.0 / 3.0;
        let expect = gamma.ln() + m.logprob(&[], c_);
        assert!((m.logprob(&[a], c_) - expect).abs() < 1e-12);
        // unseen context word falls through with unit backoff
        assert!((m.logprob(&[v.unk_id()], b) - m.logprob(&[], b)).abs() < 1e-15);
    }

    #[test]
    fn long_context_is_truncated() {
        let (v, c) = setup("a b c a b c\n");
        let m = NgramModel::train(&c, &v, 2, Smoothing::KneserNey).unwrap();
        let (a, b, c_) = (v.id("a").unwrap(), v.id("b").unwrap(), v.id("c").unwrap());
        assert_eq!(m.logprob(&[c_, b, a], b), m.logprob(&[a], b));
    }

    #[test]
    fn kneser_ney_normalizes() {
        let (v, c) = setup("the cat sat on the mat\nthe dog sat\na cat and a dog\non the mat sat the cat\n");
        for order in 1..=4 {
            let m = NgramModel::train(&c, &v, order, Smoothing::KneserNey).unwrap();
            let ids: Vec<u32> = (0..v.len() as u32).collect();
            for &x in &ids {
                for &y in &ids {
                    let s = full_sum(&m, &[x, y]);
                    assert!((s - 1.0).abs() < 1e-9, "order {order} ctx {x},{y}: {s}");
                }
            }
        }
    }

    #[test]
    fn uniform_model_perplexity_equals_vocab_size() {
        let (v, c) = setup("a b c\n");
        let n = v.len();
        let mut unigrams = HashMap::new();
        for w in 0..n as u32 {
            unigrams.insert(
                Box::from([w]),
                NgramEntry {
                    logprob: -(n as f64).ln(),
                    backoff: 0.0,
                },
            );
        }
        let m = NgramModel::from_tables(1, &v, vec![unigrams]).unwrap();
        let ppl = m.perplexity(&c).unwrap();
        assert!((ppl - n as f64).abs() < 1e-9);
    }

    #[test]
    fn deterministic_corpus_perplexity_tends_to_one() {
        let line = "a b ".repeat(500);
        let (v, c) = setup(&line);
        let m = NgramModel::train(&c, &v, 2, Smoothing::AbsoluteDiscount(0.0)).unwrap();
        let ppl = m.perplexity(&c).unwrap();
        assert!(ppl < 1.01, "{ppl}");
    }

    #[test]
    fn errors() {
        let (v, c) = setup("a b\n");
        assert!(matches!(
            NgramModel::train(&c, &v, 6, Smoothing::KneserNey),
            Err(Error::UnsupportedOrder(6))
        ));
        assert!(matches!(
            NgramModel::train(&[], &v, 2, Smoothing::KneserNey),
            Err(Error::EmptyCorpus)
        ));
        let m = NgramModel::train(&c, &v, 2, Smoothing::KneserNey).unwrap();
        assert!(m.perplexity(&[]).is_err());
        assert!(m.score(&[], 99).is_err());
    }

    #[test]
    fn stable_logs_survive_log10_trip() {
        for x in [-0.1, -1.0, -std::f64::consts::LN_10, -17.25, LOG_ZERO, 0.0] {
            let s = arpa_stable(x);
            assert_eq!((s / LN_10) * LN_10, s);
            assert!((s - x).abs() <= 4.0 * f64::EPSILON * x.abs());
        }
    }
}
