//! Elman RNN language model with a Huffman hierarchical-softmax output
//! layer and hashed n-gram direct connections.
//!
//! A context holds the hidden state after consuming every word in its
//! history. Scoring word `w` walks the Huffman path of `w`; at each internal
//! node the activation is the dot product of that node's vector with the
//! hidden state plus the hashed direct-connection weights for the node and
//! each history suffix (lengths `0..=maxent_order`). Branch bit 0 takes
//! `σ(a)`, bit 1 takes `σ(-a)`.

mod io;
mod train;

pub use self::io::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use self::train::{EpochStats, Gradients, TrainConfig, TrainLog, WeightRef};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::vocab::Sentence;

pub const DEFAULT_HASH_SEED: u64 = 0x243f_6a88_85a3_08d3;

const ORDER_MULT: u64 = 0x9e37_79b9_7f4a_7c15;
const WORD_MULT: u64 = 0xff51_afd7_ed55_8ccd;
const NODE_MULT: u64 = 0xc2b2_ae3d_27d4_eb4f;
const MIX_MULT: u64 = 0x94d0_49bb_1331_11eb;

/// Largest `f32` strictly below one.
const HIDDEN_MAX: f32 = 1.0 - f32::EPSILON / 2.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RnnlmConfig {
    pub hidden_size: usize,
    pub maxent_order: usize,
    /// The direct-connection table has `2^maxent_table_bits` entries.
    pub maxent_table_bits: u32,
    pub hash_seed: u64,
    pub init_seed: u64,
    /// Initial weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f32,
}

impl Default for RnnlmConfig {
    fn default() -> Self {
        RnnlmConfig {
            hidden_size: 100,
            maxent_order: 3,
            maxent_table_bits: 20,
            hash_seed: DEFAULT_HASH_SEED,
            init_seed: 1,
            init_scale: 0.1,
        }
    }
}

/// Hidden state plus the most recent `maxent_order` words, newest last.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnlmContext {
    pub hidden: Vec<f32>,
    pub history: Vec<u32>,
}

impl RnnlmContext {
    /// The utterance-start context: zero hidden layer, empty history.
    pub fn zero(hidden_size: usize) -> Self {
        RnnlmContext {
            hidden: vec![0.0; hidden_size],
            history: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnlmModel {
    pub(crate) hidden_size: usize,
    pub(crate) vocab_size: usize,
    pub(crate) maxent_order: usize,
    pub(crate) hash_seed: u64,
    /// `vocab_size × hidden_size`, one row per word.
    pub(crate) input_weights: Vec<f32>,
    /// `hidden_size × hidden_size`, row `i` feeds hidden unit `i`.
    pub(crate) recurrent_weights: Vec<f32>,
    /// `(vocab_size - 1) × hidden_size`, one row per Huffman internal node.
    pub(crate) node_vectors: Vec<f32>,
    pub(crate) maxent: Vec<f32>,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Hash of one history suffix of length `order`.
#[inline]
pub(crate) fn history_hash(seed: u64, order: usize, words: &[u32]) -> u64 {
    let mut h = seed ^ (order as u64 + 1).wrapping_mul(ORDER_MULT);
    for &w in words {
        h = (h ^ (w as u64 + 1)).wrapping_mul(WORD_MULT);
        h ^= h >> 32;
    }
    h
}

#[inline]
pub(crate) fn feature_index(history: u64, node: u32, mask: u64) -> usize {
    let mut x = (history ^ (node as u64 + 1).wrapping_mul(NODE_MULT)).wrapping_mul(MIX_MULT);
    x ^= x >> 31;
    (x & mask) as usize
}

impl RnnlmModel {
    /// Random initialization. Direct-connection weights start at zero.
    pub fn new(tree: &HuffmanTree, config: &RnnlmConfig) -> Result<Self> {
        let mut model = Self::zeroed(tree, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let scale = config.init_scale;
        let mut fill = |v: &mut Vec<f32>| {
            for x in v.iter_mut() {
                *x = rng.random_range(-scale..=scale);
            }
        };
        fill(&mut model.input_weights);
        fill(&mut model.recurrent_weights);
        fill(&mut model.node_vectors);
        Ok(model)
    }

    pub fn zeroed(tree: &HuffmanTree, config: &RnnlmConfig) -> Result<Self> {
        if config.hidden_size == 0 {
            return Err(Error::InvalidArgument("hidden_size must be positive".into()));
        }
        if config.maxent_table_bits > 32 {
            return Err(Error::InvalidArgument("maxent_table_bits must be at most 32".into()));
        }
        let n = tree.leaf_count();
        let h = config.hidden_size;
        Ok(RnnlmModel {
            hidden_size: h,
            vocab_size: n,
            maxent_order: config.maxent_order,
            hash_seed: config.hash_seed,
            input_weights: vec![0.0; n * h],
            recurrent_weights: vec![0.0; h * h],
            node_vectors: vec![0.0; tree.internal_count() * h],
            maxent: vec![0.0; 1usize << config.maxent_table_bits],
        })
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn maxent_order(&self) -> usize {
        self.maxent_order
    }

    pub fn maxent_table_len(&self) -> usize {
        self.maxent.len()
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn maxent_table(&self) -> &[f32] {
        &self.maxent
    }

    pub fn maxent_table_mut(&mut self) -> &mut [f32] {
        &mut self.maxent
    }

    pub fn input_row(&self, w: u32) -> &[f32] {
        let h = self.hidden_size;
        &self.input_weights[w as usize * h..(w as usize + 1) * h]
    }

    pub fn node_vector(&self, node: u32) -> &[f32] {
        let h = self.hidden_size;
        &self.node_vectors[node as usize * h..(node as usize + 1) * h]
    }

    pub fn recurrent_weights(&self) -> &[f32] {
        &self.recurrent_weights
    }

    pub fn zero_context(&self) -> RnnlmContext {
        RnnlmContext::zero(self.hidden_size)
    }

    pub(crate) fn mask(&self) -> u64 {
        self.maxent.len() as u64 - 1
    }

    fn check_word(&self, w: u32) -> Result<()> {
        if (w as usize) < self.vocab_size {
            Ok(())
        } else {
            Err(Error::WordOutOfRange {
                id: w,
                size: self.vocab_size,
            })
        }
    }

    fn check_context(&self, ctx: &RnnlmContext) -> Result<()> {
        if ctx.hidden.len() != self.hidden_size || ctx.history.len() > self.maxent_order {
            return Err(Error::InvalidArgument(format!(
                "context shape ({}, {}) does not match model ({}, {})",
                ctx.hidden.len(),
                ctx.history.len(),
                self.hidden_size,
                self.maxent_order
            )));
        }
        Ok(())
    }

    fn check_tree(&self, tree: &HuffmanTree) -> Result<()> {
        if tree.leaf_count() != self.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "tree has {} leaves, model vocabulary is {}",
                tree.leaf_count(),
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Hashes of every history suffix usable as a direct-connection feature,
    /// shortest (the empty suffix) first.
    pub(crate) fn history_hashes(&self, history: &[u32]) -> Vec<u64> {
        let longest = history.len().min(self.maxent_order);
        (0..=longest)
            .map(|k| history_hash(self.hash_seed, k, &history[history.len() - k..]))
            .collect()
    }

    /// Consumes `w`: new hidden = σ(input[w] + recurrent · hidden), and `w`
    /// is appended to the history, dropping the oldest word when full.
    pub fn advance_context(&self, ctx: &RnnlmContext, w: u32) -> Result<RnnlmContext> {
        self.check_word(w)?;
        self.check_context(ctx)?;
        let h = self.hidden_size;
        let input = self.input_row(w);
        let hidden = (0..h)
            .map(|i| {
                let row = &self.recurrent_weights[i * h..(i + 1) * h];
                let z = input[i] as f64 + dot(row, &ctx.hidden);
                (sigmoid(z) as f32).clamp(f32::MIN_POSITIVE, HIDDEN_MAX)
            })
            .collect();
        let mut history = ctx.history.clone();
        if self.maxent_order > 0 {
            if history.len() == self.maxent_order {
                history.remove(0);
            }
            history.push(w);
        }
        Ok(RnnlmContext { hidden, history })
    }

    /// Pre-sigmoid activation of every node on the path of `w`, in path
    /// order, before applying the branch sign.
    pub fn path_activations(&self, tree: &HuffmanTree, ctx: &RnnlmContext, w: u32) -> Result<Vec<f64>> {
        self.check_word(w)?;
        self.check_tree(tree)?;
        self.check_context(ctx)?;
        let hashes = self.history_hashes(&ctx.history);
        let mask = self.mask();
        Ok(tree
            .path_unchecked(w)
            .iter()
            .map(|step| {
                let mut a = dot(self.node_vector(step.node), &ctx.hidden);
                for &hh in &hashes {
                    a += self.maxent[feature_index(hh, step.node, mask)] as f64;
                }
                a
            })
            .collect())
    }

    /// ln P(w | ctx). Costs one sigmoid per node on the Huffman path of `w`.
    pub fn word_logprob(&self, tree: &HuffmanTree, ctx: &RnnlmContext, w: u32) -> Result<f64> {
        let acts = self.path_activations(tree, ctx, w)?;
        Ok(tree
            .path_unchecked(w)
            .iter()
            .zip(acts)
            .map(|(step, a)| log_sigmoid(if step.bit == 0 { a } else { -a }))
            .sum())
    }

    /// Scores `w` and returns the context after consuming it.
    pub fn compute(&self, tree: &HuffmanTree, ctx: &RnnlmContext, w: u32) -> Result<(f64, RnnlmContext)> {
        let p = self.word_logprob(tree, ctx, w)?;
        Ok((p, self.advance_context(ctx, w)?))
    }

    /// ln P of a word sequence from the zero context, without an end marker.
    pub fn sequence_logprob(&self, tree: &HuffmanTree, words: &[u32]) -> Result<f64> {
        let mut ctx = self.zero_context();
        let mut total = 0.0;
        for &w in words {
            let (p, next) = self.compute(tree, &ctx, w)?;
            total += p;
            ctx = next;
        }
        Ok(total)
    }

    /// Sum of ln P over each sentence and its end marker, contexts reset to
    /// zero per sentence. Returns the sum and the token count.
    pub fn corpus_logprob(&self, tree: &HuffmanTree, corpus: &[Sentence], sentence_end: u32) -> Result<(f64, usize)> {
        let mut total = 0.0;
        let mut tokens = 0;
        for s in corpus.iter().filter(|s| !s.is_empty()) {
            let mut ctx = self.zero_context();
            for &w in s.iter().chain(std::iter::once(&sentence_end)) {
                let (p, next) = self.compute(tree, &ctx, w)?;
                total += p;
                tokens += 1;
                ctx = next;
            }
        }
        Ok((total, tokens))
    }

    pub fn perplexity(&self, tree: &HuffmanTree, corpus: &[Sentence], sentence_end: u32) -> Result<f64> {
        let (total, tokens) = self.corpus_logprob(tree, corpus, sentence_end)?;
        if tokens == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok((-total / tokens as f64).exp())
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.input_weights,
            &self.recurrent_weights,
            &self.node_vectors,
            &self.maxent,
        ]
        .iter()
        .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, h: usize, seed: u64) -> (HuffmanTree, RnnlmModel) {
        let counts: Vec<u64> = (1..=n as u64).rev().collect();
        let tree = HuffmanTree::from_counts(&counts).unwrap();
        let cfg = RnnlmConfig {
            hidden_size: h,
            maxent_order: 3,
            maxent_table_bits: 10,
            init_seed: seed,
            init_scale: 0.5,
            ..Default::default()
        };
        let mut m = RnnlmModel::new(&tree, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 99);
        for x in m.maxent.iter_mut() {
            *x = rng.random_range(-0.5..0.5);
        }
        (tree, m)
    }

    #[test]
    fn zero_weights_give_half_hidden() {
        let tree = HuffmanTree::from_counts(&[1, 1, 1]).unwrap();
        let cfg = RnnlmConfig {
            hidden_size: 4,
            maxent_table_bits: 4,
            ..Default::default()
        };
        let m = RnnlmModel::zeroed(&tree, &cfg).unwrap();
        let next = m.advance_context(&m.zero_context(), 2).unwrap();
        assert_eq!(next.hidden, vec![0.5; 4]);
        assert_eq!(next.history, vec![2]);
    }

    #[test]
    fn history_drops_oldest() {
        let (_, m) = small(6, 3, 1);
        let ctx = RnnlmContext {
            hidden: vec![0.1; 3],
            history: vec![0, 1, 2],
        };
        let next = m.advance_context(&ctx, 3).unwrap();
        assert_eq!(next.history, vec![1, 2, 3]);
        // input is untouched
        assert_eq!(ctx.history, vec![0, 1, 2]);
    }

    #[test]
    fn two_word_zero_model_is_uniform() {
        let tree = HuffmanTree::from_counts(&[3, 1]).unwrap();
        let cfg = RnnlmConfig {
            hidden_size: 2,
            maxent_table_bits: 4,
            ..Default::default()
        };
        let m = RnnlmModel::zeroed(&tree, &cfg).unwrap();
        for w in 0..2 {
            let p = m.word_logprob(&tree, &m.zero_context(), w).unwrap();
            assert_eq!(p, 0.5f64.ln());
        }
    }

    #[test]
    fn distribution_sums_to_one() {
        let (tree, m) = small(40, 8, 3);
        let mut ctx = m.zero_context();
        for w in [5, 7, 1, 30, 2] {
            let total: f64 = (0..40).map(|v| m.word_logprob(&tree, &ctx, v).unwrap().exp()).sum();
            assert!((total - 1.0).abs() < 1e-12, "{total}");
            ctx = m.advance_context(&ctx, w).unwrap();
        }
    }

    #[test]
    fn one_activation_per_path_node() {
        let (tree, m) = small(17, 4, 5);
        let ctx = m.advance_context(&m.zero_context(), 3).unwrap();
        for w in 0..17 {
            let acts = m.path_activations(&tree, &ctx, w).unwrap();
            assert_eq!(acts.len(), tree.leaf_path(w).unwrap().len());
        }
    }

    #[test]
    fn hidden_stays_in_open_unit_interval() {
        let (tree, mut m) = small(5, 3, 7);
        for x in m.input_weights.iter_mut() {
            *x = 80.0;
        }
        let ctx = m.advance_context(&m.zero_context(), 1).unwrap();
        assert!(ctx.hidden.iter().all(|&x| x > 0.0 && x < 1.0));
        for x in m.input_weights.iter_mut() {
            *x = -200.0;
        }
        let ctx = m.advance_context(&ctx, 1).unwrap();
        assert!(ctx.hidden.iter().all(|&x| x > 0.0 && x < 1.0));
        assert!(m.word_logprob(&tree, &ctx, 0).unwrap().is_finite());
    }

    #[test]
    fn rejects_bad_inputs() {
        let (tree, m) = small(5, 3, 7);
        let ctx = m.zero_context();
        assert!(m.advance_context(&ctx, 5).is_err());
        assert!(m.word_logprob(&tree, &ctx, 9).is_err());
        let bad = RnnlmContext {
            hidden: vec![0.0; 2],
            history: vec![],
        };
        assert!(m.word_logprob(&tree, &bad, 0).is_err());
        let other = HuffmanTree::from_counts(&[1, 1, 1]).unwrap();
        assert!(m.word_logprob(&other, &ctx, 0).is_err());
    }
}
