//! Stochastic gradient training with truncated backpropagation through time.
//!
//! The training forward pass keeps hidden states in `f64` so the loss is a
//! smooth function of the stored `f32` weights; inference contexts round the
//! hidden layer to `f32`.

use std::collections::HashMap;

use super::{feature_index, history_hash, log_sigmoid, sigmoid, RnnlmModel};
use crate::error::{Error, Result};
use crate::huffman::HuffmanTree;
use crate::vocab::Sentence;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learn_rate: f64,
    /// Number of recurrent transitions each loss term backpropagates
    /// through. One is plain backpropagation.
    pub bptt_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learn_rate: 0.1,
            bptt_steps: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_perplexity: f64,
    pub valid_perplexity: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
}

/// Addresses a single trainable weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightRef {
    Input { word: u32, unit: usize },
    Recurrent { row: usize, col: usize },
    Node { node: u32, unit: usize },
    MaxEnt(usize),
}

/// Gradient of a loss; rows and table entries the loss never touches are
/// absent and read as zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    hidden_size: usize,
    input: HashMap<u32, Vec<f64>>,
    recurrent: Vec<f64>,
    nodes: HashMap<u32, Vec<f64>>,
    maxent: HashMap<usize, f64>,
}

impl Gradients {
    fn new(hidden_size: usize) -> Self {
        Gradients {
            hidden_size,
            input: HashMap::new(),
            recurrent: vec![0.0; hidden_size * hidden_size],
            nodes: HashMap::new(),
            maxent: HashMap::new(),
        }
    }

    pub fn get(&self, at: WeightRef) -> f64 {
        match at {
            WeightRef::Input { word, unit } => self.input.get(&word).map_or(0.0, |r| r[unit]),
            WeightRef::Recurrent { row, col } => self.recurrent[row * self.hidden_size + col],
            WeightRef::Node { node, unit } => self.nodes.get(&node).map_or(0.0, |r| r[unit]),
            WeightRef::MaxEnt(i) => self.maxent.get(&i).copied().unwrap_or(0.0),
        }
    }

    /// Every weight with a stored (possibly zero) gradient entry.
    pub fn touched(&self) -> Vec<WeightRef> {
        let h = self.hidden_size;
        let mut out = Vec::new();
        let mut words: Vec<_> = self.input.keys().copied().collect();
        words.sort_unstable();
        for word in words {
            out.extend((0..h).map(|unit| WeightRef::Input { word, unit }));
        }
        for row in 0..h {
            out.extend((0..h).map(|col| WeightRef::Recurrent { row, col }));
        }
        let mut nodes: Vec<_> = self.nodes.keys().copied().collect();
        nodes.sort_unstable();
        for node in nodes {
            out.extend((0..h).map(|unit| WeightRef::Node { node, unit }));
        }
        let mut idx: Vec<_> = self.maxent.keys().copied().collect();
        idx.sort_unstable();
        out.extend(idx.into_iter().map(WeightRef::MaxEnt));
        out
    }
}

struct Forward {
    targets: Vec<u32>,
    hidden: Vec<Vec<f64>>,
    loss: f64,
    /// Per target: (node, dL/da) for every path step.
    node_grads: Vec<Vec<(u32, f64)>>,
    /// Per target: table slots read, one per (path step, feature).
    features: Vec<Vec<(u32, usize)>>,
}

impl RnnlmModel {
    pub fn weight(&self, at: WeightRef) -> f32 {
        let h = self.hidden_size;
        match at {
            WeightRef::Input { word, unit } => self.input_weights[word as usize * h + unit],
            WeightRef::Recurrent { row, col } => self.recurrent_weights[row * h + col],
            WeightRef::Node { node, unit } => self.node_vectors[node as usize * h + unit],
            WeightRef::MaxEnt(i) => self.maxent[i],
        }
    }

    pub fn set_weight(&mut self, at: WeightRef, value: f32) {
        let h = self.hidden_size;
        let slot = match at {
            WeightRef::Input { word, unit } => &mut self.input_weights[word as usize * h + unit],
            WeightRef::Recurrent { row, col } => &mut self.recurrent_weights[row * h + col],
            WeightRef::Node { node, unit } => &mut self.node_vectors[node as usize * h + unit],
            WeightRef::MaxEnt(i) => &mut self.maxent[i],
        };
        *slot = value;
    }

    fn forward(&self, tree: &HuffmanTree, sentence: &[u32], sentence_end: u32) -> Result<Forward> {
        let h = self.hidden_size;
        let mask = self.mask();
        let targets: Vec<u32> = sentence.iter().copied().chain(std::iter::once(sentence_end)).collect();
        for &w in &targets {
            if w as usize >= self.vocab_size {
                return Err(Error::WordOutOfRange {
                    id: w,
                    size: self.vocab_size,
                });
            }
        }
        let mut hidden = vec![vec![0.0f64; h]];
        let mut loss = 0.0;
        let mut node_grads = Vec::with_capacity(targets.len());
        let mut features = Vec::with_capacity(targets.len());
        for (t, &y) in targets.iter().enumerate() {
            let ht = &hidden[t];
            let start = t.saturating_sub(self.maxent_order);
            let history = &targets[start..t];
            let hashes: Vec<u64> = (0..=history.len())
                .map(|k| history_hash(self.hash_seed, k, &history[history.len() - k..]))
                .collect();
            let mut grads = Vec::new();
            let mut slots = Vec::new();
            for step in tree.path_unchecked(y) {
                let v = self.node_vector(step.node);
                let mut a: f64 = v.iter().zip(ht).map(|(&x, &y)| x as f64 * y).sum();
                for &hh in &hashes {
                    let i = feature_index(hh, step.node, mask);
                    a += self.maxent[i] as f64;
                    slots.push((step.node, i));
                }
                let sign = if step.bit == 0 { 1.0 } else { -1.0 };
                loss -= log_sigmoid(sign * a);
                grads.push((step.node, -sign * (1.0 - sigmoid(sign * a))));
            }
            node_grads.push(grads);
            features.push(slots);
            if t + 1 < targets.len() {
                let input = self.input_row(y);
                let next: Vec<f64> = (0..h)
                    .map(|i| {
                        let row = &self.recurrent_weights[i * h..(i + 1) * h];
                        let z = input[i] as f64 + row.iter().zip(ht).map(|(&w, &x)| w as f64 * x).sum::<f64>();
                        sigmoid(z)
                    })
                    .collect();
                hidden.push(next);
            }
        }
        Ok(Forward {
            targets,
            hidden,
            loss,
            node_grads,
            features,
        })
    }

    /// Negative log-likelihood of `sentence` followed by `sentence_end`,
    /// starting from the zero context.
    pub fn sentence_loss(&self, tree: &HuffmanTree, sentence: &[u32], sentence_end: u32) -> Result<f64> {
        Ok(self.forward(tree, sentence, sentence_end)?.loss)
    }

    /// Loss and its gradient, each loss term backpropagated through at most
    /// `bptt_steps` recurrent transitions. With `bptt_steps` at least the
    /// sentence length this is the exact gradient.
    pub fn sentence_gradient(
        &self,
        tree: &HuffmanTree,
        sentence: &[u32],
        sentence_end: u32,
        bptt_steps: usize,
    ) -> Result<(f64, Gradients)> {
        let h = self.hidden_size;
        let fwd = self.forward(tree, sentence, sentence_end)?;
        let mut grads = Gradients::new(h);
        let mut delta = vec![0.0f64; h];
        let mut dz = vec![0.0f64; h];
        for t in 0..fwd.targets.len() {
            let ht = &fwd.hidden[t];
            delta.iter_mut().for_each(|d| *d = 0.0);
            for &(node, g) in &fwd.node_grads[t] {
                let v = self.node_vector(node);
                let row = grads.nodes.entry(node).or_insert_with(|| vec![0.0; h]);
                for u in 0..h {
                    row[u] += g * ht[u];
                    delta[u] += g * v[u] as f64;
                }
            }
            let per_step = fwd.features[t].len() / fwd.node_grads[t].len().max(1);
            for (k, &(_, slot)) in fwd.features[t].iter().enumerate() {
                let g = fwd.node_grads[t][k / per_step].1;
                *grads.maxent.entry(slot).or_insert(0.0) += g;
            }

            for step in 0..bptt_steps {
                let tau = match t.checked_sub(step) {
                    Some(tau) if tau > 0 => tau,
                    _ => break,
                };
                let h_tau = &fwd.hidden[tau];
                let h_prev = &fwd.hidden[tau - 1];
                for u in 0..h {
                    dz[u] = delta[u] * h_tau[u] * (1.0 - h_tau[u]);
                }
                let word = fwd.targets[tau - 1];
                let row = grads.input.entry(word).or_insert_with(|| vec![0.0; h]);
                for u in 0..h {
                    row[u] += dz[u];
                }
                for (r, &d) in grads.recurrent.chunks_exact_mut(h).zip(&dz) {
                    for (x, &p) in r.iter_mut().zip(h_prev) {
                        *x += d * p;
                    }
                }
                if step + 1 < bptt_steps && tau > 1 {
                    for (j, d) in delta.iter_mut().enumerate() {
                        *d = (0..h).map(|i| self.recurrent_weights[i * h + j] as f64 * dz[i]).sum();
                    }
                }
            }
        }
        Ok((fwd.loss, grads))
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, learn_rate: f64) {
        let h = self.hidden_size;
        let step = |w: &mut f32, g: f64| *w = (*w as f64 - learn_rate * g) as f32;
        for (&word, row) in &grads.input {
            let base = word as usize * h;
            for (w, &g) in self.input_weights[base..base + h].iter_mut().zip(row) {
                step(w, g);
            }
        }
        for (w, &g) in self.recurrent_weights.iter_mut().zip(&grads.recurrent) {
            step(w, g);
        }
        for (&node, row) in &grads.nodes {
            let base = node as usize * h;
            for (w, &g) in self.node_vectors[base..base + h].iter_mut().zip(row) {
                step(w, g);
            }
        }
        for (&i, &g) in &grads.maxent {
            step(&mut self.maxent[i], g);
        }
    }

    /// Per-sentence SGD over `corpus` in order. Perplexities are measured
    /// with the inference path after every epoch.
    pub fn train(
        &mut self,
        tree: &HuffmanTree,
        corpus: &[Sentence],
        sentence_end: u32,
        config: &TrainConfig,
        valid: Option<&[Sentence]>,
    ) -> Result<TrainLog> {
        if !(config.learn_rate >= 0.0 && config.learn_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learn rate {} must be a non-negative number",
                config.learn_rate
            )));
        }
        if config.bptt_steps == 0 {
            return Err(Error::InvalidArgument("bptt_steps must be at least 1".into()));
        }
        if corpus.iter().all(|s| s.is_empty()) {
            return Err(Error::EmptyCorpus);
        }
        self.check_tree(tree)?;
        let mut log = TrainLog::default();
        for epoch in 1..=config.epochs {
            let mut total = 0.0;
            for s in corpus.iter().filter(|s| !s.is_empty()) {
                let (loss, grads) = self.sentence_gradient(tree, s, sentence_end, config.bptt_steps)?;
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                total += loss;
                if config.learn_rate > 0.0 {
                    self.apply_gradients(&grads, config.learn_rate);
                }
            }
            if !self.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let train_perplexity = self.perplexity(tree, corpus, sentence_end)?;
            if !train_perplexity.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            let valid_perplexity = match valid {
                Some(v) => Some(self.perplexity(tree, v, sentence_end)?),
                None => None,
            };
            log.epochs.push(EpochStats {
                epoch,
                train_loss: total,
                train_perplexity,
                valid_perplexity,
            });
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rnnlm::RnnlmConfig;

    fn toy() -> (HuffmanTree, RnnlmModel, Vec<Sentence>) {
        let counts = [9, 9, 1, 6, 5, 4, 3, 2, 2];
        let tree = HuffmanTree::from_counts(&counts).unwrap();
        let cfg = RnnlmConfig {
            hidden_size: 6,
            maxent_order: 2,
            maxent_table_bits: 8,
            init_seed: 3,
            ..Default::default()
        };
        let model = RnnlmModel::new(&tree, &cfg).unwrap();
        let corpus = vec![vec![3, 4, 5], vec![3, 6, 7, 8], vec![4, 4, 3]];
        (tree, model, corpus)
    }

    #[test]
    fn training_loss_matches_inference_path() {
        let (tree, model, corpus) = toy();
        for s in &corpus {
            let loss = model.sentence_loss(&tree, s, 1).unwrap();
            let (lp, _) = model.corpus_logprob(&tree, std::slice::from_ref(s), 1).unwrap();
            assert!((loss + lp).abs() < 1e-5, "{loss} vs {lp}");
        }
    }

    #[test]
    fn zero_learn_rate_leaves_weights_untouched() {
        let (tree, mut model, corpus) = toy();
        let before = model.clone();
        let cfg = TrainConfig {
            epochs: 2,
            learn_rate: 0.0,
            bptt_steps: 3,
        };
        model.train(&tree, &corpus, 1, &cfg, None).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn rejects_bad_configuration() {
        let (tree, mut model, corpus) = toy();
        let bad_lr = TrainConfig {
            learn_rate: -1.0,
            ..Default::default()
        };
        assert!(model.train(&tree, &corpus, 1, &bad_lr, None).is_err());
        let bad_bptt = TrainConfig {
            bptt_steps: 0,
            ..Default::default()
        };
        assert!(model.train(&tree, &corpus, 1, &bad_bptt, None).is_err());
        assert!(matches!(
            model.train(&tree, &[], 1, &TrainConfig::default(), None),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn divergence_names_epoch() {
        let (tree, mut model, corpus) = toy();
        let cfg = TrainConfig {
            epochs: 3,
            learn_rate: 1e300,
            bptt_steps: 1,
        };
        match model.train(&tree, &corpus, 1, &cfg, None) {
            Err(Error::Diverged { epoch }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn truncated_gradient_is_a_subset_of_full() {
        let (tree, model, corpus) = toy();
        let (_, g1) = model.sentence_gradient(&tree, &corpus[1], 1, 1).unwrap();
        let (_, gf) = model.sentence_gradient(&tree, &corpus[1], 1, 10).unwrap();
        // output-layer gradients do not depend on truncation depth
        for at in g1.touched() {
            if let WeightRef::Node { .. } | WeightRef::MaxEnt(_) = at {
                assert_eq!(g1.get(at), gf.get(at));
            }
        }
    }
}
