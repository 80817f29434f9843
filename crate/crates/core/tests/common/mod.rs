#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rnnlm_rescore::{HuffmanTree, NgramModel, RnnlmConfig, RnnlmModel, Sentence, Smoothing, TrainConfig, Vocabulary};

pub struct Fixture {
    pub vocab: Vocabulary,
    pub corpus: Vec<Sentence>,
    pub tree: HuffmanTree,
    pub rnnlm: RnnlmModel,
    pub bigram: NgramModel,
    pub trigram: NgramModel,
}

/// Sentences from a tiny subject-verb-object grammar, so the models have
/// real structure to learn.
pub fn grammar_corpus(sentences: usize, seed: u64) -> String {
    let subjects = ["the cat", "a dog", "my friend", "the robot", "she", "he"];
    let verbs = ["sees", "likes", "finds", "moves", "opens", "takes"];
    let objects = ["the door", "a ball", "the light", "some food", "it", "the box"];
    let tails = ["", "", "today", "again", "slowly", "now"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for _ in 0..sentences {
        let mut s = format!(
            "{} {} {}",
            subjects[rng.random_range(0..subjects.len())],
            verbs[rng.random_range(0..verbs.len())],
            objects[rng.random_range(0..objects.len())]
        );
        let t = tails[rng.random_range(0..tails.len())];
        if !t.is_empty() {
            s.push(' ');
            s.push_str(t);
        }
        text.push_str(&s);
        text.push('\n');
    }
    text
}

pub fn fixture_with(text: &str, hidden_size: usize, epochs: usize) -> Fixture {
    let vocab = Vocabulary::build(text.as_bytes(), 1).unwrap();
    let corpus = vocab.read_corpus(text.as_bytes()).unwrap();
    let tree = HuffmanTree::build(&vocab).unwrap();
    let cfg = RnnlmConfig {
        hidden_size,
        maxent_table_bits: 14,
        ..Default::default()
    };
    let mut rnnlm = RnnlmModel::new(&tree, &cfg).unwrap();
    let train = TrainConfig {
        epochs,
        learn_rate: 0.1,
        bptt_steps: 3,
    };
    rnnlm
        .train(&tree, &corpus, vocab.sentence_end_id(), &train, None)
        .unwrap();
    let bigram = NgramModel::train(&corpus, &vocab, 2, Smoothing::KneserNey).unwrap();
    let trigram = NgramModel::train(&corpus, &vocab, 3, Smoothing::KneserNey).unwrap();
    Fixture {
        vocab,
        corpus,
        tree,
        rnnlm,
        bigram,
        trigram,
    }
}

pub fn fixture() -> Fixture {
    fixture_with(&grammar_corpus(300, 7), 12, 3)
}

use rnnlm_rescore::rnnlm::WeightRef;

/// Analytic vs. central-difference gradient on `per_class` random weights
/// of each class touched by `sentence`. Returns (weight, analytic,
/// numeric) triples. The numeric step is the one actually realised in f32.
pub fn gradient_pairs(
    model: &RnnlmModel,
    tree: &HuffmanTree,
    sentence: &[u32],
    eos: u32,
    per_class: usize,
    eps: f32,
    seed: u64,
) -> Vec<(WeightRef, f64, f64)> {
    let (_, grads) = model
        .sentence_gradient(tree, sentence, eos, sentence.len() + 1)
        .unwrap();
    let touched = grads.touched();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class = |w: &WeightRef| match w {
        WeightRef::Input { .. } => 0,
        WeightRef::Recurrent { .. } => 1,
        WeightRef::Node { .. } => 2,
        WeightRef::MaxEnt(_) => 3,
    };
    let mut out = Vec::new();
    for c in 0..4 {
        let pool: Vec<WeightRef> = touched
            .iter()
            .copied()
            .filter(|w| class(w) == c && grads.get(*w).abs() > 1e-3)
            .collect();
        assert!(!pool.is_empty(), "no weights of class {c}");
        for _ in 0..per_class {
            let at = pool[rng.random_range(0..pool.len())];
            let mut m = model.clone();
            let w0 = m.weight(at);
            let (up, down) = (w0 + eps, w0 - eps);
            m.set_weight(at, up);
            let lp = m.sentence_loss(tree, sentence, eos).unwrap();
            m.set_weight(at, down);
            let lm = m.sentence_loss(tree, sentence, eos).unwrap();
            let numeric = (lp - lm) / (up as f64 - down as f64);
            out.push((at, grads.get(at), numeric));
        }
    }
    out
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}
