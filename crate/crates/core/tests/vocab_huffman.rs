use std::collections::HashMap;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use rnnlm_rescore::{Error, HuffmanTree, Vocabulary};

fn zipf_text(tokens: usize, types: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = Zipf::new(types as f64, 1.1).unwrap();
    let mut out = String::with_capacity(tokens * 6);
    for i in 0..tokens {
        out.push_str(&format!("t{}", z.sample(&mut rng) as u64));
        out.push(if i % 17 == 16 { '\n' } else { ' ' });
    }
    out.push('\n');
    out
}

#[test]
fn toy_corpus_counts() {
    let v = Vocabulary::build("a b\na c\n".as_bytes(), 1).unwrap();
    assert_eq!(v.count(v.id("a").unwrap()), 2);
    assert_eq!(v.count(v.id("b").unwrap()), 1);
    assert_eq!(v.count(v.id("c").unwrap()), 1);
    assert_eq!(v.len(), 6);

    let folded = Vocabulary::build("a b\na c\n".as_bytes(), 2).unwrap();
    assert_eq!(folded.id("b"), None);
    assert_eq!(folded.count(folded.unk_id()), 2);
    assert_eq!(folded.id_or_unk("c"), folded.unk_id());
}

#[test]
fn empty_corpus_is_rejected() {
    assert!(matches!(Vocabulary::build("".as_bytes(), 1), Err(Error::EmptyCorpus)));
    assert!(matches!(
        Vocabulary::build("\n  \n".as_bytes(), 1),
        Err(Error::EmptyCorpus)
    ));
}

#[test]
fn million_token_zipf_corpus_matches_counting_oracle() {
    let text = zipf_text(1_000_000, 20_000, 1);
    let min_count = 3;
    let mut oracle: HashMap<&str, u64> = HashMap::new();
    for tok in text.split_whitespace() {
        *oracle.entry(tok).or_default() += 1;
    }
    let kept = oracle.values().filter(|&&c| c >= min_count).count();
    let folded: u64 = oracle.values().filter(|&&c| c < min_count).sum();

    let v = Vocabulary::build(text.as_bytes(), min_count).unwrap();
    assert_eq!(v.len(), kept + 3);
    for (w, &c) in &oracle {
        match v.id(w) {
            Some(id) => assert_eq!(v.count(id), c),
            None => assert!(c < min_count),
        }
    }
    assert_eq!(v.count(v.unk_id()), folded);
    let ids: Vec<u32> = (0..v.len() as u32).collect();
    assert!(ids.iter().all(|&i| v.id(v.word(i).unwrap()) == Some(i)));
}

#[test]
fn vocabulary_file_round_trip() {
    let v = Vocabulary::build(zipf_text(5000, 300, 2).as_bytes(), 2).unwrap();
    let mut buf = Vec::new();
    v.write(&mut buf).unwrap();
    assert_eq!(Vocabulary::read(buf.as_slice()).unwrap(), v);
}

fn lengths(tree: &HuffmanTree) -> Vec<usize> {
    (0..tree.leaf_count() as u32).map(|w| tree.code_length(w)).collect()
}

#[test]
fn small_hand_checked_examples() {
    let t = HuffmanTree::from_counts(&[5, 2, 1, 1]).unwrap();
    assert_eq!(lengths(&t), [1, 2, 3, 3]);
    assert_eq!(t.weighted_length(&[5, 2, 1, 1]), 15);
    assert_eq!(lengths(&HuffmanTree::from_counts(&[1, 1]).unwrap()), [1, 1]);
    assert_eq!(lengths(&HuffmanTree::from_counts(&[1, 1, 1, 1]).unwrap()), [2, 2, 2, 2]);
    assert!(HuffmanTree::from_counts(&[3]).is_err());
    let two = HuffmanTree::from_counts(&[4, 1]).unwrap();
    let p = two.leaf_path(0).unwrap();
    assert_eq!(p.len(), 1);
    assert_eq!(p[0].node, two.root());
    assert!(two.leaf_path(2).is_err());
}

#[test]
fn zipf_code_length_within_entropy_bound() {
    let counts: Vec<u64> = (1..=1000u64).map(|r| (1_000_000 / r).max(1)).collect();
    let t = HuffmanTree::from_counts(&counts).unwrap();
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    let entropy: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum();
    let mean = t.weighted_length(&counts) as f64 / total;
    assert!(mean >= entropy - 1e-9 && mean <= entropy + 1.0, "{mean} vs {entropy}");
}

/// Minimum weighted code length over every full binary tree on the leaves,
/// by splitting each leaf subset into two non-empty halves.
pub fn brute_force_min(counts: &[u64]) -> u64 {
    let n = counts.len();
    let full = (1usize << n) - 1;
    let weight: Vec<u64> = (0..=full)
        .map(|s| (0..n).filter(|i| s >> i & 1 == 1).map(|i| counts[i]).sum())
        .collect();
    let mut best = vec![u64::MAX; full + 1];
    for s in 1..=full {
        if s.count_ones() == 1 {
            best[s] = 0;
            continue;
        }
        let mut a = (s - 1) & s;
        while a > 0 {
            let b = s ^ a;
            if a < b {
                best[s] = best[s].min(best[a] + best[b] + weight[s]);
            }
            a = (a - 1) & s;
        }
    }
    best[full]
}

proptest! {
    #[test]
    fn code_is_prefix_free_and_kraft_tight(counts in prop::collection::vec(1u64..1000, 2..60)) {
        let t = HuffmanTree::from_counts(&counts).unwrap();
        prop_assert_eq!(t.internal_count(), counts.len() - 1);
        let codes: Vec<Vec<u8>> = (0..counts.len() as u32)
            .map(|w| t.leaf_path(w).unwrap().iter().map(|s| s.bit).collect())
            .collect();
        for (i, a) in codes.iter().enumerate() {
            prop_assert!(a.len() < counts.len());
            for (j, b) in codes.iter().enumerate() {
                if i != j {
                    prop_assert!(!b.starts_with(a));
                }
            }
        }
        let max = codes.iter().map(Vec::len).max().unwrap() as u32;
        let kraft: u128 = codes.iter().map(|c| 1u128 << (max - c.len() as u32)).sum();
        prop_assert_eq!(kraft, 1u128 << max);
    }

    #[test]
    fn frequency_order_never_inverts_length_order(counts in prop::collection::vec(1u64..50, 2..40)) {
        let t = HuffmanTree::from_counts(&counts).unwrap();
        let len = lengths(&t);
        for a in 0..counts.len() {
            for b in 0..counts.len() {
                if counts[a] > counts[b] {
                    prop_assert!(len[a] <= len[b]);
                }
            }
        }
    }

    #[test]
    fn small_trees_are_optimal(counts in prop::collection::vec(1u64..100, 2..=7)) {
        let t = HuffmanTree::from_counts(&counts).unwrap();
        prop_assert_eq!(t.weighted_length(&counts), brute_force_min(&counts));
    }

    #[test]
    fn construction_is_deterministic(counts in prop::collection::vec(1u64..5, 2..30)) {
        prop_assert_eq!(HuffmanTree::from_counts(&counts).unwrap(), HuffmanTree::from_counts(&counts).unwrap());
    }
}
