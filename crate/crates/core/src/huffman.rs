//! Huffman coding tree over word frequencies, used as the output layer of
//! the hierarchical softmax.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Child {
    Leaf(u32),
    Node(u32),
}

/// An internal node. `left` is taken on bit 0, `right` on bit 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InternalNode {
    pub left: Child,
    pub right: Child,
}

/// One decision on a root-to-leaf path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub node: u32,
    pub bit: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTree {
    nodes: Vec<InternalNode>,
    paths: Vec<Vec<PathStep>>,
}

impl HuffmanTree {
    pub fn build(vocab: &Vocabulary) -> Result<Self> {
        Self::from_counts(vocab.counts())
    }

    /// Builds the tree from raw leaf weights indexed by word id.
    ///
    /// Ties on weight are broken by an ordering key: a leaf's key is its word
    /// id and the k-th merged node's key is `n + k`, so equal-weight leaves
    /// merge before equal-weight subtrees and lower ids merge first.
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let n = counts.len();
        if n < 2 {
            return Err(Error::VocabularyTooSmall(n));
        }
        let mut heap: BinaryHeap<Reverse<(u64, u64, Child)>> = counts
            .iter()
            .enumerate()
            .map(|(i, &c)| Reverse((c, i as u64, Child::Leaf(i as u32))))
            .collect();
        let mut nodes = Vec::with_capacity(n - 1);
        while heap.len() > 1 {
            let Reverse((w0, _, left)) = heap.pop().unwrap();
            let Reverse((w1, _, right)) = heap.pop().unwrap();
            let id = nodes.len() as u32;
            nodes.push(InternalNode { left, right });
            heap.push(Reverse((w0 + w1, (n + id as usize) as u64, Child::Node(id))));
        }

        let mut paths = vec![Vec::new(); n];
        let root = (nodes.len() - 1) as u32;
        let mut stack = vec![(root, Vec::<PathStep>::new())];
        while let Some((node, prefix)) = stack.pop() {
            let InternalNode { left, right } = nodes[node as usize];
            for (bit, child) in [(0u8, left), (1u8, right)] {
                let mut path = prefix.clone();
                path.push(PathStep { node, bit });
                match child {
                    Child::Leaf(w) => paths[w as usize] = path,
                    Child::Node(c) => stack.push((c, path)),
                }
            }
        }
        Ok(HuffmanTree { nodes, paths })
    }

    pub fn leaf_count(&self) -> usize {
        self.paths.len()
    }

    pub fn internal_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn root(&self) -> u32 {
        (self.nodes.len() - 1) as u32
    }

    pub fn nodes(&self) -> &[InternalNode] {
        &self.nodes
    }

    pub fn leaf_path(&self, word: u32) -> Result<&[PathStep]> {
        self.paths
            .get(word as usize)
            .map(Vec::as_slice)
            .ok_or(Error::WordOutOfRange {
                id: word,
                size: self.paths.len(),
            })
    }

    pub(crate) fn path_unchecked(&self, word: u32) -> &[PathStep] {
        &self.paths[word as usize]
    }

    pub fn code_length(&self, word: u32) -> usize {
        self.paths[word as usize].len()
    }

    /// Σ counts[w] · len(path(w)).
    pub fn weighted_length(&self, counts: &[u64]) -> u64 {
        counts.iter().zip(&self.paths).map(|(&c, p)| c * p.len() as u64).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lengths(counts: &[u64]) -> Vec<usize> {
        let t = HuffmanTree::from_counts(counts).unwrap();
        (0..counts.len() as u32).map(|w| t.code_length(w)).collect()
    }

    #[test]
    fn two_leaves() {
        let t = HuffmanTree::from_counts(&[1, 1]).unwrap();
        assert_eq!(t.internal_count(), 1);
        assert_eq!(t.leaf_path(0).unwrap(), &[PathStep { node: 0, bit: 0 }]);
        assert_eq!(t.leaf_path(1).unwrap(), &[PathStep { node: 0, bit: 1 }]);
    }

    #[test]
    fn skewed_four_leaves() {
        // brute force over all 4-leaf full binary trees gives minimum 15
        let counts = [5, 2, 1, 1];
        assert_eq!(lengths(&counts), vec![1, 2, 3, 3]);
        let t = HuffmanTree::from_counts(&counts).unwrap();
        assert_eq!(t.weighted_length(&counts), 15);
    }

    #[test]
    fn uniform_four_leaves_are_balanced() {
        assert_eq!(lengths(&[1, 1, 1, 1]), vec![2, 2, 2, 2]);
    }

    #[test]
    fn too_small_and_out_of_range() {
        assert!(matches!(
            HuffmanTree::from_counts(&[3]),
            Err(Error::VocabularyTooSmall(1))
        ));
        let t = HuffmanTree::from_counts(&[1, 2, 3]).unwrap();
        assert!(t.leaf_path(3).is_err());
    }

    #[test]
    fn tie_breaking_is_deterministic() {
        let counts = [3, 3, 3, 3, 3, 1, 1];
        let a = HuffmanTree::from_counts(&counts).unwrap();
        let b = HuffmanTree::from_counts(&counts).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.nodes()[0],
            InternalNode {
                left: Child::Leaf(5),
                right: Child::Leaf(6)
            }
        );
        assert_eq!(
            a.nodes()[1],
            InternalNode {
                left: Child::Node(0),
                right: Child::Leaf(0)
            }
        );
        // equal weights: lowest ids merge first
        assert_eq!(
            a.nodes()[2],
            InternalNode {
                left: Child::Leaf(1),
                right: Child::Leaf(2)
            }
        );
    }
}
