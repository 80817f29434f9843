//! Bidirectional table between full RNNLM contexts and 8-byte indices.
//!
//! Each stored element is a fixed-size little-endian record:
//!
//! | field               | size                       |
//! |---------------------|----------------------------|
//! | hidden layer        | `4 · H` (f32)              |
//! | word history        | `8 · maxent_order` (u64)   |
//! | direct-conn. order  | 4 (u32)                    |
//! | own index           | 4 (u32)                    |
//!
//! Unused history slots hold `u64::MAX`. For H = 100 and order 3 a record is
//! 432 bytes. Records live back to back in one arena, so the table's byte
//! size is exactly `len · element_bytes`.
//!
//! Lookup from context to index hashes the record body (everything but the
//! own-index field) and confirms candidates by full byte comparison.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::Hasher;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::rnnlm::RnnlmContext;

/// Index of a stored context. Zero is the utterance-start context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ContextIndex(pub u64);

impl ContextIndex {
    pub const START: ContextIndex = ContextIndex(0);
}

const EMPTY_SLOT: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryReport {
    pub element_count: u64,
    pub element_bytes: u64,
    pub total_bytes: u64,
    /// Approximate size of the reverse lookup, reported apart from the
    /// element storage.
    pub overhead_bytes: u64,
}

#[derive(Debug, Clone)]
pub struct IndexTable {
    hidden_size: usize,
    maxent_order: usize,
    capacity: u64,
    arena: Vec<u8>,
    reverse: HashMap<u64, SmallVec<[u32; 1]>>,
}

pub fn element_bytes(hidden_size: usize, maxent_order: usize) -> usize {
    4 * hidden_size + 8 * maxent_order + 4 + 4
}

impl IndexTable {
    pub fn new(hidden_size: usize, maxent_order: usize) -> Self {
        Self::with_capacity_limit(hidden_size, maxent_order, u32::MAX as u64)
    }

    /// A table that refuses to hold more than `limit` contexts.
    pub fn with_capacity_limit(hidden_size: usize, maxent_order: usize, limit: u64) -> Self {
        IndexTable {
            hidden_size,
            maxent_order,
            capacity: limit.min(u32::MAX as u64),
            arena: Vec::new(),
            reverse: HashMap::new(),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden_size
    }

    pub fn maxent_order(&self) -> usize {
        self.maxent_order
    }

    pub fn element_bytes(&self) -> usize {
        element_bytes(self.hidden_size, self.maxent_order)
    }

    fn body_bytes(&self) -> usize {
        self.element_bytes() - 4
    }

    pub fn len(&self) -> usize {
        self.arena.len() / self.element_bytes()
    }

    pub fn is_empty(&self) -> bool {
        self.arena.is_empty()
    }

    pub fn clear(&mut self) {
        self.arena.clear();
        self.reverse.clear();
    }

    /// Serializes `ctx` into a full record carrying `index` in its last field.
    pub fn serialize(&self, ctx: &RnnlmContext, index: u32) -> Result<Vec<u8>> {
        if ctx.hidden.len() != self.hidden_size || ctx.history.len() > self.maxent_order {
            return Err(Error::InvalidArgument(format!(
                "context shape ({}, {}) does not match table ({}, {})",
                ctx.hidden.len(),
                ctx.history.len(),
                self.hidden_size,
                self.maxent_order
            )));
        }
        let mut out = Vec::with_capacity(self.element_bytes());
        for x in &ctx.hidden {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for slot in 0..self.maxent_order {
            let v = ctx.history.get(slot).map_or(EMPTY_SLOT, |&w| w as u64);
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.maxent_order as u32).to_le_bytes());
        out.extend_from_slice(&index.to_le_bytes());
        Ok(out)
    }

    fn deserialize(&self, record: &[u8]) -> RnnlmContext {
        let h = self.hidden_size;
        let hidden = record[..4 * h]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let history = record[4 * h..4 * h + 8 * self.maxent_order]
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .take_while(|&v| v != EMPTY_SLOT)
            .map(|v| v as u32)
            .collect();
        RnnlmContext { hidden, history }
    }

    fn digest(body: &[u8]) -> u64 {
        let mut h = DefaultHasher::new();
        h.write(body);
        h.finish()
    }

    fn record(&self, index: u64) -> &[u8] {
        let e = self.element_bytes();
        let start = (index as usize - 1) * e;
        &self.arena[start..start + e]
    }

    /// Index of an already stored, bit-identical context.
    pub fn lookup(&self, ctx: &RnnlmContext) -> Result<Option<ContextIndex>> {
        let record = self.serialize(ctx, 0)?;
        Ok(self.find(&record[..self.body_bytes()]))
    }

    fn find(&self, body: &[u8]) -> Option<ContextIndex> {
        let candidates = self.reverse.get(&Self::digest(body))?;
        candidates
            .iter()
            .find(|&&i| &self.record(i as u64)[..body.len()] == body)
            .map(|&i| ContextIndex(i as u64))
    }

    /// Returns the index of `ctx`, storing it under `len + 1` if it is new.
    pub fn encode(&mut self, ctx: &RnnlmContext) -> Result<ContextIndex> {
        let mut record = self.serialize(ctx, 0)?;
        let body_len = self.body_bytes();
        let digest = Self::digest(&record[..body_len]);
        if let Some(found) = self.find(&record[..body_len]) {
            return Ok(found);
        }
        let len = self.len() as u64;
        if len >= self.capacity {
            return Err(Error::TableFull(len));
        }
        let index = (len + 1) as u32;
        record[body_len..].copy_from_slice(&index.to_le_bytes());
        self.arena.extend_from_slice(&record);
        self.reverse.entry(digest).or_default().push(index);
        Ok(ContextIndex(index as u64))
    }

    /// Index 0 yields the zero context; any other index must be stored.
    pub fn decode(&self, index: ContextIndex) -> Result<RnnlmContext> {
        if index == ContextIndex::START {
            return Ok(RnnlmContext::zero(self.hidden_size));
        }
        if index.0 > self.len() as u64 {
            return Err(Error::UnknownContext(index.0));
        }
        Ok(self.deserialize(self.record(index.0)))
    }

    /// The raw stored record for `index`, including its own-index field.
    pub fn raw_record(&self, index: ContextIndex) -> Option<&[u8]> {
        (index.0 >= 1 && index.0 <= self.len() as u64).then(|| self.record(index.0))
    }

    pub fn memory_report(&self) -> MemoryReport {
        let element_bytes = self.element_bytes() as u64;
        let element_count = self.len() as u64;
        let overhead_bytes = self.reverse.values().map(|v| 8 + 4 * v.len().max(1) as u64).sum();
        MemoryReport {
            element_count,
            element_bytes,
            total_bytes: self.arena.len() as u64,
            overhead_bytes,
        }
    }
}
