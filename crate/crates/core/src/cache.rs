//! Memoization of RNNLM requests keyed by (context index, word).
//!
//! [`rnnlm_prob`] is the request path: a hit returns the stored
//! (log-probability, successor index) pair; a miss decodes the context,
//! runs the model, interns the successor context and stores the result.
//!
//! With a byte capacity set, the cache evicts least-frequently-used entries
//! with least-recently-used tie-breaking. A new entry starts with frequency
//! one and competes with resident entries, so it is refused when every
//! resident entry has been used more often. Counts carried across an
//! utterance boundary are halved.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::context_table::{ContextIndex, IndexTable};
use crate::error::Result;
use crate::huffman::HuffmanTree;
use crate::rnnlm::RnnlmModel;

/// Key and value are two 8-byte integers each.
pub const ENTRY_BYTES: u64 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey {
    pub context: ContextIndex,
    pub word: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheValue {
    pub logprob: f64,
    pub next: ContextIndex,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub lookups: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
    /// Model evaluations performed on behalf of this cache.
    pub computations: u64,
    pub entries: u64,
    pub resident_bytes: u64,
}

impl CacheStats {
    pub fn hit_ratio(&self) -> f64 {
        if self.lookups == 0 {
            0.0
        } else {
            self.hits as f64 / self.lookups as f64
        }
    }

    fn absorb(&mut self, other: &CacheStats) {
        self.lookups += other.lookups;
        self.hits += other.hits;
        self.misses += other.misses;
        self.evictions += other.evictions;
        self.computations += other.computations;
    }
}

impl fmt::Display for CacheStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lookups={} hits={} hit_ratio={:.6} resident_bytes={} evictions={}",
            self.lookups,
            self.hits,
            self.hit_ratio(),
            self.resident_bytes,
            self.evictions
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    value: CacheValue,
    freq: u64,
    last_use: u64,
}

#[derive(Debug, Clone)]
pub struct RescoreCache {
    enabled: bool,
    capacity_bytes: u64,
    entries: HashMap<CacheKey, Slot>,
    /// (frequency, last use, key), smallest is the next victim.
    order: BTreeSet<(u64, u64, CacheKey)>,
    tick: u64,
    current: CacheStats,
    cumulative: CacheStats,
}

impl Default for RescoreCache {
    fn default() -> Self {
        Self::new()
    }
}

impl RescoreCache {
    /// An enabled cache with no capacity bound.
    pub fn new() -> Self {
        RescoreCache {
            enabled: true,
            capacity_bytes: 0,
            entries: HashMap::new(),
            order: BTreeSet::new(),
            tick: 0,
            current: CacheStats::default(),
            cumulative: CacheStats::default(),
        }
    }

    /// A cache that never stores anything; every lookup misses.
    pub fn disabled() -> Self {
        RescoreCache {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn is_enabled(&self) -> bool {
        self.enabled
    }

    pub fn capacity_bytes(&self) -> u64 {
        self.capacity_bytes
    }

    /// Bounds resident size in bytes; zero removes the bound. Entries over
    /// the new bound are evicted immediately.
    pub fn set_capacity(&mut self, capacity_bytes: u64) {
        self.capacity_bytes = capacity_bytes;
        if capacity_bytes > 0 {
            while self.resident_bytes() > capacity_bytes {
                self.evict_one();
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resident_bytes(&self) -> u64 {
        self.entries.len() as u64 * ENTRY_BYTES
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.entries.contains_key(key)
    }

    /// Use count of a resident entry.
    pub fn frequency(&self, key: &CacheKey) -> Option<u64> {
        self.entries.get(key).map(|s| s.freq)
    }

    pub fn get(&mut self, key: &CacheKey) -> Option<CacheValue> {
        self.tick += 1;
        self.current.lookups += 1;
        match self.entries.get_mut(key) {
            Some(slot) => {
                self.current.hits += 1;
                self.order.remove(&(slot.freq, slot.last_use, *key));
                slot.freq += 1;
                slot.last_use = self.tick;
                self.order.insert((slot.freq, slot.last_use, *key));
                Some(slot.value)
            }
            None => {
                self.current.misses += 1;
                None
            }
        }
    }

    fn evict_one(&mut self) -> Option<(u64, CacheKey)> {
        let victim = self.order.pop_first()?;
        self.entries.remove(&victim.2);
        self.current.evictions += 1;
        Some((victim.0, victim.2))
    }

    /// Stores `value`. Returns the keys evicted to make room; the new key
    /// itself is reported when it loses to every resident entry.
    pub fn insert(&mut self, key: CacheKey, value: CacheValue) -> Vec<CacheKey> {
        let mut evicted = Vec::new();
        if !self.enabled {
            return evicted;
        }
        self.tick += 1;
        if let Some(slot) = self.entries.get_mut(&key) {
            slot.value = value;
            return evicted;
        }
        if self.capacity_bytes > 0 {
            if ENTRY_BYTES > self.capacity_bytes {
                self.current.evictions += 1;
                evicted.push(key);
                return evicted;
            }
            while self.resident_bytes() + ENTRY_BYTES > self.capacity_bytes {
                let &(freq, _, _) = self.order.first().expect("non-empty when over capacity");
                if freq > 1 {
                    self.current.evictions += 1;
                    evicted.push(key);
                    return evicted;
                }
                let (_, k) = self.evict_one().unwrap();
                evicted.push(k);
            }
        }
        let slot = Slot {
            value,
            freq: 1,
            last_use: self.tick,
        };
        self.order.insert((slot.freq, slot.last_use, key));
        self.entries.insert(key, slot);
        evicted
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.order.clear();
    }

    pub(crate) fn note_computation(&mut self) {
        self.current.computations += 1;
    }

    /// Statistics since the last utterance reset.
    pub fn stats(&self) -> CacheStats {
        CacheStats {
            entries: self.entries.len() as u64,
            resident_bytes: self.resident_bytes(),
            ..self.current
        }
    }

    /// Statistics over every utterance, including the current one.
    pub fn cumulative_stats(&self) -> CacheStats {
        let mut total = self.cumulative;
        total.absorb(&self.current);
        CacheStats {
            entries: self.entries.len() as u64,
            resident_bytes: self.resident_bytes(),
            ..total
        }
    }

    /// Closes the current utterance's statistics. Without `retain` the
    /// entries are dropped too; with it every use count is halved (never
    /// below one) so entries that stop being used eventually lose to new
    /// ones.
    pub fn roll_utterance(&mut self, retain: bool) {
        let current = std::mem::take(&mut self.current);
        self.cumulative.absorb(&current);
        if !retain {
            self.clear();
            return;
        }
        self.order.clear();
        for (key, slot) in self.entries.iter_mut() {
            slot.freq = (slot.freq / 2).max(1);
            self.order.insert((slot.freq, slot.last_use, *key));
        }
    }
}

/// One request: look up `(c, w)`, or decode `c`, run the model, intern the
/// successor context and remember the result.
pub fn rnnlm_prob(
    cache: &mut RescoreCache,
    table: &mut IndexTable,
    model: &RnnlmModel,
    tree: &HuffmanTree,
    w: u32,
    c: ContextIndex,
) -> Result<CacheValue> {
    let key = CacheKey { context: c, word: w };
    if let Some(v) = cache.get(&key) {
        return Ok(v);
    }
    let ctx = table.decode(c)?;
    let (logprob, next_ctx) = model.compute(tree, &ctx, w)?;
    cache.note_computation();
    let next = table.encode(&next_ctx)?;
    let value = CacheValue { logprob, next };
    cache.insert(key, value);
    Ok(value)
}

/// The CPU side of the rescoring boundary for one decoding stream: a shared
/// read-only model plus this stream's cache and context table.
#[derive(Debug, Clone)]
pub struct RnnlmRescorer<'m> {
    pub model: &'m RnnlmModel,
    pub tree: &'m HuffmanTree,
    pub cache: RescoreCache,
    pub table: IndexTable,
}

impl<'m> RnnlmRescorer<'m> {
    pub fn new(model: &'m RnnlmModel, tree: &'m HuffmanTree, cache: RescoreCache) -> Self {
        RnnlmRescorer {
            model,
            tree,
            cache,
            table: IndexTable::new(model.hidden_size(), model.maxent_order()),
        }
    }

    pub fn rnnlm_prob(&mut self, w: u32, c: ContextIndex) -> Result<CacheValue> {
        rnnlm_prob(&mut self.cache, &mut self.table, self.model, self.tree, w, c)
    }

    /// Ends an utterance. Without `retain` both the cache and the context
    /// table are cleared; with it both persist into the next utterance.
    pub fn reset_utterance(&mut self, retain: bool) {
        self.cache.roll_utterance(retain);
        if !retain {
            self.table.clear();
        }
    }
}
