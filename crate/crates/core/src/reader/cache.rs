//! Bounded LRU cache for decompressed blocks.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::Serialize;

/// Image region a cached block belongs to. Metadata offsets are relative to
/// their table start; data and fragment blocks use absolute offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    InodeTable,
    DirTable,
    Data,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub region: Region,
    pub offset: u64,
}

#[derive(Debug, Clone, Copy, Default, Serialize, PartialEq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub bytes: u64,
    pub budget: u64,
}

struct Slot {
    payload: Arc<Vec<u8>>,
    /// On-disk bytes the block occupied (header included); 0 for data blocks.
    consumed: u64,
    tick: u64,
}

/// Least-recently-used byte-budgeted block cache.
pub struct BlockCache {
    slots: HashMap<CacheKey, Slot>,
    by_tick: BTreeMap<u64, CacheKey>,
    tick: u64,
    bytes: u64,
    budget: u64,
    hits: u64,
    misses: u64,
}

impl BlockCache {
    pub fn new(budget: u64) -> Self {
        BlockCache {
            slots: HashMap::new(),
            by_tick: BTreeMap::new(),
            tick: 0,
            bytes: 0,
            budget,
            hits: 0,
            misses: 0,
        }
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn get(&mut self, key: &CacheKey) -> Option<(Arc<Vec<u8>>, u64)> {
        self.tick += 1;
        match self.slots.get_mut(key) {
            Some(slot) => {
                self.by_tick.remove(&slot.tick);
                slot.tick = self.tick;
                self.by_tick.insert(slot.tick, *key);
                self.hits += 1;
                Some((slot.payload.clone(), slot.consumed))
            }
            None => {
                self.misses += 1;
                None
            }
        }
    }

    pub fn insert(&mut self, key: CacheKey, payload: Arc<Vec<u8>>, consumed: u64) {
        if let Some(old) = self.slots.remove(&key) {
            self.by_tick.remove(&old.tick);
            self.bytes -= old.payload.len() as u64;
        }
        self.tick += 1;
        self.bytes += payload.len() as u64;
        self.slots.insert(
            key,
            Slot {
                payload,
                consumed,
                tick: self.tick,
            },
        );
        self.by_tick.insert(self.tick, key);
        self.evict_to_budget();
    }

    fn evict_to_budget(&mut self) {
        while self.bytes > self.budget {
            let Some((&tick, &key)) = self.by_tick.iter().next() else {
                break;
            };
            self.by_tick.remove(&tick);
            let slot = self.slots.remove(&key).expect("tick index out of sync");
            self.bytes -= slot.payload.len() as u64;
        }
    }

    pub fn clear(&mut self) {
        self.slots.clear();
        self.by_tick.clear();
        self.bytes = 0;
    }

    pub fn resize(&mut self, budget: u64) {
        self.budget = budget;
        self.evict_to_budget();
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits,
            misses: self.misses,
            bytes: self.bytes,
            budget: self.budget,
        }
    }
}
