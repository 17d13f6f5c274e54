//! Set-associative cache model with LRU replacement and optional sectoring.
//!
//! The cache tracks presence only — no data. `probe` classifies an access
//! as hit or miss and updates recency; it never allocates. Whoever owns the
//! cache decides when the fill arrives and calls `fill` then, which models
//! allocate-on-fill with LRU eviction. A sectored cache fills one sector at
//! a time: a probe to a present line whose sector is still invalid is a
//! (sector) miss.
//!
//! Miss accounting follows the usual simulator convention: a miss is an
//! access that orders a new fill from the next level. An access that merges
//! into a fill already in flight is reclassified as a hit by the owner (via
//! `merge_into_pending_fill`), so miss ratios compare fairly between models
//! with different amounts of merging.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub accesses: u64,
    pub hits: u64,
    pub misses: u64,
    pub fills: u64,
    pub evictions: u64,
}

impl CacheStats {
    pub fn miss_ratio(&self) -> f64 {
        if self.accesses == 0 {
            0.0
        } else {
            self.misses as f64 / self.accesses as f64
        }
    }
}

#[derive(Debug, Clone)]
struct Line {
    tag: u64,
    valid_sectors: u64, // bitmask; unsectored caches use bit 0 only
    stamp: u64,
}

#[derive(Debug, Clone)]
pub struct Cache {
    sets: Vec<Vec<Line>>,
    assoc: usize,
    line_bytes: u64,
    sector_bytes: u64, // == line_bytes when unsectored
    stamp: u64,
    pub stats: CacheStats,
}

impl Cache {
    /// Cache filled a whole line at a time (instruction caches).
    pub fn new_unsectored(cache_bytes: u64, line_bytes: u64, assoc: u32) -> Self {
        Self::build(cache_bytes, line_bytes, line_bytes, assoc)
    }

    /// Cache filled one sector at a time (the data cache).
    pub fn new_sectored(
        cache_bytes: u64,
        line_bytes: u64,
        sector_bytes: u64,
        assoc: u32,
    ) -> Self {
        Self::build(cache_bytes, line_bytes, sector_bytes, assoc)
    }

    fn build(cache_bytes: u64, line_bytes: u64, sector_bytes: u64, assoc: u32) -> Self {
        assert!(line_bytes.is_power_of_two());
        assert!(sector_bytes.is_power_of_two() && sector_bytes <= line_bytes);
        let lines = cache_bytes / line_bytes;
        assert!(assoc > 0 && lines.is_multiple_of(assoc as u64));
        let num_sets = (lines / assoc as u64) as usize;
        assert!(num_sets > 0);
        assert!(line_bytes / sector_bytes <= 64, "sector mask is 64 bits");
        Cache {
            sets: vec![Vec::new(); num_sets],
            assoc: assoc as usize,
            line_bytes,
            sector_bytes,
            stamp: 0,
            stats: CacheStats::default(),
        }
    }

    pub fn line_addr(&self, addr: u64) -> u64 {
        addr & !(self.line_bytes - 1)
    }

    pub fn sector_addr(&self, addr: u64) -> u64 {
        addr & !(self.sector_bytes - 1)
    }

    fn set_index(&self, line_addr: u64) -> usize {
        ((line_addr / self.line_bytes) % self.sets.len() as u64) as usize
    }

    fn sector_bit(&self, addr: u64) -> u64 {
        1 << ((addr % self.line_bytes) / self.sector_bytes)
    }

    /// Classify an access and update recency on hit. Never allocates.
    pub fn probe(&mut self, addr: u64) -> bool {
        self.stats.accesses += 1;
        let tag = self.line_addr(addr);
        let set = self.set_index(tag);
        let bit = self.sector_bit(addr);
        self.stamp += 1;
        for line in &mut self.sets[set] {
            if line.tag == tag {
                if line.valid_sectors & bit != 0 {
                    line.stamp = self.stamp;
                    self.stats.hits += 1;
                    return true;
                }
                break;
            }
        }
        self.stats.misses += 1;
        false
    }

    /// Reclassify the probe that just missed as a hit on an outstanding
    /// fill: the access merged into a fill already in flight and
    /// allocated nothing new, so it does not count against the miss
    /// ratio. Call at most once, directly after the merging probe.
    pub fn merge_into_pending_fill(&mut self) {
        debug_assert!(self.stats.misses > 0);
        self.stats.misses -= 1;
        self.stats.hits += 1;
    }

    /// Non-counting peek: would `probe` hit right now?
    pub fn contains(&self, addr: u64) -> bool {
        let tag = self.line_addr(addr);
        let set = self.set_index(tag);
        let bit = self.sector_bit(addr);
        self.sets[set]
            .iter()
            .any(|l| l.tag == tag && l.valid_sectors & bit != 0)
    }

    /// Install the sector (whole line when unsectored) containing `addr`,
    /// evicting the least recently used line if the set is full.
    pub fn fill(&mut self, addr: u64) {
        self.stats.fills += 1;
        let tag = self.line_addr(addr);
        let set_idx = self.set_index(tag);
        let bit = self.sector_bit(addr);
        self.stamp += 1;
        let stamp = self.stamp;
        let set = &mut self.sets[set_idx];
        if let Some(line) = set.iter_mut().find(|l| l.tag == tag) {
            line.valid_sectors |= bit;
            line.stamp = stamp;
            return;
        }
        if set.len() == self.assoc {
            let victim = set
                .iter()
                .enumerate()
                .min_by_key(|(_, l)| l.stamp)
                .map(|(i, _)| i)
                .expect("non-empty set");
            set.swap_remove(victim);
            self.stats.evictions += 1;
        }
        set.push(Line {
            tag,
            valid_sectors: bit,
            stamp,
        });
    }
}
