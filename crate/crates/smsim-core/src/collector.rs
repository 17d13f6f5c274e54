//! Issue scheduling, scoreboarding and operand collection.
//!
//! Each sub-core owns: a scoreboard tracking destination registers of
//! in-flight instructions (blocking RAW and WAW at issue; WAR is
//! deliberately not tracked, only detected and counted), a
//! greedy-then-oldest warp selector, a small set of collector units that
//! gather source operands from the banked register file, and a per-cycle
//! port ledger enforcing the read/write port budget of each bank, with
//! writes taking priority over reads.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec;
use alloc::vec::Vec;

use crate::isa::OpcodeClass;

/// Register-to-bank mapping: `reg_id % num_banks`.
pub fn bank_of(reg_id: u32, num_banks: u32) -> u32 {
    debug_assert!(num_banks > 0);
    reg_id % num_banks
}

/// Per-cycle port usage of one sub-core's register banks. Reset every
/// cycle; writes are recorded first (write-back priority) and reads are
/// granted only from leftover capacity.
#[derive(Debug, Clone)]
pub struct PortLedger {
    ports: u32,
    reads: Vec<u32>,
    writes: Vec<u32>,
}

impl PortLedger {
    pub fn new(num_banks: u32, ports_per_bank: u32) -> Self {
        PortLedger {
            ports: ports_per_bank,
            reads: vec![0; num_banks as usize],
            writes: vec![0; num_banks as usize],
        }
    }

    pub fn reset(&mut self) {
        self.reads.iter_mut().for_each(|c| *c = 0);
        self.writes.iter_mut().for_each(|c| *c = 0);
    }

    /// Record a write unconditionally (used where the model does not
    /// police bank ports, preserving the baseline's over-subscription).
    pub fn record_write(&mut self, bank: u32) {
        self.writes[bank as usize] += 1;
    }

    /// Record a write only if the bank still has a free port.
    pub fn try_reserve_write(&mut self, bank: u32) -> bool {
        let b = bank as usize;
        if self.writes[b] < self.ports {
            self.writes[b] += 1;
            true
        } else {
            false
        }
    }

    pub fn can_read(&self, bank: u32) -> bool {
        let b = bank as usize;
        self.reads[b] + self.writes[b] < self.ports
    }

    pub fn record_read(&mut self, bank: u32) {
        debug_assert!(self.can_read(bank));
        self.reads[bank as usize] += 1;
    }

    pub fn writes_used(&self, bank: u32) -> u32 {
        self.writes[bank as usize]
    }

    /// True iff every bank is within its port budget this cycle.
    pub fn within_budget(&self) -> bool {
        self.reads
            .iter()
            .zip(&self.writes)
            .all(|(r, w)| r + w <= self.ports)
    }
}

/// Pending destination registers per warp.
#[derive(Debug, Clone, Default)]
pub struct Scoreboard {
    sets: BTreeMap<u32, BTreeSet<u32>>,
}

impl Scoreboard {
    /// Would this instruction's registers collide with a pending write?
    /// Sources block (RAW) and the destination blocks (WAW).
    pub fn blocks(&self, warp: u32, dest: Option<u32>, srcs: &[u32]) -> bool {
        let Some(set) = self.sets.get(&warp) else {
            return false;
        };
        if let Some(d) = dest {
            if set.contains(&d) {
                return true;
            }
        }
        srcs.iter().any(|r| set.contains(r))
    }

    /// Register a pending write. Returns false if the register was already
    /// pending, which issue-side WAW blocking should make impossible.
    pub fn insert(&mut self, warp: u32, reg: u32) -> bool {
        self.sets.entry(warp).or_default().insert(reg)
    }

    /// Clear a pending write at write-back. Returns false if it was not
    /// pending (an accounting bug in the caller).
    pub fn remove(&mut self, warp: u32, reg: u32) -> bool {
        let Some(set) = self.sets.get_mut(&warp) else {
            return false;
        };
        let removed = set.remove(&reg);
        if set.is_empty() {
            self.sets.remove(&warp);
        }
        removed
    }

    pub fn pending_total(&self) -> usize {
        self.sets.values().map(BTreeSet::len).sum()
    }
}

/// Greedy-then-oldest warp selection state for one sub-core.
#[derive(Debug, Clone, Default)]
pub struct GtoState {
    pub last_greedy: Option<u32>,
}

impl GtoState {
    /// Pick from `eligibles` (ascending warp ids): the last greedily
    /// chosen warp if still eligible, otherwise the oldest (smallest id).
    /// The winner becomes the new greedy warp.
    pub fn select(&mut self, eligibles: &[u32]) -> Option<u32> {
        debug_assert!(eligibles.windows(2).all(|w| w[0] < w[1]));
        let pick = match self.last_greedy {
            Some(last) if eligibles.contains(&last) => Some(last),
            _ => eligibles.first().copied(),
        };
        if let Some(w) = pick {
            self.last_greedy = Some(w);
        }
        pick
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrcOperand {
    pub reg: u32,
    pub bank: u32,
    pub read: bool,
}

/// One instruction parked in a collector unit while its sources are read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CuEntry {
    /// Position of the instruction in the trace, for address lookups.
    pub trace_index: usize,
    pub warp_id: u32,
    pub opcode: OpcodeClass,
    pub dest_reg: Option<u32>,
    pub srcs: Vec<SrcOperand>,
    pub alloc_cycle: u64,
}

impl CuEntry {
    pub fn all_sources_read(&self) -> bool {
        self.srcs.iter().all(|s| s.read)
    }
}

/// The collector units of one sub-core.
#[derive(Debug, Clone)]
pub struct CollectorUnits {
    pub units: Vec<Option<CuEntry>>,
}

impl CollectorUnits {
    pub fn new(count: u32) -> Self {
        CollectorUnits {
            units: vec![None; count as usize],
        }
    }

    pub fn has_free(&self) -> bool {
        self.units.iter().any(Option::is_none)
    }

    pub fn occupied(&self) -> usize {
        self.units.iter().filter(|u| u.is_some()).count()
    }

    /// Place an entry in the first free unit.
    pub fn allocate(&mut self, entry: CuEntry) -> usize {
        let slot = self
            .units
            .iter()
            .position(Option::is_none)
            .expect("allocate called without a free collector unit");
        self.units[slot] = Some(entry);
        slot
    }

    /// Indices of units whose occupant has every source read, oldest
    /// first (allocation cycle, then unit index).
    pub fn ready_indices(&self) -> Vec<usize> {
        let mut ready: Vec<(u64, usize)> = self
            .units
            .iter()
            .enumerate()
            .filter_map(|(i, u)| {
                u.as_ref()
                    .filter(|e| e.all_sources_read())
                    .map(|e| (e.alloc_cycle, i))
            })
            .collect();
        ready.sort_unstable();
        ready.into_iter().map(|(_, i)| i).collect()
    }

    /// Count same-warp entries older than `dispatching` holding a
    /// still-unread source of its destination register: writes that would
    /// overtake an outstanding read (write-after-read) if timing ever let
    /// the write land first. Purely diagnostic.
    pub fn war_hazards_against(&self, dispatching: &CuEntry) -> u64 {
        let Some(dest) = dispatching.dest_reg else {
            return 0;
        };
        self.units
            .iter()
            .flatten()
            .filter(|e| {
                e.warp_id == dispatching.warp_id
                    && e.alloc_cycle < dispatching.alloc_cycle
                    && e.srcs.iter().any(|s| !s.read && s.reg == dest)
            })
            .count() as u64
    }
}

/// Grant pending source reads against this cycle's leftover bank ports.
/// Grant order: oldest unit first (allocation cycle, then unit index),
/// sources in ascending position. Returns the number of reads denied a
/// port this cycle.
pub fn arbitrate_reads(units: &mut CollectorUnits, ledger: &mut PortLedger) -> u64 {
    let mut order: Vec<(u64, usize)> = units
        .units
        .iter()
        .enumerate()
        .filter_map(|(i, u)| u.as_ref().map(|e| (e.alloc_cycle, i)))
        .collect();
    order.sort_unstable();
    let mut conflicts = 0;
    for (_, idx) in order {
        let entry = units.units[idx].as_mut().unwrap();
        for src in entry.srcs.iter_mut() {
            if src.read {
                continue;
            }
            if ledger.can_read(src.bank) {
                ledger.record_read(src.bank);
                src.read = true;
            } else {
                conflicts += 1;
            }
        }
    }
    conflicts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bank_mapping_is_modulo() {
        assert_eq!(bank_of(8, 8), 0);
        assert_eq!(bank_of(11, 8), 3);
        assert_eq!(bank_of(0, 8), 0);
    }

    #[test]
    fn gto_prefers_last_greedy_then_oldest() {
        let mut gto = GtoState::default();
        // Never set: oldest wins and becomes greedy.
        assert_eq!(gto.select(&[2, 5, 9]), Some(2));
        gto.last_greedy = Some(5);
        assert_eq!(gto.select(&[2, 5, 9]), Some(5));
        // Greedy warp ineligible: oldest eligible wins.
        assert_eq!(gto.select(&[2, 9]), Some(2));
        assert_eq!(gto.last_greedy, Some(2));
        // Nothing eligible: no pick, greedy unchanged.
        assert_eq!(gto.select(&[]), None);
        assert_eq!(gto.last_greedy, Some(2));
    }

    #[test]
    fn scoreboard_blocks_raw_and_waw() {
        let mut sb = Scoreboard::default();
        assert!(sb.insert(0, 3));
        assert!(sb.blocks(0, None, &[3])); // RAW
        assert!(sb.blocks(0, Some(3), &[])); // WAW
        assert!(!sb.blocks(0, Some(4), &[5]));
        assert!(!sb.blocks(1, Some(3), &[3])); // other warp unaffected
        assert!(sb.remove(0, 3));
        assert!(!sb.blocks(0, None, &[3]));
        assert!(!sb.remove(0, 3)); // double-remove is flagged
        assert_eq!(sb.pending_total(), 0);
    }

    fn entry(warp: u32, alloc: u64, srcs: &[u32]) -> CuEntry {
        CuEntry {
            trace_index: 0,
            warp_id: warp,
            opcode: OpcodeClass::AluInt,
            dest_reg: Some(24),
            srcs: srcs
                .iter()
                .map(|&r| SrcOperand {
                    reg: r,
                    bank: bank_of(r, 8),
                    read: false,
                })
                .collect(),
            alloc_cycle: alloc,
        }
    }

    #[test]
    fn read_arbitration_respects_port_budget() {
        let mut units = CollectorUnits::new(2);
        // Three sources on bank 0 across two units; 2 ports.
        units.allocate(entry(0, 1, &[0, 8]));
        units.allocate(entry(1, 2, &[16]));
        let mut ledger = PortLedger::new(8, 2);
        let conflicts = arbitrate_reads(&mut units, &mut ledger);
        assert_eq!(conflicts, 1);
        // Oldest unit got both its reads; the younger one was deferred.
        assert!(units.units[0].as_ref().unwrap().all_sources_read());
        assert!(!units.units[1].as_ref().unwrap().all_sources_read());
        // Next cycle the leftover read goes through.
        ledger.reset();
        assert_eq!(arbitrate_reads(&mut units, &mut ledger), 0);
        assert!(units.units[1].as_ref().unwrap().all_sources_read());
    }

    #[test]
    fn reads_on_distinct_banks_do_not_conflict() {
        let mut units = CollectorUnits::new(1);
        units.allocate(entry(0, 1, &[0, 1]));
        let mut ledger = PortLedger::new(8, 2);
        assert_eq!(arbitrate_reads(&mut units, &mut ledger), 0);
        assert!(units.units[0].as_ref().unwrap().all_sources_read());
    }

    #[test]
    fn writes_have_priority_over_reads() {
        let mut units = CollectorUnits::new(1);
        units.allocate(entry(0, 1, &[0]));
        let mut ledger = PortLedger::new(8, 2);
        ledger.record_write(0);
        ledger.record_write(0);
        assert_eq!(arbitrate_reads(&mut units, &mut ledger), 1);
        assert!(!units.units[0].as_ref().unwrap().all_sources_read());
        assert!(ledger.within_budget());
    }

    #[test]
    fn oversubscribed_writes_leave_no_read_capacity() {
        let mut ledger = PortLedger::new(8, 2);
        ledger.record_write(3);
        ledger.record_write(3);
        ledger.record_write(3); // unpoliced over-subscription
        assert!(!ledger.within_budget());
        assert!(!ledger.can_read(3));
        assert!(!ledger.try_reserve_write(3));
        assert!(ledger.can_read(4));
    }

    #[test]
    fn ready_order_is_oldest_first() {
        let mut units = CollectorUnits::new(3);
        let mut young = entry(0, 9, &[]);
        young.srcs.clear();
        let mut old = entry(1, 4, &[]);
        old.srcs.clear();
        units.allocate(young);
        units.allocate(old);
        assert_eq!(units.ready_indices(), vec![1, 0]);
    }

    #[test]
    fn war_detection_counts_unread_older_sources() {
        let mut units = CollectorUnits::new(2);
        // Older instruction of warp 0 still waiting to read r24.
        units.allocate(entry(0, 1, &[24]));
        // Younger instruction writing r24 (dest_reg = 24 in `entry`).
        let younger = entry(0, 5, &[0]);
        assert_eq!(units.war_hazards_against(&younger), 1);
        // Once the older source is read, the overlap is harmless.
        units.units[0].as_mut().unwrap().srcs[0].read = true;
        assert_eq!(units.war_hazards_against(&younger), 0);
        // Different warp never counts.
        let other_warp = entry(1, 5, &[0]);
        assert_eq!(units.war_hazards_against(&other_warp), 0);
    }
}
