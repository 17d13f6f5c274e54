//! Write-back scheduling for fixed-latency instructions.
//!
//! When a fixed-latency instruction dispatches at cycle `t` with latency
//! `L`, its register write lands exactly at `t + L`. The two models differ
//! in what they check before accepting the dispatch:
//!
//! * baseline — cycle `t + L` must hold fewer than `bus_count` write-backs,
//!   with no regard for which register bank each one targets (so three
//!   writes to one 2-port bank can land together);
//! * improved — cycle `t + L` must hold fewer than `rf_ports_per_bank`
//!   write-backs *to the same destination bank*; instructions that write no
//!   register always pass.
//!
//! A failed reservation stalls the dispatch, which retries next cycle while
//! holding its collector unit.
//!
//! Memory instructions never reserve here; their variable-latency
//! write-backs go through the memory pipeline's write-back latches.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::config::ModelKind;

/// One scheduled register write-back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduledWb {
    pub warp_id: u32,
    pub dest_reg: Option<u32>,
    /// Register bank within the sub-core; `None` iff `dest_reg` is.
    pub dest_bank: Option<u32>,
}

/// Future write-back schedule for one sub-core.
#[derive(Debug, Clone)]
pub struct WritebackSchedule {
    model: ModelKind,
    bus_count: u32,
    ports_per_bank: u32,
    ring: BTreeMap<u64, Vec<ScheduledWb>>,
    pub reservations: u64,
    pub completions: u64,
    /// Dispatch stalls due to the baseline bus-capacity check.
    pub bus_stall_cycles: u64,
    /// Dispatch stalls due to the improved per-bank port check.
    pub bank_port_stall_cycles: u64,
    /// Largest number of same-bank write-backs observed in one cycle.
    pub max_same_bank_writebacks_per_cycle: u32,
    /// Commits that exceeded the per-bank port budget (must stay zero in
    /// the improved model; the baseline is allowed to violate it).
    pub port_violations: u64,
}

impl WritebackSchedule {
    pub fn new(model: ModelKind, bus_count: u32, ports_per_bank: u32) -> Self {
        WritebackSchedule {
            model,
            bus_count,
            ports_per_bank,
            ring: BTreeMap::new(),
            reservations: 0,
            completions: 0,
            bus_stall_cycles: 0,
            bank_port_stall_cycles: 0,
            max_same_bank_writebacks_per_cycle: 0,
            port_violations: 0,
        }
    }

    /// Try to book the write-back of an instruction dispatching at `now`
    /// with execution latency `latency`. On failure the relevant stall
    /// counter is incremented and nothing is recorded.
    pub fn try_reserve(&mut self, now: u64, latency: u64, wb: ScheduledWb) -> bool {
        debug_assert!(latency >= 1);
        debug_assert_eq!(wb.dest_reg.is_some(), wb.dest_bank.is_some());
        let at = now + latency;
        let slot = self.ring.entry(at).or_default();
        match self.model {
            ModelKind::Baseline => {
                if slot.len() as u32 >= self.bus_count {
                    self.bus_stall_cycles += 1;
                    return false;
                }
            }
            ModelKind::Improved => {
                if let Some(bank) = wb.dest_bank {
                    let same_bank = slot
                        .iter()
                        .filter(|w| w.dest_bank == Some(bank))
                        .count() as u32;
                    if same_bank >= self.ports_per_bank {
                        self.bank_port_stall_cycles += 1;
                        return false;
                    }
                }
            }
        }
        slot.push(wb);
        self.reservations += 1;
        true
    }

    /// Pop and return every write-back scheduled for cycle `now`, in
    /// reservation order.
    pub fn commit(&mut self, now: u64) -> Vec<ScheduledWb> {
        debug_assert!(self.ring.keys().next().is_none_or(|&c| c >= now));
        let Some(done) = self.ring.remove(&now) else {
            return Vec::new();
        };
        self.completions += done.len() as u64;
        let mut per_bank: BTreeMap<u32, u32> = BTreeMap::new();
        for wb in &done {
            if let Some(bank) = wb.dest_bank {
                *per_bank.entry(bank).or_default() += 1;
            }
        }
        if let Some(&peak) = per_bank.values().max() {
            self.max_same_bank_writebacks_per_cycle =
                self.max_same_bank_writebacks_per_cycle.max(peak);
            if self.model == ModelKind::Improved && peak > self.ports_per_bank {
                self.port_violations += 1;
            }
        }
        done
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }
}
