//! Machine-readable results of one simulation run.
//!
//! A report is plain serializable data: every counter the engine keeps,
//! the resolved model selection, a per-kernel cycle breakdown, the
//! configuration echo, and the digest of the trace that produced it, so
//! any two reports can be checked for like-for-like comparability.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cache::CacheStats;
use crate::config::{GpuConfig, ModelKind};

/// Version stamp embedded in every report.
pub const SIMULATOR_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Which hardware model served each subsystem during the run, after
/// per-subsystem overrides were resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSelection {
    pub front_end: ModelKind,
    pub result_bus: ModelKind,
    pub memory: ModelKind,
}

impl ModelSelection {
    /// Human-readable name: the single model name when all three
    /// subsystems use the same one, otherwise a per-subsystem breakdown.
    pub fn label(&self) -> String {
        use alloc::format;
        if self.front_end == self.result_bus && self.result_bus == self.memory {
            String::from(self.front_end.as_str())
        } else {
            format!(
                "front_end={},result_bus={},memory={}",
                self.front_end.as_str(),
                self.result_bus.as_str(),
                self.memory.as_str()
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCycles {
    pub kernel_id: u32,
    pub cycles: u64,
}

/// Instruction flow totals across the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionCounts {
    /// Instruction-cache fetch groups probed (one cache access each).
    pub fetch_groups: u64,
    /// Instructions placed into instruction buffers, terminators included.
    pub decoded: u64,
    /// Non-terminator instructions handed to collector units.
    pub issued: u64,
    /// Instructions dispatched from collector units to execution or
    /// memory pipelines.
    pub dispatched: u64,
    /// Instructions architecturally completed (register write-back or
    /// store/terminal acknowledgment).
    pub completed: u64,
    /// Warp terminators retired.
    pub exits_retired: u64,
    /// Write-after-read exposures observed at dispatch (diagnostic; the
    /// scoreboard deliberately does not block them).
    pub war_hazards_detected: u64,
}

/// Why a sub-core's issue slot went unused, one count per stalled cycle,
/// classified by precedence: a ready warp lacking a collector unit
/// outranks a scoreboard dependence, which outranks having no candidate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IssueStalls {
    pub no_eligible_warp: u64,
    pub scoreboard_block: u64,
    pub no_free_cu: u64,
}

/// Result-bus/write-back scheduling outcomes for one sub-core.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultBusCounters {
    pub reservations: u64,
    pub completions: u64,
    pub bus_stall_cycles: u64,
    pub bank_port_stall_cycles: u64,
    pub max_same_bank_writebacks_per_cycle: u32,
    pub port_violations: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubCoreCounters {
    pub issue_stalls: IssueStalls,
    /// Source reads denied a register-bank port in a cycle.
    pub read_port_conflicts: u64,
    pub result_bus: ResultBusCounters,
    /// Cycle the sub-core's last warp terminator retired, if any did.
    pub last_retire_cycle: Option<u64>,
}

/// Memory-pipeline totals across the whole run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryCounters {
    pub dispatch_latch_stall_cycles: u64,
    pub coalescing_cycles: u64,
    pub requests_generated: u64,
    pub requests_granted: u64,
    pub shared_conflict_cycles: u64,
    pub wb_latch_stall_cycles: u64,
    pub buffer_full_stall_cycles: u64,
    /// Address comparators the active coalescer design needs per cycle.
    pub comparators_per_coalesce: u64,
}

/// Hit/miss totals per cache. `l0i` has one entry per sub-core under the
/// improved front end and is empty under the baseline (which has no L0I).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheCounters {
    pub l0i: Vec<CacheStats>,
    pub l1i: CacheStats,
    pub l1d: CacheStats,
}

impl CacheCounters {
    /// Sum of all per-sub-core L0I counters.
    pub fn l0i_total(&self) -> CacheStats {
        let mut total = CacheStats::default();
        for s in &self.l0i {
            total.accesses += s.accesses;
            total.hits += s.hits;
            total.misses += s.misses;
            total.fills += s.fills;
            total.evictions += s.evictions;
        }
        total
    }
}

/// Everything one simulation produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub simulator_version: String,
    pub trace_name: String,
    /// 64-bit digest of the simulated trace, hex-encoded; comparisons
    /// require equal digests.
    pub trace_digest: String,
    pub models: ModelSelection,
    pub total_cycles: u64,
    pub per_kernel_cycles: Vec<KernelCycles>,
    pub instructions: InstructionCounts,
    pub caches: CacheCounters,
    pub sub_cores: Vec<SubCoreCounters>,
    pub memory: MemoryCounters,
    /// Online invariant failures observed during the run; must be zero.
    pub assertion_violations: u64,
    pub config: GpuConfig,
}

impl RunReport {
    /// Cross-check the report's internal accounting. Violations indicate
    /// an engine bug, not a property of the simulated workload.
    pub fn check_invariants(&self) -> Result<(), String> {
        let caches = [
            ("l1i", &self.caches.l1i),
            ("l1d", &self.caches.l1d),
        ];
        for (name, c) in caches {
            if c.hits + c.misses != c.accesses {
                return Err(alloc::format!(
                    "{name}: hits {} + misses {} != accesses {}",
                    c.hits,
                    c.misses,
                    c.accesses
                ));
            }
        }
        for (i, c) in self.caches.l0i.iter().enumerate() {
            if c.hits + c.misses != c.accesses {
                return Err(alloc::format!("l0i[{i}]: hit/miss/access mismatch"));
            }
        }
        let kernel_sum: u64 = self.per_kernel_cycles.iter().map(|k| k.cycles).sum();
        if kernel_sum != self.total_cycles {
            return Err(alloc::format!(
                "kernel cycles sum {} != total {}",
                kernel_sum,
                self.total_cycles
            ));
        }
        let ins = &self.instructions;
        if !(ins.issued == ins.dispatched && ins.dispatched == ins.completed) {
            return Err(alloc::format!(
                "conservation broken: issued {} dispatched {} completed {}",
                ins.issued,
                ins.dispatched,
                ins.completed
            ));
        }
        if ins.decoded != ins.issued + ins.exits_retired {
            return Err(alloc::format!(
                "decoded {} != issued {} + exits {}",
                ins.decoded,
                ins.issued,
                ins.exits_retired
            ));
        }
        if self.memory.requests_generated != self.memory.requests_granted {
            return Err(alloc::format!(
                "memory requests generated {} != granted {}",
                self.memory.requests_generated,
                self.memory.requests_granted
            ));
        }
        if self.assertion_violations != 0 {
            return Err(alloc::format!(
                "{} online assertion violations",
                self.assertion_violations
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty_report() -> RunReport {
        RunReport {
            simulator_version: SIMULATOR_VERSION.into(),
            trace_name: "t".into(),
            trace_digest: "0".into(),
            models: ModelSelection {
                front_end: ModelKind::Improved,
                result_bus: ModelKind::Improved,
                memory: ModelKind::Improved,
            },
            total_cycles: 0,
            per_kernel_cycles: Vec::new(),
            instructions: InstructionCounts::default(),
            caches: CacheCounters::default(),
            sub_cores: Vec::new(),
            memory: MemoryCounters::default(),
            assertion_violations: 0,
            config: GpuConfig::default(),
        }
    }

    #[test]
    fn json_round_trip_preserves_report() {
        let mut r = empty_report();
        r.total_cycles = 42;
        r.per_kernel_cycles.push(KernelCycles {
            kernel_id: 1,
            cycles: 42,
        });
        r.caches.l0i.push(CacheStats {
            accesses: 3,
            hits: 1,
            misses: 2,
            fills: 2,
            evictions: 0,
        });
        let text = serde_json::to_string_pretty(&r).unwrap();
        let back: RunReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn invariant_checks_catch_bad_accounting() {
        let ok = empty_report();
        assert!(ok.check_invariants().is_ok());

        let mut bad = empty_report();
        bad.instructions.issued = 5;
        assert!(bad.check_invariants().is_err());

        let mut bad = empty_report();
        bad.caches.l1i.accesses = 10;
        bad.caches.l1i.hits = 4;
        bad.caches.l1i.misses = 5;
        assert!(bad.check_invariants().unwrap_err().contains("l1i"));

        let mut bad = empty_report();
        bad.total_cycles = 7;
        assert!(bad.check_invariants().is_err());

        let mut bad = empty_report();
        bad.assertion_violations = 1;
        assert!(bad.check_invariants().is_err());
    }

    #[test]
    fn l0i_totals_aggregate_all_sub_cores() {
        let mut r = empty_report();
        for i in 0..4 {
            r.caches.l0i.push(CacheStats {
                accesses: 10 + i,
                hits: 5,
                misses: 5 + i,
                fills: 1,
                evictions: 0,
            });
        }
        let total = r.caches.l0i_total();
        assert_eq!(total.accesses, 46);
        assert_eq!(total.hits, 20);
        assert_eq!(total.misses, 26);
    }
}
