//! The cycle engine: one streaming multiprocessor advanced cycle by
//! cycle, evaluating stages in fixed reverse-pipeline order so that
//! same-cycle structural hazards resolve without intra-cycle iteration:
//!
//! result-bus commit → memory write-back arbitration → memory request
//! arbitration/coalescing → execution progress → dispatch-ready →
//! operand-read arbitration → issue → decode → instruction-cache
//! arbitration → fetch → fill completions.
//!
//! Kernels run sequentially: the next kernel's warps begin only after
//! the previous kernel fully drains. All state iterates in fixed orders
//! over ordered containers, so identical inputs produce byte-identical
//! reports.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use core::fmt;

use crate::collector::{
    arbitrate_reads, bank_of, CollectorUnits, CuEntry, GtoState, PortLedger, Scoreboard,
    SrcOperand,
};
use crate::config::{GpuConfig, ModelKind};
use crate::frontend::{FrontEnd, WarpStream};
use crate::isa::{sub_core_of, OpcodeClass};
use crate::mem::{
    full_coalesce_comparators, stepwise_coalesce_comparators, MemEvent, MemInstr,
    MemPipeline,
};
use crate::report::{
    CacheCounters, InstructionCounts, IssueStalls, KernelCycles, MemoryCounters,
    ModelSelection, ResultBusCounters, RunReport, SubCoreCounters, SIMULATOR_VERSION,
};
use crate::result_bus::{ScheduledWb, WritebackSchedule};
use crate::trace::TraceFile;

/// A failed simulation. Livelock reports the cycle and a snapshot of the
/// structures still holding work.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimError {
    InvalidConfig(String),
    InvalidTrace(String),
    Livelock { cycle: u64, detail: String },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::InvalidConfig(m) => write!(f, "invalid configuration: {m}"),
            SimError::InvalidTrace(m) => write!(f, "invalid trace: {m}"),
            SimError::Livelock { cycle, detail } => {
                write!(f, "livelock at cycle {cycle}: {detail}")
            }
        }
    }
}

#[derive(Debug, Clone, Default)]
struct WarpCtx {
    exited: bool,
    /// Issued but not yet architecturally completed instructions.
    in_flight: u32,
}

struct Engine<'a> {
    cfg: &'a GpuConfig,
    trace: &'a TraceFile,
    fe: FrontEnd,
    mem: MemPipeline,
    scoreboard: Scoreboard,
    cus: Vec<CollectorUnits>,
    gto: Vec<GtoState>,
    ledgers: Vec<PortLedger>,
    rb: Vec<WritebackSchedule>,
    warps: BTreeMap<u32, WarpCtx>,
    sub_warps: Vec<Vec<u32>>,
    now: u64,

    issued: u64,
    dispatched: u64,
    completed: u64,
    exits_retired: u64,
    war_hazards: u64,
    stalls: Vec<IssueStalls>,
    read_port_conflicts: Vec<u64>,
    last_retire: Vec<Option<u64>>,
    assertion_violations: u64,

    last_progress_cycle: u64,
    progress_mark: u64,
}

impl<'a> Engine<'a> {
    fn new(trace: &'a TraceFile, cfg: &'a GpuConfig) -> Self {
        let n = cfg.num_sub_cores as usize;
        Engine {
            cfg,
            trace,
            fe: FrontEnd::new(cfg, trace),
            mem: MemPipeline::new(cfg),
            scoreboard: Scoreboard::default(),
            cus: (0..n)
                .map(|_| CollectorUnits::new(cfg.collector_units_per_sub_core))
                .collect(),
            gto: (0..n).map(|_| GtoState::default()).collect(),
            ledgers: (0..n)
                .map(|_| PortLedger::new(cfg.rf_banks_per_sub_core, cfg.rf_ports_per_bank))
                .collect(),
            rb: (0..n)
                .map(|_| {
                    WritebackSchedule::new(
                        cfg.result_bus_model(),
                        cfg.result_bus_count,
                        cfg.rf_ports_per_bank,
                    )
                })
                .collect(),
            warps: BTreeMap::new(),
            sub_warps: alloc::vec![Vec::new(); n],
            now: 0,
            issued: 0,
            dispatched: 0,
            completed: 0,
            exits_retired: 0,
            war_hazards: 0,
            stalls: alloc::vec![IssueStalls::default(); n],
            read_port_conflicts: alloc::vec![0; n],
            last_retire: alloc::vec![None; n],
            assertion_violations: 0,
            last_progress_cycle: 0,
            progress_mark: 0,
        }
    }

    fn load_kernel(&mut self, kernel_id: u32, num_warps: u32) {
        let n = self.cfg.num_sub_cores;
        let all = self.trace.warp_streams();
        let streams: Vec<WarpStream> = (0..num_warps)
            .map(|w| {
                WarpStream::new(
                    all.get(&(kernel_id, w)).cloned().unwrap_or_default(),
                )
            })
            .collect();
        self.fe.load_kernel(kernel_id, streams);
        self.mem.reset_for_kernel();
        self.warps = (0..num_warps).map(|w| (w, WarpCtx::default())).collect();
        for list in &mut self.sub_warps {
            list.clear();
        }
        for w in 0..num_warps {
            self.sub_warps[sub_core_of(w, n) as usize].push(w);
        }
        for g in &mut self.gto {
            *g = GtoState::default();
        }
        self.last_progress_cycle = self.now;
    }

    fn drained(&self) -> bool {
        self.warps.values().all(|c| c.exited)
            && !self.fe.busy()
            && !self.mem.busy()
            && self.rb.iter().all(WritebackSchedule::is_empty)
            && self.cus.iter().all(|c| c.occupied() == 0)
            && self.scoreboard.pending_total() == 0
    }

    fn warp_completed(&mut self, warp: u32) {
        match self.warps.get_mut(&warp) {
            Some(ctx) if ctx.in_flight > 0 => ctx.in_flight -= 1,
            _ => self.assertion_violations += 1,
        }
        self.completed += 1;
    }

    fn apply_mem_events(&mut self, events: Vec<MemEvent>) {
        for ev in events {
            if let Some(reg) = ev.dest_reg {
                if !self.scoreboard.remove(ev.warp_id, reg) {
                    self.assertion_violations += 1;
                }
            }
            self.warp_completed(ev.warp_id);
        }
    }

    fn step(&mut self) -> Result<(), SimError> {
        let now = self.now;
        let n = self.cfg.num_sub_cores as usize;
        for l in &mut self.ledgers {
            l.reset();
        }

        // 1. Result-bus commit: scheduled fixed-latency write-backs land,
        //    consuming bank write ports first (register writes have
        //    priority over reads this cycle).
        for sc in 0..n {
            for wb in self.rb[sc].commit(now) {
                if let (Some(reg), Some(bank)) = (wb.dest_reg, wb.dest_bank) {
                    self.ledgers[sc].record_write(bank);
                    if !self.scoreboard.remove(wb.warp_id, reg) {
                        self.assertion_violations += 1;
                    }
                }
                self.warp_completed(wb.warp_id);
            }
        }

        // 2. Memory write-back arbitration.
        let events = self.mem.writeback_stage(now, &mut self.ledgers);
        self.apply_mem_events(events);

        // 3. Memory request arbitration, coalescing, latch movement.
        let events = self.mem.request_stage(now);
        self.apply_mem_events(events);

        // 4. Execution-unit progress: fixed-latency work lives entirely
        //    in the result-bus schedule and the memory pipeline's event
        //    calendars, so there is nothing further to advance here.

        // 5. Dispatch-ready.
        self.dispatch_ready(now);

        // 6. Operand-read arbitration over this cycle's leftover ports.
        for sc in 0..n {
            self.read_port_conflicts[sc] +=
                arbitrate_reads(&mut self.cus[sc], &mut self.ledgers[sc]);
        }
        if self.cfg.result_bus_model() == ModelKind::Improved {
            // With the port-respecting write-back models, no bank may
            // exceed its port budget once reads are granted.
            for sc in 0..n {
                if !self.ledgers[sc].within_budget() {
                    self.assertion_violations += 1;
                }
            }
        }

        // 7. Issue.
        self.issue(now);

        // 8-11. Front end: decode, instruction-cache arbitration, fetch,
        //       fill completions.
        self.fe.decode(now);
        self.fe.arbitrate_l1i(now);
        self.fe.fetch(now, &self.trace.instructions);
        self.fe.complete_fills(now);

        self.now += 1;
        self.check_progress()
    }

    fn dispatch_ready(&mut self, now: u64) {
        let n = self.cfg.num_sub_cores as usize;
        for sc in 0..n {
            let mut mem_block_noted = false;
            for idx in self.cus[sc].ready_indices() {
                let entry = self.cus[sc].units[idx]
                    .clone()
                    .expect("ready index points at an occupied unit");
                if entry.opcode.is_memory() {
                    if self.mem.can_accept(sc as u32) {
                        self.war_hazards += self.cus[sc].war_hazards_against(&entry);
                        let inst = &self.trace.instructions[entry.trace_index];
                        self.mem.accept(
                            now,
                            MemInstr {
                                trace_index: entry.trace_index,
                                sub_core: sc as u32,
                                warp_id: entry.warp_id,
                                opcode: entry.opcode,
                                dest_reg: entry.dest_reg,
                                active_mask: inst.active_mask,
                                addrs: inst.mem_addrs.clone().unwrap_or_default(),
                            },
                        );
                        self.cus[sc].units[idx] = None;
                        self.dispatched += 1;
                    } else if !mem_block_noted {
                        self.mem.note_dispatch_blocked();
                        mem_block_noted = true;
                    }
                } else {
                    let latency = self.cfg.latency_of(entry.opcode);
                    let wb = ScheduledWb {
                        warp_id: entry.warp_id,
                        dest_reg: entry.dest_reg,
                        dest_bank: entry
                            .dest_reg
                            .map(|r| bank_of(r, self.cfg.rf_banks_per_sub_core)),
                    };
                    if self.rb[sc].try_reserve(now, latency, wb) {
                        self.war_hazards += self.cus[sc].war_hazards_against(&entry);
                        self.cus[sc].units[idx] = None;
                        self.dispatched += 1;
                    }
                    // On failure the unit keeps its entry and retries.
                }
            }
        }
    }

    fn issue(&mut self, now: u64) {
        let n = self.cfg.num_sub_cores as usize;
        for sc in 0..n {
            let mut eligible: Vec<u32> = Vec::new();
            let mut any_active = false;
            let mut saw_scoreboard_block = false;
            let mut saw_cu_block = false;
            let cu_free = self.cus[sc].has_free();
            for &w in &self.sub_warps[sc] {
                let ctx = &self.warps[&w];
                if ctx.exited {
                    continue;
                }
                any_active = true;
                let Some(head) = self.fe.ibuffer_head(w) else {
                    continue;
                };
                let inst = &self.trace.instructions[head];
                if inst.opcode == OpcodeClass::Exit {
                    // A terminator retires in the issue slot, but only
                    // once every older instruction of the warp has
                    // completed; until then it waits like a dependence.
                    if ctx.in_flight == 0 {
                        eligible.push(w);
                    } else {
                        saw_scoreboard_block = true;
                    }
                } else if self
                    .scoreboard
                    .blocks(w, inst.dest_reg, &inst.src_regs)
                {
                    saw_scoreboard_block = true;
                } else if !cu_free {
                    saw_cu_block = true;
                } else {
                    eligible.push(w);
                }
            }
            if let Some(w) = self.gto[sc].select(&eligible) {
                let head = self
                    .fe
                    .ibuffer_pop(w)
                    .expect("issued warp has a buffered instruction");
                let inst = &self.trace.instructions[head];
                if inst.opcode == OpcodeClass::Exit {
                    self.warps.get_mut(&w).unwrap().exited = true;
                    self.exits_retired += 1;
                    self.last_retire[sc] = Some(now);
                } else {
                    let banks = self.cfg.rf_banks_per_sub_core;
                    let srcs = inst
                        .src_regs
                        .iter()
                        .map(|&r| SrcOperand {
                            reg: r,
                            bank: bank_of(r, banks),
                            read: false,
                        })
                        .collect();
                    if let Some(d) = inst.dest_reg {
                        if !self.scoreboard.insert(w, d) {
                            self.assertion_violations += 1;
                        }
                    }
                    self.cus[sc].allocate(CuEntry {
                        trace_index: head,
                        warp_id: w,
                        opcode: inst.opcode,
                        dest_reg: inst.dest_reg,
                        srcs,
                        alloc_cycle: now,
                    });
                    self.warps.get_mut(&w).unwrap().in_flight += 1;
                    self.issued += 1;
                }
            } else if any_active {
                if saw_cu_block {
                    self.stalls[sc].no_free_cu += 1;
                } else if saw_scoreboard_block {
                    self.stalls[sc].scoreboard_block += 1;
                } else {
                    self.stalls[sc].no_eligible_warp += 1;
                }
            }
        }
    }

    /// Livelock guard: abort when no architectural event has happened
    /// for a whole watchdog window.
    fn check_progress(&mut self) -> Result<(), SimError> {
        let mark = self.issued
            + self.dispatched
            + self.completed
            + self.exits_retired
            + self.fe.decoded
            + self.fe.fetch_groups
            + self.mem.requests_granted
            + self.rb.iter().map(|r| r.reservations).sum::<u64>();
        if mark != self.progress_mark {
            self.progress_mark = mark;
            self.last_progress_cycle = self.now;
            return Ok(());
        }
        if self.now - self.last_progress_cycle >= self.cfg.livelock_window {
            let unexited = self.warps.values().filter(|c| !c.exited).count();
            let in_flight: u32 = self.warps.values().map(|c| c.in_flight).sum();
            return Err(SimError::Livelock {
                cycle: self.now,
                detail: format!(
                    "no architectural event for {} cycles; {} of {} warps not exited, \
                     {} instructions in flight, front-end busy: {}, collector units \
                     occupied: {}, memory pipeline busy: {}, result-bus entries \
                     pending: {}, scoreboard registers pending: {}",
                    self.cfg.livelock_window,
                    unexited,
                    self.warps.len(),
                    in_flight,
                    self.fe.busy(),
                    self.cus.iter().map(CollectorUnits::occupied).sum::<usize>(),
                    self.mem.busy(),
                    !self.rb.iter().all(WritebackSchedule::is_empty),
                    self.scoreboard.pending_total(),
                ),
            });
        }
        Ok(())
    }

    fn into_report(self, per_kernel: Vec<KernelCycles>) -> RunReport {
        let total_cycles = self.now;
        let sub_cores = (0..self.cfg.num_sub_cores as usize)
            .map(|sc| SubCoreCounters {
                issue_stalls: self.stalls[sc],
                read_port_conflicts: self.read_port_conflicts[sc],
                result_bus: ResultBusCounters {
                    reservations: self.rb[sc].reservations,
                    completions: self.rb[sc].completions,
                    bus_stall_cycles: self.rb[sc].bus_stall_cycles,
                    bank_port_stall_cycles: self.rb[sc].bank_port_stall_cycles,
                    max_same_bank_writebacks_per_cycle: self.rb[sc]
                        .max_same_bank_writebacks_per_cycle,
                    port_violations: self.rb[sc].port_violations,
                },
                last_retire_cycle: self.last_retire[sc],
            })
            .collect();
        let comparators = match self.cfg.memory_model() {
            ModelKind::Baseline => full_coalesce_comparators(self.cfg.warp_width),
            ModelKind::Improved => stepwise_coalesce_comparators(self.cfg.warp_width),
        };
        RunReport {
            simulator_version: SIMULATOR_VERSION.into(),
            trace_name: self.trace.header.name.clone(),
            trace_digest: format!("{:016x}", self.trace.digest()),
            models: ModelSelection {
                front_end: self.cfg.front_end_model(),
                result_bus: self.cfg.result_bus_model(),
                memory: self.cfg.memory_model(),
            },
            total_cycles,
            per_kernel_cycles: per_kernel,
            instructions: InstructionCounts {
                fetch_groups: self.fe.fetch_groups,
                decoded: self.fe.decoded,
                issued: self.issued,
                dispatched: self.dispatched,
                completed: self.completed,
                exits_retired: self.exits_retired,
                war_hazards_detected: self.war_hazards,
            },
            caches: CacheCounters {
                l0i: self.fe.l0i_stats(),
                l1i: self.fe.l1i_stats(),
                l1d: self.mem.l1d_stats(),
            },
            sub_cores,
            memory: MemoryCounters {
                dispatch_latch_stall_cycles: self.mem.dispatch_latch_stall_cycles,
                coalescing_cycles: self.mem.coalescing_cycles,
                requests_generated: self.mem.requests_generated,
                requests_granted: self.mem.requests_granted,
                shared_conflict_cycles: self.mem.shared_conflict_cycles,
                wb_latch_stall_cycles: self.mem.wb_latch_stall_cycles,
                buffer_full_stall_cycles: self.mem.buffer_full_stall_cycles,
                comparators_per_coalesce: comparators,
            },
            assertion_violations: self.assertion_violations
                + self.mem.assertion_violations,
            config: self.cfg.clone(),
        }
    }
}

/// Simulate a whole trace under `cfg` and return the report.
///
/// Kernels run in header order, each from a fully drained machine. The
/// trace and configuration are validated first; a trace declaring no
/// kernels and carrying no instructions is the empty workload and yields
/// a zero-cycle report.
pub fn run(trace: &TraceFile, cfg: &GpuConfig) -> Result<RunReport, SimError> {
    cfg.validate().map_err(SimError::InvalidConfig)?;
    if trace.header.kernels.is_empty() && trace.instructions.is_empty() {
        let eng = Engine::new(trace, cfg);
        return Ok(eng.into_report(Vec::new()));
    }
    trace
        .validate()
        .map_err(|e| SimError::InvalidTrace(format!("{e}")))?;
    for k in &trace.header.kernels {
        if k.num_warps > cfg.max_warps_per_sm {
            return Err(SimError::InvalidTrace(format!(
                "kernel {} declares {} warps but the SM holds at most {}",
                k.kernel_id, k.num_warps, cfg.max_warps_per_sm
            )));
        }
    }
    let mut eng = Engine::new(trace, cfg);
    let mut per_kernel = Vec::new();
    let kernels: Vec<(u32, u32)> = trace
        .header
        .kernels
        .iter()
        .map(|k| (k.kernel_id, k.num_warps))
        .collect();
    for (kernel_id, num_warps) in kernels {
        eng.load_kernel(kernel_id, num_warps);
        let start = eng.now;
        while !eng.drained() {
            eng.step()?;
        }
        per_kernel.push(KernelCycles {
            kernel_id,
            cycles: eng.now - start,
        });
    }
    Ok(eng.into_report(per_kernel))
}
