//! Dual-model memory execution pipeline.
//!
//! Baseline: one SM-wide dispatch latch. Address calculation, full
//! coalescing and request selection happen the cycle the instruction is
//! accepted, but requests leave strictly in generation order at one per
//! cycle, and the latch is held until the last request is sent — so a
//! many-request instruction blocks every other memory instruction on the
//! SM (head-of-line blocking), and completions funnel through a single
//! SM-wide write-back latch.
//!
//! Improved: each sub-core owns a dispatch latch, an address latch that
//! coalesces one sector per cycle into a bounded request buffer, and a
//! write-back latch. A rotating-priority arbiter matches ANY buffered
//! request to each free L1D bank or the shared-memory unit every cycle —
//! requests may leave out of order — and per-structure round-robin
//! write-back arbiters return at most one L1D and one shared-memory
//! completion per cycle across sub-cores.
//!
//! Both models share the sectored L1D (write-through, no write-allocate,
//! allocate-on-fill with sector-granular MSHR merging) and the
//! shared-memory conflict model.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::arbiter::{RotatingPriority, RoundRobin};
use crate::cache::{Cache, CacheStats};
use crate::collector::{bank_of, PortLedger};
use crate::config::{GpuConfig, ModelKind};
use crate::isa::OpcodeClass;

/// Comparator count of the single-cycle full coalescer: every pair of
/// lanes is compared at once.
pub fn full_coalesce_comparators(warp_width: u32) -> u64 {
    let w = warp_width as u64;
    w * (w - 1) / 2
}

/// Comparator count of the one-sector-per-cycle coalescer: the selected
/// lane is compared against every lane.
pub fn stepwise_coalesce_comparators(warp_width: u32) -> u64 {
    warp_width as u64
}

/// One coalesced sector access.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SectorGroup {
    pub sector_addr: u64,
    pub lane_mask: u32,
    pub bank: u32,
}

fn lane_active(mask: u32, lane: u32) -> bool {
    mask & (1 << lane) != 0
}

/// Full coalescing in one logical step: group active lanes by sector,
/// ordered by each group's lowest lane.
pub fn coalesce_full(
    addrs: &[u64],
    active_mask: u32,
    warp_width: u32,
    sector_bytes: u64,
    l1d_banks: u32,
) -> Vec<SectorGroup> {
    let mut remaining = active_mask & width_mask(warp_width);
    let mut out = Vec::new();
    while remaining != 0 {
        let (group, rest) =
            coalesce_step_once(addrs, remaining, sector_bytes, l1d_banks);
        out.push(group);
        remaining = rest;
    }
    out
}

/// One coalescing step: take the lowest unprocessed lane, merge every
/// other unprocessed lane whose address falls in the same sector, and
/// return the group plus the mask of lanes still unprocessed.
pub fn coalesce_step_once(
    addrs: &[u64],
    remaining_mask: u32,
    sector_bytes: u64,
    l1d_banks: u32,
) -> (SectorGroup, u32) {
    debug_assert!(remaining_mask != 0);
    let first = remaining_mask.trailing_zeros();
    let sector = addrs[first as usize] & !(sector_bytes - 1);
    let mut lane_mask = 0u32;
    for lane in first..32 {
        if lane_active(remaining_mask, lane)
            && addrs[lane as usize] & !(sector_bytes - 1) == sector
        {
            lane_mask |= 1 << lane;
        }
    }
    let group = SectorGroup {
        sector_addr: sector,
        lane_mask,
        bank: ((sector / sector_bytes) % l1d_banks as u64) as u32,
    };
    (group, remaining_mask & !lane_mask)
}

fn width_mask(warp_width: u32) -> u32 {
    if warp_width >= 32 {
        u32::MAX
    } else {
        (1 << warp_width) - 1
    }
}

/// Cycles a shared-memory access occupies its unit: the maximum over
/// banks of distinct words requested from that bank. Lanes reading the
/// same word broadcast and count once.
pub fn shared_mem_conflict_cycles(
    addrs: &[u64],
    active_mask: u32,
    warp_width: u32,
    bank_width_bytes: u32,
    num_banks: u32,
) -> u64 {
    let mut words_per_bank: BTreeMap<u64, alloc::collections::BTreeSet<u64>> =
        BTreeMap::new();
    for lane in 0..warp_width.min(32) {
        if !lane_active(active_mask, lane) {
            continue;
        }
        let word = addrs[lane as usize] / bank_width_bytes as u64;
        let bank = word % num_banks as u64;
        words_per_bank.entry(bank).or_default().insert(word);
    }
    words_per_bank
        .values()
        .map(|w| w.len() as u64)
        .max()
        .unwrap_or(1)
        .max(1)
}

/// Which SM-shared structure serves a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    L1d,
    Shared,
}

#[derive(Debug, Clone)]
pub struct MemRequest {
    pub instr: u64,
    pub sector_addr: u64,
    pub structure: Structure,
    pub bank: u32,
    pub lane_mask: u32,
    pub gen_index: u32,
}

/// A memory instruction handed to the pipeline at dispatch.
#[derive(Debug, Clone)]
pub struct MemInstr {
    pub trace_index: usize,
    pub sub_core: u32,
    pub warp_id: u32,
    pub opcode: OpcodeClass,
    pub dest_reg: Option<u32>,
    pub active_mask: u32,
    pub addrs: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemEventKind {
    /// A load's register write-back happened this cycle.
    LoadWriteback,
    /// All of a store's requests were accepted (no register write), or a
    /// destination-less load returned all its data.
    Complete,
}

/// Architectural completion the engine must account (scoreboard clear,
/// in-flight decrement).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemEvent {
    pub sub_core: u32,
    pub warp_id: u32,
    pub trace_index: usize,
    pub dest_reg: Option<u32>,
    pub kind: MemEventKind,
}

#[derive(Debug, Clone)]
struct InstrState {
    inst: MemInstr,
    is_store: bool,
    is_shared: bool,
    /// Shared-memory occupancy computed once per instruction.
    shared_cycles: u64,
    emitted: u32,
    done_emitting: bool,
    returned: u32,
    acked: u32,
}

impl InstrState {
    fn finished(&self) -> bool {
        self.done_emitting
            && if self.is_store {
                self.acked == self.emitted
            } else {
                self.returned == self.emitted
            }
    }
}

/// A completed load waiting for (or holding) a write-back latch.
#[derive(Debug, Clone)]
struct Completion {
    instr: u64,
    sub_core: u32,
    warp_id: u32,
    trace_index: usize,
    dest_reg: u32,
    dest_bank: u32,
    structure: Structure,
}

#[derive(Debug, Clone)]
struct MshrEntry {
    ready: u64,
    bank: u32,
    waiters: Vec<u64>,
}

#[derive(Debug, Clone)]
struct BaselineLatch {
    queue: VecDeque<MemRequest>,
}

/// Improved-model address latch occupant.
#[derive(Debug, Clone)]
enum AddrWork {
    /// Global access: mask of active lanes still to coalesce.
    Global { instr: u64, remaining_mask: u32 },
    /// Shared access: conflict cycles still to pay before the single
    /// request is emitted.
    Shared { instr: u64, cycles_left: u64 },
}

#[derive(Debug, Clone)]
pub struct MemPipeline {
    model: ModelKind,
    num_sub_cores: u32,
    sector_bytes: u64,
    l1d_banks: u32,
    rf_banks: u32,
    shared_bank_width: u32,
    shared_banks: u32,
    warp_width: u32,
    l1d_hit_latency: u64,
    l2_latency: u64,
    buffer_capacity: usize,

    l1d: Cache,
    instrs: BTreeMap<u64, InstrState>,
    next_instr_id: u64,

    mshr: BTreeMap<u64, MshrEntry>,
    /// Per-bank queues of filled sectors awaiting their replay slot.
    replay: Vec<VecDeque<(u64, Vec<u64>)>>,
    /// Hit data returns: cycle -> instruction ids.
    data_due: BTreeMap<u64, Vec<u64>>,
    shared_busy_until: u64,

    // Baseline state.
    base_latch: Option<BaselineLatch>,
    base_wb_queue: VecDeque<Completion>,
    base_wb_latch: Option<Completion>,

    // Improved state.
    dispatch_latch: Vec<Option<u64>>,
    addr_latch: Vec<Option<AddrWork>>,
    buffers: Vec<VecDeque<MemRequest>>,
    rotation: RotatingPriority,
    wb_latches: Vec<Option<Completion>>,
    wb_queue_l1d: Vec<VecDeque<Completion>>,
    wb_queue_shared: Vec<VecDeque<Completion>>,
    wb_rr_l1d: RoundRobin,
    wb_rr_shared: RoundRobin,

    pub dispatch_latch_stall_cycles: u64,
    pub coalescing_cycles: u64,
    pub requests_generated: u64,
    pub requests_granted: u64,
    pub shared_conflict_cycles: u64,
    pub wb_latch_stall_cycles: u64,
    pub buffer_full_stall_cycles: u64,
    /// Online-invariant failures (must stay zero).
    pub assertion_violations: u64,
}

impl MemPipeline {
    pub fn new(cfg: &GpuConfig) -> Self {
        let n = cfg.num_sub_cores as usize;
        MemPipeline {
            model: cfg.memory_model(),
            num_sub_cores: cfg.num_sub_cores,
            sector_bytes: cfg.sector_bytes,
            l1d_banks: cfg.l1d_banks,
            rf_banks: cfg.rf_banks_per_sub_core,
            shared_bank_width: cfg.shared_mem_bank_width_bytes,
            shared_banks: cfg.shared_mem_banks,
            warp_width: cfg.warp_width,
            l1d_hit_latency: cfg.l1d_hit_latency,
            l2_latency: cfg.l2_latency,
            buffer_capacity: cfg.mem_request_buffer_entries as usize,
            l1d: Cache::new_sectored(
                cfg.l1d_bytes,
                cfg.cache_line_bytes,
                cfg.sector_bytes,
                cfg.cache_assoc,
            ),
            instrs: BTreeMap::new(),
            next_instr_id: 0,
            mshr: BTreeMap::new(),
            replay: vec![VecDeque::new(); cfg.l1d_banks as usize],
            data_due: BTreeMap::new(),
            shared_busy_until: 0,
            base_latch: None,
            base_wb_queue: VecDeque::new(),
            base_wb_latch: None,
            dispatch_latch: vec![None; n],
            addr_latch: vec![None; n],
            buffers: vec![VecDeque::new(); n],
            rotation: RotatingPriority::new(n),
            wb_latches: vec![None; n],
            wb_queue_l1d: vec![VecDeque::new(); n],
            wb_queue_shared: vec![VecDeque::new(); n],
            wb_rr_l1d: RoundRobin::new(n),
            wb_rr_shared: RoundRobin::new(n),
            dispatch_latch_stall_cycles: 0,
            coalescing_cycles: 0,
            requests_generated: 0,
            requests_granted: 0,
            shared_conflict_cycles: 0,
            wb_latch_stall_cycles: 0,
            buffer_full_stall_cycles: 0,
            assertion_violations: 0,
        }
    }

    /// Reset arbitration pointers between kernels; all queues must have
    /// drained. Cache contents and counters persist.
    pub fn reset_for_kernel(&mut self) {
        debug_assert!(!self.busy());
        let n = self.num_sub_cores as usize;
        self.rotation = RotatingPriority::new(n);
        self.wb_rr_l1d = RoundRobin::new(n);
        self.wb_rr_shared = RoundRobin::new(n);
    }

    /// Can `sub_core` hand a memory instruction to its dispatch latch
    /// this cycle?
    pub fn can_accept(&self, sub_core: u32) -> bool {
        match self.model {
            ModelKind::Baseline => self.base_latch.is_none(),
            ModelKind::Improved => self.dispatch_latch[sub_core as usize].is_none(),
        }
    }

    /// Record that a ready memory instruction could not dispatch because
    /// the latch was occupied.
    pub fn note_dispatch_blocked(&mut self) {
        self.dispatch_latch_stall_cycles += 1;
    }

    /// Accept a memory instruction into the dispatch latch.
    pub fn accept(&mut self, _now: u64, inst: MemInstr) {
        debug_assert!(self.can_accept(inst.sub_core));
        let id = self.next_instr_id;
        self.next_instr_id += 1;
        let is_store = inst.opcode.is_store();
        let is_shared = inst.opcode.is_shared_memory();
        let shared_cycles = if is_shared {
            let c = shared_mem_conflict_cycles(
                &inst.addrs,
                inst.active_mask,
                self.warp_width,
                self.shared_bank_width,
                self.shared_banks,
            );
            self.shared_conflict_cycles += c;
            c
        } else {
            0
        };
        let sub_core = inst.sub_core as usize;
        let mut state = InstrState {
            inst,
            is_store,
            is_shared,
            shared_cycles,
            emitted: 0,
            done_emitting: false,
            returned: 0,
            acked: 0,
        };
        match self.model {
            ModelKind::Baseline => {
                // Address calculation, coalescing and request generation
                // all happen now, in this one cycle.
                let queue = if is_shared {
                    self.coalescing_cycles += 1;
                    VecDeque::from(vec![MemRequest {
                        instr: id,
                        sector_addr: 0,
                        structure: Structure::Shared,
                        bank: 0,
                        lane_mask: state.inst.active_mask,
                        gen_index: 0,
                    }])
                } else {
                    self.coalescing_cycles += 1;
                    let groups = coalesce_full(
                        &state.inst.addrs,
                        state.inst.active_mask,
                        self.warp_width,
                        self.sector_bytes,
                        self.l1d_banks,
                    );
                    groups
                        .into_iter()
                        .enumerate()
                        .map(|(i, g)| MemRequest {
                            instr: id,
                            sector_addr: g.sector_addr,
                            structure: Structure::L1d,
                            bank: g.bank,
                            lane_mask: g.lane_mask,
                            gen_index: i as u32,
                        })
                        .collect()
                };
                self.requests_generated += queue.len() as u64;
                state.emitted = queue.len() as u32;
                state.done_emitting = true;
                self.base_latch = Some(BaselineLatch { queue });
            }
            ModelKind::Improved => {
                self.dispatch_latch[sub_core] = Some(id);
            }
        }
        self.instrs.insert(id, state);
    }

    /// Stage: write-back arbitration. Latch occupants write their
    /// register if a bank write port is free, then empty latches refill
    /// from completed accesses. A completion therefore spends at least
    /// one full cycle in a latch before its register write.
    pub fn writeback_stage(
        &mut self,
        _now: u64,
        ledgers: &mut [PortLedger],
    ) -> Vec<MemEvent> {
        let mut events = Vec::new();
        match self.model {
            ModelKind::Baseline => {
                if let Some(c) = self.base_wb_latch.take() {
                    if ledgers[c.sub_core as usize].try_reserve_write(c.dest_bank) {
                        events.push(self.retire_load(&c));
                    } else {
                        self.base_wb_latch = Some(c);
                    }
                }
                if self.base_wb_latch.is_none() {
                    self.base_wb_latch = self.base_wb_queue.pop_front();
                }
                self.wb_latch_stall_cycles += self.base_wb_queue.len() as u64;
            }
            ModelKind::Improved => {
                for (sc, ledger) in ledgers.iter_mut().enumerate() {
                    if let Some(c) = self.wb_latches[sc].take() {
                        if ledger.try_reserve_write(c.dest_bank) {
                            events.push(self.retire_load(&c));
                        } else {
                            self.wb_latches[sc] = Some(c);
                        }
                    }
                }
                // Each shared structure returns at most one completion
                // per cycle across the SM, L1D first, round-robin among
                // sub-cores with a free latch.
                let l1d_candidates: Vec<bool> = (0..self.num_sub_cores as usize)
                    .map(|sc| {
                        self.wb_latches[sc].is_none()
                            && !self.wb_queue_l1d[sc].is_empty()
                    })
                    .collect();
                if let Some(sc) = self.wb_rr_l1d.grant(&l1d_candidates) {
                    self.wb_latches[sc] = self.wb_queue_l1d[sc].pop_front();
                }
                let shared_candidates: Vec<bool> = (0..self.num_sub_cores as usize)
                    .map(|sc| {
                        self.wb_latches[sc].is_none()
                            && !self.wb_queue_shared[sc].is_empty()
                    })
                    .collect();
                if let Some(sc) = self.wb_rr_shared.grant(&shared_candidates) {
                    self.wb_latches[sc] = self.wb_queue_shared[sc].pop_front();
                }
                self.wb_latch_stall_cycles += (0..self.num_sub_cores as usize)
                    .map(|sc| {
                        (self.wb_queue_l1d[sc].len() + self.wb_queue_shared[sc].len())
                            as u64
                    })
                    .sum::<u64>();
            }
        }
        events
    }

    fn retire_load(&mut self, c: &Completion) -> MemEvent {
        if self.instrs.remove(&c.instr).is_none() {
            self.assertion_violations += 1;
        }
        MemEvent {
            sub_core: c.sub_core,
            warp_id: c.warp_id,
            trace_index: c.trace_index,
            dest_reg: Some(c.dest_reg),
            kind: MemEventKind::LoadWriteback,
        }
    }

    /// Stage: request arbitration, coalescing and latch movement, in
    /// fixed intra-cycle order: backing-store fills land, filled sectors
    /// replay (consuming their bank with priority), data returns for
    /// earlier hits are applied, free resources grant buffered/queued
    /// requests, dispatch latches advance, and address latches run one
    /// coalescing step. Returns completions that need no register write.
    pub fn request_stage(&mut self, now: u64) -> Vec<MemEvent> {
        let mut events = Vec::new();
        let mut bank_used = vec![false; self.l1d_banks as usize];
        let mut shared_used = false;

        // 1. Backing-store fills due now install their sector and queue a
        //    replay on the sector's bank.
        let due: Vec<u64> = self
            .mshr
            .iter()
            .filter(|(_, e)| e.ready <= now)
            .map(|(&s, _)| s)
            .collect();
        for sector in due {
            let entry = self.mshr.remove(&sector).unwrap();
            self.l1d.fill(sector);
            self.replay[entry.bank as usize].push_back((sector, entry.waiters));
        }

        // 2. One replay per bank per cycle, ahead of new grants. The
        //    replay probes the freshly filled sector (a hit) and its data
        //    serves every merged request at once.
        for (bank, used) in bank_used.iter_mut().enumerate() {
            let Some((sector, waiters)) = self.replay[bank].pop_front() else {
                continue;
            };
            if *used {
                self.assertion_violations += 1;
            }
            *used = true;
            if !self.l1d.probe(sector) {
                // The fill just installed it; a miss here is a modeling bug.
                self.assertion_violations += 1;
            }
            for id in waiters {
                self.apply_data_return(id, now, &mut events);
            }
        }

        // 3. Hit data returns scheduled for this cycle.
        let due_cycles: Vec<u64> = self.data_due.range(..=now).map(|(&c, _)| c).collect();
        for c in due_cycles {
            for id in self.data_due.remove(&c).unwrap() {
                self.apply_data_return(id, now, &mut events);
            }
        }

        // 4. Grants.
        match self.model {
            ModelKind::Baseline => {
                self.baseline_send(now, &mut bank_used, &mut shared_used, &mut events);
            }
            ModelKind::Improved => {
                self.improved_arbitrate(now, &mut bank_used, &mut shared_used, &mut events);
                self.rotation.rotate();
            }
        }

        // 5/6. Improved pipelines advance: dispatch latch -> address
        //      latch, then one address-latch step each. An instruction
        //      arriving in the address latch runs its first step the
        //      same cycle, so latch occupancy equals its request count.
        if self.model == ModelKind::Improved {
            for sc in 0..self.num_sub_cores as usize {
                if self.addr_latch[sc].is_none() {
                    if let Some(id) = self.dispatch_latch[sc].take() {
                        let (is_shared, shared_cycles, mask) = {
                            let st = &self.instrs[&id];
                            (
                                st.is_shared,
                                st.shared_cycles,
                                st.inst.active_mask & width_mask(self.warp_width),
                            )
                        };
                        self.addr_latch[sc] = Some(if is_shared {
                            AddrWork::Shared {
                                instr: id,
                                cycles_left: shared_cycles,
                            }
                        } else {
                            AddrWork::Global {
                                instr: id,
                                remaining_mask: mask,
                            }
                        });
                    }
                }
                self.step_addr_latch(sc);
            }
        }
        events
    }

    fn step_addr_latch(&mut self, sc: usize) {
        let sector_bytes = self.sector_bytes;
        let l1d_banks = self.l1d_banks;
        let warp_width = self.warp_width;
        let Some(work) = self.addr_latch[sc].take() else {
            return;
        };
        match work {
            AddrWork::Global {
                instr,
                remaining_mask,
            } => {
                if self.buffers[sc].len() >= self.buffer_capacity {
                    self.buffer_full_stall_cycles += 1;
                    self.addr_latch[sc] = Some(AddrWork::Global {
                        instr,
                        remaining_mask,
                    });
                    return;
                }
                let (group, rest, gen_index) = {
                    let st = self.instrs.get_mut(&instr).expect("live instruction");
                    let (group, rest) = coalesce_step_once(
                        &st.inst.addrs,
                        remaining_mask,
                        sector_bytes,
                        l1d_banks,
                    );
                    let gen_index = st.emitted;
                    st.emitted += 1;
                    (group, rest, gen_index)
                };
                self.coalescing_cycles += 1;
                self.requests_generated += 1;
                self.buffers[sc].push_back(MemRequest {
                    instr,
                    sector_addr: group.sector_addr,
                    structure: Structure::L1d,
                    bank: group.bank,
                    lane_mask: group.lane_mask,
                    gen_index,
                });
                if rest == 0 {
                    let consistent = {
                        let st = self.instrs.get_mut(&instr).unwrap();
                        st.done_emitting = true;
                        // One cycle per emitted request, by construction.
                        st.emitted as u64
                            == coalesce_full(
                                &st.inst.addrs,
                                st.inst.active_mask,
                                warp_width,
                                sector_bytes,
                                l1d_banks,
                            )
                            .len() as u64
                    };
                    if !consistent {
                        self.assertion_violations += 1;
                    }
                } else {
                    self.addr_latch[sc] = Some(AddrWork::Global {
                        instr,
                        remaining_mask: rest,
                    });
                }
            }
            AddrWork::Shared { instr, cycles_left } => {
                if cycles_left > 1 {
                    self.addr_latch[sc] = Some(AddrWork::Shared {
                        instr,
                        cycles_left: cycles_left - 1,
                    });
                    return;
                }
                // Final conflict cycle: emit the single request.
                if self.buffers[sc].len() >= self.buffer_capacity {
                    self.buffer_full_stall_cycles += 1;
                    self.addr_latch[sc] = Some(AddrWork::Shared { instr, cycles_left });
                    return;
                }
                let active_mask = {
                    let st = self.instrs.get_mut(&instr).expect("live instruction");
                    st.emitted = 1;
                    st.done_emitting = true;
                    st.inst.active_mask
                };
                self.requests_generated += 1;
                self.buffers[sc].push_back(MemRequest {
                    instr,
                    sector_addr: 0,
                    structure: Structure::Shared,
                    bank: 0,
                    lane_mask: active_mask,
                    gen_index: 0,
                });
            }
        }
    }

    fn baseline_send(
        &mut self,
        now: u64,
        bank_used: &mut [bool],
        shared_used: &mut bool,
        events: &mut Vec<MemEvent>,
    ) {
        let Some(latch) = self.base_latch.as_mut() else {
            return;
        };
        let Some(req) = latch.queue.front() else {
            self.assertion_violations += 1;
            self.base_latch = None;
            return;
        };
        let free = match req.structure {
            Structure::L1d => !bank_used[req.bank as usize],
            Structure::Shared => !*shared_used && now >= self.shared_busy_until,
        };
        if !free {
            // In-order policy: if the next request's target is busy,
            // nothing is sent this cycle.
            return;
        }
        let req = latch.queue.pop_front().unwrap();
        let done = latch.queue.is_empty();
        if done {
            // Latch frees the cycle its last request leaves, making room
            // for another dispatch later this same cycle.
            self.base_latch = None;
        }
        self.grant(now, &req, bank_used, shared_used, events);
    }

    fn improved_arbitrate(
        &mut self,
        now: u64,
        bank_used: &mut [bool],
        shared_used: &mut bool,
        events: &mut Vec<MemEvent>,
    ) {
        for sc in self.rotation.order() {
            let mut kept = VecDeque::new();
            let mut buffer = core::mem::take(&mut self.buffers[sc]);
            while let Some(req) = buffer.pop_front() {
                let free = match req.structure {
                    Structure::L1d => !bank_used[req.bank as usize],
                    Structure::Shared => !*shared_used && now >= self.shared_busy_until,
                };
                if free {
                    self.grant(now, &req, bank_used, shared_used, events);
                } else {
                    kept.push_back(req);
                }
            }
            self.buffers[sc] = kept;
        }
    }

    /// Hand one request to its structure. The caller verified the
    /// resource is free this cycle.
    fn grant(
        &mut self,
        now: u64,
        req: &MemRequest,
        bank_used: &mut [bool],
        shared_used: &mut bool,
        events: &mut Vec<MemEvent>,
    ) {
        self.requests_granted += 1;
        let (is_store, shared_cycles) = {
            let st = &self.instrs[&req.instr];
            (st.is_store, st.shared_cycles)
        };
        match req.structure {
            Structure::Shared => {
                *shared_used = true;
                if self.model == ModelKind::Baseline {
                    // The unit is occupied for the conflict cycles.
                    self.shared_busy_until = now + shared_cycles;
                }
                if is_store {
                    let st = self.instrs.get_mut(&req.instr).unwrap();
                    st.acked += 1;
                    if st.finished() {
                        self.complete_instr(req.instr, events);
                    }
                } else if self.model == ModelKind::Baseline {
                    // Data comes back when the conflict cycles elapse.
                    self.data_due
                        .entry(now + shared_cycles)
                        .or_default()
                        .push(req.instr);
                } else {
                    // Conflict cycles were paid in the address latch.
                    self.apply_data_return(req.instr, now, events);
                }
            }
            Structure::L1d => {
                bank_used[req.bank as usize] = true;
                let hit = self.l1d.probe(req.sector_addr);
                if is_store {
                    // Write-through, no write-allocate: accepted now
                    // either way.
                    let st = self.instrs.get_mut(&req.instr).unwrap();
                    st.acked += 1;
                    if st.finished() {
                        self.complete_instr(req.instr, events);
                    }
                } else if hit {
                    self.data_due
                        .entry(now + self.l1d_hit_latency)
                        .or_default()
                        .push(req.instr);
                } else if let Some(entry) = self.mshr.get_mut(&req.sector_addr) {
                    // The sector is already on order; merge as a waiter.
                    self.l1d.merge_into_pending_fill();
                    entry.waiters.push(req.instr);
                } else {
                    self.mshr.insert(
                        req.sector_addr,
                        MshrEntry {
                            ready: now + self.l2_latency,
                            bank: req.bank,
                            waiters: vec![req.instr],
                        },
                    );
                }
            }
        }
    }

    fn apply_data_return(&mut self, id: u64, _now: u64, events: &mut Vec<MemEvent>) {
        let Some(st) = self.instrs.get_mut(&id) else {
            self.assertion_violations += 1;
            return;
        };
        st.returned += 1;
        if st.finished() {
            self.complete_instr(id, events);
        }
    }

    /// All requests of `id` are done. Loads with a destination head for a
    /// write-back latch; everything else completes architecturally now.
    fn complete_instr(&mut self, id: u64, events: &mut Vec<MemEvent>) {
        let (dest, is_store, is_shared, sub_core, warp_id, trace_index) = {
            let st = &self.instrs[&id];
            (
                st.inst.dest_reg,
                st.is_store,
                st.is_shared,
                st.inst.sub_core,
                st.inst.warp_id,
                st.inst.trace_index,
            )
        };
        match dest {
            Some(reg) if !is_store => {
                let completion = Completion {
                    instr: id,
                    sub_core,
                    warp_id,
                    trace_index,
                    dest_reg: reg,
                    dest_bank: bank_of(reg, self.rf_banks),
                    structure: if is_shared {
                        Structure::Shared
                    } else {
                        Structure::L1d
                    },
                };
                match self.model {
                    ModelKind::Baseline => self.base_wb_queue.push_back(completion),
                    ModelKind::Improved => {
                        let sc = sub_core as usize;
                        match completion.structure {
                            Structure::L1d => self.wb_queue_l1d[sc].push_back(completion),
                            Structure::Shared => {
                                self.wb_queue_shared[sc].push_back(completion)
                            }
                        }
                    }
                }
            }
            _ => {
                self.instrs.remove(&id);
                events.push(MemEvent {
                    sub_core,
                    warp_id,
                    trace_index,
                    dest_reg: None,
                    kind: MemEventKind::Complete,
                });
            }
        }
    }

    /// Any instruction, request or completion still in flight?
    pub fn busy(&self) -> bool {
        !self.instrs.is_empty()
            || self.base_latch.is_some()
            || self.base_wb_latch.is_some()
            || !self.base_wb_queue.is_empty()
            || !self.mshr.is_empty()
            || !self.data_due.is_empty()
            || self.replay.iter().any(|q| !q.is_empty())
            || self.dispatch_latch.iter().any(Option::is_some)
            || self.addr_latch.iter().any(Option::is_some)
            || self.buffers.iter().any(|b| !b.is_empty())
            || self.wb_latches.iter().any(Option::is_some)
            || self.wb_queue_l1d.iter().any(|q| !q.is_empty())
            || self.wb_queue_shared.iter().any(|q| !q.is_empty())
    }

    pub fn l1d_stats(&self) -> CacheStats {
        self.l1d.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::collections::BTreeSet;

    fn cfg(model: ModelKind) -> GpuConfig {
        GpuConfig {
            model,
            ..GpuConfig::default()
        }
    }

    fn ledgers(cfg: &GpuConfig) -> Vec<PortLedger> {
        (0..cfg.num_sub_cores)
            .map(|_| PortLedger::new(cfg.rf_banks_per_sub_core, cfg.rf_ports_per_bank))
            .collect()
    }

    fn load_instr(warp: u32, addrs: Vec<u64>, dest: u32) -> MemInstr {
        MemInstr {
            trace_index: warp as usize,
            sub_core: warp % 4,
            warp_id: warp,
            opcode: OpcodeClass::LdGlobal,
            dest_reg: Some(dest),
            active_mask: u32::MAX,
            addrs,
        }
    }

    /// One pipeline cycle in engine stage order; returns all events.
    fn cycle(
        pipe: &mut MemPipeline,
        now: u64,
        led: &mut [PortLedger],
    ) -> Vec<MemEvent> {
        led.iter_mut().for_each(PortLedger::reset);
        let mut ev = pipe.writeback_stage(now, led);
        ev.extend(pipe.request_stage(now));
        ev
    }

    #[test]
    fn coalesce_full_sector_grouping() {
        // 32 lanes x 4 bytes covering one 128-byte line: 4 sectors.
        let addrs: Vec<u64> = (0..32).map(|i| 0x1000 + i * 4).collect();
        let groups = coalesce_full(&addrs, u32::MAX, 32, 32, 4);
        assert_eq!(groups.len(), 4);
        assert_eq!(groups[0].sector_addr, 0x1000);
        assert_eq!(groups[0].lane_mask, 0x0000_00FF);
        assert_eq!(groups[3].sector_addr, 0x1060);
        // Banks follow sector address.
        let banks: Vec<u32> = groups.iter().map(|g| g.bank).collect();
        assert_eq!(banks, vec![0, 1, 2, 3]);

        // All lanes on one word: a single broadcast request.
        let same = vec![0x4000u64; 32];
        assert_eq!(coalesce_full(&same, u32::MAX, 32, 32, 4).len(), 1);
    }

    #[test]
    fn comparator_counts() {
        assert_eq!(full_coalesce_comparators(32), 496);
        assert_eq!(stepwise_coalesce_comparators(32), 32);
    }

    #[test]
    fn stepwise_coalescing_matches_full_and_counts_cycles() {
        // Alternating between two sectors: 2 steps, same groups as full.
        let addrs: Vec<u64> = (0..32)
            .map(|i| if i % 2 == 0 { 0x100 } else { 0x200 })
            .collect();
        let full: BTreeSet<SectorGroup> =
            coalesce_full(&addrs, u32::MAX, 32, 32, 4).into_iter().collect();
        let mut stepped = BTreeSet::new();
        let mut mask = u32::MAX;
        let mut steps = 0;
        while mask != 0 {
            let (g, rest) = coalesce_step_once(&addrs, mask, 32, 4);
            stepped.insert(g);
            mask = rest;
            steps += 1;
        }
        assert_eq!(steps, 2);
        assert_eq!(full, stepped);
    }

    #[test]
    fn shared_conflict_cycle_counts() {
        let w = 4u32; // bank width
        // One lane per bank: conflict-free.
        let spread: Vec<u64> = (0..32).map(|i| i * w as u64).collect();
        assert_eq!(shared_mem_conflict_cycles(&spread, u32::MAX, 32, w, 32), 1);
        // Every lane the same word: broadcast.
        let bcast = vec![0u64; 32];
        assert_eq!(shared_mem_conflict_cycles(&bcast, u32::MAX, 32, w, 32), 1);
        // Eight words in each of four banks.
        let row = 32 * w as u64;
        let deg8: Vec<u64> = (0..32u64)
            .map(|lane| {
                let bank = lane % 4;
                let word = lane / 4;
                word * row + bank * w as u64
            })
            .collect();
        assert_eq!(shared_mem_conflict_cycles(&deg8, u32::MAX, 32, w, 32), 8);
    }

    #[test]
    fn baseline_four_request_instruction_holds_latch_four_cycles() {
        let c = cfg(ModelKind::Baseline);
        let mut led = ledgers(&c);
        let mut pipe = MemPipeline::new(&c);
        let addrs: Vec<u64> = (0..32).map(|i| 0x1000 + i * 4).collect();
        pipe.accept(0, load_instr(0, addrs, 8));
        assert!(!pipe.can_accept(1)); // SM-wide latch occupied
        for t in 1..=3 {
            cycle(&mut pipe, t, &mut led);
            assert!(!pipe.can_accept(1), "cycle {t}");
        }
        // Fourth send frees the latch within that same cycle.
        cycle(&mut pipe, 4, &mut led);
        assert!(pipe.can_accept(1));
        assert_eq!(pipe.requests_granted, 4);
        assert_eq!(pipe.coalescing_cycles, 1); // one-shot coalescer
    }

    #[test]
    fn improved_requests_leave_out_of_order() {
        let c = cfg(ModelKind::Improved);
        let mut led = ledgers(&c);
        let mut pipe = MemPipeline::new(&c);
        // Lanes split across sectors 0x000(bank 0), 0x100(bank 0, same
        // bank!), 0x020(bank 1): generation order bank0, bank0, bank1.
        let addrs: Vec<u64> = (0..32)
            .map(|lane| match lane % 3 {
                0 => 0x000,
                1 => 0x100,
                _ => 0x020,
            })
            .collect();
        pipe.accept(0, load_instr(0, addrs, 8));
        // t1: move to address latch + step 1 (emit bank0 sector 0x000).
        // t2: grant #0 to bank 0; step 2 emits sector 0x100 (bank 0).
        // t3: bank 0 takes 0x100; step 3 emits 0x020 (bank 1).
        // But at t3 the arbiter runs BEFORE the step, so 0x020 is granted
        // at t4 — out-of-order service shows up when several
        // instructions' requests share the buffers; here we verify the
        // per-cycle bank exclusivity and eventual grant set instead.
        let mut granted_at = Vec::new();
        for t in 1..=6 {
            cycle(&mut pipe, t, &mut led);
            granted_at.push(pipe.requests_granted);
        }
        assert_eq!(granted_at, vec![0, 1, 2, 3, 3, 3]);
        assert_eq!(pipe.coalescing_cycles, 3);

        // Out-of-order proper: two instructions in different sub-cores;
        // sub-core 1's bank-1 request overtakes sub-core 0's stalled
        // bank-0 head while bank 0 replays a miss. Simplest observable:
        // one instruction per sub-core, same cycle, different banks ->
        // both granted the same cycle.
        let mut pipe = MemPipeline::new(&c);
        pipe.accept(0, load_instr(0, vec![0x000; 32], 8));
        pipe.accept(0, load_instr(1, vec![0x020; 32], 8));
        cycle(&mut pipe, 1, &mut led); // both move+step
        cycle(&mut pipe, 2, &mut led); // both granted
        assert_eq!(pipe.requests_granted, 2);
    }

    #[test]
    fn baseline_head_of_line_blocks_on_busy_bank() {
        let c = cfg(ModelKind::Baseline);
        let mut led = ledgers(&c);
        let mut pipe = MemPipeline::new(&c);
        // First instruction: one sector on bank 0, which will MISS and
        // replay at 1+120=121, occupying bank 0 on the replay cycle.
        pipe.accept(0, load_instr(0, vec![0x000; 32], 8));
        for t in 1..=120 {
            cycle(&mut pipe, t, &mut led);
        }
        // Second instruction, accepted just before the replay: requests
        // to bank 0 (0x200) then bank 1 (0x220), in that order.
        let addrs: Vec<u64> = (0..32)
            .map(|lane| if lane < 16 { 0x200 } else { 0x220 })
            .collect();
        pipe.accept(120, load_instr(1, addrs, 16));
        assert_eq!(pipe.requests_granted, 1);
        // At t=121 the replay takes bank 0, so the head request (bank 0)
        // cannot send, and the idle-bank request behind it is not
        // allowed to overtake it.
        cycle(&mut pipe, 121, &mut led);
        assert_eq!(
            pipe.requests_granted, 1,
            "replay occupies bank 0 and blocks the in-order queue head"
        );
        cycle(&mut pipe, 122, &mut led);
        assert_eq!(pipe.requests_granted, 2);
        cycle(&mut pipe, 123, &mut led);
        assert_eq!(pipe.requests_granted, 3);
    }

    #[test]
    fn mshr_merges_same_sector_misses() {
        let c = cfg(ModelKind::Improved);
        let mut led = ledgers(&c);
        let mut pipe = MemPipeline::new(&c);
        // Two loads in different sub-cores to the same sector.
        pipe.accept(0, load_instr(0, vec![0x40; 32], 8));
        pipe.accept(0, load_instr(1, vec![0x40; 32], 8));
        let mut events = Vec::new();
        for t in 1..200 {
            events.extend(cycle(&mut pipe, t, &mut led));
        }
        // One fill (one backing access), both loads complete. The second
        // probe merged into the outstanding fill and counts as a hit, not
        // a second miss; the replay probe after the fill is the other hit.
        assert_eq!(pipe.l1d_stats().fills, 1);
        assert_eq!(pipe.l1d_stats().misses, 1);
        assert_eq!(pipe.l1d_stats().hits, 2);
        let wb: Vec<&MemEvent> = events
            .iter()
            .filter(|e| e.kind == MemEventKind::LoadWriteback)
            .collect();
        assert_eq!(wb.len(), 2);
        assert!(!pipe.busy());
        assert_eq!(pipe.assertion_violations, 0);
    }

    #[test]
    fn store_completes_at_final_acceptance_without_wb_latch() {
        let c = cfg(ModelKind::Improved);
        let mut led = ledgers(&c);
        let mut pipe = MemPipeline::new(&c);
        let mut st = load_instr(0, vec![0x40; 32], 0);
        st.opcode = OpcodeClass::StGlobal;
        st.dest_reg = None;
        pipe.accept(0, st);
        let mut events = Vec::new();
        // t1 move+step, t2 grant -> ack -> complete immediately.
        events.extend(cycle(&mut pipe, 1, &mut led));
        assert!(events.is_empty());
        events.extend(cycle(&mut pipe, 2, &mut led));
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].kind, MemEventKind::Complete);
        assert!(!pipe.busy());
        // The store probed but never filled the cache on miss.
        assert_eq!(pipe.l1d_stats().misses, 1);
        assert_eq!(pipe.l1d_stats().fills, 0);
    }

    #[test]
    fn single_wb_latch_serializes_baseline_completions() {
        let c = cfg(ModelKind::Baseline);
        let mut led = ledgers(&c);
        let mut pipe = MemPipeline::new(&c);
        // Two single-sector loads on different banks, hitting in cache.
        pipe.l1d.fill(0x000);
        pipe.l1d.fill(0x020);
        pipe.accept(0, load_instr(0, vec![0x000; 32], 8));
        let mut wb_cycles = Vec::new();
        let mut second_sent = false;
        for t in 1..60 {
            if !second_sent && pipe.can_accept(1) {
                pipe.accept(t, load_instr(1, vec![0x020; 32], 16));
                second_sent = true;
            }
            for e in cycle(&mut pipe, t, &mut led) {
                if e.kind == MemEventKind::LoadWriteback {
                    wb_cycles.push(t);
                }
            }
        }
        assert_eq!(wb_cycles.len(), 2);
        // Data for load 0 returns at 1+20=21, queued, latched at 22,
        // written at 23. Load 1 (sent at 2, data at 22) waits behind it.
        assert_eq!(wb_cycles[0], 23);
        assert_eq!(wb_cycles[1], 24);
    }

    #[test]
    fn improved_shared_load_pays_conflicts_in_address_latch() {
        let c = cfg(ModelKind::Improved);
        let mut led = ledgers(&c);
        let mut pipe = MemPipeline::new(&c);
        // Degree-4 conflict: 8 banks x 4 words each.
        let row = 128u64;
        let addrs: Vec<u64> = (0..32u64)
            .map(|lane| (lane / 8) * row + (lane % 8) * 4)
            .collect();
        let mut ld = load_instr(0, addrs, 8);
        ld.opcode = OpcodeClass::LdShared;
        pipe.accept(0, ld);
        assert_eq!(pipe.shared_conflict_cycles, 4);
        let mut wb_cycle = None;
        for t in 1..40 {
            for e in cycle(&mut pipe, t, &mut led) {
                if e.kind == MemEventKind::LoadWriteback {
                    wb_cycle = Some(t);
                }
            }
        }
        // Address latch cycles 1..=4 (4 conflict cycles), request emitted
        // at 4, granted at 5 with immediate data, latched 6, written 7.
        assert_eq!(wb_cycle, Some(7));
        assert_eq!(pipe.requests_generated, 1);
    }

    #[test]
    fn request_conservation_under_mixed_traffic() {
        for model in [ModelKind::Baseline, ModelKind::Improved] {
            let c = cfg(model);
            let mut led = ledgers(&c);
            let mut pipe = MemPipeline::new(&c);
            let mut rng = crate::tracegen::Xorshift64Star::new(0xFEED);
            let mut accepted = 0u32;
            let mut completions = 0u64;
            let mut t = 0u64;
            while accepted < 24 || pipe.busy() {
                t += 1;
                if accepted < 24 {
                    let warp = accepted % 16;
                    if pipe.can_accept(warp % 4) {
                        let addrs: Vec<u64> = (0..32)
                            .map(|_| (rng.next_u64() % 0x4000) & !3)
                            .collect();
                        let mut ins = load_instr(warp, addrs, 8 + (accepted % 8));
                        ins.trace_index = accepted as usize;
                        if accepted.is_multiple_of(3) {
                            ins.opcode = OpcodeClass::StGlobal;
                            ins.dest_reg = None;
                        }
                        pipe.accept(t, ins);
                        accepted += 1;
                    }
                }
                completions += cycle(&mut pipe, t, &mut led).len() as u64;
                assert!(t < 1_000_000, "pipeline failed to drain ({model:?})");
            }
            assert_eq!(completions, 24, "{model:?}");
            assert_eq!(pipe.requests_generated, pipe.requests_granted, "{model:?}");
            assert_eq!(pipe.assertion_violations, 0, "{model:?}");
        }
    }
}
