//! Instruction supply: both front-end models, the instruction caches and
//! the per-warp instruction buffers.
//!
//! Baseline: one SM-wide fetch/decode unit performs up to `num_sub_cores`
//! fetch actions per cycle against a single shared instruction cache, with
//! fetch and decode completing in the same cycle. A fetch pairs the next
//! two trace instructions regardless of cache-line boundaries or taken
//! branches and charges ONE cache access at the first instruction's line —
//! so the pair can straddle lines or jump targets yet count a single hit.
//! All kernels share the same address space, so instructions of different
//! kernels alias in the cache.
//!
//! Improved: each sub-core owns a private L0I, a fetch unit and a decode
//! unit. Fetching and decoding are distinct cycles. A fetch group is
//! truncated at the cache-line boundary and never spans a control-flow
//! discontinuity. L0I misses are forwarded to the shared L1I through a
//! round-robin arbiter granting one sub-core per cycle; each kernel's code
//! is placed at a distinct line-aligned base address, so kernels no longer
//! alias.

use alloc::collections::{BTreeMap, VecDeque};
use alloc::vec;
use alloc::vec::Vec;

use crate::arbiter::RoundRobin;
use crate::cache::{Cache, CacheStats};
use crate::config::{GpuConfig, ModelKind};
use crate::isa::{sub_core_of, Instruction, INSTRUCTION_BYTES};
use crate::trace::TraceFile;

/// Per-warp cursor over that warp's instruction indices in the trace.
#[derive(Debug, Clone)]
pub struct WarpStream {
    pub indices: Vec<usize>,
    pub next: usize,
}

impl WarpStream {
    pub fn new(indices: Vec<usize>) -> Self {
        WarpStream { indices, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.indices.len() - self.next
    }

    fn peek(&self, offset: usize) -> Option<usize> {
        self.indices.get(self.next + offset).copied()
    }
}

/// Per-warp FIFO of decoded instructions (trace indices).
#[derive(Debug, Clone)]
pub struct IBuffer {
    capacity: usize,
    queues: Vec<VecDeque<usize>>,
}

impl IBuffer {
    pub fn new(num_warps: u32, capacity: u32) -> Self {
        IBuffer {
            capacity: capacity as usize,
            queues: vec![VecDeque::new(); num_warps as usize],
        }
    }

    pub fn free_slots(&self, warp: u32) -> usize {
        self.capacity - self.queues[warp as usize].len()
    }

    pub fn head(&self, warp: u32) -> Option<usize> {
        self.queues[warp as usize].front().copied()
    }

    pub fn pop(&mut self, warp: u32) -> Option<usize> {
        self.queues[warp as usize].pop_front()
    }

    pub fn push(&mut self, warp: u32, trace_index: usize) {
        debug_assert!(self.free_slots(warp) > 0);
        self.queues[warp as usize].push_back(trace_index);
    }

    pub fn is_empty(&self) -> bool {
        self.queues.iter().all(VecDeque::is_empty)
    }
}

/// An in-flight fetch of one sub-core (improved model): created by the
/// fetch stage, consumed by the decode stage once `ready`.
#[derive(Debug, Clone)]
struct FetchEntry {
    warp: u32,
    indices: Vec<usize>,
    ready: bool,
}

#[derive(Debug, Clone)]
struct ImprovedFill {
    sub_core: usize,
    line: u64,
    fills_l1i: bool,
}

#[derive(Debug, Clone)]
pub struct FrontEnd {
    model: ModelKind,
    line_bytes: u64,
    l1i_hit_latency: u64,
    l2_latency: u64,
    num_sub_cores: u32,
    ibuffer_capacity: u32,

    l1i: Cache,
    l0i: Vec<Cache>, // one per sub-core; empty under the baseline model
    kernel_bases: BTreeMap<u32, u64>,

    current_kernel: u32,
    num_warps: u32,
    streams: Vec<WarpStream>,
    ibuffer: IBuffer,

    // Baseline state.
    base_rr: RoundRobin,
    fetch_pending: Vec<bool>,
    /// line address -> (fill-ready cycle, warps waiting on it)
    base_fills: BTreeMap<u64, (u64, Vec<u32>)>,

    // Improved state.
    sub_warp_lists: Vec<Vec<u32>>,
    fetch_rr: Vec<RoundRobin>,
    entries: Vec<Option<FetchEntry>>,
    /// Queued L0I miss per sub-core, waiting for an L1I grant.
    l0_request: Vec<Option<u64>>,
    l0_outstanding: Vec<bool>,
    l1i_arb: RoundRobin,
    improved_fills: BTreeMap<u64, Vec<ImprovedFill>>,
    /// Lines currently being fetched from the backing store.
    l1i_inflight: BTreeMap<u64, u64>,

    /// Instructions decoded into instruction buffers (terminators included).
    pub decoded: u64,
    /// Fetch groups probed (one instruction-cache access each).
    pub fetch_groups: u64,
    /// History of L1I grant sub-cores per cycle, recorded only when enabled.
    pub grant_history: Option<Vec<(u64, u32)>>,
}

impl FrontEnd {
    pub fn new(cfg: &GpuConfig, trace: &TraceFile) -> Self {
        let l0i = match cfg.front_end_model() {
            ModelKind::Baseline => Vec::new(),
            ModelKind::Improved => (0..cfg.num_sub_cores)
                .map(|_| {
                    Cache::new_unsectored(cfg.l0i_bytes, cfg.cache_line_bytes, cfg.cache_assoc)
                })
                .collect(),
        };
        FrontEnd {
            model: cfg.front_end_model(),
            line_bytes: cfg.cache_line_bytes,
            l1i_hit_latency: cfg.l1i_hit_latency,
            l2_latency: cfg.l2_latency,
            num_sub_cores: cfg.num_sub_cores,
            ibuffer_capacity: cfg.ibuffer_entries_per_warp,
            l1i: Cache::new_unsectored(cfg.l1i_bytes, cfg.cache_line_bytes, cfg.cache_assoc),
            l0i,
            kernel_bases: kernel_bases(trace, cfg.cache_line_bytes),
            current_kernel: 0,
            num_warps: 0,
            streams: Vec::new(),
            ibuffer: IBuffer::new(0, cfg.ibuffer_entries_per_warp),
            base_rr: RoundRobin::new(1),
            fetch_pending: Vec::new(),
            base_fills: BTreeMap::new(),
            sub_warp_lists: Vec::new(),
            fetch_rr: (0..cfg.num_sub_cores as usize)
                .map(|_| RoundRobin::new(1))
                .collect(),
            entries: vec![None; cfg.num_sub_cores as usize],
            l0_request: vec![None; cfg.num_sub_cores as usize],
            l0_outstanding: vec![false; cfg.num_sub_cores as usize],
            l1i_arb: RoundRobin::new(cfg.num_sub_cores as usize),
            improved_fills: BTreeMap::new(),
            l1i_inflight: BTreeMap::new(),
            decoded: 0,
            fetch_groups: 0,
            grant_history: None,
        }
    }

    /// Reset per-kernel state and install the kernel's warp streams.
    /// Cache contents persist across kernels by design.
    pub fn load_kernel(&mut self, kernel_id: u32, streams: Vec<WarpStream>) {
        debug_assert!(!self.busy());
        self.current_kernel = kernel_id;
        self.num_warps = streams.len() as u32;
        self.ibuffer = IBuffer::new(self.num_warps, self.ibuffer_capacity);
        self.base_rr = RoundRobin::new(streams.len().max(1));
        self.fetch_pending = vec![false; streams.len()];
        self.sub_warp_lists = (0..self.num_sub_cores)
            .map(|sc| {
                (0..self.num_warps)
                    .filter(|&w| sub_core_of(w, self.num_sub_cores) == sc)
                    .collect::<Vec<u32>>()
            })
            .collect();
        self.fetch_rr = self
            .sub_warp_lists
            .iter()
            .map(|l| RoundRobin::new(l.len().max(1)))
            .collect();
        self.entries = vec![None; self.num_sub_cores as usize];
        self.l0_request = vec![None; self.num_sub_cores as usize];
        self.l0_outstanding = vec![false; self.num_sub_cores as usize];
        self.streams = streams;
    }

    /// Address an instruction fetch uses for cache indexing. Baseline uses
    /// the raw PC, so identical PCs of different kernels collide; improved
    /// places each kernel at its own line-aligned base.
    pub fn effective_fetch_addr(&self, kernel_id: u32, pc: u64) -> u64 {
        match self.model {
            ModelKind::Baseline => pc,
            ModelKind::Improved => self.kernel_bases[&kernel_id] + pc,
        }
    }

    fn line_of(&self, addr: u64) -> u64 {
        addr & !(self.line_bytes - 1)
    }

    /// Trace indices the next fetch of `warp` would deliver.
    pub fn fetch_group(&self, warp: u32, trace: &[Instruction]) -> Vec<usize> {
        let stream = &self.streams[warp as usize];
        let Some(first) = stream.peek(0) else {
            return Vec::new();
        };
        let free = self.ibuffer.free_slots(warp);
        let mut group = vec![first];
        if free >= 2 {
            if let Some(second) = stream.peek(1) {
                match self.model {
                    // The mispacking: always take the pair.
                    ModelKind::Baseline => group.push(second),
                    ModelKind::Improved => {
                        let a = &trace[first];
                        let b = &trace[second];
                        let contiguous = b.pc == a.pc + INSTRUCTION_BYTES;
                        let same_line = self.line_of(
                            self.effective_fetch_addr(a.kernel_id, a.pc),
                        ) == self.line_of(
                            self.effective_fetch_addr(b.kernel_id, b.pc),
                        );
                        if contiguous && same_line {
                            group.push(second);
                        }
                    }
                }
            }
        }
        group
    }

    /// Decode stage (improved model): one ready fetch entry per sub-core
    /// moves into its warp's instruction buffer. Baseline decodes inside
    /// the fetch stage, so this is a no-op there.
    pub fn decode(&mut self, _now: u64) {
        if self.model == ModelKind::Baseline {
            return;
        }
        for sc in 0..self.num_sub_cores as usize {
            let ready = matches!(&self.entries[sc], Some(e) if e.ready);
            if !ready {
                continue;
            }
            let entry = self.entries[sc].take().unwrap();
            debug_assert!(
                self.ibuffer.free_slots(entry.warp) >= entry.indices.len(),
                "fetch reserved the slots it delivers into"
            );
            for idx in entry.indices {
                self.ibuffer.push(entry.warp, idx);
                self.decoded += 1;
            }
        }
    }

    /// L1I arbitration (improved model): grant one sub-core's queued L0I
    /// miss, probe L1I, and schedule the resulting fill(s).
    pub fn arbitrate_l1i(&mut self, now: u64) {
        if self.model == ModelKind::Baseline {
            return;
        }
        let candidates: Vec<bool> = self.l0_request.iter().map(Option::is_some).collect();
        let Some(sc) = self.l1i_arb.grant(&candidates) else {
            return;
        };
        let line = self.l0_request[sc].take().unwrap();
        if let Some(h) = self.grant_history.as_mut() {
            h.push((now, sc as u32));
        }
        if self.l1i.probe(line) {
            self.schedule_improved_fill(now + self.l1i_hit_latency, sc, line, false);
        } else if let Some(&ready) = self.l1i_inflight.get(&line) {
            // Another sub-core already ordered this line from the backing
            // store; ride its fill.
            self.l1i.merge_into_pending_fill();
            self.schedule_improved_fill(ready, sc, line, false);
        } else {
            let ready = now + self.l2_latency;
            self.l1i_inflight.insert(line, ready);
            self.schedule_improved_fill(ready, sc, line, true);
        }
    }

    fn schedule_improved_fill(&mut self, at: u64, sub_core: usize, line: u64, fills_l1i: bool) {
        self.improved_fills.entry(at).or_default().push(ImprovedFill {
            sub_core,
            line,
            fills_l1i,
        });
    }

    /// Fetch stage. Baseline: up to `num_sub_cores` fetch+decode actions
    /// against the shared cache under one SM-wide round-robin pointer.
    /// Improved: each idle sub-core fetch unit picks one warp round-robin
    /// and probes its private L0I.
    pub fn fetch(&mut self, now: u64, trace: &[Instruction]) {
        match self.model {
            ModelKind::Baseline => self.fetch_baseline(now, trace),
            ModelKind::Improved => self.fetch_improved(trace),
        }
    }

    fn baseline_candidates(&self) -> Vec<bool> {
        (0..self.streams.len())
            .map(|w| {
                !self.fetch_pending[w]
                    && self.streams[w].remaining() > 0
                    && self.ibuffer.free_slots(w as u32) > 0
            })
            .collect()
    }

    fn fetch_baseline(&mut self, now: u64, trace: &[Instruction]) {
        for _ in 0..self.num_sub_cores {
            let candidates = self.baseline_candidates();
            let Some(w) = self.base_rr.grant(&candidates) else {
                return;
            };
            let warp = w as u32;
            let group = self.fetch_group(warp, trace);
            debug_assert!(!group.is_empty());
            // One access, charged at the first instruction's line; the
            // second instruction's line is never checked.
            let first = &trace[group[0]];
            let line = self.line_of(self.effective_fetch_addr(first.kernel_id, first.pc));
            self.fetch_groups += 1;
            if self.l1i.probe(line) {
                // Fetch and decode complete this same cycle.
                for idx in &group {
                    self.ibuffer.push(warp, *idx);
                    self.decoded += 1;
                }
                self.streams[w].next += group.len();
            } else {
                self.fetch_pending[w] = true;
                if let Some(entry) = self.base_fills.get_mut(&line) {
                    // Another warp already ordered this line; merge.
                    self.l1i.merge_into_pending_fill();
                    entry.1.push(warp);
                } else {
                    self.base_fills
                        .insert(line, (now + self.l2_latency, vec![warp]));
                }
            }
        }
    }

    fn fetch_improved(&mut self, trace: &[Instruction]) {
        for sc in 0..self.num_sub_cores as usize {
            if self.entries[sc].is_some() || self.l0_outstanding[sc] {
                // The fetch unit is busy with an un-decoded group or an
                // outstanding L0I fill (no hit-under-miss).
                continue;
            }
            let list = self.sub_warp_lists[sc].clone();
            if list.is_empty() {
                continue;
            }
            let candidates: Vec<bool> = list
                .iter()
                .map(|&w| {
                    self.streams[w as usize].remaining() > 0
                        && self.ibuffer.free_slots(w) >= 2
                })
                .collect();
            let Some(pos) = self.fetch_rr[sc].grant(&candidates) else {
                continue;
            };
            let warp = list[pos];
            let group = self.fetch_group(warp, trace);
            debug_assert!(!group.is_empty());
            let first = &trace[group[0]];
            let line = self.line_of(self.effective_fetch_addr(first.kernel_id, first.pc));
            self.fetch_groups += 1;
            self.streams[warp as usize].next += group.len();
            let hit = self.l0i[sc].probe(line);
            self.entries[sc] = Some(FetchEntry {
                warp,
                indices: group,
                ready: hit,
            });
            if !hit {
                self.l0_request[sc] = Some(line);
                self.l0_outstanding[sc] = true;
            }
        }
    }

    /// Apply cache fills that become ready this cycle.
    pub fn complete_fills(&mut self, now: u64) {
        match self.model {
            ModelKind::Baseline => {
                let due: Vec<u64> = self
                    .base_fills
                    .iter()
                    .filter(|(_, (ready, _))| *ready <= now)
                    .map(|(&line, _)| line)
                    .collect();
                for line in due {
                    let (_, warps) = self.base_fills.remove(&line).unwrap();
                    self.l1i.fill(line);
                    for w in warps {
                        self.fetch_pending[w as usize] = false;
                    }
                }
            }
            ModelKind::Improved => {
                let due: Vec<u64> = self
                    .improved_fills
                    .range(..=now)
                    .map(|(&c, _)| c)
                    .collect();
                for cycle in due {
                    for fill in self.improved_fills.remove(&cycle).unwrap() {
                        if fill.fills_l1i {
                            self.l1i.fill(fill.line);
                            self.l1i_inflight.remove(&fill.line);
                        }
                        self.l0i[fill.sub_core].fill(fill.line);
                        self.l0_outstanding[fill.sub_core] = false;
                        let entry = self.entries[fill.sub_core]
                            .as_mut()
                            .expect("a fill always readies the waiting fetch entry");
                        debug_assert!(!entry.ready);
                        entry.ready = true;
                    }
                }
            }
        }
    }

    pub fn ibuffer_head(&self, warp: u32) -> Option<usize> {
        self.ibuffer.head(warp)
    }

    pub fn ibuffer_pop(&mut self, warp: u32) -> Option<usize> {
        self.ibuffer.pop(warp)
    }

    /// Any instruction supply still in flight for the current kernel?
    pub fn busy(&self) -> bool {
        self.streams.iter().any(|s| s.remaining() > 0)
            || !self.ibuffer.is_empty()
            || self.entries.iter().any(Option::is_some)
            || self.l0_request.iter().any(Option::is_some)
            || !self.base_fills.is_empty()
            || !self.improved_fills.is_empty()
    }

    pub fn l1i_stats(&self) -> CacheStats {
        self.l1i.stats
    }

    pub fn l0i_stats(&self) -> Vec<CacheStats> {
        self.l0i.iter().map(|c| c.stats).collect()
    }

    pub fn kernel_base(&self, kernel_id: u32) -> Option<u64> {
        self.kernel_bases.get(&kernel_id).copied()
    }
}

/// Disjoint line-aligned code base addresses, one per kernel, each block
/// at least as large as the kernel's image (largest PC or branch target
/// plus one instruction).
fn kernel_bases(trace: &TraceFile, line_bytes: u64) -> BTreeMap<u32, u64> {
    let mut image_end: BTreeMap<u32, u64> = trace
        .header
        .kernels
        .iter()
        .map(|k| (k.kernel_id, 0))
        .collect();
    for ins in &trace.instructions {
        let end = image_end.entry(ins.kernel_id).or_default();
        *end = (*end).max(ins.pc + INSTRUCTION_BYTES);
        if let Some(t) = ins.branch_target {
            *end = (*end).max(t + INSTRUCTION_BYTES);
        }
    }
    let mut bases = BTreeMap::new();
    let mut next_base = 0u64;
    for (kernel, end) in image_end {
        bases.insert(kernel, next_base);
        let size = end.div_ceil(line_bytes) * line_bytes;
        next_base += size.max(line_bytes);
    }
    bases
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::OpcodeClass;
    use crate::trace::{KernelInfo, TraceHeader, TRACE_FORMAT_VERSION};
    use alloc::string::ToString;

    /// Build a trace where every warp of every kernel runs the same body
    /// of `body` ALU instructions (plus the terminator).
    fn alu_trace(kernels: u32, warps: u32, body: u32) -> TraceFile {
        let mut instructions = Vec::new();
        for k in 0..kernels {
            for w in 0..warps {
                for j in 0..body {
                    instructions.push(
                        Instruction::new(k, w, j as u64 * 16, OpcodeClass::AluInt)
                            .with_dest(8 + j % 16),
                    );
                }
                instructions
                    .push(Instruction::new(k, w, body as u64 * 16, OpcodeClass::Exit));
            }
        }
        TraceFile {
            header: TraceHeader {
                version: TRACE_FORMAT_VERSION,
                name: "alu".to_string(),
                kernels: (0..kernels)
                    .map(|k| KernelInfo {
                        kernel_id: k,
                        num_warps: warps,
                    })
                    .collect(),
            },
            instructions,
        }
    }

    fn load(fe: &mut FrontEnd, trace: &TraceFile, kernel: u32) {
        let streams = trace.warp_streams();
        let num_warps = trace
            .header
            .kernels
            .iter()
            .find(|k| k.kernel_id == kernel)
            .unwrap()
            .num_warps;
        let per_warp: Vec<WarpStream> = (0..num_warps)
            .map(|w| WarpStream::new(streams[&(kernel, w)].clone()))
            .collect();
        fe.load_kernel(kernel, per_warp);
    }

    fn cfg(model: ModelKind) -> GpuConfig {
        GpuConfig {
            model,
            ..GpuConfig::default()
        }
    }

    /// One front-end cycle in engine stage order (decode precedes
    /// arbitration, fetch, then fill completion).
    fn step(fe: &mut FrontEnd, trace: &TraceFile, now: u64) {
        fe.decode(now);
        fe.arbitrate_l1i(now);
        fe.fetch(now, &trace.instructions);
        fe.complete_fills(now);
    }

    #[test]
    fn fetch_addresses_alias_only_in_baseline() {
        let trace = alu_trace(2, 1, 4);
        let base = FrontEnd::new(&cfg(ModelKind::Baseline), &trace);
        assert_eq!(
            base.effective_fetch_addr(0, 0x0),
            base.effective_fetch_addr(1, 0x0)
        );
        let imp = FrontEnd::new(&cfg(ModelKind::Improved), &trace);
        assert_ne!(
            imp.effective_fetch_addr(0, 0x0),
            imp.effective_fetch_addr(1, 0x0)
        );
        assert_eq!(
            imp.effective_fetch_addr(0, 0x0),
            imp.kernel_base(0).unwrap()
        );
        // Bases are line-aligned and blocks do not overlap.
        let b0 = imp.kernel_base(0).unwrap();
        let b1 = imp.kernel_base(1).unwrap();
        assert_eq!(b0 % 128, 0);
        assert_eq!(b1 % 128, 0);
        // Kernel 0's image is 5 instructions = 80 bytes -> one line.
        assert!(b1 >= b0 + 128);
    }

    #[test]
    fn improved_group_truncates_at_line_boundary() {
        let trace = alu_trace(1, 1, 16);
        let mut fe = FrontEnd::new(&cfg(ModelKind::Improved), &trace);
        load(&mut fe, &trace, 0);
        // At pc 0x0: both instructions in line 0.
        assert_eq!(fe.fetch_group(0, &trace.instructions).len(), 2);
        // Advance the cursor to pc 0x70 (index 7): 0x70+16 crosses into
        // the next line, so the group holds one instruction.
        fe.streams[0].next = 7;
        let group = fe.fetch_group(0, &trace.instructions);
        assert_eq!(group.len(), 1);
        assert_eq!(trace.instructions[group[0]].pc, 0x70);
    }

    fn branch_trace(taken: bool) -> TraceFile {
        // pc 0x0 branch (target 0x20), then its successor, then exit.
        let next_pc = if taken { 0x20 } else { 0x10 };
        let instructions = vec![
            Instruction::new(0, 0, 0x0, OpcodeClass::Branch).with_branch_target(0x20),
            Instruction::new(0, 0, next_pc, OpcodeClass::AluInt).with_dest(8),
            Instruction::new(0, 0, next_pc + 16, OpcodeClass::Exit),
        ];
        TraceFile {
            header: TraceHeader {
                version: TRACE_FORMAT_VERSION,
                name: "branch".to_string(),
                kernels: vec![KernelInfo {
                    kernel_id: 0,
                    num_warps: 1,
                }],
            },
            instructions,
        }
    }

    #[test]
    fn improved_group_stops_at_taken_branch() {
        let taken = branch_trace(true);
        let mut fe = FrontEnd::new(&cfg(ModelKind::Improved), &taken);
        load(&mut fe, &taken, 0);
        assert_eq!(fe.fetch_group(0, &taken.instructions).len(), 1);

        let not_taken = branch_trace(false);
        let mut fe = FrontEnd::new(&cfg(ModelKind::Improved), &not_taken);
        load(&mut fe, &not_taken, 0);
        assert_eq!(fe.fetch_group(0, &not_taken.instructions).len(), 2);
    }

    #[test]
    fn baseline_packs_across_taken_branch_with_one_access() {
        let taken = branch_trace(true);
        let mut fe = FrontEnd::new(&cfg(ModelKind::Baseline), &taken);
        load(&mut fe, &taken, 0);
        let group = fe.fetch_group(0, &taken.instructions);
        assert_eq!(group.len(), 2);
        // Warm the line of the FIRST pc only, then fetch: both
        // instructions decode off a single hit even though the second
        // one's line was never checked.
        fe.l1i.fill(0x0);
        fe.fetch(0, &taken.instructions);
        assert_eq!(fe.l1i.stats.accesses, 1);
        assert_eq!(fe.l1i.stats.hits, 1);
        assert_eq!(fe.decoded, 2);
    }

    #[test]
    fn baseline_fetches_four_warps_per_cycle_on_hits() {
        let trace = alu_trace(1, 8, 8);
        let mut fe = FrontEnd::new(&cfg(ModelKind::Baseline), &trace);
        load(&mut fe, &trace, 0);
        fe.l1i.fill(0x0);
        fe.fetch(0, &trace.instructions);
        // 4 actions, 2 instructions each, across 4 distinct warps.
        assert_eq!(fe.decoded, 8);
        assert_eq!(fe.l1i.stats.accesses, 4);
        let fed: Vec<u32> = (0..8)
            .filter(|&w| fe.ibuffer_head(w).is_some())
            .collect();
        assert_eq!(fed, vec![0, 1, 2, 3]);
    }

    #[test]
    fn baseline_miss_refetches_after_fill_with_extra_hit() {
        let trace = alu_trace(1, 1, 4);
        let cfg = cfg(ModelKind::Baseline);
        let mut fe = FrontEnd::new(&cfg, &trace);
        load(&mut fe, &trace, 0);
        step(&mut fe, &trace, 0); // cold miss
        assert_eq!(fe.l1i.stats.misses, 1);
        assert!(fe.ibuffer_head(0).is_none());
        // The warp is blocked while the fill is outstanding.
        for t in 1..cfg.l2_latency {
            step(&mut fe, &trace, t);
        }
        assert_eq!(fe.l1i.stats.accesses, 1);
        // Fill lands at t=120; the retry at t=121 probes again and hits.
        step(&mut fe, &trace, cfg.l2_latency);
        assert!(fe.ibuffer_head(0).is_none());
        step(&mut fe, &trace, cfg.l2_latency + 1);
        assert_eq!(fe.l1i.stats.accesses, 2);
        assert_eq!(fe.l1i.stats.hits, 1);
        assert!(fe.ibuffer_head(0).is_some());
    }

    #[test]
    fn improved_hit_decodes_next_cycle() {
        let trace = alu_trace(1, 1, 4);
        let mut fe = FrontEnd::new(&cfg(ModelKind::Improved), &trace);
        load(&mut fe, &trace, 0);
        let base = fe.kernel_base(0).unwrap();
        fe.l0i[0].fill(base);
        step(&mut fe, &trace, 0); // L0I hit; entry ready
        assert!(fe.ibuffer_head(0).is_none(), "decode is a distinct cycle");
        step(&mut fe, &trace, 1);
        assert!(fe.ibuffer_head(0).is_some());
        assert_eq!(fe.decoded, 2);
    }

    #[test]
    fn four_simultaneous_misses_are_granted_on_consecutive_cycles() {
        let trace = alu_trace(1, 4, 8);
        let mut fe = FrontEnd::new(&cfg(ModelKind::Improved), &trace);
        load(&mut fe, &trace, 0);
        fe.grant_history = Some(Vec::new());
        // Cycle 0: all four sub-cores miss their L0I. Grants then land
        // one per cycle on cycles 1..=4.
        for t in 0..6 {
            step(&mut fe, &trace, t);
        }
        let history = fe.grant_history.clone().unwrap();
        let cycles: Vec<u64> = history.iter().map(|&(c, _)| c).collect();
        assert_eq!(cycles, vec![1, 2, 3, 4]);
        let mut granted: Vec<u32> = history.iter().map(|&(_, sc)| sc).collect();
        granted.sort_unstable();
        assert_eq!(granted, vec![0, 1, 2, 3]);
    }

    #[test]
    fn improved_requires_two_free_ibuffer_slots() {
        let trace = alu_trace(1, 1, 8);
        let mut c = cfg(ModelKind::Improved);
        c.ibuffer_entries_per_warp = 1;
        let mut fe = FrontEnd::new(&c, &trace);
        load(&mut fe, &trace, 0);
        let base = fe.kernel_base(0).unwrap();
        fe.l0i[0].fill(base);
        for t in 0..4 {
            step(&mut fe, &trace, t);
        }
        // Never eligible: no fetch ever happens.
        assert_eq!(fe.fetch_groups, 0);
        assert!(fe.ibuffer_head(0).is_none());
    }

    #[test]
    fn improved_l1i_miss_fills_both_levels() {
        let trace = alu_trace(1, 1, 4);
        let c = cfg(ModelKind::Improved);
        let mut fe = FrontEnd::new(&c, &trace);
        load(&mut fe, &trace, 0);
        // t=0 L0I miss; t=1 grant + L1I miss; fill at 1 + l2_latency.
        let fill_at = 1 + c.l2_latency;
        for t in 0..=fill_at {
            step(&mut fe, &trace, t);
        }
        assert_eq!(fe.l1i.stats.misses, 1);
        let base = fe.kernel_base(0).unwrap();
        assert!(fe.l1i.contains(base));
        assert!(fe.l0i[0].contains(base));
        // Decode happens the cycle after the fill.
        assert!(fe.ibuffer_head(0).is_none());
        step(&mut fe, &trace, fill_at + 1);
        assert!(fe.ibuffer_head(0).is_some());
    }

    #[test]
    fn kernel_aliasing_baseline_vs_improved() {
        // Two kernels, identical 64-instruction bodies. Baseline: kernel 1
        // spuriously hits on kernel 0's lines. Improved: kernel 1 misses
        // its own lines again.
        let trace = alu_trace(2, 1, 64);
        for (model, expect_extra_misses) in
            [(ModelKind::Baseline, false), (ModelKind::Improved, true)]
        {
            let mut fe = FrontEnd::new(&cfg(model), &trace);
            let run_kernel = |fe: &mut FrontEnd, k: u32| {
                load(fe, &trace, k);
                let mut t = 0;
                while fe.busy() {
                    // Drain the ibuffer as if issue consumed everything.
                    while fe.ibuffer_pop(0).is_some() {}
                    step(fe, &trace, t);
                    t += 1;
                    assert!(t < 10_000, "front-end failed to drain");
                }
                while fe.ibuffer_pop(0).is_some() {}
            };
            run_kernel(&mut fe, 0);
            let misses_after_k0 = fe.l1i.stats.misses;
            run_kernel(&mut fe, 1);
            let extra = fe.l1i.stats.misses - misses_after_k0;
            if expect_extra_misses {
                // 65 instructions: 9 lines of fresh code.
                assert!(extra >= 9, "improved extra misses = {extra}");
            } else {
                assert_eq!(extra, 0, "baseline must alias kernel 1 onto kernel 0");
            }
        }
    }
}
