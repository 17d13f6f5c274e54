//! Synthetic workload generation.
//!
//! Each pattern stresses one subsystem: `Coalesced`/`Strided`/`Random` the
//! global-memory coalescer and cache banks, `IcacheThrash` the instruction
//! caches across kernel boundaries, `BranchHeavy` the fetch group truncation
//! logic, `SharedConflict` the shared-memory bank conflict accounting and
//! `Mixed` everything at once.
//!
//! Generation is fully deterministic. The only randomness source is
//! `Xorshift64Star`, whose exact recurrence is documented on the type so an
//! implementation in any language can reproduce identical traces.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::config::GpuConfig;
use crate::isa::{Instruction, OpcodeClass, INSTRUCTION_BYTES};
use crate::trace::{KernelInfo, TraceFile, TraceHeader, TRACE_FORMAT_VERSION, TRACE_LANES};

/// First byte of warp 0's global-memory window; successive warps' windows
/// are spaced 1 MiB apart so patterns only share cache lines on purpose.
pub const GLOBAL_BASE: u64 = 0x1000_0000;
pub const WARP_SPACING: u64 = 0x10_0000;

/// `xorshift64*` pseudo-random generator.
///
/// State update: `x ^= x >> 12; x ^= x << 25; x ^= x >> 27`; output is
/// `x * 0x2545F4914F6CDD1D` (wrapping). A zero seed is replaced by
/// `0x9E3779B97F4A7C15`. This recurrence is part of the trace-format
/// contract: any implementation that follows it reproduces identical traces.
#[derive(Debug, Clone)]
pub struct Xorshift64Star {
    state: u64,
}

impl Xorshift64Star {
    pub fn new(seed: u64) -> Self {
        Xorshift64Star {
            state: if seed == 0 { 0x9E37_79B9_7F4A_7C15 } else { seed },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Mix a seed with a stream index so each (kernel, warp) draws an
/// independent deterministic sequence.
fn stream_seed(seed: u64, kernel: u32, warp: u32) -> u64 {
    let idx = (kernel as u64) << 32 | warp as u64;
    seed ^ (idx.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Pattern {
    /// Loads whose active lanes all fall inside one sector of one cache
    /// line: maximally coalesced, a single request per access.
    Coalesced,
    /// Lane `i` reads `base + i * stride_bytes`; the base advances each
    /// instruction so successive instructions touch fresh memory.
    Strided { stride_bytes: u64 },
    /// Per-lane addresses drawn uniformly from the warp's 1 MiB window.
    Random { seed: u64 },
    /// `kernel_count` kernels whose bodies occupy identical PC ranges.
    IcacheThrash { kernel_count: u32, body_len: u32 },
    /// Alternating integer/branch stream; each branch is taken with
    /// probability `taken_ratio`, jumping forward over one instruction.
    BranchHeavy { taken_ratio: f64, seed: u64 },
    /// Shared-memory loads where each used bank receives exactly
    /// `conflict_degree` lanes touching distinct words.
    SharedConflict { conflict_degree: u32 },
    /// Rotating blend of all opcode classes.
    Mixed { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub pattern: Pattern,
    pub num_warps: u32,
    /// Per-warp instruction count including the terminator. Ignored by
    /// `IcacheThrash`, whose body length is a pattern parameter.
    pub instructions_per_warp: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenError(pub String);

impl fmt::Display for GenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "workload spec invalid: {}", self.0)
    }
}

impl WorkloadSpec {
    pub fn validate(&self, cfg: &GpuConfig) -> Result<(), GenError> {
        if self.num_warps == 0 {
            return Err(GenError("num_warps must be positive".into()));
        }
        if self.num_warps > cfg.max_warps_per_sm {
            return Err(GenError(format!(
                "num_warps {} exceeds max_warps_per_sm {}",
                self.num_warps, cfg.max_warps_per_sm
            )));
        }
        match self.pattern {
            Pattern::IcacheThrash {
                kernel_count,
                body_len,
            } => {
                if kernel_count == 0 {
                    return Err(GenError("kernel_count must be positive".into()));
                }
                if body_len == 0 {
                    return Err(GenError("body_len must be positive".into()));
                }
            }
            _ => {
                if self.instructions_per_warp < 2 {
                    return Err(GenError(
                        "instructions_per_warp must be at least 2 (body + terminator)"
                            .into(),
                    ));
                }
            }
        }
        match self.pattern {
            Pattern::Strided { stride_bytes } => {
                if stride_bytes > 1 << 40 {
                    return Err(GenError(format!(
                        "stride_bytes {stride_bytes} is unreasonably large"
                    )));
                }
            }
            Pattern::BranchHeavy { taken_ratio, .. } => {
                if !(0.0..=1.0).contains(&taken_ratio) {
                    return Err(GenError(format!(
                        "taken_ratio {taken_ratio} outside [0, 1]"
                    )));
                }
            }
            Pattern::SharedConflict { conflict_degree } => {
                if conflict_degree == 0 || conflict_degree > cfg.shared_mem_banks {
                    return Err(GenError(format!(
                        "conflict_degree {} outside [1, {}]",
                        conflict_degree, cfg.shared_mem_banks
                    )));
                }
                if !cfg.warp_width.is_multiple_of(conflict_degree) {
                    return Err(GenError(format!(
                        "conflict_degree {} does not divide warp_width {}",
                        conflict_degree, cfg.warp_width
                    )));
                }
                if cfg.warp_width / conflict_degree > cfg.shared_mem_banks {
                    return Err(GenError(format!(
                        "conflict_degree {} would need {} banks but only {} exist",
                        conflict_degree,
                        cfg.warp_width / conflict_degree,
                        cfg.shared_mem_banks
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn name(&self) -> String {
        let (w, n) = (self.num_warps, self.instructions_per_warp);
        match self.pattern {
            Pattern::Coalesced => format!("coalesced-w{w}-i{n}"),
            Pattern::Strided { stride_bytes } => {
                format!("strided{stride_bytes}-w{w}-i{n}")
            }
            Pattern::Random { seed } => format!("random{seed}-w{w}-i{n}"),
            Pattern::IcacheThrash {
                kernel_count,
                body_len,
            } => format!("icache-thrash-k{kernel_count}-b{body_len}-w{w}"),
            Pattern::BranchHeavy { taken_ratio, seed } => {
                let permille = (taken_ratio * 1000.0 + 0.5) as u32;
                format!("branch-heavy-p{permille}-s{seed}-w{w}-i{n}")
            }
            Pattern::SharedConflict { conflict_degree } => {
                format!("shared-conflict{conflict_degree}-w{w}-i{n}")
            }
            Pattern::Mixed { seed } => format!("mixed{seed}-w{w}-i{n}"),
        }
    }
}

fn warp_base(warp_id: u32) -> u64 {
    GLOBAL_BASE + warp_id as u64 * WARP_SPACING
}

fn full_mask(warp_width: u32) -> u32 {
    if warp_width >= 32 {
        u32::MAX
    } else {
        (1u32 << warp_width) - 1
    }
}

/// Destination registers rotate through a window that low-numbered source
/// registers never enter, so patterns create no incidental data hazards.
fn rotating_dest(j: u32) -> u32 {
    8 + (j % 16)
}

fn alu_srcs(j: u32) -> Vec<u32> {
    vec![j % 4, 4 + (j % 4)]
}

struct StreamBuilder {
    kernel_id: u32,
    warp_id: u32,
    pc: u64,
    mask: u32,
    instrs: Vec<Instruction>,
}

impl StreamBuilder {
    fn new(kernel_id: u32, warp_id: u32, mask: u32) -> Self {
        StreamBuilder {
            kernel_id,
            warp_id,
            pc: 0,
            mask,
            instrs: Vec::new(),
        }
    }

    fn push(&mut self, op: OpcodeClass) -> &mut Instruction {
        let ins = Instruction::new(self.kernel_id, self.warp_id, self.pc, op)
            .with_active_mask(self.mask);
        self.pc += INSTRUCTION_BYTES;
        self.instrs.push(ins);
        self.instrs.last_mut().unwrap()
    }

    /// Push a branch and advance the PC along the chosen direction.
    fn push_branch(&mut self, taken: bool, j: u32) {
        let target = self.pc + 2 * INSTRUCTION_BYTES;
        let ins = self.push(OpcodeClass::Branch);
        ins.branch_target = Some(target);
        ins.src_regs = vec![j % 8];
        if taken {
            self.pc = target;
        }
    }

    fn finish(mut self) -> Vec<Instruction> {
        self.push(OpcodeClass::Exit);
        self.instrs
    }
}

/// Lane addresses for one shared-memory access where each of the
/// `warp_width / degree` used banks receives `degree` lanes touching
/// distinct words. `j` shifts the word window per instruction.
fn shared_conflict_addrs(
    cfg: &GpuConfig,
    degree: u32,
    j: u32,
) -> Vec<u64> {
    let banks_used = cfg.warp_width / degree;
    let bank_width = cfg.shared_mem_bank_width_bytes as u64;
    let row_bytes = cfg.shared_mem_banks as u64 * bank_width;
    let mut addrs = vec![0u64; TRACE_LANES];
    for lane in 0..cfg.warp_width {
        let bank = (lane % banks_used) as u64;
        let word = (lane / banks_used) as u64 + (j as u64) * degree as u64;
        addrs[lane as usize] = word * row_bytes + bank * bank_width;
    }
    addrs
}

fn build_stream(
    spec: &WorkloadSpec,
    cfg: &GpuConfig,
    kernel_id: u32,
    warp_id: u32,
) -> Vec<Instruction> {
    let mask = full_mask(cfg.warp_width);
    let base = warp_base(warp_id);
    let line = cfg.cache_line_bytes;
    let mut b = StreamBuilder::new(kernel_id, warp_id, mask);
    let payload = spec.instructions_per_warp.saturating_sub(1);

    match spec.pattern {
        Pattern::Coalesced => {
            // Maximal coalescing: every active lane falls inside one
            // sector, so each access becomes exactly one memory request
            // and costs exactly one coalescing cycle in both models.
            let words_per_sector = cfg.sector_bytes / 4;
            for j in 0..payload {
                let mut addrs = vec![0u64; TRACE_LANES];
                for lane in 0..cfg.warp_width {
                    let word = lane as u64 % words_per_sector;
                    addrs[lane as usize] = base + j as u64 * line + word * 4;
                }
                let ins = b.push(OpcodeClass::LdGlobal);
                ins.dest_reg = Some(rotating_dest(j));
                ins.mem_addrs = Some(addrs);
            }
        }
        Pattern::Strided { stride_bytes } => {
            let advance = cfg.warp_width as u64 * stride_bytes;
            for j in 0..payload {
                let mut addrs = vec![0u64; TRACE_LANES];
                for lane in 0..cfg.warp_width {
                    addrs[lane as usize] =
                        base + j as u64 * advance + lane as u64 * stride_bytes;
                }
                let ins = b.push(OpcodeClass::LdGlobal);
                ins.dest_reg = Some(rotating_dest(j));
                ins.mem_addrs = Some(addrs);
            }
        }
        Pattern::Random { seed } => {
            let mut rng = Xorshift64Star::new(stream_seed(seed, kernel_id, warp_id));
            for j in 0..payload {
                let mut addrs = vec![0u64; TRACE_LANES];
                for lane in 0..cfg.warp_width {
                    let offset = (rng.next_u64() % WARP_SPACING) & !3;
                    addrs[lane as usize] = base + offset;
                }
                let ins = b.push(OpcodeClass::LdGlobal);
                ins.dest_reg = Some(rotating_dest(j));
                ins.mem_addrs = Some(addrs);
            }
        }
        Pattern::IcacheThrash { body_len, .. } => {
            for j in 0..body_len {
                let ins = b.push(OpcodeClass::AluInt);
                ins.dest_reg = Some(rotating_dest(j));
                ins.src_regs = alu_srcs(j);
            }
        }
        Pattern::BranchHeavy { taken_ratio, seed } => {
            let mut rng = Xorshift64Star::new(stream_seed(seed, kernel_id, warp_id));
            for j in 0..payload {
                if j % 2 == 0 {
                    let ins = b.push(OpcodeClass::AluInt);
                    ins.dest_reg = Some(rotating_dest(j));
                    ins.src_regs = alu_srcs(j);
                } else {
                    let taken = rng.next_f64() < taken_ratio;
                    b.push_branch(taken, j);
                }
            }
        }
        Pattern::SharedConflict { conflict_degree } => {
            for j in 0..payload {
                let ins = b.push(OpcodeClass::LdShared);
                ins.dest_reg = Some(rotating_dest(j));
                ins.mem_addrs = Some(shared_conflict_addrs(cfg, conflict_degree, j));
            }
        }
        Pattern::Mixed { seed } => {
            let mut rng = Xorshift64Star::new(stream_seed(seed, kernel_id, warp_id));
            let row_bytes =
                cfg.shared_mem_banks as u64 * cfg.shared_mem_bank_width_bytes as u64;
            for j in 0..payload {
                match rng.next_u64() % 8 {
                    0 => {
                        let ins = b.push(OpcodeClass::AluSp);
                        ins.dest_reg = Some(rotating_dest(j));
                        ins.src_regs = alu_srcs(j);
                    }
                    1 => {
                        let ins = b.push(OpcodeClass::AluInt);
                        ins.dest_reg = Some(rotating_dest(j));
                        ins.src_regs = alu_srcs(j);
                    }
                    2 => {
                        let mut addrs = vec![0u64; TRACE_LANES];
                        for lane in 0..cfg.warp_width {
                            addrs[lane as usize] =
                                base + j as u64 * line + lane as u64 * 4;
                        }
                        let ins = b.push(OpcodeClass::LdGlobal);
                        ins.dest_reg = Some(rotating_dest(j));
                        ins.mem_addrs = Some(addrs);
                    }
                    3 => {
                        let ins = b.push(OpcodeClass::Sfu);
                        ins.dest_reg = Some(rotating_dest(j));
                        ins.src_regs = alu_srcs(j);
                    }
                    4 => {
                        // Conflict-free shared load: one lane per bank.
                        let mut addrs = vec![0u64; TRACE_LANES];
                        for lane in 0..cfg.warp_width {
                            let bank = (lane % cfg.shared_mem_banks) as u64;
                            addrs[lane as usize] = (j as u64 % 64) * row_bytes
                                + bank * cfg.shared_mem_bank_width_bytes as u64;
                        }
                        let ins = b.push(OpcodeClass::LdShared);
                        ins.dest_reg = Some(rotating_dest(j));
                        ins.mem_addrs = Some(addrs);
                    }
                    5 => {
                        b.push_branch(rng.next_u64() & 1 == 1, j);
                    }
                    6 => {
                        let mut addrs = vec![0u64; TRACE_LANES];
                        for lane in 0..cfg.warp_width {
                            addrs[lane as usize] = base
                                + WARP_SPACING / 2
                                + j as u64 * line
                                + lane as u64 * 4;
                        }
                        let ins = b.push(OpcodeClass::StGlobal);
                        ins.src_regs = vec![j % 8];
                        ins.mem_addrs = Some(addrs);
                    }
                    _ => {
                        let ins = b.push(OpcodeClass::Tensor);
                        ins.dest_reg = Some(rotating_dest(j));
                        ins.src_regs = alu_srcs(j);
                    }
                }
            }
        }
    }
    b.finish()
}

/// Generate a trace for `spec` under `cfg`. Deterministic: identical
/// arguments always produce an identical `TraceFile`.
pub fn generate(spec: &WorkloadSpec, cfg: &GpuConfig) -> Result<TraceFile, GenError> {
    spec.validate(cfg)?;
    let kernel_count = match spec.pattern {
        Pattern::IcacheThrash { kernel_count, .. } => kernel_count,
        _ => 1,
    };
    let kernels: Vec<KernelInfo> = (0..kernel_count)
        .map(|k| KernelInfo {
            kernel_id: k,
            num_warps: spec.num_warps,
        })
        .collect();

    let mut instructions = Vec::new();
    for k in 0..kernel_count {
        let streams: Vec<Vec<Instruction>> = (0..spec.num_warps)
            .map(|w| build_stream(spec, cfg, k, w))
            .collect();
        let longest = streams.iter().map(Vec::len).max().unwrap_or(0);
        // Interleave warps position-wise, the order a round-robin tracer
        // would record them in.
        for pos in 0..longest {
            for stream in &streams {
                if let Some(ins) = stream.get(pos) {
                    instructions.push(ins.clone());
                }
            }
        }
    }

    let trace = TraceFile {
        header: TraceHeader {
            version: TRACE_FORMAT_VERSION,
            name: spec.name(),
            kernels,
        },
        instructions,
    };
    debug_assert!(trace.validate().is_ok());
    Ok(trace)
}
