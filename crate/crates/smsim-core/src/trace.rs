//! In-memory instruction-trace model and validation.
//!
//! A trace is a header (version, name, kernel table) plus a flat list of
//! instructions. Per-warp program order is the order instructions appear in
//! the list, filtered by `(kernel_id, warp_id)`. Kernels execute strictly in
//! header order, so instructions from different kernels may not interleave.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::{Deserialize, Serialize};

use crate::isa::{Instruction, OpcodeClass, INSTRUCTION_BYTES};

pub const TRACE_FORMAT_VERSION: u32 = 1;

/// Number of lane slots carried by every per-lane field (`mem_addrs`,
/// `active_mask`). Traces always describe full 32-lane warps; narrower
/// machine configurations simply ignore the upper lanes' mask bits.
pub const TRACE_LANES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelInfo {
    pub kernel_id: u32,
    pub num_warps: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceHeader {
    pub version: u32,
    pub name: String,
    pub kernels: Vec<KernelInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub instructions: Vec<Instruction>,
}

/// A trace-validation failure, with the offending instruction index where
/// one applies (0-based position in the instruction list).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceError {
    pub instruction_index: Option<usize>,
    pub message: String,
}

impl fmt::Display for TraceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.instruction_index {
            Some(i) => write!(f, "instruction {}: {}", i, self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl TraceError {
    fn new(index: Option<usize>, message: String) -> Self {
        TraceError {
            instruction_index: index,
            message,
        }
    }
}

impl TraceFile {
    /// Instruction indices per warp, keyed `(kernel_id, warp_id)`, in
    /// program order. Only meaningful on a validated trace.
    pub fn warp_streams(&self) -> BTreeMap<(u32, u32), Vec<usize>> {
        let mut streams: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (i, ins) in self.instructions.iter().enumerate() {
            streams
                .entry((ins.kernel_id, ins.warp_id))
                .or_default()
                .push(i);
        }
        streams
    }

    /// Total instruction count excluding warp terminators.
    pub fn payload_instructions(&self) -> u64 {
        self.instructions
            .iter()
            .filter(|i| i.opcode != OpcodeClass::Exit)
            .count() as u64
    }

    /// Check structural soundness of the whole trace.
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.header.version != TRACE_FORMAT_VERSION {
            return Err(TraceError::new(
                None,
                format!(
                    "unsupported trace version {} (expected {})",
                    self.header.version, TRACE_FORMAT_VERSION
                ),
            ));
        }
        if self.header.kernels.is_empty() {
            return Err(TraceError::new(None, "trace declares no kernels".into()));
        }
        let mut kernel_table: BTreeMap<u32, u32> = BTreeMap::new();
        let mut prev_kernel: Option<u32> = None;
        for k in &self.header.kernels {
            if let Some(p) = prev_kernel {
                if k.kernel_id <= p {
                    return Err(TraceError::new(
                        None,
                        format!(
                            "kernel ids must be strictly increasing \
                             (saw {} after {})",
                            k.kernel_id, p
                        ),
                    ));
                }
            }
            if k.num_warps == 0 {
                return Err(TraceError::new(
                    None,
                    format!("kernel {} declares zero warps", k.kernel_id),
                ));
            }
            kernel_table.insert(k.kernel_id, k.num_warps);
            prev_kernel = Some(k.kernel_id);
        }

        // Kernels must appear in header order and must not interleave.
        let mut kernel_cursor = 0usize;
        // Per-warp running state: (previous instruction index, exited).
        let mut last_in_warp: BTreeMap<(u32, u32), usize> = BTreeMap::new();
        let mut exited: BTreeMap<(u32, u32), bool> = BTreeMap::new();

        for (i, ins) in self.instructions.iter().enumerate() {
            let num_warps = *kernel_table.get(&ins.kernel_id).ok_or_else(|| {
                TraceError::new(
                    Some(i),
                    format!("kernel {} not declared in the header", ins.kernel_id),
                )
            })?;
            if ins.warp_id >= num_warps {
                return Err(TraceError::new(
                    Some(i),
                    format!(
                        "warp {} out of range for kernel {} ({} warps)",
                        ins.warp_id, ins.kernel_id, num_warps
                    ),
                ));
            }
            while self.header.kernels[kernel_cursor].kernel_id != ins.kernel_id {
                kernel_cursor += 1;
                if kernel_cursor >= self.header.kernels.len() {
                    return Err(TraceError::new(
                        Some(i),
                        format!(
                            "kernel {} appears out of header order",
                            ins.kernel_id
                        ),
                    ));
                }
            }

            let key = (ins.kernel_id, ins.warp_id);
            if *exited.get(&key).unwrap_or(&false) {
                return Err(TraceError::new(
                    Some(i),
                    format!(
                        "kernel {} warp {} continues past its terminator",
                        ins.kernel_id, ins.warp_id
                    ),
                ));
            }

            if ins.active_mask == 0 {
                return Err(TraceError::new(
                    Some(i),
                    "active mask is empty".into(),
                ));
            }
            if ins.pc % INSTRUCTION_BYTES != 0 {
                return Err(TraceError::new(
                    Some(i),
                    format!(
                        "pc {:#x} is not {}-byte aligned",
                        ins.pc, INSTRUCTION_BYTES
                    ),
                ));
            }

            if let Some(&prev_idx) = last_in_warp.get(&key) {
                let prev = &self.instructions[prev_idx];
                let fallthrough = prev.pc + INSTRUCTION_BYTES;
                let ok = if prev.opcode == OpcodeClass::Branch {
                    ins.pc == fallthrough || Some(ins.pc) == prev.branch_target
                } else {
                    ins.pc == fallthrough
                };
                if !ok {
                    return Err(TraceError::new(
                        Some(i),
                        format!(
                            "pc {:#x} does not follow from pc {:#x} \
                             (expected {:#x}{})",
                            ins.pc,
                            prev.pc,
                            fallthrough,
                            match (prev.opcode, prev.branch_target) {
                                (OpcodeClass::Branch, Some(t)) =>
                                    format!(" or branch target {t:#x}"),
                                _ => String::new(),
                            }
                        ),
                    ));
                }
            }

            match ins.opcode {
                op if op.is_memory() => {
                    let addrs = ins.mem_addrs.as_ref().ok_or_else(|| {
                        TraceError::new(
                            Some(i),
                            format!("{op:?} carries no memory addresses"),
                        )
                    })?;
                    if addrs.len() != TRACE_LANES {
                        return Err(TraceError::new(
                            Some(i),
                            format!(
                                "expected {} lane addresses, found {}",
                                TRACE_LANES,
                                addrs.len()
                            ),
                        ));
                    }
                    if ins.branch_target.is_some() {
                        return Err(TraceError::new(
                            Some(i),
                            format!("{op:?} carries a branch target"),
                        ));
                    }
                    if op.is_store() && ins.dest_reg.is_some() {
                        return Err(TraceError::new(
                            Some(i),
                            format!("{op:?} writes no register but declares a destination"),
                        ));
                    }
                }
                OpcodeClass::Branch => {
                    if ins.branch_target.is_none() {
                        return Err(TraceError::new(
                            Some(i),
                            "branch without a target".into(),
                        ));
                    }
                    if ins.mem_addrs.is_some() {
                        return Err(TraceError::new(
                            Some(i),
                            "branch carries memory addresses".into(),
                        ));
                    }
                    if let Some(t) = ins.branch_target {
                        if t % INSTRUCTION_BYTES != 0 {
                            return Err(TraceError::new(
                                Some(i),
                                format!(
                                    "branch target {t:#x} is not {}-byte aligned",
                                    INSTRUCTION_BYTES
                                ),
                            ));
                        }
                    }
                }
                OpcodeClass::Exit => {
                    if ins.dest_reg.is_some()
                        || !ins.src_regs.is_empty()
                        || ins.mem_addrs.is_some()
                        || ins.branch_target.is_some()
                    {
                        return Err(TraceError::new(
                            Some(i),
                            "warp terminator must carry no operands".into(),
                        ));
                    }
                    exited.insert(key, true);
                }
                _ => {
                    if ins.mem_addrs.is_some() {
                        return Err(TraceError::new(
                            Some(i),
                            format!("{:?} carries memory addresses", ins.opcode),
                        ));
                    }
                    if ins.branch_target.is_some() {
                        return Err(TraceError::new(
                            Some(i),
                            format!("{:?} carries a branch target", ins.opcode),
                        ));
                    }
                }
            }

            last_in_warp.insert(key, i);
        }

        // Every declared warp must be present and terminated.
        for k in &self.header.kernels {
            for w in 0..k.num_warps {
                let key = (k.kernel_id, w);
                if !last_in_warp.contains_key(&key) {
                    return Err(TraceError::new(
                        None,
                        format!(
                            "kernel {} warp {} has no instructions",
                            k.kernel_id, w
                        ),
                    ));
                }
                if !*exited.get(&key).unwrap_or(&false) {
                    return Err(TraceError::new(
                        None,
                        format!(
                            "kernel {} warp {} never terminates",
                            k.kernel_id, w
                        ),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Content fingerprint (64-bit FNV-1a over a canonical field encoding).
    /// Two traces digest equal iff header and instruction list are equal.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write(b"smsim-trace-v1");
        h.write_u32(self.header.version);
        h.write_u64(self.header.name.len() as u64);
        h.write(self.header.name.as_bytes());
        h.write_u64(self.header.kernels.len() as u64);
        for k in &self.header.kernels {
            h.write_u32(k.kernel_id);
            h.write_u32(k.num_warps);
        }
        h.write_u64(self.instructions.len() as u64);
        for ins in &self.instructions {
            h.write_u32(ins.kernel_id);
            h.write_u32(ins.warp_id);
            h.write_u64(ins.pc);
            h.write_u32(opcode_tag(ins.opcode));
            match ins.dest_reg {
                Some(r) => {
                    h.write(&[1]);
                    h.write_u32(r);
                }
                None => h.write(&[0]),
            }
            h.write_u64(ins.src_regs.len() as u64);
            for &r in &ins.src_regs {
                h.write_u32(r);
            }
            h.write_u32(ins.active_mask);
            match &ins.mem_addrs {
                Some(addrs) => {
                    h.write(&[1]);
                    h.write_u64(addrs.len() as u64);
                    for &a in addrs {
                        h.write_u64(a);
                    }
                }
                None => h.write(&[0]),
            }
            match ins.branch_target {
                Some(t) => {
                    h.write(&[1]);
                    h.write_u64(t);
                }
                None => h.write(&[0]),
            }
        }
        h.finish()
    }
}

fn opcode_tag(op: OpcodeClass) -> u32 {
    OpcodeClass::all()
        .iter()
        .position(|&o| o == op)
        .expect("opcode listed in OpcodeClass::all") as u32
}

/// 64-bit FNV-1a.
struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn write_u32(&mut self, v: u32) {
        self.write(&v.to_le_bytes());
    }
    fn write_u64(&mut self, v: u64) {
        self.write(&v.to_le_bytes());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    fn exit(kernel: u32, warp: u32, pc: u64) -> Instruction {
        Instruction::new(kernel, warp, pc, OpcodeClass::Exit)
    }

    fn tiny_trace() -> TraceFile {
        TraceFile {
            header: TraceHeader {
                version: TRACE_FORMAT_VERSION,
                name: "tiny".to_string(),
                kernels: vec![KernelInfo {
                    kernel_id: 0,
                    num_warps: 1,
                }],
            },
            instructions: vec![
                Instruction::new(0, 0, 0x0, OpcodeClass::AluSp).with_dest(1),
                exit(0, 0, 0x10),
            ],
        }
    }

    #[test]
    fn tiny_trace_validates() {
        tiny_trace().validate().unwrap();
    }

    #[test]
    fn missing_terminator_is_rejected() {
        let mut t = tiny_trace();
        t.instructions.pop();
        let err = t.validate().unwrap_err();
        assert!(err.message.contains("never terminates"), "{err}");
    }

    #[test]
    fn undeclared_warp_is_rejected() {
        let mut t = tiny_trace();
        t.instructions[0].warp_id = 3;
        assert!(t.validate().is_err());
    }

    #[test]
    fn missing_warp_is_rejected() {
        let mut t = tiny_trace();
        t.header.kernels[0].num_warps = 2;
        let err = t.validate().unwrap_err();
        assert!(err.message.contains("no instructions"), "{err}");
    }

    #[test]
    fn pc_discontinuity_is_rejected() {
        let mut t = tiny_trace();
        t.instructions[1].pc = 0x40;
        let err = t.validate().unwrap_err();
        assert!(err.message.contains("does not follow"), "{err}");
    }

    #[test]
    fn branch_allows_target_or_fallthrough() {
        let mk = |next_pc: u64| TraceFile {
            header: TraceHeader {
                version: TRACE_FORMAT_VERSION,
                name: "b".to_string(),
                kernels: vec![KernelInfo {
                    kernel_id: 0,
                    num_warps: 1,
                }],
            },
            instructions: vec![
                Instruction::new(0, 0, 0x0, OpcodeClass::Branch).with_branch_target(0x40),
                exit(0, 0, next_pc),
            ],
        };
        mk(0x10).validate().unwrap(); // fallthrough
        mk(0x40).validate().unwrap(); // taken
        assert!(mk(0x20).validate().is_err()); // neither
    }

    #[test]
    fn memory_ops_need_full_lane_addresses() {
        let mut t = tiny_trace();
        t.instructions[0] = Instruction::new(0, 0, 0x0, OpcodeClass::LdGlobal)
            .with_dest(1)
            .with_mem_addrs(vec![0; 7]);
        assert!(t.validate().is_err());
        t.instructions[0].mem_addrs = Some(vec![0; TRACE_LANES]);
        t.validate().unwrap();
    }

    #[test]
    fn instructions_after_exit_are_rejected() {
        let mut t = tiny_trace();
        t.instructions
            .push(Instruction::new(0, 0, 0x20, OpcodeClass::AluSp));
        let err = t.validate().unwrap_err();
        assert!(err.message.contains("past its terminator"), "{err}");
    }

    #[test]
    fn kernels_must_not_interleave() {
        let mut t = tiny_trace();
        t.header.kernels.push(KernelInfo {
            kernel_id: 1,
            num_warps: 1,
        });
        t.instructions = vec![
            Instruction::new(0, 0, 0x0, OpcodeClass::AluSp),
            Instruction::new(1, 0, 0x0, OpcodeClass::AluSp),
            exit(0, 0, 0x10),
            exit(1, 0, 0x10),
        ];
        let err = t.validate().unwrap_err();
        assert!(err.message.contains("out of header order"), "{err}");
    }

    #[test]
    fn digest_is_content_sensitive() {
        let a = tiny_trace();
        let mut b = tiny_trace();
        assert_eq!(a.digest(), b.digest());
        b.instructions[0].dest_reg = Some(2);
        assert_ne!(a.digest(), b.digest());
        let mut c = tiny_trace();
        c.header.name = "tinier".to_string();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn warp_streams_group_in_order() {
        let t = TraceFile {
            header: TraceHeader {
                version: TRACE_FORMAT_VERSION,
                name: "two".to_string(),
                kernels: vec![KernelInfo {
                    kernel_id: 0,
                    num_warps: 2,
                }],
            },
            instructions: vec![
                Instruction::new(0, 0, 0x0, OpcodeClass::AluSp),
                Instruction::new(0, 1, 0x0, OpcodeClass::AluSp),
                exit(0, 0, 0x10),
                exit(0, 1, 0x10),
            ],
        };
        t.validate().unwrap();
        let streams = t.warp_streams();
        assert_eq!(streams[&(0, 0)], vec![0, 2]);
        assert_eq!(streams[&(0, 1)], vec![1, 3]);
        assert_eq!(t.payload_instructions(), 2);
    }
}
