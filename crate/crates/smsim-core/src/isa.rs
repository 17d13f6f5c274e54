//! Instruction representation shared by the trace format and the simulator.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

/// Instructions occupy a fixed number of bytes in the kernel image, so a
/// 128-byte cache line holds exactly eight of them.
pub const INSTRUCTION_BYTES: u64 = 16;

/// Coarse opcode classes. Fixed-latency classes execute on the SP/INT/SFU/
/// tensor units; `Ld*`/`St*` go through the memory pipeline; `Exit` retires
/// the warp once every older instruction has written back.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OpcodeClass {
    AluSp,
    AluInt,
    Sfu,
    Tensor,
    LdGlobal,
    StGlobal,
    LdShared,
    StShared,
    Branch,
    Exit,
}

impl OpcodeClass {
    pub fn is_memory(self) -> bool {
        matches!(
            self,
            OpcodeClass::LdGlobal
                | OpcodeClass::StGlobal
                | OpcodeClass::LdShared
                | OpcodeClass::StShared
        )
    }

    pub fn is_global_memory(self) -> bool {
        matches!(self, OpcodeClass::LdGlobal | OpcodeClass::StGlobal)
    }

    pub fn is_shared_memory(self) -> bool {
        matches!(self, OpcodeClass::LdShared | OpcodeClass::StShared)
    }

    pub fn is_load(self) -> bool {
        matches!(self, OpcodeClass::LdGlobal | OpcodeClass::LdShared)
    }

    pub fn is_store(self) -> bool {
        matches!(self, OpcodeClass::StGlobal | OpcodeClass::StShared)
    }

    /// Classes executed on a fixed-latency unit and scheduled through the
    /// result bus.
    pub fn is_fixed_latency(self) -> bool {
        matches!(
            self,
            OpcodeClass::AluSp
                | OpcodeClass::AluInt
                | OpcodeClass::Sfu
                | OpcodeClass::Tensor
                | OpcodeClass::Branch
        )
    }

    pub fn all() -> [OpcodeClass; 10] {
        [
            OpcodeClass::AluSp,
            OpcodeClass::AluInt,
            OpcodeClass::Sfu,
            OpcodeClass::Tensor,
            OpcodeClass::LdGlobal,
            OpcodeClass::StGlobal,
            OpcodeClass::LdShared,
            OpcodeClass::StShared,
            OpcodeClass::Branch,
            OpcodeClass::Exit,
        ]
    }
}

/// Fixed-latency execution unit kinds, one instance of each per sub-core.
/// Branches share the integer unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecUnit {
    Sp,
    Int,
    Sfu,
    Tensor,
}

pub const NUM_EXEC_UNITS: usize = 4;

impl ExecUnit {
    pub fn index(self) -> usize {
        match self {
            ExecUnit::Sp => 0,
            ExecUnit::Int => 1,
            ExecUnit::Sfu => 2,
            ExecUnit::Tensor => 3,
        }
    }

    pub fn for_opcode(op: OpcodeClass) -> Option<ExecUnit> {
        match op {
            OpcodeClass::AluSp => Some(ExecUnit::Sp),
            OpcodeClass::AluInt | OpcodeClass::Branch => Some(ExecUnit::Int),
            OpcodeClass::Sfu => Some(ExecUnit::Sfu),
            OpcodeClass::Tensor => Some(ExecUnit::Tensor),
            _ => None,
        }
    }
}

/// One decoded trace instruction. `mem_addrs` carries one byte address per
/// lane (entries for inactive lanes are ignored) and is present exactly for
/// the memory opcode classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub kernel_id: u32,
    pub warp_id: u32,
    pub pc: u64,
    pub opcode: OpcodeClass,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dest_reg: Option<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub src_regs: Vec<u32>,
    pub active_mask: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mem_addrs: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_target: Option<u64>,
}

impl Instruction {
    /// Convenience constructor for non-memory instructions with a full mask.
    pub fn new(kernel_id: u32, warp_id: u32, pc: u64, opcode: OpcodeClass) -> Self {
        Instruction {
            kernel_id,
            warp_id,
            pc,
            opcode,
            dest_reg: None,
            src_regs: Vec::new(),
            active_mask: u32::MAX,
            mem_addrs: None,
            branch_target: None,
        }
    }

    pub fn with_dest(mut self, reg: u32) -> Self {
        self.dest_reg = Some(reg);
        self
    }

    pub fn with_srcs(mut self, regs: &[u32]) -> Self {
        self.src_regs = regs.to_vec();
        self
    }

    pub fn with_mem_addrs(mut self, addrs: Vec<u64>) -> Self {
        self.mem_addrs = Some(addrs);
        self
    }

    pub fn with_branch_target(mut self, target: u64) -> Self {
        self.branch_target = Some(target);
        self
    }

    pub fn with_active_mask(mut self, mask: u32) -> Self {
        self.active_mask = mask;
        self
    }
}

/// Static warp-to-sub-core mapping: `warp_id % num_sub_cores`.
pub fn sub_core_of(warp_id: u32, num_sub_cores: u32) -> u32 {
    debug_assert!(num_sub_cores > 0);
    warp_id % num_sub_cores
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_core_mapping_modulo() {
        assert_eq!(sub_core_of(5, 4), 1);
        assert_eq!(sub_core_of(0, 4), 0);
        assert_eq!(sub_core_of(7, 4), 3);
        for w in 0..32 {
            assert_eq!(sub_core_of(w, 4), w % 4);
        }
    }

    #[test]
    fn sub_core_partition_is_balanced() {
        // Any contiguous warp-id range splits into classes whose sizes
        // differ by at most one.
        for n in [1u32, 2, 3, 4, 7, 32, 33] {
            for cores in [1u32, 2, 3, 4, 5] {
                let mut counts = vec![0u32; cores as usize];
                for w in 0..n {
                    counts[sub_core_of(w, cores) as usize] += 1;
                }
                let max = *counts.iter().max().unwrap();
                let min = *counts.iter().min().unwrap();
                assert!(max - min <= 1, "n={n} cores={cores} counts={counts:?}");
            }
        }
    }

    #[test]
    fn opcode_class_predicates() {
        assert!(OpcodeClass::LdGlobal.is_memory());
        assert!(OpcodeClass::LdGlobal.is_load());
        assert!(OpcodeClass::StShared.is_store());
        assert!(OpcodeClass::StShared.is_shared_memory());
        assert!(OpcodeClass::Branch.is_fixed_latency());
        assert!(!OpcodeClass::Exit.is_fixed_latency());
        assert_eq!(ExecUnit::for_opcode(OpcodeClass::Branch), Some(ExecUnit::Int));
        assert_eq!(ExecUnit::for_opcode(OpcodeClass::LdGlobal), None);
    }
}
