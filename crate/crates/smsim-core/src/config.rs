//! Simulator configuration: hardware sizing and model selection.
//!
//! Every field has a default mirroring a contemporary NVIDIA-style streaming
//! multiprocessor, so an empty JSON object deserializes into a fully usable
//! configuration. Unknown keys are rejected so typos cannot silently fall
//! back to defaults.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use serde::{Deserialize, Serialize};

use crate::isa::OpcodeClass;

/// Which hardware model each subsystem uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Monolithic SM-wide front-end, unconstrained result-bus write-back and
    /// a single shared memory-dispatch path.
    Baseline,
    /// Partitioned per-sub-core front-end, register-bank write-port
    /// accounting and per-sub-core memory dispatch with out-of-order
    /// request selection.
    Improved,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Improved => "improved",
        }
    }
}

/// Per-subsystem model override; unset fields follow the top-level `model`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubsystemModels {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub front_end: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result_bus: Option<ModelKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<ModelKind>,
}

fn default_clock_mhz() -> u64 {
    1605
}
fn default_num_sms() -> u32 {
    40
}
fn default_num_sub_cores() -> u32 {
    4
}
fn default_max_warps_per_sm() -> u32 {
    32
}
fn default_warp_width() -> u32 {
    32
}
fn default_collector_units_per_sub_core() -> u32 {
    2
}
fn default_ibuffer_entries_per_warp() -> u32 {
    2
}
fn default_rf_banks_per_sub_core() -> u32 {
    8
}
fn default_rf_ports_per_bank() -> u32 {
    2
}
fn default_result_bus_count() -> u32 {
    4
}
fn default_l0i_bytes() -> u64 {
    16 * 1024
}
fn default_l0i_max_outstanding() -> u32 {
    1
}
fn default_l1i_bytes() -> u64 {
    32 * 1024
}
fn default_l1d_bytes() -> u64 {
    32 * 1024
}
fn default_l1d_banks() -> u32 {
    4
}
fn default_shared_mem_bytes() -> u64 {
    64 * 1024
}
fn default_shared_mem_banks() -> u32 {
    32
}
fn default_shared_mem_bank_width_bytes() -> u32 {
    4
}
fn default_cache_line_bytes() -> u64 {
    128
}
fn default_sector_bytes() -> u64 {
    32
}
fn default_cache_assoc() -> u32 {
    4
}
fn default_l1i_hit_latency() -> u64 {
    10
}
fn default_l1d_hit_latency() -> u64 {
    20
}
fn default_l2_latency() -> u64 {
    120
}
fn default_mem_request_buffer_entries() -> u32 {
    8
}
fn default_livelock_window() -> u64 {
    1_000_000
}
fn default_model() -> ModelKind {
    ModelKind::Improved
}

pub fn default_exec_latency() -> BTreeMap<OpcodeClass, u64> {
    let mut m = BTreeMap::new();
    m.insert(OpcodeClass::AluInt, 4);
    m.insert(OpcodeClass::AluSp, 4);
    m.insert(OpcodeClass::Sfu, 16);
    m.insert(OpcodeClass::Tensor, 32);
    m.insert(OpcodeClass::Branch, 4);
    m
}

/// Complete simulator configuration. Sizes are bytes, latencies cycles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpuConfig {
    #[serde(default = "default_clock_mhz")]
    pub clock_mhz: u64,
    /// Informational only: the simulator models a single SM.
    #[serde(default = "default_num_sms")]
    pub num_sms: u32,
    #[serde(default = "default_num_sub_cores")]
    pub num_sub_cores: u32,
    #[serde(default = "default_max_warps_per_sm")]
    pub max_warps_per_sm: u32,
    #[serde(default = "default_warp_width")]
    pub warp_width: u32,
    #[serde(default = "default_collector_units_per_sub_core")]
    pub collector_units_per_sub_core: u32,
    #[serde(default = "default_ibuffer_entries_per_warp")]
    pub ibuffer_entries_per_warp: u32,
    #[serde(default = "default_rf_banks_per_sub_core")]
    pub rf_banks_per_sub_core: u32,
    #[serde(default = "default_rf_ports_per_bank")]
    pub rf_ports_per_bank: u32,
    /// Write-back slots per sub-core per cycle under the baseline result-bus
    /// model (which does not track banks).
    #[serde(default = "default_result_bus_count")]
    pub result_bus_count: u32,
    #[serde(default = "default_l0i_bytes")]
    pub l0i_bytes: u64,
    #[serde(default = "default_l0i_max_outstanding")]
    pub l0i_max_outstanding: u32,
    #[serde(default = "default_l1i_bytes")]
    pub l1i_bytes: u64,
    #[serde(default = "default_l1d_bytes")]
    pub l1d_bytes: u64,
    #[serde(default = "default_l1d_banks")]
    pub l1d_banks: u32,
    #[serde(default = "default_shared_mem_bytes")]
    pub shared_mem_bytes: u64,
    #[serde(default = "default_shared_mem_banks")]
    pub shared_mem_banks: u32,
    #[serde(default = "default_shared_mem_bank_width_bytes")]
    pub shared_mem_bank_width_bytes: u32,
    #[serde(default = "default_cache_line_bytes")]
    pub cache_line_bytes: u64,
    #[serde(default = "default_sector_bytes")]
    pub sector_bytes: u64,
    #[serde(default = "default_cache_assoc")]
    pub cache_assoc: u32,
    #[serde(default = "default_l1i_hit_latency")]
    pub l1i_hit_latency: u64,
    #[serde(default = "default_l1d_hit_latency")]
    pub l1d_hit_latency: u64,
    /// Round-trip latency to the next memory level for any L1/L0 miss.
    #[serde(default = "default_l2_latency")]
    pub l2_latency: u64,
    #[serde(default = "default_mem_request_buffer_entries")]
    pub mem_request_buffer_entries: u32,
    #[serde(default = "default_exec_latency")]
    pub exec_latency: BTreeMap<OpcodeClass, u64>,
    /// Abort if no architectural progress happens for this many cycles.
    #[serde(default = "default_livelock_window")]
    pub livelock_window: u64,
    #[serde(default = "default_model")]
    pub model: ModelKind,
    #[serde(default)]
    pub subsystem_models: SubsystemModels,
}

impl Default for GpuConfig {
    fn default() -> Self {
        GpuConfig {
            clock_mhz: default_clock_mhz(),
            num_sms: default_num_sms(),
            num_sub_cores: default_num_sub_cores(),
            max_warps_per_sm: default_max_warps_per_sm(),
            warp_width: default_warp_width(),
            collector_units_per_sub_core: default_collector_units_per_sub_core(),
            ibuffer_entries_per_warp: default_ibuffer_entries_per_warp(),
            rf_banks_per_sub_core: default_rf_banks_per_sub_core(),
            rf_ports_per_bank: default_rf_ports_per_bank(),
            result_bus_count: default_result_bus_count(),
            l0i_bytes: default_l0i_bytes(),
            l0i_max_outstanding: default_l0i_max_outstanding(),
            l1i_bytes: default_l1i_bytes(),
            l1d_bytes: default_l1d_bytes(),
            l1d_banks: default_l1d_banks(),
            shared_mem_bytes: default_shared_mem_bytes(),
            shared_mem_banks: default_shared_mem_banks(),
            shared_mem_bank_width_bytes: default_shared_mem_bank_width_bytes(),
            cache_line_bytes: default_cache_line_bytes(),
            sector_bytes: default_sector_bytes(),
            cache_assoc: default_cache_assoc(),
            l1i_hit_latency: default_l1i_hit_latency(),
            l1d_hit_latency: default_l1d_hit_latency(),
            l2_latency: default_l2_latency(),
            mem_request_buffer_entries: default_mem_request_buffer_entries(),
            exec_latency: default_exec_latency(),
            livelock_window: default_livelock_window(),
            model: default_model(),
            subsystem_models: SubsystemModels::default(),
        }
    }
}

impl GpuConfig {
    /// Effective model for the front-end subsystem.
    pub fn front_end_model(&self) -> ModelKind {
        self.subsystem_models.front_end.unwrap_or(self.model)
    }

    /// Effective model for the result-bus subsystem.
    pub fn result_bus_model(&self) -> ModelKind {
        self.subsystem_models.result_bus.unwrap_or(self.model)
    }

    /// Effective model for the memory subsystem.
    pub fn memory_model(&self) -> ModelKind {
        self.subsystem_models.memory.unwrap_or(self.model)
    }

    /// Execution latency for a fixed-latency opcode, falling back to the
    /// built-in defaults for classes the user did not override.
    pub fn latency_of(&self, op: OpcodeClass) -> u64 {
        if let Some(&l) = self.exec_latency.get(&op) {
            return l;
        }
        *default_exec_latency()
            .get(&op)
            .unwrap_or_else(|| panic!("no execution latency for {op:?}"))
    }

    pub fn lines_in_cache(&self, cache_bytes: u64) -> u64 {
        cache_bytes / self.cache_line_bytes
    }

    pub fn cache_sets(&self, cache_bytes: u64) -> u64 {
        self.lines_in_cache(cache_bytes) / self.cache_assoc as u64
    }

    pub fn sectors_per_line(&self) -> u64 {
        self.cache_line_bytes / self.sector_bytes
    }

    /// Check structural soundness; returns a human-readable description of
    /// the first problem found.
    pub fn validate(&self) -> Result<(), String> {
        fn positive(value: u64, name: &str) -> Result<(), String> {
            if value == 0 {
                Err(format!("{name} must be positive"))
            } else {
                Ok(())
            }
        }
        positive(self.clock_mhz, "clock_mhz")?;
        positive(self.num_sub_cores as u64, "num_sub_cores")?;
        positive(self.max_warps_per_sm as u64, "max_warps_per_sm")?;
        positive(self.warp_width as u64, "warp_width")?;
        positive(
            self.collector_units_per_sub_core as u64,
            "collector_units_per_sub_core",
        )?;
        positive(
            self.ibuffer_entries_per_warp as u64,
            "ibuffer_entries_per_warp",
        )?;
        positive(self.rf_banks_per_sub_core as u64, "rf_banks_per_sub_core")?;
        positive(self.rf_ports_per_bank as u64, "rf_ports_per_bank")?;
        positive(self.result_bus_count as u64, "result_bus_count")?;
        positive(self.l0i_bytes, "l0i_bytes")?;
        positive(self.l0i_max_outstanding as u64, "l0i_max_outstanding")?;
        positive(self.l1i_bytes, "l1i_bytes")?;
        positive(self.l1d_bytes, "l1d_bytes")?;
        positive(self.l1d_banks as u64, "l1d_banks")?;
        positive(self.shared_mem_banks as u64, "shared_mem_banks")?;
        positive(
            self.shared_mem_bank_width_bytes as u64,
            "shared_mem_bank_width_bytes",
        )?;
        positive(self.cache_line_bytes, "cache_line_bytes")?;
        positive(self.sector_bytes, "sector_bytes")?;
        positive(self.cache_assoc as u64, "cache_assoc")?;
        positive(self.l1i_hit_latency, "l1i_hit_latency")?;
        positive(self.l1d_hit_latency, "l1d_hit_latency")?;
        positive(self.l2_latency, "l2_latency")?;
        positive(
            self.mem_request_buffer_entries as u64,
            "mem_request_buffer_entries",
        )?;
        positive(self.livelock_window, "livelock_window")?;

        if self.warp_width > 32 {
            return Err(format!(
                "warp_width {} exceeds the 32-bit active-mask width",
                self.warp_width
            ));
        }
        if !self.cache_line_bytes.is_power_of_two() {
            return Err(format!(
                "cache_line_bytes {} must be a power of two",
                self.cache_line_bytes
            ));
        }
        if !self.sector_bytes.is_power_of_two() {
            return Err(format!(
                "sector_bytes {} must be a power of two",
                self.sector_bytes
            ));
        }
        if !self.cache_line_bytes.is_multiple_of(self.sector_bytes) {
            return Err(format!(
                "cache_line_bytes {} is not a multiple of sector_bytes {}",
                self.cache_line_bytes, self.sector_bytes
            ));
        }
        for (name, bytes) in [
            ("l0i_bytes", self.l0i_bytes),
            ("l1i_bytes", self.l1i_bytes),
            ("l1d_bytes", self.l1d_bytes),
        ] {
            let line_capacity = self.cache_line_bytes * self.cache_assoc as u64;
            if bytes % line_capacity != 0 {
                return Err(format!(
                    "{name} {bytes} is not a whole number of {}-way sets of \
                     {}-byte lines",
                    self.cache_assoc, self.cache_line_bytes
                ));
            }
        }
        if !self.max_warps_per_sm.is_multiple_of(self.num_sub_cores) {
            return Err(format!(
                "max_warps_per_sm {} is not divisible by num_sub_cores {}",
                self.max_warps_per_sm, self.num_sub_cores
            ));
        }
        for (op, &lat) in &self.exec_latency {
            if !op.is_fixed_latency() {
                return Err(format!(
                    "exec_latency entry for {op:?}, which is not a fixed-latency class"
                ));
            }
            if lat == 0 {
                return Err(format!("exec_latency for {op:?} must be positive"));
            }
        }
        Ok(())
    }
}
