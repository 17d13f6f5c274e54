//! Cycle-level model of a single GPU streaming multiprocessor (SM) with four
//! sub-cores. Two hardware models are selectable per subsystem:
//!
//! * `baseline`: SM-wide fetch/decode performed four times per cycle, a result
//!   bus that ignores register-bank write conflicts, and a single SM-wide
//!   memory pipeline with same-cycle coalescing and in-order request issue.
//! * `improved`: per-sub-core L0 instruction caches with a round-robin L1I
//!   arbiter, per-bank write-back port accounting, and per-sub-core memory
//!   pipelines with staged one-request-per-cycle coalescing and out-of-order
//!   request selection.
//!
//! The crate is `no_std` + `alloc`; file formats, the CLI, and report IO live
//! in the `smsim` companion crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod arbiter;
pub mod cache;
pub mod collector;
pub mod config;
pub mod engine;
pub mod frontend;
pub mod isa;
pub mod mem;
pub mod metrics;
pub mod report;
pub mod result_bus;
pub mod trace;
pub mod tracegen;

pub use config::{GpuConfig, ModelKind};
pub use engine::{run, SimError};
pub use isa::{Instruction, OpcodeClass};
pub use metrics::{compare, Comparison};
pub use report::RunReport;
pub use trace::TraceFile;
pub use tracegen::{generate, WorkloadSpec};
