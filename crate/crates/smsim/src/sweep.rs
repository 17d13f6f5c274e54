//! Batch A/B evaluation over a directory of traces.
//!
//! Each trace is simulated under both hardware models and the pair of
//! runs is folded into a `Comparison`. Traces are processed in parallel,
//! but each simulation is single-threaded and isolated, so results are
//! identical whatever the worker count; output order follows the sorted
//! trace file names. A failing trace is recorded and the batch continues.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smsim_core::config::{GpuConfig, ModelKind, SubsystemModels};
use smsim_core::metrics::{summarize, BatchSummary};
use smsim_core::{compare, run, Comparison};

use crate::files;
use crate::Error;

/// One trace that could not be evaluated, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFailure {
    pub trace: String,
    pub error: String,
}

/// Everything a sweep produced: per-trace comparisons in sorted
/// file-name order, failures, and batch aggregates over the successes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub comparisons: Vec<Comparison>,
    pub failures: Vec<SweepFailure>,
    pub summary: BatchSummary,
}

/// Force every subsystem to one model: the top-level selection is set
/// and per-subsystem overrides are cleared.
pub fn force_model(cfg: &GpuConfig, model: ModelKind) -> GpuConfig {
    let mut forced = cfg.clone();
    forced.model = model;
    forced.subsystem_models = SubsystemModels::default();
    forced
}

/// List the `.jsonl` trace files in `dir`, sorted by file name.
pub fn discover_traces(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut traces: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let path = entry.path();
        if path.is_file() && path.extension().is_some_and(|ext| ext == "jsonl") {
            traces.push(path);
        }
    }
    traces.sort();
    if traces.is_empty() {
        return Err(Error::Usage {
            message: format!("no .jsonl trace files in {}", dir.display()),
        });
    }
    Ok(traces)
}

fn evaluate_one(path: &Path, cfg: &GpuConfig) -> Result<Comparison, String> {
    let trace = files::read_trace(path).map_err(|e| e.to_string())?;
    let base = run(&trace, &force_model(cfg, ModelKind::Baseline))
        .map_err(|e| format!("baseline model: {e}"))?;
    let variant = run(&trace, &force_model(cfg, ModelKind::Improved))
        .map_err(|e| format!("improved model: {e}"))?;
    compare(&base, &variant).map_err(|e| e.to_string())
}

/// Evaluate every trace under both models. Never fails as a whole; the
/// caller decides what a non-empty `failures` list means for exit status.
pub fn run_sweep(traces: &[PathBuf], cfg: &GpuConfig) -> SweepReport {
    let outcomes: Vec<(String, Result<Comparison, String>)> = traces
        .par_iter()
        .map(|path| {
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string());
            (name, evaluate_one(path, cfg))
        })
        .collect();

    let mut comparisons = Vec::new();
    let mut failures = Vec::new();
    for (trace, outcome) in outcomes {
        match outcome {
            Ok(cmp) => comparisons.push(cmp),
            Err(error) => failures.push(SweepFailure { trace, error }),
        }
    }
    let summary = summarize(&comparisons);
    SweepReport {
        comparisons,
        failures,
        summary,
    }
}
