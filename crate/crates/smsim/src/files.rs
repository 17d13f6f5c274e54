//! Readers and writers for the on-disk formats.
//!
//! * Traces are JSON Lines: the header object on line 1, then one
//!   instruction object per line. Blank lines are ignored. Parse errors
//!   cite the 1-based line number.
//! * Configurations, run reports, comparisons, and sweep reports are
//!   single JSON documents. Unknown keys are rejected everywhere.

use std::fs;
use std::io::BufRead;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use smsim_core::config::GpuConfig;
use smsim_core::trace::{TraceFile, TraceHeader};
use smsim_core::Instruction;
use smsim_core::RunReport;

use crate::Error;

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read a JSON Lines trace. The structure of the stream (header first,
/// instructions after) is checked here; semantic validation of the trace
/// content is the engine's job, so a structurally empty trace still loads.
pub fn read_trace(path: &Path) -> Result<TraceFile, Error> {
    let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
    let reader = std::io::BufReader::new(file);

    let mut header: Option<TraceHeader> = None;
    let mut instructions: Vec<Instruction> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        let lineno = idx + 1;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(serde_json::from_str(text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("trace header: {e}"),
            })?);
        } else {
            instructions.push(serde_json::from_str(text).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("instruction record: {e}"),
            })?);
        }
    }
    let header = header.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "missing trace header (file has no content)".into(),
    })?;
    Ok(TraceFile {
        header,
        instructions,
    })
}

/// Write a trace as JSON Lines: header, then one instruction per line.
pub fn write_trace(path: &Path, trace: &TraceFile) -> Result<(), Error> {
    let mut out = String::new();
    out.push_str(&serde_json::to_string(&trace.header).expect("trace header serializes"));
    out.push('\n');
    for ins in &trace.instructions {
        out.push_str(&serde_json::to_string(ins).expect("instruction serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| io_error(path, e))
}

/// Load a configuration, or the built-in defaults when no path is given.
/// Unknown keys and invalid values are hard errors either way.
pub fn load_config(path: Option<&Path>) -> Result<GpuConfig, Error> {
    let cfg: GpuConfig = match path {
        None => serde_json::from_str("{}").expect("defaults deserialize"),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: p.to_path_buf(),
                line: e.line().max(1),
                message: format!("config: {e}"),
            })?
        }
    };
    cfg.validate().map_err(|msg| Error::Data {
        message: match path {
            Some(p) => format!("{}: invalid config: {msg}", p.display()),
            None => format!("invalid config: {msg}"),
        },
    })?;
    Ok(cfg)
}

/// Read one JSON document (report, comparison, sweep report).
pub fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, Error> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line().max(1),
        message: format!("{what}: {e}"),
    })
}

/// Read a simulation run report.
pub fn read_report(path: &Path) -> Result<RunReport, Error> {
    read_json(path, "run report")
}

/// Write one value as pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// Write already-rendered text (tables, CSV).
pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}
