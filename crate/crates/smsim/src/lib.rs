//! File formats, rendering, and batch orchestration for the SM simulator.
//!
//! The simulation engine itself lives in `smsim-core`; this crate owns
//! everything that touches the operating system: trace files (JSON Lines),
//! configuration files (JSON), run reports and comparisons (JSON, plus
//! plain-text table and CSV renderings), and the parallel trace sweep.

pub mod files;
pub mod render;
pub mod sweep;

use std::path::PathBuf;

/// Everything that can go wrong in the command-line layer, carrying the
/// process exit code contract:
///
/// * `0` — success
/// * `1` — I/O failures, malformed or invalid file content, failed runs
/// * `2` — invalid command-line usage
/// * `3` — semantically mismatched inputs (reports from different traces)
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Filesystem operation failed.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file's content failed to parse; `line` is 1-based.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    /// Input files parsed but their content is unusable, or a simulation
    /// failed on them.
    #[error("{message}")]
    Data { message: String },
    /// The command line does not form a valid request.
    #[error("{message}")]
    Usage { message: String },
    /// Inputs are individually valid but cannot be combined.
    #[error("{message}")]
    Mismatch { message: String },
    /// Some traces in a sweep failed; the rest were still processed and
    /// their results written.
    #[error("{failed} of {total} sweep trace(s) failed")]
    Partial { failed: usize, total: usize },
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Data { .. }
            | Error::Partial { .. } => 1,
            Error::Usage { .. } => 2,
            Error::Mismatch { .. } => 3,
        }
    }
}
