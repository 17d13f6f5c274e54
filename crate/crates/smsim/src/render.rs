//! Human- and tool-facing renderings of comparisons and sweep results.
//!
//! Three formats: pretty JSON (round-trips through the readers in
//! `files`), an aligned plain-text table, and CSV for external plotting.
//! Undefined metrics (divisions by zero) render as `-` in tables and as
//! empty cells in CSV; floats in CSV use the shortest representation
//! that parses back to the identical value.

use smsim_core::Comparison;

use crate::sweep::SweepReport;

/// `-` for undefined values, otherwise fixed-point with `prec` decimals.
pub fn opt_fixed(value: Option<f64>, prec: usize) -> String {
    match value {
        Some(v) => format!("{v:.prec$}"),
        None => "-".into(),
    }
}

/// Empty CSV cell for undefined values, shortest round-trip otherwise.
fn opt_csv(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

/// Quote a CSV field when it contains a delimiter, quote, or newline.
fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// Pretty JSON with a trailing newline.
pub fn json<T: serde::Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    text
}

/// Aligned plain-text table for one comparison.
pub fn comparison_table(cmp: &Comparison) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "trace:    {}  (digest {})\n",
        cmp.trace_name, cmp.trace_digest
    ));
    out.push_str(&format!(
        "models:   {} -> {}\n",
        cmp.base_model, cmp.variant_model
    ));
    out.push_str(&format!(
        "cycles:   {} -> {}\n",
        cmp.base_cycles, cmp.variant_cycles
    ));
    out.push_str(&format!("speedup:  {}\n", opt_fixed(cmp.speedup, 4)));
    out.push_str(&format!("avc:      {}%\n", opt_fixed(cmp.avc_percent, 4)));
    out.push('\n');
    out.push_str(&format!(
        "{:<6} {:>16} {:>19} {:>27}\n",
        "cache", "miss_ratio_base", "miss_ratio_variant", "miss_rate_increment_factor"
    ));
    for row in &cmp.caches {
        out.push_str(&format!(
            "{:<6} {:>16} {:>19} {:>27}\n",
            row.cache,
            opt_fixed(row.miss_ratio_base, 4),
            opt_fixed(row.miss_ratio_variant, 4),
            opt_fixed(row.miss_rate_increment_factor, 4),
        ));
    }
    out
}

/// CSV header shared by `comparison_csv` rows.
pub const COMPARISON_CSV_HEADER: &str = "trace_name,trace_digest,base_model,variant_model,\
     base_cycles,variant_cycles,speedup,avc_percent,cache,miss_ratio_base,miss_ratio_variant,\
     miss_rate_increment_factor";

/// CSV in long format: one row per cache, the run-level columns repeated.
pub fn comparison_csv(cmp: &Comparison) -> String {
    let mut out = String::new();
    out.push_str(COMPARISON_CSV_HEADER);
    out.push('\n');
    for row in &cmp.caches {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            csv_field(&cmp.trace_name),
            cmp.trace_digest,
            csv_field(&cmp.base_model),
            csv_field(&cmp.variant_model),
            cmp.base_cycles,
            cmp.variant_cycles,
            opt_csv(cmp.speedup),
            opt_csv(cmp.avc_percent),
            row.cache,
            opt_csv(row.miss_ratio_base),
            opt_csv(row.miss_ratio_variant),
            opt_csv(row.miss_rate_increment_factor),
        ));
    }
    out
}

/// Aligned per-trace table plus aggregate lines for a sweep.
pub fn sweep_table(report: &SweepReport) -> String {
    let name_width = report
        .comparisons
        .iter()
        .map(|c| c.trace_name.len())
        .chain(std::iter::once("trace".len()))
        .max()
        .unwrap_or(5);

    let mut out = String::new();
    out.push_str(&format!(
        "{:<name_width$} {:>12} {:>14} {:>9} {:>9}\n",
        "trace", "base_cycles", "variant_cycles", "speedup", "avc%"
    ));
    for cmp in &report.comparisons {
        out.push_str(&format!(
            "{:<name_width$} {:>12} {:>14} {:>9} {:>9}\n",
            cmp.trace_name,
            cmp.base_cycles,
            cmp.variant_cycles,
            opt_fixed(cmp.speedup, 4),
            opt_fixed(cmp.avc_percent, 2),
        ));
    }
    if !report.failures.is_empty() {
        out.push_str("failures:\n");
        for failure in &report.failures {
            out.push_str(&format!("  {}: {}\n", failure.trace, failure.error));
        }
    }
    let s = &report.summary;
    out.push_str(&format!(
        "aggregate: {} trace(s); geo-mean speedup {}; mean AVC {}%\n",
        s.count,
        opt_fixed(s.geo_mean_speedup, 4),
        opt_fixed(s.mean_avc_percent, 4),
    ));
    out
}
