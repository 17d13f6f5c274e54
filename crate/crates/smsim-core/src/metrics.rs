//! Run-to-run comparison: speedup, absolute variation of cycle counts,
//! and per-cache miss-ratio changes between two reports of the same
//! trace (typically one per hardware model).

use alloc::string::String;
use alloc::vec::Vec;

use core::fmt;

use serde::{Deserialize, Serialize};

use crate::cache::CacheStats;
use crate::report::RunReport;

/// `base / variant`: how many times faster the variant ran. `None` when
/// either cycle count is zero (both runs must have done work).
pub fn speedup(base_cycles: u64, variant_cycles: u64) -> Option<f64> {
    if base_cycles == 0 || variant_cycles == 0 {
        return None;
    }
    Some(base_cycles as f64 / variant_cycles as f64)
}

/// Absolute variation of the variant's cycle count from the base's, as a
/// percentage of the base: `|variant - base| / base * 100`. `None` when
/// the base is zero.
pub fn avc_percent(base_cycles: u64, variant_cycles: u64) -> Option<f64> {
    if base_cycles == 0 {
        return None;
    }
    let diff = base_cycles.abs_diff(variant_cycles) as f64;
    Some(diff / base_cycles as f64 * 100.0)
}

/// Miss ratio of one cache; `None` when it was never accessed.
pub fn miss_ratio(stats: &CacheStats) -> Option<f64> {
    if stats.accesses == 0 {
        return None;
    }
    Some(stats.misses as f64 / stats.accesses as f64)
}

/// Miss-ratio change of one cache between two runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheMissComparison {
    pub cache: String,
    /// `None` when the cache saw no accesses in that run.
    pub miss_ratio_base: Option<f64>,
    pub miss_ratio_variant: Option<f64>,
    /// `variant ratio / base ratio`; `None` (undefined) when the base
    /// ratio is zero or either run never touched the cache. Both ratios
    /// stay available above so an undefined factor is still informative.
    pub miss_rate_increment_factor: Option<f64>,
}

fn cache_row(name: &str, base: &CacheStats, variant: &CacheStats) -> CacheMissComparison {
    let rb = miss_ratio(base);
    let rv = miss_ratio(variant);
    let factor = match (rb, rv) {
        (Some(b), Some(v)) if b > 0.0 => Some(v / b),
        _ => None,
    };
    CacheMissComparison {
        cache: name.into(),
        miss_ratio_base: rb,
        miss_ratio_variant: rv,
        miss_rate_increment_factor: factor,
    }
}

/// Full comparison of two runs of the same trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub trace_name: String,
    pub trace_digest: String,
    pub base_model: String,
    pub variant_model: String,
    pub base_cycles: u64,
    pub variant_cycles: u64,
    /// `None` when either run finished in zero cycles.
    pub speedup: Option<f64>,
    /// `None` when the base finished in zero cycles.
    pub avc_percent: Option<f64>,
    pub caches: Vec<CacheMissComparison>,
}

/// Why two reports cannot be compared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CompareError {
    /// The reports describe different traces; comparing their timings
    /// would be meaningless.
    DigestMismatch {
        base_digest: String,
        variant_digest: String,
    },
}

impl fmt::Display for CompareError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompareError::DigestMismatch {
                base_digest,
                variant_digest,
            } => write!(
                f,
                "reports describe different traces: base digest {base_digest}, \
                 variant digest {variant_digest}"
            ),
        }
    }
}

fn model_label(report: &RunReport) -> String {
    report.models.label()
}

/// Compare two runs of the same trace. Fails when the trace digests
/// differ; every other pairing is answerable, including a report
/// compared against itself (speedup 1, variation 0).
pub fn compare(base: &RunReport, variant: &RunReport) -> Result<Comparison, CompareError> {
    if base.trace_digest != variant.trace_digest {
        return Err(CompareError::DigestMismatch {
            base_digest: base.trace_digest.clone(),
            variant_digest: variant.trace_digest.clone(),
        });
    }
    let caches = alloc::vec![
        cache_row(
            "l0i",
            &base.caches.l0i_total(),
            &variant.caches.l0i_total()
        ),
        cache_row("l1i", &base.caches.l1i, &variant.caches.l1i),
        cache_row("l1d", &base.caches.l1d, &variant.caches.l1d),
    ];
    Ok(Comparison {
        trace_name: base.trace_name.clone(),
        trace_digest: base.trace_digest.clone(),
        base_model: model_label(base),
        variant_model: model_label(variant),
        base_cycles: base.total_cycles,
        variant_cycles: variant.total_cycles,
        speedup: speedup(base.total_cycles, variant.total_cycles),
        avc_percent: avc_percent(base.total_cycles, variant.total_cycles),
        caches,
    })
}

/// Aggregates over a batch of comparisons (one per trace).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchSummary {
    /// Comparisons with a defined speedup (both runs non-zero cycles).
    pub count: usize,
    /// Geometric mean of the speedups, the right average for ratios.
    pub geo_mean_speedup: Option<f64>,
    /// Arithmetic mean of the per-trace absolute variations.
    pub mean_avc_percent: Option<f64>,
    /// Arithmetic mean of `variant / base` cycle ratios (inverse
    /// speedups). The mean variation can never be smaller than the
    /// variation of this mean: `mean_avc_percent >=
    /// |1 - mean_inverse_speedup| * 100`.
    pub mean_inverse_speedup: Option<f64>,
}

/// Summarize a batch. Comparisons with undefined speedup (a zero-cycle
/// run) are excluded from all three aggregates; `count` reports how many
/// contributed.
pub fn summarize(comparisons: &[Comparison]) -> BatchSummary {
    let defined: Vec<&Comparison> = comparisons
        .iter()
        .filter(|c| c.speedup.is_some() && c.avc_percent.is_some())
        .collect();
    let n = defined.len();
    if n == 0 {
        return BatchSummary {
            count: 0,
            geo_mean_speedup: None,
            mean_avc_percent: None,
            mean_inverse_speedup: None,
        };
    }
    let log_sum: f64 = defined
        .iter()
        .map(|c| libm::log(c.speedup.unwrap()))
        .sum();
    let avc_sum: f64 = defined.iter().map(|c| c.avc_percent.unwrap()).sum();
    let inv_sum: f64 = defined
        .iter()
        .map(|c| c.variant_cycles as f64 / c.base_cycles as f64)
        .sum();
    BatchSummary {
        count: n,
        geo_mean_speedup: Some(libm::exp(log_sum / n as f64)),
        mean_avc_percent: Some(avc_sum / n as f64),
        mean_inverse_speedup: Some(inv_sum / n as f64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{GpuConfig, ModelKind};
    use crate::engine::run;
    use crate::tracegen::{generate, Pattern, WorkloadSpec};

    fn reports() -> (RunReport, RunReport) {
        let spec = WorkloadSpec {
            pattern: Pattern::Mixed { seed: 42 },
            num_warps: 8,
            instructions_per_warp: 16,
        };
        let trace = generate(&spec, &GpuConfig::default()).unwrap();
        let base_cfg = GpuConfig {
            model: ModelKind::Baseline,
            ..GpuConfig::default()
        };
        let var_cfg = GpuConfig {
            model: ModelKind::Improved,
            ..GpuConfig::default()
        };
        (
            run(&trace, &base_cfg).unwrap(),
            run(&trace, &var_cfg).unwrap(),
        )
    }

    #[test]
    fn point_metrics_match_hand_values() {
        assert_eq!(speedup(200, 100), Some(2.0));
        assert_eq!(speedup(100, 200), Some(0.5));
        assert_eq!(speedup(0, 100), None);
        assert_eq!(speedup(100, 0), None);
        assert_eq!(avc_percent(200, 150), Some(25.0));
        assert_eq!(avc_percent(200, 250), Some(25.0));
        assert_eq!(avc_percent(0, 10), None);
        let stats = CacheStats {
            accesses: 8,
            hits: 6,
            misses: 2,
            fills: 2,
            evictions: 0,
        };
        assert_eq!(miss_ratio(&stats), Some(0.25));
        assert_eq!(miss_ratio(&CacheStats::default()), None);
    }

    #[test]
    fn self_comparison_is_the_identity() {
        let (base, _) = reports();
        let c = compare(&base, &base).unwrap();
        assert_eq!(c.speedup, Some(1.0));
        assert_eq!(c.avc_percent, Some(0.0));
        for row in &c.caches {
            if row.miss_ratio_base.unwrap_or(0.0) > 0.0 {
                assert_eq!(row.miss_rate_increment_factor, Some(1.0));
            }
        }
    }

    #[test]
    fn cross_model_comparison_carries_cache_rows() {
        let (base, variant) = reports();
        let c = compare(&base, &variant).unwrap();
        assert_eq!(c.base_model, "baseline");
        assert_eq!(c.variant_model, "improved");
        assert_eq!(c.caches.len(), 3);
        assert_eq!(c.caches[0].cache, "l0i");
        // The baseline has no per-sub-core instruction caches, so the
        // factor for that row is undefined while both ratios remain
        // reported.
        assert_eq!(c.caches[0].miss_ratio_base, None);
        assert!(c.caches[0].miss_rate_increment_factor.is_none());
        assert!(c.speedup.is_some());
    }

    #[test]
    fn mismatched_digests_refuse_to_compare() {
        let (base, _) = reports();
        let mut other = base.clone();
        other.trace_digest = "0000000000000000".into();
        let err = compare(&base, &other).unwrap_err();
        assert!(matches!(err, CompareError::DigestMismatch { .. }));
    }

    #[test]
    fn batch_summary_matches_hand_aggregates() {
        let (base, variant) = reports();
        let a = compare(&base, &variant).unwrap();
        let b = compare(&base, &base).unwrap();
        let summary = summarize(&[a.clone(), b.clone()]);
        assert_eq!(summary.count, 2);
        let s1 = a.speedup.unwrap();
        let geo = libm::sqrt(s1 * 1.0);
        assert!((summary.geo_mean_speedup.unwrap() - geo).abs() < 1e-12);
        let mean_avc = (a.avc_percent.unwrap() + 0.0) / 2.0;
        assert!((summary.mean_avc_percent.unwrap() - mean_avc).abs() < 1e-12);
        // Aggregate variation bounds the variation of the aggregate.
        let bound = (1.0 - summary.mean_inverse_speedup.unwrap()).abs() * 100.0;
        assert!(summary.mean_avc_percent.unwrap() >= bound - 1e-9);
    }

    #[test]
    fn empty_batch_has_no_aggregates() {
        let summary = summarize(&[]);
        assert_eq!(summary.count, 0);
        assert_eq!(summary.geo_mean_speedup, None);
    }
}
