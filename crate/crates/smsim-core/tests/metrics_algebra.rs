//! Algebraic properties of the comparison metrics, checked over large
//! random samples: scale invariance, identity, inversion symmetry, and
//! the bound tying mean variation to the variation of the mean.

use smsim_core::metrics::{
    avc_percent, speedup, summarize, CacheMissComparison, Comparison,
};
use smsim_core::tracegen::Xorshift64Star;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn speedup_inverts_when_roles_swap() {
    let mut rng = Xorshift64Star::new(0x5EED_0001);
    for _ in 0..10_000 {
        let a = 1 + rng.next_u64() % 1_000_000;
        let b = 1 + rng.next_u64() % 1_000_000;
        let fwd = speedup(a, b).unwrap();
        let rev = speedup(b, a).unwrap();
        assert!(close(fwd * rev, 1.0), "{a} vs {b}: {fwd} * {rev} != 1");
        assert!(fwd > 0.0);
    }
}

#[test]
fn avc_is_scale_invariant_and_anchored_at_base() {
    let mut rng = Xorshift64Star::new(0x5EED_0002);
    for _ in 0..10_000 {
        let a = 1 + rng.next_u64() % 100_000;
        let b = 1 + rng.next_u64() % 100_000;
        let k = 1 + rng.next_u64() % 1_000;
        let plain = avc_percent(a, b).unwrap();
        let scaled = avc_percent(k * a, k * b).unwrap();
        assert!(
            close(plain, scaled),
            "avc({a},{b})={plain} but avc({},{})={scaled}",
            k * a,
            k * b
        );
        assert!(plain >= 0.0);
        // Identical cycle counts are zero variation; equality only then.
        assert_eq!(avc_percent(a, a), Some(0.0));
        assert_eq!(plain == 0.0, a == b);
    }
}

fn synthetic_comparison(rng: &mut Xorshift64Star, digest: &str) -> Comparison {
    let base = 1 + rng.next_u64() % 1_000_000;
    let variant = 1 + rng.next_u64() % 1_000_000;
    Comparison {
        trace_name: "synthetic".into(),
        trace_digest: digest.into(),
        base_model: "baseline".into(),
        variant_model: "improved".into(),
        base_cycles: base,
        variant_cycles: variant,
        speedup: speedup(base, variant),
        avc_percent: avc_percent(base, variant),
        caches: Vec::<CacheMissComparison>::new(),
    }
}

#[test]
fn mean_variation_bounds_variation_of_the_mean() {
    // For each batch: mean(|1 - v_i/b_i|) >= |1 - mean(v_i/b_i)| by the
    // triangle inequality, so the reported mean variation can never be
    // smaller than the variation implied by the mean inverse speedup.
    let mut rng = Xorshift64Star::new(0x5EED_0003);
    for round in 0..500 {
        let n = 1 + (rng.next_u64() % 20) as usize;
        let batch: Vec<Comparison> = (0..n)
            .map(|_| synthetic_comparison(&mut rng, "d"))
            .collect();
        let summary = summarize(&batch);
        assert_eq!(summary.count, n);
        let mean_avc = summary.mean_avc_percent.unwrap();
        let bound = (1.0 - summary.mean_inverse_speedup.unwrap()).abs() * 100.0;
        assert!(
            mean_avc >= bound - 1e-9,
            "round {round}: mean variation {mean_avc} below bound {bound}"
        );
        // The geometric mean lies between the extreme speedups.
        let geo = summary.geo_mean_speedup.unwrap();
        let lo = batch
            .iter()
            .map(|c| c.speedup.unwrap())
            .fold(f64::INFINITY, f64::min);
        let hi = batch
            .iter()
            .map(|c| c.speedup.unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            geo >= lo - 1e-9 && geo <= hi + 1e-9,
            "round {round}: geometric mean {geo} outside [{lo}, {hi}]"
        );
    }
}

#[test]
fn degenerate_cycle_counts_are_undefined_not_wrong() {
    assert_eq!(speedup(0, 5), None);
    assert_eq!(speedup(5, 0), None);
    assert_eq!(speedup(0, 0), None);
    assert_eq!(avc_percent(0, 5), None);
    // Variation away from a non-zero base toward zero is well defined.
    assert_eq!(avc_percent(5, 0), Some(100.0));
}
