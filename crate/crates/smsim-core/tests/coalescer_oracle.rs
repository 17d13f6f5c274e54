//! The two coalescer implementations against a brute-force grouping
//! oracle: whatever the timing model, the produced request sets must be
//! identical, and the stepwise path must cost exactly one cycle per
//! produced request.

use std::collections::{BTreeMap, BTreeSet};

use smsim_core::mem::{coalesce_full, coalesce_step_once, SectorGroup};
use smsim_core::tracegen::Xorshift64Star;

const SECTOR_BYTES: u64 = 32;
const L1D_BANKS: u32 = 4;

/// Ground truth by definition: group the active lanes by sector address,
/// with no ordering or hardware concerns at all.
fn oracle_groups(addrs: &[u64], active_mask: u32) -> BTreeSet<(u64, u32, u32)> {
    let mut by_sector: BTreeMap<u64, u32> = BTreeMap::new();
    for lane in 0..32u32 {
        if active_mask & (1 << lane) == 0 {
            continue;
        }
        let sector = addrs[lane as usize] & !(SECTOR_BYTES - 1);
        *by_sector.entry(sector).or_default() |= 1 << lane;
    }
    by_sector
        .into_iter()
        .map(|(sector, mask)| {
            (sector, mask, ((sector / SECTOR_BYTES) % L1D_BANKS as u64) as u32)
        })
        .collect()
}

fn as_set(groups: &[SectorGroup]) -> BTreeSet<(u64, u32, u32)> {
    groups
        .iter()
        .map(|g| (g.sector_addr, g.lane_mask, g.bank))
        .collect()
}

/// Drive the one-request-per-cycle path by hand, counting cycles.
fn stepwise(addrs: &[u64], active_mask: u32) -> (Vec<SectorGroup>, u64) {
    let mut remaining = active_mask;
    let mut out = Vec::new();
    let mut cycles = 0;
    while remaining != 0 {
        let (group, rest) =
            coalesce_step_once(addrs, remaining, SECTOR_BYTES, L1D_BANKS);
        out.push(group);
        cycles += 1;
        remaining = rest;
    }
    (out, cycles)
}

/// A mix of address shapes: broadcast, dense sequential, strided, and
/// fully random, each under a random active mask.
fn random_vector(rng: &mut Xorshift64Star, case: u64) -> (Vec<u64>, u32) {
    let base = (rng.next_u64() % (1 << 30)) & !3;
    let addrs: Vec<u64> = match case % 4 {
        0 => (0..32).map(|_| base).collect(),
        1 => (0..32).map(|lane| base + lane * 4).collect(),
        2 => {
            let stride = [4u64, 8, 32, 64, 128, 4096][(rng.next_u64() % 6) as usize];
            (0..32).map(|lane| base + lane * stride).collect()
        }
        _ => (0..32).map(|_| (rng.next_u64() % (1 << 30)) & !3).collect(),
    };
    // Bias toward the full mask but include sparse and empty ones.
    let mask = match case % 5 {
        0 | 1 => u32::MAX,
        2 => rng.next_u64() as u32,
        3 => 1 << (rng.next_u64() % 32),
        _ => (rng.next_u64() as u32) & (rng.next_u64() as u32),
    };
    (addrs, mask)
}

#[test]
fn both_coalescers_match_brute_force_on_ten_thousand_vectors() {
    let mut rng = Xorshift64Star::new(0xC0A1E5CE);
    for case in 0..10_000u64 {
        let (addrs, mask) = random_vector(&mut rng, case);
        let expected = oracle_groups(&addrs, mask);
        let full = coalesce_full(&addrs, mask, 32, SECTOR_BYTES, L1D_BANKS);
        let (steps, cycles) = stepwise(&addrs, mask);
        assert_eq!(
            as_set(&full),
            expected,
            "case {case}: one-shot coalescer diverged from the oracle"
        );
        assert_eq!(
            as_set(&steps),
            expected,
            "case {case}: stepwise coalescer diverged from the oracle"
        );
        assert_eq!(
            cycles,
            expected.len() as u64,
            "case {case}: stepwise cost must be one cycle per request"
        );
    }
}

#[test]
fn narrow_warps_ignore_upper_lanes() {
    let mut rng = Xorshift64Star::new(0x11AA22BB);
    for case in 0..1_000u64 {
        let (addrs, mask) = random_vector(&mut rng, case);
        for width in [1u32, 4, 8, 16, 31] {
            let width_mask = if width >= 32 {
                u32::MAX
            } else {
                (1u32 << width) - 1
            };
            let narrow = coalesce_full(&addrs, mask, width, SECTOR_BYTES, L1D_BANKS);
            let clipped =
                coalesce_full(&addrs, mask & width_mask, 32, SECTOR_BYTES, L1D_BANKS);
            assert_eq!(narrow, clipped, "case {case} width {width}");
        }
    }
}

#[test]
fn group_order_is_by_lowest_unprocessed_lane() {
    // Lanes alternate between two sectors; the group containing lane 0
    // must come out first, then the one containing lane 1.
    let addrs: Vec<u64> = (0..32u64)
        .map(|lane| if lane % 2 == 0 { 0x1000 } else { 0x2000 })
        .collect();
    let full = coalesce_full(&addrs, u32::MAX, 32, SECTOR_BYTES, L1D_BANKS);
    assert_eq!(full.len(), 2);
    assert_eq!(full[0].sector_addr, 0x1000);
    assert_eq!(full[0].lane_mask, 0x5555_5555);
    assert_eq!(full[1].sector_addr, 0x2000);
    assert_eq!(full[1].lane_mask, 0xAAAA_AAAA);
}
