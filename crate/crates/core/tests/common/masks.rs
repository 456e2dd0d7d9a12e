//! Mask geometry, budget and distribution checks.

use primed_core::masks::{gen_mask, MaskPattern, MaskSpec};

use super::Check;

pub const PATTERNS: [MaskPattern; 3] = [
    MaskPattern::EquispacedFixed,
    MaskPattern::EquispacedRandomOffset,
    MaskPattern::RandomUniform,
];

pub fn standard_cf(r: u32) -> f64 {
    if r >= 8 {
        0.04
    } else {
        0.08
    }
}

/// Center block and sampling budget recomputed from first principles.
pub struct Budget {
    pub center: Vec<usize>,
    pub total: usize,
    pub outer: usize,
}

pub fn budget(w: usize, r: u32, cf: f64) -> Budget {
    let low = (cf * w as f64).round() as usize;
    // `low` columns around w/2, one extra on the left for even sizes
    let start = w / 2 - low / 2;
    let total = (w as f64 / f64::from(r)).round() as usize;
    Budget {
        center: (start..start + low).collect(),
        total,
        outer: total - low,
    }
}

/// Center block, cardinality and acceleration for every width, R and
/// pattern of the grid, over several seeds each.
pub fn geometry_checks() -> Vec<Check> {
    let mut center_ok = true;
    let mut count_ok = true;
    let mut worst_accel: f64 = 0.0;
    let mut random_exact = true;
    for w in [32, 64, 128, 320, 368] {
        for r in [4, 8] {
            let b = budget(w, r, standard_cf(r));
            for pattern in PATTERNS {
                for s in 0..20 {
                    let m = gen_mask(&MaskSpec::new(w, r, standard_cf(r), pattern, s)).unwrap();
                    center_ok &= b.center.iter().all(|&c| m.is_sampled(c));
                    let n = m.num_sampled();
                    if pattern == MaskPattern::RandomUniform {
                        random_exact &= n == b.total;
                    } else {
                        count_ok &= n.abs_diff(b.total) <= 2;
                    }
                    let achieved = w as f64 / n as f64;
                    worst_accel = worst_accel.max((achieved - f64::from(r)).abs() / f64::from(r));
                }
            }
        }
    }
    vec![
        Check::new("center block fully sampled", center_ok, "W in {32,64,128,320,368}, R in {4,8}"),
        Check::new("random pattern samples exactly round(W/R)", random_exact, "20 seeds per size"),
        Check::new("equispaced count within ±2 of round(W/R)", count_ok, "20 seeds per size"),
        Check::below("achieved acceleration relative deviation", worst_accel, 0.10),
    ]
}

/// Over `seeds` draws: every offset class of the varying-offset pattern
/// occurs and each of its non-center columns is sampled with frequency
/// within three standard errors of `outer / (W - low)`. The random pattern
/// gets the same marginal test at a family-wise bound of 4.5 SE (about
/// 0.2% over 340 columns), since its columns are tested jointly rather than
/// as one stated invariant.
pub fn distribution_checks(seeds: u64) -> Vec<Check> {
    let mut out = Vec::new();
    for (w, r) in [(64, 4), (64, 8), (368, 4)] {
        let cf = standard_cf(r);
        let b = budget(w, r, cf);
        let outer_cols: Vec<usize> = (0..w).filter(|c| !b.center.contains(c)).collect();
        let p = b.outer as f64 / outer_cols.len() as f64;
        let spacing = outer_cols.len() as f64 / b.outer as f64;
        let classes = spacing.ceil() as usize;
        for pattern in [MaskPattern::EquispacedRandomOffset, MaskPattern::RandomUniform] {
            let mut hits = vec![0u64; w];
            let mut first_seen = vec![false; classes];
            for s in 0..seeds {
                let m = gen_mask(&MaskSpec::new(w, r, cf, pattern, s)).unwrap();
                for c in m.sampled_indices() {
                    hits[c] += 1;
                }
                if pattern == MaskPattern::EquispacedRandomOffset {
                    let first = outer_cols.iter().position(|&c| m.is_sampled(c)).unwrap();
                    if first < classes {
                        first_seen[first] = true;
                    }
                }
            }
            let se = (p * (1.0 - p) / seeds as f64).sqrt();
            let worst = outer_cols
                .iter()
                .map(|&c| (hits[c] as f64 / seeds as f64 - p).abs() / se)
                .fold(0.0, f64::max);
            let bound = if pattern == MaskPattern::RandomUniform { 4.5 } else { 3.0 };
            out.push(Check::new(
                format!("{pattern} W={w} R={r}: column frequency within {bound} SE of {p:.4}"),
                worst <= bound,
                format!("worst {worst:.2} SE over {seeds} seeds"),
            ));
            if pattern == MaskPattern::EquispacedRandomOffset {
                out.push(Check::new(
                    format!("{pattern} W={w} R={r}: all {classes} offsets occur"),
                    first_seen.iter().all(|&x| x),
                    format!("{} of {classes}", first_seen.iter().filter(|&&x| x).count()),
                ));
            }
        }
    }
    out
}
