//! Shared fixtures for the benchmarks.

use primed_core::kspace::apply_forward_model;
use primed_core::masks::{gen_mask, MaskPattern, MaskSpec};
use primed_core::phantom::{gen_phantom, Family};
use primed_core::{ComplexGrid, Image, Mask};

/// A 64×64 family-A phantom, its R=4 random mask and noiseless k-space.
pub fn fixture(size: usize) -> (Image, Mask, ComplexGrid) {
    let x = gen_phantom(Family::A, size, size, 1).expect("valid phantom size").image;
    let m = gen_mask(&MaskSpec::new(size, 4, 0.08, MaskPattern::RandomUniform, 1)).expect("valid mask");
    let k = apply_forward_model(&x, &m, 0.0, 0).expect("matching widths");
    (x, m, k)
}
