//! Synthetic inputs for the pipeline benchmarks.

use mdis_core::hmt::{init_params, HmtTree};
use mdis_core::{dwt2d, Flavor, GrayImage, HmtParams, Wavelet};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Smooth gradient with uniform noise and a brighter noisy square in the middle.
pub fn textured_image(side: usize, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patch = side / 8;
    let lo = side / 2 - patch / 2;
    let values = Array2::from_shape_fn((side, side), |(r, c)| {
        let base = 0.3 + 0.2 * (r + c) as f64 / (2 * side) as f64;
        let inside = (lo..lo + patch).contains(&r) && (lo..lo + patch).contains(&c);
        let amp = if inside { 0.4 } else { 0.05 };
        (base + amp * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
    });
    GrayImage::new(values).expect("power-of-two square in range")
}

pub fn hmt_tree(side: usize, scales: usize, seed: u64) -> HmtTree {
    let qt = dwt2d(&textured_image(side, seed), scales, Wavelet::Haar).expect("enough levels");
    HmtTree::from_quadtree(&qt)
}

pub fn start_params(tree: &HmtTree, flavor: Flavor) -> HmtParams {
    init_params(tree, flavor).params
}
