//! Grayscale preprocessing, the dyadic wavelet quad-tree and block replication
//! back to pixel resolution.
//!
//! Quad-tree levels are indexed from the coarsest scale: level 0 holds the
//! root grid, level `l` has side `root_side * 2^l`, and node `(r, c)` at level
//! `l` has children `(2r + dr, 2c + dc)` at level `l + 1`. Each node carries one
//! coefficient per orientation band, ordered `[HL, LH, HH]`.

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, Luma};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orientation bands of a node, in storage order.
pub const BANDS: [&str; 3] = ["HL", "LH", "HH"];

const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Where a preprocessed image came from: the original raster size and the
/// centred square that was cropped out of it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceGeometry {
    pub width: usize,
    pub height: usize,
    pub crop_x: usize,
    pub crop_y: usize,
    pub crop_side: usize,
}

impl SourceGeometry {
    /// Map a processed-resolution field back onto the original raster. The
    /// cropped-away margins are filled with zero.
    pub fn restore(&self, field: &Array2<f64>) -> Array2<f64> {
        let resized = if field.nrows() == self.crop_side {
            field.clone()
        } else {
            resize_square(field, self.crop_side)
        };
        let mut out = Array2::zeros((self.height, self.width));
        out.slice_mut(ndarray::s![
            self.crop_y..self.crop_y + self.crop_side,
            self.crop_x..self.crop_x + self.crop_side
        ])
        .assign(&resized);
        out
    }
}

/// Square, power-of-two luminance image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    values: Array2<f64>,
    source: Option<SourceGeometry>,
}

impl GrayImage {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        let (h, w) = values.dim();
        if h == 0 || w == 0 {
            return Err(Error::EmptyImage);
        }
        if h != w || !h.is_power_of_two() {
            return Err(Error::InvalidDimensions(format!(
                "expected a square power-of-two image, got {w}x{h}"
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidDimensions(format!(
                "luminance {v} outside [0, 1]"
            )));
        }
        Ok(GrayImage {
            values,
            source: None,
        })
    }

    pub fn side(&self) -> usize {
        self.values.nrows()
    }

    /// `J` such that the side is `2^J`.
    pub fn log2_side(&self) -> usize {
        self.side().trailing_zeros() as usize
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn source(&self) -> Option<&SourceGeometry> {
        self.source.as_ref()
    }
}

/// BT.601 luminance, centre-cropped to a square and resized down to the
/// nearest power of two when needed.
pub fn to_grayscale(image: &DynamicImage) -> Result<GrayImage> {
    let (width, height) = (image.width() as usize, image.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    let rgb = image.to_rgb8();
    let crop_side = width.min(height);
    let crop_x = (width - crop_side) / 2;
    let crop_y = (height - crop_side) / 2;

    let mut luma = Array2::zeros((crop_side, crop_side));
    for ((y, x), v) in luma.indexed_iter_mut() {
        let p = rgb.get_pixel((crop_x + x) as u32, (crop_y + y) as u32).0;
        *v = p
            .iter()
            .zip(LUMA_WEIGHTS)
            .map(|(&c, w)| w * f64::from(c) / 255.0)
            .sum::<f64>()
            .clamp(0.0, 1.0);
    }

    let target = prev_power_of_two(crop_side);
    let values = if target == crop_side {
        luma
    } else {
        resize_square(&luma, target).mapv(|v| v.clamp(0.0, 1.0))
    };
    Ok(GrayImage {
        values,
        source: Some(SourceGeometry {
            width,
            height,
            crop_x,
            crop_y,
            crop_side,
        }),
    })
}

fn prev_power_of_two(n: usize) -> usize {
    if n.is_power_of_two() {
        n
    } else {
        n.next_power_of_two() / 2
    }
}

/// Bilinear (triangle filter) resize of a square field.
fn resize_square(field: &Array2<f64>, side: usize) -> Array2<f64> {
    let (h, w) = field.dim();
    let buf: ImageBuffer<Luma<f32>, Vec<f32>> =
        ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
            Luma([field[[y as usize, x as usize]] as f32])
        });
    let out = imageops::resize(&buf, side as u32, side as u32, FilterType::Triangle);
    Array2::from_shape_fn((side, side), |(y, x)| {
        f64::from(out.get_pixel(x as u32, y as u32).0[0])
    })
}

/// Orthonormal analysis filter; synthesis uses the same taps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    #[default]
    Haar,
    /// Four-tap Daubechies filter with periodic extension.
    Db4,
}

impl Wavelet {
    fn lowpass(self) -> Vec<f64> {
        match self {
            Wavelet::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            Wavelet::Db4 => {
                let s3 = 3f64.sqrt();
                let d = 4.0 * 2f64.sqrt();
                vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
            }
        }
    }

    fn filters(self) -> (Vec<f64>, Vec<f64>) {
        let h = self.lowpass();
        let n = h.len();
        let g = (0..n)
            .map(|t| if t % 2 == 0 { h[n - 1 - t] } else { -h[n - 1 - t] })
            .collect();
        (h, g)
    }
}

impl std::str::FromStr for Wavelet {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "haar" => Ok(Wavelet::Haar),
            "db4" => Ok(Wavelet::Db4),
            other => Err(format!("unknown wavelet `{other}` (expected haar or db4)")),
        }
    }
}

fn analyze_1d(x: &[f64], h: &[f64], g: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    let n = x.len();
    for k in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for t in 0..h.len() {
            let v = x[(2 * k + t) % n];
            a += h[t] * v;
            d += g[t] * v;
        }
        lo[k] = a;
        hi[k] = d;
    }
}

fn synthesize_1d(lo: &[f64], hi: &[f64], h: &[f64], g: &[f64], x: &mut [f64]) {
    let n = x.len();
    x.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..n / 2 {
        for t in 0..h.len() {
            x[(2 * k + t) % n] += h[t] * lo[k] + g[t] * hi[k];
        }
    }
}

/// One analysis level on the top-left `n x n` block, in place: rows then columns.
fn analyze_level(data: &mut Array2<f64>, n: usize, h: &[f64], g: &[f64]) {
    let half = n / 2;
    let mut line = vec![0.0; n];
    let mut lo = vec![0.0; half];
    let mut hi = vec![0.0; half];
    for r in 0..n {
        for c in 0..n {
            line[c] = data[[r, c]];
        }
        analyze_1d(&line, h, g, &mut lo, &mut hi);
        for k in 0..half {
            data[[r, k]] = lo[k];
            data[[r, half + k]] = hi[k];
        }
    }
    for c in 0..n {
        for r in 0..n {
            line[r] = data[[r, c]];
        }
        analyze_1d(&line, h, g, &mut lo, &mut hi);
        for k in 0..half {
            data[[k, c]] = lo[k];
            data[[half + k, c]] = hi[k];
        }
    }
}

fn synthesize_level(data: &mut Array2<f64>, n: usize, h: &[f64], g: &[f64]) {
    let half = n / 2;
    let mut line = vec![0.0; n];
    let mut lo = vec![0.0; half];
    let mut hi = vec![0.0; half];
    for c in 0..n {
        for k in 0..half {
            lo[k] = data[[k, c]];
            hi[k] = data[[half + k, c]];
        }
        synthesize_1d(&lo, &hi, h, g, &mut line);
        for r in 0..n {
            data[[r, c]] = line[r];
        }
    }
    for r in 0..n {
        for k in 0..half {
            lo[k] = data[[r, k]];
            hi[k] = data[[r, half + k]];
        }
        synthesize_1d(&lo, &hi, h, g, &mut line);
        for c in 0..n {
            data[[r, c]] = line[c];
        }
    }
}

/// Detail coefficients of a dyadic decomposition arranged as a forest of
/// quad-trees, one tree per coarsest-scale block.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletQuadTree {
    side: usize,
    root_side: usize,
    wavelet: Wavelet,
    approximation: Array2<f64>,
    levels: Vec<Vec<[f64; 3]>>,
}

impl WaveletQuadTree {
    /// Build directly from per-level coefficients (coarsest first). Level `l`
    /// must hold `(root_side * 2^l)^2` nodes in row-major order.
    pub fn from_levels(
        root_side: usize,
        levels: Vec<Vec<[f64; 3]>>,
        approximation: Array2<f64>,
        wavelet: Wavelet,
    ) -> Result<Self> {
        if root_side == 0 || levels.is_empty() {
            return Err(Error::InvalidTree("empty quad-tree".into()));
        }
        for (l, level) in levels.iter().enumerate() {
            let s = root_side << l;
            if level.len() != s * s {
                return Err(Error::InvalidTree(format!(
                    "level {l} holds {} nodes, expected {}",
                    level.len(),
                    s * s
                )));
            }
        }
        if approximation.dim() != (root_side, root_side) {
            return Err(Error::InvalidTree(format!(
                "approximation is {:?}, expected {root_side}x{root_side}",
                approximation.dim()
            )));
        }
        let side = root_side << levels.len();
        Ok(WaveletQuadTree {
            side,
            root_side,
            wavelet,
            approximation,
            levels,
        })
    }

    /// Number of scales (tree depth).
    pub fn scales(&self) -> usize {
        self.levels.len()
    }

    /// Side of the image the tree was computed from.
    pub fn image_side(&self) -> usize {
        self.side
    }

    pub fn root_side(&self) -> usize {
        self.root_side
    }

    pub fn wavelet(&self) -> Wavelet {
        self.wavelet
    }

    /// Grid side at `level` (0 = coarsest).
    pub fn level_side(&self, level: usize) -> usize {
        self.root_side << level
    }

    pub fn level(&self, level: usize) -> &[[f64; 3]] {
        &self.levels[level]
    }

    pub fn levels(&self) -> &[Vec<[f64; 3]>] {
        &self.levels
    }

    pub fn approximation(&self) -> &Array2<f64> {
        &self.approximation
    }

    pub fn coefficients(&self, level: usize, row: usize, col: usize) -> [f64; 3] {
        self.levels[level][row * self.level_side(level) + col]
    }

    pub fn node_count(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn parent(&self, level: usize, row: usize, col: usize) -> Option<(usize, usize)> {
        (level > 0).then_some((row / 2, col / 2))
    }

    /// Children at `level + 1`, or `None` at the finest level.
    pub fn children(&self, level: usize, row: usize, col: usize) -> Option<[(usize, usize); 4]> {
        (level + 1 < self.scales()).then(|| {
            let (r, c) = (2 * row, 2 * col);
            [(r, c), (r, c + 1), (r + 1, c), (r + 1, c + 1)]
        })
    }

    /// Sum of squared detail and approximation coefficients.
    pub fn energy(&self) -> f64 {
        let detail: f64 = self
            .levels
            .iter()
            .flatten()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum();
        detail + self.approximation.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Separable orthonormal analysis to `scales` levels.
pub fn dwt2d(img: &GrayImage, scales: usize, wavelet: Wavelet) -> Result<WaveletQuadTree> {
    let max = img.log2_side();
    if scales == 0 || scales > max {
        return Err(Error::ScalesOutOfRange {
            requested: scales,
            max,
        });
    }
    let (h, g) = wavelet.filters();
    let side = img.side();
    let mut data = img.values().clone();
    // finest first while transforming, reversed at the end
    let mut details = Vec::with_capacity(scales);
    let mut n = side;
    for _ in 0..scales {
        analyze_level(&mut data, n, &h, &g);
        let half = n / 2;
        let mut level = Vec::with_capacity(half * half);
        for r in 0..half {
            for c in 0..half {
                level.push([
                    data[[r, half + c]],
                    data[[half + r, c]],
                    data[[half + r, half + c]],
                ]);
            }
        }
        details.push(level);
        n = half;
    }
    details.reverse();
    let approximation = data.slice(ndarray::s![..n, ..n]).to_owned();
    WaveletQuadTree::from_levels(n, details, approximation, wavelet)
}

/// Inverse of [`dwt2d`].
pub fn idwt2d(tree: &WaveletQuadTree) -> Array2<f64> {
    let (h, g) = tree.wavelet.filters();
    let side = tree.side;
    let mut data = Array2::zeros((side, side));
    let r0 = tree.root_side;
    data.slice_mut(ndarray::s![..r0, ..r0])
        .assign(&tree.approximation);
    for (l, level) in tree.levels.iter().enumerate() {
        let half = tree.level_side(l);
        for r in 0..half {
            for c in 0..half {
                let [hl, lh, hh] = level[r * half + c];
                data[[r, half + c]] = hl;
                data[[half + r, c]] = lh;
                data[[half + r, half + c]] = hh;
            }
        }
        synthesize_level(&mut data, 2 * half, &h, &g);
    }
    data
}

/// Replicate each grid value over its block of a `rows x cols` target.
pub fn block_upsample(grid: &Array2<f64>, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let (gr, gc) = grid.dim();
    if gr == 0 || gc == 0 || rows % gr != 0 || cols % gc != 0 {
        return Err(Error::DimensionMismatch(format!(
            "cannot replicate a {gr}x{gc} grid onto {rows}x{cols}"
        )));
    }
    let (fr, fc) = (rows / gr, cols / gc);
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| {
        grid[[r / fr, c / fc]]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use image::{Rgb, RgbImage};
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(side: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::new(Array2::from_shape_fn((side, side), |_| rng.random::<f64>())).unwrap()
    }

    #[test]
    fn white_rgb_is_all_ones() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(2, 2, Rgb([255, 255, 255])));
        let g = to_grayscale(&img).unwrap();
        assert!(g.values().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn pure_red_uses_bt601_weight() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(1, 1, Rgb([255, 0, 0])));
        let g = to_grayscale(&img).unwrap();
        assert_relative_eq!(g.values()[[0, 0]], 0.299, epsilon = 1e-12);
    }

    #[test]
    fn non_dyadic_input_is_cropped_and_resized() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_pixel(300, 200, Rgb([10, 20, 30])));
        let g = to_grayscale(&img).unwrap();
        assert_eq!(g.side(), 128);
        let src = g.source().unwrap();
        assert_eq!((src.crop_x, src.crop_y, src.crop_side), (50, 0, 200));
        let restored = src.restore(g.values());
        assert_eq!(restored.dim(), (200, 300));
        assert_eq!(restored[[0, 0]], 0.0);
    }

    #[test]
    fn rejects_empty_and_non_dyadic_arrays() {
        assert!(matches!(
            to_grayscale(&DynamicImage::new_rgb8(0, 4)),
            Err(Error::EmptyImage)
        ));
        assert!(GrayImage::new(Array2::zeros((3, 3))).is_err());
        assert!(GrayImage::new(Array2::from_elem((2, 2), 1.5)).is_err());
    }

    #[test]
    fn constant_image_has_no_detail() {
        let img = GrayImage::new(Array2::from_elem((16, 16), 0.3)).unwrap();
        for wavelet in [Wavelet::Haar, Wavelet::Db4] {
            let tree = dwt2d(&img, 3, wavelet).unwrap();
            assert!(tree
                .levels()
                .iter()
                .flatten()
                .flatten()
                .all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn haar_two_by_two_block() {
        // 4, 2, 2, 0 scaled into [0, 1] by 1/4; coefficients scale the same way
        let img = GrayImage::new(array![[1.0, 0.5], [0.5, 0.0]]).unwrap();
        let tree = dwt2d(&img, 1, Wavelet::Haar).unwrap();
        assert_relative_eq!(tree.approximation()[[0, 0]] * 4.0, 4.0, epsilon = 1e-12);
        let [hl, lh, hh] = tree.coefficients(0, 0, 0);
        assert_relative_eq!(hl * 4.0, 2.0, epsilon = 1e-12);
        assert_relative_eq!(lh * 4.0, 2.0, epsilon = 1e-12);
        assert_relative_eq!(hh * 4.0, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn parseval_and_reconstruction() {
        for (seed, wavelet) in [(1, Wavelet::Haar), (2, Wavelet::Db4)] {
            let img = random_image(64, seed);
            let pixel_energy: f64 = img.values().iter().map(|v| v * v).sum();
            for scales in 1..=6 {
                let tree = dwt2d(&img, scales, wavelet).unwrap();
                assert_relative_eq!(tree.energy(), pixel_energy, max_relative = 1e-9);
                let back = idwt2d(&tree);
                for (a, b) in back.iter().zip(img.values()) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn scales_out_of_range() {
        let img = random_image(8, 3);
        assert!(matches!(
            dwt2d(&img, 0, Wavelet::Haar),
            Err(Error::ScalesOutOfRange { .. })
        ));
        assert!(matches!(
            dwt2d(&img, 4, Wavelet::Haar),
            Err(Error::ScalesOutOfRange { requested: 4, max: 3 })
        ));
    }

    #[test]
    fn quad_tree_geometry() {
        let tree = dwt2d(&random_image(64, 4), 4, Wavelet::Haar).unwrap();
        assert_eq!(tree.root_side(), 4);
        for l in 0..tree.scales() {
            assert_eq!(tree.level(l).len(), 16 * 4usize.pow(l as u32));
        }
        for l in 1..tree.scales() {
            let s = tree.level_side(l);
            for r in 0..s {
                for c in 0..s {
                    let (pr, pc) = tree.parent(l, r, c).unwrap();
                    assert!(tree.children(l - 1, pr, pc).unwrap().contains(&(r, c)));
                }
            }
        }
        assert!(tree.children(3, 0, 0).is_none());
    }

    #[test]
    fn block_upsample_replicates() {
        let one = block_upsample(&array![[7.0]], 4, 4).unwrap();
        assert!(one.iter().all(|&v| v == 7.0));

        let up = block_upsample(&array![[1.0, 2.0], [3.0, 4.0]], 4, 4).unwrap();
        assert_eq!(
            up,
            array![
                [1.0, 1.0, 2.0, 2.0],
                [1.0, 1.0, 2.0, 2.0],
                [3.0, 3.0, 4.0, 4.0],
                [3.0, 3.0, 4.0, 4.0]
            ]
        );

        let grid = Array2::from_shape_fn((4, 4), |(r, c)| (r * 4 + c) as f64);
        let big = block_upsample(&grid, 64, 64).unwrap();
        for ((r, c), v) in big.indexed_iter() {
            assert_eq!(*v, grid[[r / 16, c / 16]]);
        }
        assert!(block_upsample(&grid, 10, 16).is_err());
    }
}
