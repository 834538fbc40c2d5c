//! Discriminant power per node and scale, and the integrated saliency map.
//!
//! A node's discriminant power is the information its features carry about
//! its class: `I = H(prior) - H(posterior)` in bits, clamped at zero. The
//! integrated map takes, per pixel, the maximum over scales.

use std::fmt;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{map_labels, ContextMode, LabelField};
use crate::hmt::{
    em_train, em_train_vector, init_params, upward_downward, EmConfig, Flavor, HmtParams,
    HmtTree,
};
use crate::pyramid::{block_upsample, dwt2d, GrayImage, Wavelet, WaveletQuadTree};

const NORMALIZATION_TOL: f64 = 1e-9;

/// Binary entropy in bits with `0 log 0 = 0`.
pub fn entropy_bits(p: &[f64; 2]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.log2())
        .sum()
}

fn check_distribution(what: &str, p: &[f64; 2]) -> Result<()> {
    let ok = p.iter().all(|v| v.is_finite() && *v >= -NORMALIZATION_TOL)
        && (p[0] + p[1] - 1.0).abs() <= NORMALIZATION_TOL;
    if ok {
        Ok(())
    } else {
        Err(Error::NotNormalized(format!("{what} {p:?}")))
    }
}

/// `H(prior) - H(posterior)` in bits, never negative.
pub fn discriminant_power(posterior: &[f64; 2], prior: &[f64; 2]) -> Result<f64> {
    check_distribution("posterior", posterior)?;
    check_distribution("prior", prior)?;
    Ok((entropy_bits(prior) - entropy_bits(posterior)).max(0.0))
}

/// How the class prior behind `H(C)` is estimated at each scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorEstimator {
    /// Mean of the fused node posteriors.
    #[default]
    MeanPosterior,
    /// Fraction of nodes with MAP label 1.
    LabelFraction,
}

/// Which nodes of a scale contribute to a node's class prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "radius")]
pub enum PriorWindow {
    /// Every node of the scale.
    Scale,
    /// A `(2r + 1) x (2r + 1)` neighbourhood of same-scale nodes, clipped at
    /// the borders.
    Local(usize),
}

impl Default for PriorWindow {
    fn default() -> Self {
        PriorWindow::Local(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PriorConfig {
    pub estimator: PriorEstimator,
    pub window: PriorWindow,
}

/// Discriminant power and prior entropy of one scale, as node grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSaliency {
    pub power: Array2<f64>,
    pub prior_entropy: Array2<f64>,
}

/// Per-scale discriminant power, coarsest scale first.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyPyramid {
    pub scales: Vec<ScaleSaliency>,
}

impl SaliencyPyramid {
    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }
}

/// Window means of `grid` via a summed-area table.
fn window_mean(grid: &Array2<f64>, window: PriorWindow) -> Array2<f64> {
    let (h, w) = grid.dim();
    match window {
        PriorWindow::Scale => {
            let mean = grid.mean().unwrap_or(0.0);
            Array2::from_elem((h, w), mean)
        }
        PriorWindow::Local(radius) => {
            let mut sat = Array2::<f64>::zeros((h + 1, w + 1));
            for r in 0..h {
                for c in 0..w {
                    sat[[r + 1, c + 1]] =
                        grid[[r, c]] + sat[[r, c + 1]] + sat[[r + 1, c]] - sat[[r, c]];
                }
            }
            Array2::from_shape_fn((h, w), |(r, c)| {
                let (r0, c0) = (r.saturating_sub(radius), c.saturating_sub(radius));
                let (r1, c1) = ((r + radius + 1).min(h), (c + radius + 1).min(w));
                let sum = sat[[r1, c1]] - sat[[r0, c1]] - sat[[r1, c0]] + sat[[r0, c0]];
                (sum / ((r1 - r0) * (c1 - c0)) as f64).clamp(0.0, 1.0)
            })
        }
    }
}

/// Discriminant power of every node from its context-fused posterior.
/// `root_side` is the grid side of the coarsest scale; finer scales double it.
pub fn mdis_pyramid(
    labels: &LabelField,
    root_side: usize,
    prior: PriorConfig,
) -> Result<SaliencyPyramid> {
    let mut scales = Vec::with_capacity(labels.depth());
    for level in 0..labels.depth() {
        let side = root_side << level;
        let post = labels.level_posterior(level);
        if post.is_empty() {
            return Err(Error::Empty("scale without nodes"));
        }
        if post.len() != side * side {
            return Err(Error::DimensionMismatch(format!(
                "scale {} has {} nodes, expected {side}x{side}",
                level + 1,
                post.len()
            )));
        }
        let class_one = match prior.estimator {
            PriorEstimator::MeanPosterior => {
                Array2::from_shape_fn((side, side), |(r, c)| post[r * side + c][1])
            }
            PriorEstimator::LabelFraction => {
                let lab = labels.level_labels(level);
                Array2::from_shape_fn((side, side), |(r, c)| f64::from(lab[r * side + c]))
            }
        };
        let prior_one = window_mean(&class_one, prior.window);
        let mut power = Array2::zeros((side, side));
        let mut prior_entropy = Array2::zeros((side, side));
        for r in 0..side {
            for c in 0..side {
                let p = [1.0 - prior_one[[r, c]], prior_one[[r, c]]];
                prior_entropy[[r, c]] = entropy_bits(&p);
                power[[r, c]] = discriminant_power(&post[r * side + c], &p)?;
            }
        }
        scales.push(ScaleSaliency {
            power,
            prior_entropy,
        });
    }
    Ok(SaliencyPyramid { scales })
}

/// Integrated map or one scale. Serialized as its index, 0 = integrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "usize", into = "usize")]
pub enum ScaleSelect {
    Integrated,
    /// 1-based, 1 = coarsest.
    Scale(usize),
}

impl ScaleSelect {
    pub fn index(self) -> usize {
        match self {
            ScaleSelect::Integrated => 0,
            ScaleSelect::Scale(k) => k,
        }
    }
}

impl From<usize> for ScaleSelect {
    fn from(k: usize) -> Self {
        if k == 0 {
            ScaleSelect::Integrated
        } else {
            ScaleSelect::Scale(k)
        }
    }
}

impl From<ScaleSelect> for usize {
    fn from(s: ScaleSelect) -> usize {
        s.index()
    }
}

impl fmt::Display for ScaleSelect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index())
    }
}

impl std::str::FromStr for ScaleSelect {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().parse::<usize>() {
            Ok(0) => Ok(ScaleSelect::Integrated),
            Ok(k) => Ok(ScaleSelect::Scale(k)),
            Err(_) => Err(format!("invalid scale selection `{s}`")),
        }
    }
}

/// Which variant and scale produced a map, e.g. `thmt0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub variant: Flavor,
    pub select: ScaleSelect,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.variant, self.select)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub values: Array2<f64>,
    /// Min–max normalized copy in `[0, 1]`; all zeros for a constant map.
    pub normalized: Array2<f64>,
    pub provenance: Option<Provenance>,
    /// For integrated maps, the 1-based scale that supplied each pixel.
    pub winning_scale: Option<Array2<u8>>,
    /// Wall-clock seconds of the analysis that produced the map.
    pub seconds: Option<f64>,
}

impl SaliencyMap {
    pub fn new(values: Array2<f64>) -> Self {
        let normalized = min_max(&values);
        SaliencyMap {
            values,
            normalized,
            provenance: None,
            winning_scale: None,
            seconds: None,
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }
}

pub fn min_max(values: &Array2<f64>) -> Array2<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        values.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array2::zeros(values.dim())
    }
}

/// Per-pixel maximum over all scales, each replicated to `rows x cols`.
/// Ties keep the finest scale in `winning_scale`.
pub fn integrate_max(pyr: &SaliencyPyramid, rows: usize, cols: usize) -> Result<SaliencyMap> {
    if pyr.scales.is_empty() {
        return Err(Error::Empty("pyramid without scales"));
    }
    let mut best = Array2::from_elem((rows, cols), f64::NEG_INFINITY);
    let mut winner = Array2::zeros((rows, cols));
    for (level, scale) in pyr.scales.iter().enumerate() {
        let up = block_upsample(&scale.power, rows, cols)?;
        for ((b, w), &v) in best.iter_mut().zip(winner.iter_mut()).zip(up.iter()) {
            if v >= *b {
                *b = v;
                *w = (level + 1) as u8;
            }
        }
    }
    let mut map = SaliencyMap::new(best);
    map.winning_scale = Some(winner);
    Ok(map)
}

/// One scale's power replicated to `rows x cols`.
pub fn scale_map(pyr: &SaliencyPyramid, scale: usize, rows: usize, cols: usize) -> Result<SaliencyMap> {
    if scale == 0 || scale > pyr.num_scales() {
        return Err(Error::ScalesOutOfRange {
            requested: scale,
            max: pyr.num_scales(),
        });
    }
    Ok(SaliencyMap::new(block_upsample(
        &pyr.scales[scale - 1].power,
        rows,
        cols,
    )?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdisConfig {
    pub scales: usize,
    pub wavelet: Wavelet,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub context: ContextMode,
    pub prior: PriorConfig,
}

impl Default for MdisConfig {
    fn default() -> Self {
        let em = EmConfig::default();
        MdisConfig {
            scales: 5,
            wavelet: Wavelet::Haar,
            max_iter: em.max_iter,
            rel_tol: em.rel_tol,
            context: ContextMode::Hard,
            prior: PriorConfig::default(),
        }
    }
}

impl MdisConfig {
    pub fn em(&self) -> EmConfig {
        EmConfig {
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
        }
    }
}

/// Where the HMT parameters for an analysis come from.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    /// Train on the image itself (THMT, VHMT).
    Train,
    /// Use the given parameters as they are (UHMT, cached or per-dataset models).
    Fixed(&'a HmtParams),
}

/// Everything computed for one image and variant.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub variant: Flavor,
    pub params: HmtParams,
    pub labels: LabelField,
    pub pyramid: SaliencyPyramid,
    pub side: usize,
    /// EM log-likelihood trace when the model was trained; for vhmt the
    /// scalar warm start followed by the vector refinement.
    pub em_trace: Option<Vec<f64>>,
    pub seconds: f64,
}

impl Analysis {
    pub fn map(&self, select: ScaleSelect) -> Result<SaliencyMap> {
        let mut map = match select {
            ScaleSelect::Integrated => integrate_max(&self.pyramid, self.side, self.side)?,
            ScaleSelect::Scale(k) => scale_map(&self.pyramid, k, self.side, self.side)?,
        };
        map.provenance = Some(Provenance {
            variant: self.variant,
            select,
        });
        map.seconds = Some(self.seconds);
        Ok(map)
    }
}

/// Wavelet quad-tree, HMT fit, posteriors, MAP fusion and discriminant power.
pub fn analyze(
    img: &GrayImage,
    variant: Flavor,
    model: Model<'_>,
    config: &MdisConfig,
) -> Result<Analysis> {
    let start = Instant::now();
    let qt: WaveletQuadTree = dwt2d(img, config.scales, config.wavelet)?;
    let tree = HmtTree::from_quadtree(&qt);
    let (params, em_trace) = match (model, variant) {
        (Model::Fixed(p), _) => {
            if p.flavor.is_vector() != variant.is_vector() {
                return Err(Error::params(
                    "flavor",
                    format!("{} parameters cannot drive a {variant} analysis", p.flavor),
                ));
            }
            (p.clone(), None)
        }
        (Model::Train, Flavor::Uhmt) => {
            return Err(Error::params(
                "flavor",
                "uhmt uses fixed universal parameters and is never trained",
            ))
        }
        (Model::Train, Flavor::Thmt) => {
            let init = init_params(&tree, Flavor::Thmt).params;
            let out = em_train(&tree, &init, &config.em())?;
            (out.params, Some(out.trace))
        }
        (Model::Train, Flavor::Vhmt) => {
            // start from the scalar fit; the vector model contains it
            let init = init_params(&tree, Flavor::Thmt).params;
            let scalar = em_train(&tree, &init, &config.em())?;
            let out = em_train_vector(&tree, &scalar.params.to_vector(), &config.em())?;
            let mut trace = scalar.trace;
            trace.extend_from_slice(&out.trace[1..]);
            (out.params, Some(trace))
        }
    };
    let lik = upward_downward(&tree, &params)?;
    let labels = map_labels(&tree, &lik, &params, config.context)?;
    let pyramid = mdis_pyramid(&labels, qt.root_side(), config.prior)?;
    Ok(Analysis {
        variant,
        params,
        labels,
        pyramid,
        side: img.side(),
        em_trace,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Single-map convenience over [`analyze`].
pub fn compute_saliency(
    img: &GrayImage,
    variant: Flavor,
    select: ScaleSelect,
    model: Model<'_>,
    config: &MdisConfig,
) -> Result<SaliencyMap> {
    analyze(img, variant, model, config)?.map(select)
}
