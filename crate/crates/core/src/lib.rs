//! Multiscale discriminant saliency (MDIS).
//!
//! An image is decomposed into a dyadic wavelet quad-tree, a two-state hidden
//! Markov tree is fitted to the detail coefficients, nodes are labelled
//! coarse-to-fine with parent context, and each node's discriminant power
//! becomes its saliency. The [`eval`] module scores maps against eye
//! fixations.

pub mod error;
pub mod eval;
pub mod fusion;
pub mod hmt;
pub mod io;
pub mod pyramid;
pub mod saliency;

pub use error::{Error, Result};
pub use eval::{auc, evaluate_batch, fixation_density, lcc, nss, FixationSet, MetricReport};
pub use fusion::{map_labels, ContextMode, LabelField};
pub use hmt::{Flavor, HmtParams, HmtTree, LikelihoodTree};
pub use pyramid::{block_upsample, dwt2d, idwt2d, to_grayscale, GrayImage, Wavelet, WaveletQuadTree};
pub use saliency::{
    analyze, compute_saliency, discriminant_power, integrate_max, mdis_pyramid, Analysis,
    MdisConfig, Model, PriorConfig, PriorEstimator, PriorWindow, Provenance, SaliencyMap,
    SaliencyPyramid, ScaleSelect,
};
