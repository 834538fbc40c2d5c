//! Run configuration: a TOML file, then command-line overrides on top.

use std::path::{Path, PathBuf};

use mdis_core::io::MapFormat;
use mdis_core::{ContextMode, Flavor, MdisConfig, PriorConfig, ScaleSelect, Wavelet};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Raster the exported maps are laid out on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// Back-projected onto the input image, zero outside the analysed square.
    #[default]
    Original,
    /// The square power-of-two raster the pipeline ran on.
    Preprocessed,
}

impl std::str::FromStr for Geometry {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "original" => Ok(Geometry::Original),
            "preprocessed" => Ok(Geometry::Preprocessed),
            other => Err(format!("unknown geometry `{other}` (expected original or preprocessed)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub variants: Vec<Flavor>,
    pub scales: usize,
    pub select: Vec<ScaleSelect>,
    /// Universal parameter file for uhmt; the built-in set when absent.
    pub params: Option<PathBuf>,
    /// Per-dataset thmt/vhmt models used instead of per-image training.
    pub dataset_params: Vec<PathBuf>,
    pub fixations: Option<PathBuf>,
    pub sigma: f64,
    /// Sampled negatives for AUC; all non-fixated pixels when absent.
    pub negatives: Option<usize>,
    pub seed: u64,
    pub formats: Vec<MapFormat>,
    pub geometry: Geometry,
    pub wavelet: Wavelet,
    pub context: ContextMode,
    pub prior: PriorConfig,
    pub max_iter: usize,
    pub rel_tol: f64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub cache_models: bool,
    pub labels: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mdis = MdisConfig::default();
        RunConfig {
            input: PathBuf::from("."),
            output: PathBuf::from("out"),
            variants: vec![Flavor::Uhmt],
            scales: mdis.scales,
            select: (0..=mdis.scales).map(ScaleSelect::from).collect(),
            params: None,
            dataset_params: Vec::new(),
            fixations: None,
            sigma: 16.0,
            negatives: None,
            seed: 0,
            formats: vec![MapFormat::Pfm],
            geometry: Geometry::Original,
            wavelet: mdis.wavelet,
            context: mdis.context,
            prior: mdis.prior,
            max_iter: mdis.max_iter,
            rel_tol: mdis.rel_tol,
            threads: 0,
            cache_models: false,
            labels: false,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn mdis(&self) -> MdisConfig {
        MdisConfig {
            scales: self.scales,
            wavelet: self.wavelet,
            max_iter: self.max_iter,
            rel_tol: self.rel_tol,
            context: self.context,
            prior: self.prior,
        }
    }

    /// Checks that need no file system access.
    pub fn validate(&self) -> CliResult<()> {
        if self.variants.is_empty() {
            return Err(CliError::Config("no variant selected".into()));
        }
        if self.scales == 0 {
            return Err(CliError::Config("scales must be at least 1".into()));
        }
        if self.select.is_empty() {
            return Err(CliError::Config("no scale selected".into()));
        }
        if let Some(bad) = self.select.iter().find(|s| s.index() > self.scales) {
            return Err(CliError::Config(format!(
                "scale selection {bad} exceeds the {} analysed scales",
                self.scales
            )));
        }
        if self.formats.is_empty() {
            return Err(CliError::Config("no export format selected".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(CliError::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.negatives == Some(0) {
            return Err(CliError::Config("negative sample count must be positive".into()));
        }
        if self.max_iter == 0 || !(self.rel_tol >= 0.0) {
            return Err(CliError::Config("max_iter must be positive and rel_tol non-negative".into()));
        }
        Ok(())
    }
}

/// `scale` for the whole scale, `local:R` for a `(2R + 1)` square window.
pub fn parse_prior_window(s: &str) -> Result<mdis_core::PriorWindow, String> {
    match s.split_once(':') {
        None if s == "scale" => Ok(mdis_core::PriorWindow::Scale),
        Some(("local", r)) => r
            .parse()
            .map(mdis_core::PriorWindow::Local)
            .map_err(|_| format!("bad window radius `{r}`")),
        _ => Err(format!("unknown prior window `{s}` (expected scale or local:R)")),
    }
}
