//! Batch runners behind the `saliency`, `eval` and `train` subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mdis_core::eval::{read_fixations, EvalConfig, MapItem};
use mdis_core::hmt::{em_train_forest, init_params_forest, universal_params, UniversalSource};
use mdis_core::io::{load_image, read_map, write_label_images, write_map};
use mdis_core::{
    analyze, dwt2d, evaluate_batch, to_grayscale, Flavor, GrayImage, HmtParams, HmtTree, MetricReport, Model,
};
use ndarray::Array2;
use rayon::prelude::*;

use crate::config::{Geometry, RunConfig};
use crate::error::{CliError, CliResult};

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "pgm", "ppm", "pnm", "pbm", "pam"];
const MAP_EXTENSIONS: &[&str] = &["pfm", "csv", "pgm", "png", "jpg", "jpeg", "ppm", "pnm"];
pub const TIMING_FILE: &str = "timing.csv";

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
}

fn sorted_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Image files in `dir` by name, plus how many other files were skipped.
pub fn list_images(dir: &Path) -> CliResult<(Vec<PathBuf>, usize)> {
    let mut skipped = 0;
    let mut images = Vec::new();
    for path in sorted_files(dir)? {
        match extension(&path) {
            Some(e) if IMAGE_EXTENSIONS.contains(&e.as_str()) => images.push(path),
            _ => {
                warn!("skipping non-image file {}", path.display());
                skipped += 1;
            }
        }
    }
    Ok((images, skipped))
}

fn image_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn pool(threads: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

pub fn map_file_name(id: &str, variant: Flavor, select: mdis_core::ScaleSelect, ext: &str) -> String {
    format!("{id}.{variant}{select}.{ext}")
}

/// Parameter sets for the variants that do not train per image.
#[derive(Debug, Default)]
struct Models {
    fixed: BTreeMap<&'static str, HmtParams>,
}

impl Models {
    fn key(f: Flavor) -> &'static str {
        match f {
            Flavor::Uhmt => "uhmt",
            Flavor::Thmt => "thmt",
            Flavor::Vhmt => "vhmt",
        }
    }

    fn load(cfg: &RunConfig) -> CliResult<Self> {
        let mut fixed = BTreeMap::new();
        if cfg.variants.contains(&Flavor::Uhmt) {
            let source = match &cfg.params {
                Some(p) => UniversalSource::File(p),
                None => UniversalSource::BuiltIn,
            };
            let p = universal_params(source)?;
            check_depth(&p, cfg.scales, cfg.params.as_deref())?;
            fixed.insert("uhmt", p);
        }
        for path in &cfg.dataset_params {
            let p = HmtParams::load(path)?;
            if p.flavor == Flavor::Uhmt {
                return Err(CliError::Config(format!(
                    "{}: universal parameters go in `params`, not `dataset_params`",
                    path.display()
                )));
            }
            check_depth(&p, cfg.scales, Some(path))?;
            let key = Self::key(p.flavor);
            if fixed.insert(key, p).is_some() {
                return Err(CliError::Config(format!("more than one model file for {key}")));
            }
        }
        Ok(Models { fixed })
    }

    fn get(&self, f: Flavor) -> Option<&HmtParams> {
        self.fixed.get(Self::key(f))
    }
}

fn check_depth(p: &HmtParams, scales: usize, path: Option<&Path>) -> CliResult<()> {
    if p.num_scales() != scales {
        let origin = path.map_or("built-in parameters".to_string(), |p| p.display().to_string());
        return Err(CliError::Config(format!(
            "{origin} cover {} scales but {scales} were requested",
            p.num_scales()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencySummary {
    pub images: usize,
    pub maps_written: usize,
    pub warnings: usize,
    /// `(image_id, variant, seconds)` in output order.
    pub timings: Vec<(String, Flavor, f64)>,
}

struct ImageResult {
    id: String,
    timings: Vec<(Flavor, f64)>,
    written: usize,
}

fn export_values(cfg: &RunConfig, img: &GrayImage, values: &Array2<f64>) -> Array2<f64> {
    match (cfg.geometry, img.source()) {
        (Geometry::Original, Some(src)) => src.restore(values),
        _ => values.clone(),
    }
}

fn process_image(cfg: &RunConfig, models: &Models, path: &Path) -> CliResult<ImageResult> {
    let id = image_id(path);
    let img = to_grayscale(&load_image(path)?)?;
    let mdis = cfg.mdis();
    let cache_dir = cfg.output.join("models");
    let mut timings = Vec::new();
    let mut written = 0;
    for &variant in &cfg.variants {
        let cache_path = cache_dir.join(format!("{id}.{variant}.toml"));
        let cached = if cfg.cache_models && variant != Flavor::Uhmt && cache_path.is_file() {
            Some(HmtParams::load(&cache_path)?)
        } else {
            None
        };
        let model = match (models.get(variant), &cached) {
            (Some(p), _) => Model::Fixed(p),
            (None, Some(p)) => Model::Fixed(p),
            (None, None) => Model::Train,
        };
        let analysis = analyze(&img, variant, model, &mdis)?;
        if cfg.cache_models && matches!(model, Model::Train) {
            analysis.params.save(&cache_path)?;
        }
        for &select in &cfg.select {
            let map = analysis.map(select)?;
            let values = export_values(cfg, &img, &map.values);
            for &format in &cfg.formats {
                let out = cfg.output.join(map_file_name(&id, variant, select, format.extension()));
                write_map(&out, &values, format)?;
                written += 1;
            }
        }
        if cfg.labels {
            write_label_images(&cfg.output, &format!("{id}.{variant}"), &analysis.labels, analysis.side >> cfg.scales)?;
        }
        timings.push((variant, analysis.seconds));
    }
    Ok(ImageResult { id, timings, written })
}

/// Saliency maps for every image in `cfg.input`, written to `cfg.output`,
/// plus a `timing.csv` log. Images that fail are skipped and counted.
pub fn run_saliency(cfg: &RunConfig) -> CliResult<SaliencySummary> {
    cfg.validate()?;
    let models = Models::load(cfg)?;
    let (images, skipped) = list_images(&cfg.input)?;
    if images.is_empty() {
        return Err(CliError::EmptyBatch(format!("no images in {}", cfg.input.display())));
    }
    ensure_dir(&cfg.output)?;
    if cfg.cache_models {
        ensure_dir(&cfg.output.join("models"))?;
    }
    let results: Vec<(PathBuf, CliResult<ImageResult>)> = pool(cfg.threads)?.install(|| {
        images
            .par_iter()
            .map(|p| (p.clone(), process_image(cfg, &models, p)))
            .collect()
    });

    let mut summary = SaliencySummary {
        images: 0,
        maps_written: 0,
        warnings: skipped,
        timings: Vec::new(),
    };
    for (path, r) in results {
        match r {
            Ok(r) => {
                summary.images += 1;
                summary.maps_written += r.written;
                summary
                    .timings
                    .extend(r.timings.into_iter().map(|(v, s)| (r.id.clone(), v, s)));
            }
            Err(e) if e.is_fatal() => return Err(e),
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                summary.warnings += 1;
            }
        }
    }
    if summary.images == 0 {
        return Err(CliError::EmptyBatch("no image could be processed".into()));
    }
    let mut log = String::from("image_id,variant,seconds\n");
    for (id, v, s) in &summary.timings {
        writeln!(log, "{id},{v},{s:.6}").expect("string write");
    }
    let timing_path = cfg.output.join(TIMING_FILE);
    fs::write(&timing_path, log).map_err(|e| CliError::io(&timing_path, e))?;
    info!(
        "{} images, {} maps, {} warnings",
        summary.images, summary.maps_written, summary.warnings
    );
    Ok(summary)
}

impl CliError {
    /// Failures that stop a batch rather than skip one image: output that
    /// cannot be written.
    fn is_fatal(&self) -> bool {
        match self {
            CliError::Io { .. } => true,
            CliError::Core(mdis_core::Error::Io { path, .. }) => !path.extension().is_some_and(|e| {
                IMAGE_EXTENSIONS.contains(&e.to_string_lossy().to_ascii_lowercase().as_str())
            }),
            _ => false,
        }
    }
}

/// Split `<image_id>.<method>.<ext>`; `None` for anything else.
pub fn parse_map_name(path: &Path) -> Option<(String, String)> {
    let ext = extension(path)?;
    if !MAP_EXTENSIONS.contains(&ext.as_str()) {
        return None;
    }
    let stem = path.file_stem()?.to_str()?;
    let (id, method) = stem.rsplit_once('.')?;
    if id.is_empty() || method.is_empty() || method.starts_with("labels") {
        return None;
    }
    Some((id.to_string(), method.to_string()))
}

fn format_rank(path: &Path) -> usize {
    let ext = extension(path).unwrap_or_default();
    MAP_EXTENSIONS.iter().position(|e| *e == ext).unwrap_or(usize::MAX)
}

/// `(image_id, variant) -> seconds` from a timing log.
pub fn read_timing(path: &Path) -> CliResult<BTreeMap<(String, String), f64>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        let parsed = match fields.as_slice() {
            [id, variant, secs] => secs.parse::<f64>().ok().map(|s| ((id.to_string(), variant.to_string()), s)),
            _ => None,
        };
        match parsed {
            Some((k, s)) => {
                out.insert(k, s);
            }
            None => warn!("{}:{}: malformed timing line", path.display(), n + 1),
        }
    }
    Ok(out)
}

fn method_seconds(timing: &BTreeMap<(String, String), f64>, id: &str, method: &str) -> Option<f64> {
    let variant = method.trim_end_matches(|c: char| c.is_ascii_digit());
    if variant.len() == method.len() {
        return None;
    }
    timing.get(&(id.to_string(), variant.to_string())).copied()
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: MetricReport,
    pub maps: usize,
    pub warnings: usize,
}

/// Score every map in `cfg.input` against `cfg.fixations`; writes
/// `report.csv`, `per_image.csv`, `roc.csv` and `report.txt` to `cfg.output`.
pub fn run_eval(cfg: &RunConfig) -> CliResult<EvalSummary> {
    cfg.validate()?;
    let fx_path = cfg
        .fixations
        .as_ref()
        .ok_or_else(|| CliError::Config("evaluation needs a fixation file".into()))?;
    let fixations = read_fixations(fx_path)?;
    if fixations.is_empty() {
        return Err(CliError::EmptyBatch(format!("{} holds no fixations", fx_path.display())));
    }
    let mut chosen: BTreeMap<(String, String), PathBuf> = BTreeMap::new();
    for path in sorted_files(&cfg.input)? {
        if let Some(key) = parse_map_name(&path) {
            match chosen.get(&key) {
                Some(prev) if format_rank(prev) <= format_rank(&path) => {}
                _ => {
                    chosen.insert(key, path);
                }
            }
        }
    }
    if chosen.is_empty() {
        return Err(CliError::EmptyBatch(format!("no saliency maps in {}", cfg.input.display())));
    }
    let timing_path = cfg.input.join(TIMING_FILE);
    let timing = if timing_path.is_file() {
        read_timing(&timing_path)?
    } else {
        BTreeMap::new()
    };

    let entries: Vec<_> = chosen.into_iter().collect();
    let loaded: Vec<(PathBuf, mdis_core::Result<MapItem>)> = pool(cfg.threads)?.install(|| {
        entries
            .par_iter()
            .map(|((id, method), path)| {
                let item = read_map(path).map(|map| MapItem {
                    image_id: id.clone(),
                    method: method.clone(),
                    seconds: method_seconds(&timing, id, method),
                    map,
                });
                (path.clone(), item)
            })
            .collect()
    });
    let mut items = Vec::with_capacity(loaded.len());
    let mut warnings = 0;
    for (path, item) in loaded {
        match item {
            Ok(i) => items.push(i),
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                warnings += 1;
            }
        }
    }
    if items.is_empty() {
        return Err(CliError::EmptyBatch("no readable saliency maps".into()));
    }
    let eval = EvalConfig {
        sigma: cfg.sigma,
        negative_samples: cfg.negatives,
        seed: cfg.seed,
    };
    let report = evaluate_batch(&items, &fixations, &eval);
    let flagged: usize = report.rows.iter().map(|r| r.flagged).sum();
    if flagged > 0 {
        warn!("{flagged} maps flagged and left out of the means (see per_image.csv)");
    }
    ensure_dir(&cfg.output)?;
    let mut roc = String::from("method,fpr,tpr\n");
    for row in &report.rows {
        for (f, t) in &row.roc {
            writeln!(roc, "{},{f:.5},{t:.5}", row.method).expect("string write");
        }
    }
    for (name, body) in [
        ("report.csv", report.to_csv()),
        ("per_image.csv", report.per_image_csv()),
        ("roc.csv", roc),
        ("report.txt", report.to_table()),
    ] {
        let path = cfg.output.join(name);
        fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(EvalSummary {
        maps: items.len(),
        report,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub params: HmtParams,
    pub images: usize,
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// One model over every image in `cfg.input` (per-dataset training). A uhmt
/// request trains scalar emissions and labels the result universal.
pub fn run_train(cfg: &RunConfig, variant: Flavor, out: &Path) -> CliResult<TrainSummary> {
    cfg.validate()?;
    let (images, _) = list_images(&cfg.input)?;
    let trees: Vec<HmtTree> = pool(cfg.threads)?.install(|| {
        images
            .par_iter()
            .filter_map(|p| {
                let tree = load_image(p)
                    .and_then(|i| to_grayscale(&i))
                    .and_then(|g| dwt2d(&g, cfg.scales, cfg.wavelet))
                    .map(|q| HmtTree::from_quadtree(&q));
                match tree {
                    Ok(t) => Some(t),
                    Err(e) => {
                        warn!("skipping {}: {e}", p.display());
                        None
                    }
                }
            })
            .collect()
    });
    if trees.is_empty() {
        return Err(CliError::EmptyBatch(format!("no usable images in {}", cfg.input.display())));
    }
    let init_flavor = if variant.is_vector() { Flavor::Vhmt } else { Flavor::Thmt };
    let init = init_params_forest(&trees, init_flavor);
    if !init.floored_scales.is_empty() {
        warn!("variance floor hit at scales {:?}", init.floored_scales);
    }
    let outcome = em_train_forest(&trees, &init.params, &cfg.mdis().em())?;
    let mut params = outcome.params;
    params.flavor = variant;
    params.save(out)?;
    info!(
        "trained {variant} on {} images: log-likelihood {:.6} after {} iterations{}",
        trees.len(),
        outcome.trace.last().copied().unwrap_or(f64::NAN),
        outcome.iterations,
        if outcome.converged { "" } else { " (not converged)" }
    );
    Ok(TrainSummary {
        params,
        images: trees.len(),
        trace: outcome.trace,
        converged: outcome.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_names_split_on_the_last_two_dots() {
        assert_eq!(
            parse_map_name(Path::new("a.b.thmt3.pfm")),
            Some(("a.b".into(), "thmt3".into()))
        );
        assert_eq!(parse_map_name(Path::new("img7.aim.png")), Some(("img7".into(), "aim".into())));
        assert_eq!(parse_map_name(Path::new("timing.csv")), None);
        assert_eq!(parse_map_name(Path::new("x.thmt.labels2.pgm")), None);
        assert_eq!(parse_map_name(Path::new("x.thmt0.txt")), None);
    }

    #[test]
    fn seconds_follow_the_variant() {
        let mut t = BTreeMap::new();
        t.insert(("im".to_string(), "vhmt".to_string()), 1.5);
        assert_eq!(method_seconds(&t, "im", "vhmt4"), Some(1.5));
        assert_eq!(method_seconds(&t, "im", "aim"), None);
        assert_eq!(method_seconds(&t, "other", "vhmt0"), None);
    }

    #[test]
    fn output_names() {
        assert_eq!(
            map_file_name("img", Flavor::Thmt, mdis_core::ScaleSelect::Integrated, "pfm"),
            "img.thmt0.pfm"
        );
    }
}
