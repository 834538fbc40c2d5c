//! Fixation-based scores: NSS, LCC against a fixation density, and ROC/AUC.
//!
//! Fixation coordinates are 0-indexed pixels, `x` along columns and `y`
//! along rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixation {
    pub x: usize,
    pub y: usize,
    pub subject: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixationSet {
    pub image_id: String,
    pub points: Vec<Fixation>,
}

impl FixationSet {
    pub fn new(image_id: impl Into<String>, xy: &[(usize, usize)]) -> Self {
        FixationSet {
            image_id: image_id.into(),
            points: xy
                .iter()
                .map(|&(x, y)| Fixation {
                    x,
                    y,
                    subject: None,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn check_bounds(&self, rows: usize, cols: usize) -> Result<()> {
        match self.points.iter().find(|p| p.x >= cols || p.y >= rows) {
            Some(p) => Err(Error::FixationOutOfBounds {
                x: p.x,
                y: p.y,
                width: cols,
                height: rows,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Deserialize)]
struct FixationRow {
    image_id: String,
    x: usize,
    y: usize,
    #[serde(default)]
    subject: Option<String>,
}

/// Read `image_id,x,y[,subject]` with a mandatory header.
pub fn read_fixations(path: &Path) -> Result<BTreeMap<String, FixationSet>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_fixations(file, path)
}

pub fn parse_fixations<R: std::io::Read>(
    reader: R,
    origin: &Path,
) -> Result<BTreeMap<String, FixationSet>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if !(names.starts_with(&["image_id", "x", "y"]) && names.len() <= 4)
        || (names.len() == 4 && names[3] != "subject")
    {
        return Err(Error::Format {
            path: origin.to_path_buf(),
            reason: format!(
                "expected header `image_id,x,y[,subject]`, found `{}`",
                names.join(",")
            ),
        });
    }
    let mut sets: BTreeMap<String, FixationSet> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: FixationRow = row?;
        sets.entry(row.image_id.clone())
            .or_insert_with(|| FixationSet {
                image_id: row.image_id.clone(),
                points: Vec::new(),
            })
            .points
            .push(Fixation {
                x: row.x,
                y: row.y,
                subject: row.subject.filter(|s| !s.is_empty()),
            });
    }
    Ok(sets)
}

/// Sum of unit-mass isotropic Gaussians centred on the fixations, each
/// truncated at `4 sigma` and at the image border, then renormalized so the
/// total mass equals the fixation count.
pub fn fixation_density(fx: &FixationSet, sigma: f64, rows: usize, cols: usize) -> Result<Array2<f64>> {
    if fx.is_empty() {
        return Err(Error::Empty("fixation set"));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidDimensions(format!("sigma must be positive, got {sigma}")));
    }
    fx.check_bounds(rows, cols)?;
    let reach = (4.0 * sigma).ceil() as usize;
    let cutoff = (4.0 * sigma).powi(2);
    let mut density = Array2::zeros((rows, cols));
    let mut kernel = Vec::new();
    for p in &fx.points {
        let (r0, r1) = (p.y.saturating_sub(reach), (p.y + reach + 1).min(rows));
        let (c0, c1) = (p.x.saturating_sub(reach), (p.x + reach + 1).min(cols));
        kernel.clear();
        let mut mass = 0.0;
        for r in r0..r1 {
            for c in c0..c1 {
                let d2 = (r as f64 - p.y as f64).powi(2) + (c as f64 - p.x as f64).powi(2);
                let v = if d2 <= cutoff {
                    (-d2 / (2.0 * sigma * sigma)).exp()
                } else {
                    0.0
                };
                mass += v;
                kernel.push(v);
            }
        }
        let mut k = kernel.iter();
        for r in r0..r1 {
            for c in c0..c1 {
                density[[r, c]] += k.next().expect("kernel covers the window") / mass;
            }
        }
    }
    Ok(density)
}

fn mean_std(values: &Array2<f64>) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.sum() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Mean of the standardized map (population std) at the fixations.
pub fn nss(map: &Array2<f64>, fx: &FixationSet) -> Result<f64> {
    if fx.is_empty() {
        return Err(Error::Empty("fixation set"));
    }
    fx.check_bounds(map.nrows(), map.ncols())?;
    let (mean, std) = mean_std(map);
    if !(std > 0.0) {
        return Err(Error::ZeroVariance("saliency map"));
    }
    let total: f64 = fx.points.iter().map(|p| (map[[p.y, p.x]] - mean) / std).sum();
    Ok(total / fx.len() as f64)
}

/// Pearson correlation over all pixels.
pub fn lcc(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "{:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() {
        return Err(Error::Empty("map"));
    }
    let (ma, sa) = mean_std(a);
    let (mb, sb) = mean_std(b);
    if !(sa > 0.0 && sb > 0.0) {
        return Err(Error::ZeroVariance("correlation input"));
    }
    let cov = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / a.len() as f64;
    Ok((cov / (sa * sb)).clamp(-1.0, 1.0))
}

/// Which pixels serve as negatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Negatives {
    /// Every pixel not fixated.
    AllNonFixated,
    /// `count` draws, with replacement, from the non-fixated pixels.
    Sampled { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roc {
    pub auc: f64,
    /// `(false positive rate, true positive rate)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
}

/// ROC from positive and negative scores by a descending threshold sweep;
/// tied scores move both rates together so a tie earns half credit.
pub fn roc_from_scores(positives: &[f64], negatives: &[f64]) -> Result<Roc> {
    if positives.is_empty() {
        return Err(Error::Empty("positive set"));
    }
    if negatives.is_empty() {
        return Err(Error::Empty("negative set"));
    }
    let mut scored: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    if scored.iter().any(|(v, _)| v.is_nan()) {
        return Err(Error::NonFinite("NaN saliency value".into()));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (np, nn) = (positives.len() as f64, negatives.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let threshold = scored[i].0;
        while i < scored.len() && scored[i].0 == threshold {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let next = (fp as f64 / nn, tp as f64 / np);
        let prev = *points.last().expect("starts at origin");
        auc += (next.0 - prev.0) * (next.1 + prev.1) / 2.0;
        points.push(next);
    }
    Ok(Roc { auc, points })
}

pub fn auc(map: &Array2<f64>, fx: &FixationSet, negatives: Negatives) -> Result<Roc> {
    if fx.is_empty() {
        return Err(Error::Empty("positive set"));
    }
    fx.check_bounds(map.nrows(), map.ncols())?;
    let cols = map.ncols();
    let mut fixated = vec![false; map.len()];
    let positives: Vec<f64> = fx
        .points
        .iter()
        .map(|p| {
            fixated[p.y * cols + p.x] = true;
            map[[p.y, p.x]]
        })
        .collect();
    let flat: Vec<f64> = map.iter().copied().collect();
    let pool: Vec<f64> = flat
        .iter()
        .zip(&fixated)
        .filter(|(_, f)| !**f)
        .map(|(v, _)| *v)
        .collect();
    let negs = match negatives {
        Negatives::AllNonFixated => pool,
        Negatives::Sampled { count, seed } => {
            if pool.is_empty() {
                return Err(Error::Empty("negative set"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count)
                .map(|_| pool[rng.random_range(0..pool.len())])
                .collect()
        }
    };
    roc_from_scores(&positives, &negs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    /// Fixation density width in pixels.
    pub sigma: f64,
    /// `None` uses every non-fixated pixel.
    pub negative_samples: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            sigma: 16.0,
            negative_samples: None,
            seed: 0,
        }
    }
}

/// One map to score.
#[derive(Debug, Clone)]
pub struct MapItem {
    pub image_id: String,
    /// Row label, e.g. `uhmt0` or `aim`.
    pub method: String,
    pub map: Array2<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageMetrics {
    pub image_id: String,
    pub method: String,
    pub lcc: f64,
    pub nss: f64,
    pub auc: f64,
    pub roc: Vec<(f64, f64)>,
    pub seconds: Option<f64>,
    /// Why this item was left out of the means.
    pub error: Option<String>,
}

/// Dataset means for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: String,
    pub images: usize,
    pub flagged: usize,
    pub lcc: f64,
    pub nss: f64,
    pub auc: f64,
    pub seconds: Option<f64>,
    /// Vertically averaged ROC on a uniform false-positive-rate grid.
    pub roc: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub rows: Vec<MethodRow>,
}

impl MetricReport {
    pub fn is_empty(&self) -> bool {
        self.per_image.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,images,LCC,NSS,AUC,TIME\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:.5},{:.5},{:.5},{}",
                r.method,
                r.images,
                r.lcc,
                r.nss,
                r.auc,
                r.seconds.map(|s| format!("{s:.5}")).unwrap_or_default()
            );
        }
        out
    }

    pub fn per_image_csv(&self) -> String {
        let mut out = String::from("image_id,method,LCC,NSS,AUC,TIME,status\n");
        for m in &self.per_image {
            let status = m.error.as_deref().unwrap_or("ok").replace(',', ";");
            let num = |v: f64| if m.error.is_some() { String::new() } else { format!("{v:.5}") };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.image_id,
                m.method,
                num(m.lcc),
                num(m.nss),
                num(m.auc),
                m.seconds.map(|s| format!("{s:.5}")).unwrap_or_default(),
                status
            );
        }
        out
    }

    /// Aligned text table with one row per method.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<14}{:>10}{:>10}{:>10}{:>12}{:>8}\n",
            "Observations", "LCC", "NSS", "AUC", "TIME(s)", "N"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<14}{:>10.5}{:>10.5}{:>10.5}{:>12}{:>8}",
                r.method,
                r.lcc,
                r.nss,
                r.auc,
                r.seconds.map(|s| format!("{s:.5}")).unwrap_or_else(|| "-".into()),
                r.images
            );
        }
        out
    }
}

fn score(item: &MapItem, fx: &FixationSet, config: &EvalConfig, stream: u64) -> Result<(f64, f64, Roc)> {
    let (rows, cols) = item.map.dim();
    let density = fixation_density(fx, config.sigma, rows, cols)?;
    let negatives = match config.negative_samples {
        None => Negatives::AllNonFixated,
        Some(count) => Negatives::Sampled {
            count,
            seed: config.seed.wrapping_add(stream),
        },
    };
    Ok((
        lcc(&item.map, &density)?,
        nss(&item.map, fx)?,
        auc(&item.map, fx, negatives)?,
    ))
}

const ROC_GRID: usize = 100;

fn interpolate_tpr(points: &[(f64, f64)], fpr: f64) -> f64 {
    // the curve is monotone in both coordinates; take the upper envelope at
    // vertical segments
    let idx = points.partition_point(|p| p.0 <= fpr);
    if idx == 0 {
        return points[0].1;
    }
    if idx == points.len() {
        return points[idx - 1].1;
    }
    let (a, b) = (points[idx - 1], points[idx]);
    a.1 + (b.1 - a.1) * (fpr - a.0) / (b.0 - a.0)
}

/// Score every map against the fixations of its image. Items whose image has
/// no fixations, or whose metrics cannot be computed, are flagged and left
/// out of the means; the batch carries on.
pub fn evaluate_batch(
    items: &[MapItem],
    fixations: &BTreeMap<String, FixationSet>,
    config: &EvalConfig,
) -> MetricReport {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| {
        method_key(&items[a].method)
            .cmp(&method_key(&items[b].method))
            .then_with(|| items[a].image_id.cmp(&items[b].image_id))
    });

    let per_image: Vec<ImageMetrics> = order
        .iter()
        .enumerate()
        .map(|(stream, &i)| {
            let item = &items[i];
            let result = match fixations.get(&item.image_id) {
                Some(fx) if !fx.is_empty() => score(item, fx, config, stream as u64),
                _ => Err(Error::Empty("no fixations for this image")),
            };
            let (lcc, nss, auc, roc, error) = match result {
                Ok((l, n, r)) => (l, n, r.auc, r.points, None),
                Err(e) => (f64::NAN, f64::NAN, f64::NAN, Vec::new(), Some(e.to_string())),
            };
            ImageMetrics {
                image_id: item.image_id.clone(),
                method: item.method.clone(),
                lcc,
                nss,
                auc,
                roc,
                seconds: item.seconds,
                error,
            }
        })
        .collect();

    let mut grouped: BTreeMap<(u8, String), Vec<&ImageMetrics>> = BTreeMap::new();
    for m in &per_image {
        grouped.entry(method_key(&m.method)).or_default().push(m);
    }
    let rows = grouped
        .into_iter()
        .map(|((_, method), ms)| {
            let ok: Vec<&&ImageMetrics> = ms.iter().filter(|m| m.error.is_none()).collect();
            let n = ok.len() as f64;
            let mean = |f: fn(&ImageMetrics) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|m| f(m)).sum::<f64>() / n
                }
            };
            let times: Vec<f64> = ms.iter().filter_map(|m| m.seconds).collect();
            let roc = (0..=ROC_GRID)
                .map(|k| {
                    let fpr = k as f64 / ROC_GRID as f64;
                    let tpr = if ok.is_empty() {
                        f64::NAN
                    } else {
                        ok.iter().map(|m| interpolate_tpr(&m.roc, fpr)).sum::<f64>() / n
                    };
                    (fpr, tpr)
                })
                .collect();
            MethodRow {
                images: ok.len(),
                flagged: ms.len() - ok.len(),
                lcc: mean(|m| m.lcc),
                nss: mean(|m| m.nss),
                auc: mean(|m| m.auc),
                seconds: (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64),
                roc,
                method,
            }
        })
        .collect();
    MetricReport { per_image, rows }
}

/// MDIS rows (`uhmt0`, `thmt3`, ...) first, external methods after.
fn method_key(method: &str) -> (u8, String) {
    let internal = ["uhmt", "thmt", "vhmt"]
        .iter()
        .any(|p| method.strip_prefix(p).is_some_and(|s| s.parse::<usize>().is_ok()));
    (u8::from(!internal), method.to_string())
}
