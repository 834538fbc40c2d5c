//! Reading rasters and writing maps.
//!
//! Float maps use the portable float map layout (`Pf`, little-endian, rows
//! stored bottom to top). PGM exports are 16-bit and min–max normalized.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use image::DynamicImage;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::LabelField;
use crate::saliency::min_max;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapFormat {
    Pfm,
    Pgm,
    Csv,
}

impl MapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MapFormat::Pfm => "pfm",
            MapFormat::Pgm => "pgm",
            MapFormat::Csv => "csv",
        }
    }
}

impl fmt::Display for MapFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.extension())
    }
}

impl std::str::FromStr for MapFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pfm" => Ok(MapFormat::Pfm),
            "pgm" => Ok(MapFormat::Pgm),
            "csv" => Ok(MapFormat::Csv),
            other => Err(format!("unknown map format `{other}` (expected pfm, pgm or csv)")),
        }
    }
}

pub fn load_image(path: &Path) -> Result<DynamicImage> {
    Ok(image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?)
}

pub fn encode_map(values: &Array2<f64>, format: MapFormat) -> Vec<u8> {
    match format {
        MapFormat::Pfm => encode_pfm(values),
        MapFormat::Pgm => encode_pgm16(&min_max(values)),
        MapFormat::Csv => encode_csv(values),
    }
}

pub fn write_map(path: &Path, values: &Array2<f64>, format: MapFormat) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_map(values, format))
        .map_err(|e| Error::io(path, e))
}

fn encode_pfm(values: &Array2<f64>) -> Vec<u8> {
    let (h, w) = values.dim();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(4 * w * h);
    for r in (0..h).rev() {
        for c in 0..w {
            out.extend_from_slice(&(values[[r, c]] as f32).to_le_bytes());
        }
    }
    out
}

fn encode_pgm16(normalized: &Array2<f64>) -> Vec<u8> {
    let (h, w) = normalized.dim();
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    out.reserve(2 * w * h);
    for v in normalized.iter() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

fn encode_csv(values: &Array2<f64>) -> Vec<u8> {
    let mut out = String::new();
    for row in values.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn format_error(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn decode_pfm(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    // three whitespace-terminated header tokens: magic, "w h", scale
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_error(path, "truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| format_error(path, "bad header"))?);
    }
    pos += 1; // single whitespace byte after the scale
    if fields[0] != "Pf" {
        return Err(format_error(path, format!("expected `Pf`, found `{}`", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format_error(path, format!("bad size `{s}`")));
    let (w, h) = (parse(fields[1])?, parse(fields[2])?);
    let scale: f32 = fields[3]
        .parse()
        .map_err(|_| format_error(path, "bad scale"))?;
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != 4 * w * h {
        return Err(format_error(path, format!("expected {} data bytes, found {}", 4 * w * h, data.len())));
    }
    let mut out = Array2::zeros((h, w));
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (r, c) = (h - 1 - k / w, k % w);
        out[[r, c]] = f64::from(v);
    }
    Ok(out)
}

fn decode_csv(text: &str, path: &Path) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| format_error(path, format!("bad value `{v}`"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let w = rows.first().map_or(0, Vec::len);
    if w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(format_error(path, "ragged or empty CSV map"));
    }
    Ok(Array2::from_shape_fn((rows.len(), w), |(r, c)| rows[r][c]))
}

/// Read a saliency map from `.pfm`, `.csv`, or any raster format (scaled to
/// `[0, 1]` by the channel's maximum value).
pub fn read_map(path: &Path) -> Result<Array2<f64>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pfm") => decode_pfm(&fs::read(path).map_err(|e| Error::io(path, e))?, path),
        Some("csv") => decode_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, path),
        _ => {
            let img = load_image(path)?.into_luma16();
            let (w, h) = img.dimensions();
            Ok(Array2::from_shape_fn((h as usize, w as usize), |(r, c)| {
                f64::from(img.get_pixel(c as u32, r as u32).0[0]) / 65535.0
            }))
        }
    }
}

/// One 8-bit PGM per scale (0 = surround, 255 = centre), named
/// `<stem>.labels<scale>.pgm`.
pub fn write_label_images(dir: &Path, stem: &str, labels: &LabelField, root_side: usize) -> Result<()> {
    for level in 0..labels.depth() {
        let side = root_side << level;
        let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
        out.extend(labels.level_labels(level).iter().map(|&l| if l == 1 { 255u8 } else { 0 }));
        let path = dir.join(format!("{stem}.labels{}.pgm", level + 1));
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
