//! Whole-image similarity (SSIM, PSNR) and polydispersity of particle sizes.
//!
//! Variances are sample variances (divisor `n − 1`) throughout.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImageError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("invalid image: {0}")]
    Invalid(String),
    #[error("cannot parse {what}: {message}")]
    Parse { what: String, message: String },
    #[error("diameter sample is empty")]
    EmptySample,
    #[error("diameter {value} at position {index} is not a positive finite number")]
    BadDiameter { index: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
    max_value: f64,
}

impl GrayImage {
    /// Row-major pixels, each in `[0, max_value]`.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>, max_value: f64) -> Result<GrayImage, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::Invalid("width and height must be >= 1".into()));
        }
        if pixels.len() != width * height {
            return Err(ImageError::Invalid(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if !(max_value > 0.0 && max_value.is_finite()) {
            return Err(ImageError::Invalid(format!("max_value must be positive, got {max_value}")));
        }
        if let Some((i, &p)) = pixels
            .iter()
            .enumerate()
            .find(|(_, &p)| !(0.0..=max_value).contains(&p))
        {
            return Err(ImageError::Invalid(format!(
                "pixel {i} = {p} outside [0, {max_value}]"
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
            max_value,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    /// Binary PGM (`P5`), 8 or 16 bit.
    pub fn from_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
        let err = |m: &str| ImageError::Parse {
            what: "PGM".into(),
            message: m.into(),
        };
        let mut pos = 0;
        let mut header = Vec::new();
        while header.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(err("truncated header"));
            }
            header.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("non-ASCII header"))?);
        }
        if header[0] != "P5" {
            return Err(err("not a binary PGM (P5)"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| err("bad header number"));
        let (w, h, maxval) = (num(header[1])?, num(header[2])?, num(header[3])?);
        if maxval == 0 || maxval > 65535 {
            return Err(err("maxval must lie in 1..=65535"));
        }
        pos += 1; // single whitespace after maxval
        let bpp = if maxval < 256 { 1 } else { 2 };
        let data = bytes.get(pos..).unwrap_or(&[]);
        if data.len() < w * h * bpp {
            return Err(err("truncated pixel data"));
        }
        let pixels = (0..w * h)
            .map(|i| {
                if bpp == 1 {
                    data[i] as f64
                } else {
                    u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as f64
                }
            })
            .collect();
        GrayImage::new(w, h, pixels, maxval as f64)
    }

    /// Encodes as binary PGM; pixels are rounded to integers.
    pub fn to_pgm(&self) -> Vec<u8> {
        let maxval = self.max_value.round() as u32;
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, maxval).into_bytes();
        for &p in &self.pixels {
            let v = p.round() as u32;
            if maxval < 256 {
                out.push(v as u8);
            } else {
                out.extend_from_slice(&(v as u16).to_be_bytes());
            }
        }
        out
    }

    /// Comma-separated matrix, one image row per line.
    pub fn from_csv(text: &str, max_value: f64) -> Result<GrayImage, ImageError> {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| ImageError::Parse {
                    what: format!("CSV line {}", i + 1),
                    message: e.to_string(),
                })?;
            rows.push(row);
        }
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(ImageError::Invalid("ragged CSV matrix".into()));
        }
        let height = rows.len();
        GrayImage::new(width, height, rows.concat(), max_value)
    }

    /// Reads `.pgm` files as PGM and anything else as a CSV matrix scaled to
    /// `csv_max_value`.
    pub fn load(path: impl AsRef<Path>, csv_max_value: f64) -> Result<GrayImage, ImageError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| ImageError::Parse {
            what: path.display().to_string(),
            message: e.to_string(),
        })?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) || bytes.starts_with(b"P5") {
            GrayImage::from_pgm(&bytes)
        } else {
            let text = String::from_utf8(bytes).map_err(|e| ImageError::Parse {
                what: path.display().to_string(),
                message: e.to_string(),
            })?;
            GrayImage::from_csv(&text, csv_max_value)
        }
    }
}

fn same_shape(x: &GrayImage, y: &GrayImage) -> Result<(), ImageError> {
    if x.width != y.width || x.height != y.height {
        return Err(ImageError::DimensionMismatch(x.width, x.height, y.width, y.height));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample covariance; `cov(v, v)` is the sample variance. 0 for one pixel.
fn covariance(a: &[f64], ma: f64, b: &[f64], mb: f64) -> f64 {
    if a.len() < 2 {
        return 0.0;
    }
    a.iter()
        .zip(b)
        .map(|(&p, &q)| (p - ma) * (q - mb))
        .sum::<f64>()
        / (a.len() - 1) as f64
}

/// Stabilising constants `c1 = (k1·L)²`, `c2 = (k2·L)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimConstants {
    fn default() -> Self {
        SsimConstants { k1: 0.01, k2: 0.03 }
    }
}

/// The two factors of global SSIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParts {
    /// `(2 μx μy + c1) / (μx² + μy² + c1)`
    pub luminance: f64,
    /// `(2 σxy + c2) / (σx² + σy² + c2)`
    pub contrast_structure: f64,
}

impl SsimParts {
    pub fn ssim(&self) -> f64 {
        self.luminance * self.contrast_structure
    }
}

pub fn ssim_parts(x: &GrayImage, y: &GrayImage, k: SsimConstants) -> Result<SsimParts, ImageError> {
    same_shape(x, y)?;
    let l = x.max_value;
    let c1 = (k.k1 * l) * (k.k1 * l);
    let c2 = (k.k2 * l) * (k.k2 * l);
    let (mx, my) = (mean(&x.pixels), mean(&y.pixels));
    let vx = covariance(&x.pixels, mx, &x.pixels, mx);
    let vy = covariance(&y.pixels, my, &y.pixels, my);
    let cxy = covariance(&x.pixels, mx, &y.pixels, my);
    // written so that identical inputs give bitwise-equal numerator and
    // denominator
    Ok(SsimParts {
        luminance: (mx * my + mx * my + c1) / (mx * mx + my * my + c1),
        contrast_structure: (cxy + cxy + c2) / (vx + vy + c2),
    })
}

/// Global SSIM with constants derived from the first image's `max_value`.
pub fn ssim(x: &GrayImage, y: &GrayImage) -> Result<f64, ImageError> {
    ssim_with(x, y, SsimConstants::default())
}

pub fn ssim_with(x: &GrayImage, y: &GrayImage, k: SsimConstants) -> Result<f64, ImageError> {
    let parts = ssim_parts(x, y, k)?;
    Ok(parts.ssim().clamp(-1.0, 1.0))
}

/// Peak signal-to-noise ratio in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Psnr {
    Finite(f64),
    /// The images are identical.
    Infinite,
}

impl Psnr {
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => f.write_str("inf"),
        }
    }
}

pub fn mse(x: &GrayImage, y: &GrayImage) -> Result<f64, ImageError> {
    same_shape(x, y)?;
    Ok(x.pixels
        .iter()
        .zip(&y.pixels)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.pixels.len() as f64)
}

/// `20·log10(max(X) / √MSE)`, with the peak taken from the first image's
/// pixels rather than its nominal range.
pub fn psnr(x: &GrayImage, y: &GrayImage) -> Result<Psnr, ImageError> {
    let e = mse(x, y)?;
    if e == 0.0 {
        return Ok(Psnr::Infinite);
    }
    let peak = x.pixels.iter().copied().fold(0.0, f64::max);
    Ok(Psnr::Finite(20.0 * (peak / e.sqrt()).log10()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pdi {
    pub value: f64,
    pub n: usize,
    pub mean_diameter: f64,
    pub std_diameter: f64,
    /// Fewer than two diameters: the spread is undefined and `value` is 0.
    pub degenerate: bool,
}

/// Polydispersity index `(σ / 2a)²` where `2a` is the mean diameter, i.e.
/// sample variance over squared mean.
pub fn pdi(diameters: &[f64]) -> Result<Pdi, ImageError> {
    if diameters.is_empty() {
        return Err(ImageError::EmptySample);
    }
    if let Some((index, &value)) = diameters
        .iter()
        .enumerate()
        .find(|(_, &d)| !(d > 0.0 && d.is_finite()))
    {
        return Err(ImageError::BadDiameter { index, value });
    }
    let m = mean(diameters);
    if diameters.len() == 1 {
        log::warn!("PdI of a single diameter is reported as 0");
        return Ok(Pdi {
            value: 0.0,
            n: 1,
            mean_diameter: m,
            std_diameter: 0.0,
            degenerate: true,
        });
    }
    let var = covariance(diameters, m, diameters, m);
    Ok(Pdi {
        value: var / (m * m),
        n: diameters.len(),
        mean_diameter: m,
        std_diameter: var.sqrt(),
        degenerate: false,
    })
}

/// Single-column diameter list; a non-numeric first line is a header.
pub fn read_diameters(text: &str) -> Result<Vec<f64>, ImageError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cell = line.split(',').next().unwrap_or("").trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => {}
            Err(e) => {
                return Err(ImageError::Parse {
                    what: format!("diameter on line {}", i + 1),
                    message: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}
