//! Image containers, complex-signature fusion, centroid/scale normalization
//! and vectorization.
//!
//! Images are stored row-major (`row * side + col`); vectorization is
//! column-major to match the basis column order.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::io::{expect_magic, read_f32, read_f64, read_u32, write_bytes, write_f32, write_f64, write_u32};
use crate::moments::{regular_moment, DiskGeometry};

const REAL_MAGIC: &[u8; 4] = b"PZI1";
const COMPLEX_MAGIC: &[u8; 4] = b"PZC1";

/// Square grid of finite, nonnegative intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    side: usize,
    pixels: Vec<f64>,
}

/// Square grid of finite complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    side: usize,
    pixels: Vec<Complex64>,
}

/// Lexicographically ordered image with the norm it had before any
/// unit scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVector {
    pub values: Vec<f64>,
    pub norm: f64,
    pub unit: bool,
}

fn check_side(side: usize, len: usize) -> Result<()> {
    if side < 2 {
        return Err(Error::InvalidArgument(format!(
            "image side must be at least 2, got {side}"
        )));
    }
    if len != side * side {
        return Err(Error::DimensionMismatch {
            what: "pixel count",
            expected: side * side,
            actual: len,
        });
    }
    Ok(())
}

impl RealImage {
    pub fn new(side: usize, pixels: Vec<f64>) -> Result<Self> {
        check_side(side, pixels.len())?;
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("real image"));
        }
        if pixels.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("intensities must be nonnegative".into()));
        }
        Ok(Self { side, pixels })
    }

    pub fn zeros(side: usize) -> Result<Self> {
        Self::new(side, vec![0.0; side * side])
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Bilinear lookup at fractional `(row, col)`; samples off the grid read as zero.
    pub fn sample_bilinear(&self, row: f64, col: f64) -> f64 {
        let r0 = row.floor();
        let c0 = col.floor();
        let fr = row - r0;
        let fc = col - c0;
        let at = |r: f64, c: f64| -> f64 {
            if r < 0.0 || c < 0.0 || r >= self.side as f64 || c >= self.side as f64 {
                0.0
            } else {
                self.get(r as usize, c as usize)
            }
        };
        at(r0, c0) * (1.0 - fr) * (1.0 - fc)
            + at(r0 + 1.0, c0) * fr * (1.0 - fc)
            + at(r0, c0 + 1.0) * (1.0 - fr) * fc
            + at(r0 + 1.0, c0 + 1.0) * fr * fc
    }

    pub fn read_raw(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        expect_magic(&mut r, REAL_MAGIC)?;
        let side = read_u32(&mut r)? as usize;
        let pixels = (0..side * side)
            .map(|_| read_f64(&mut r))
            .collect::<Result<Vec<_>>>()?;
        Self::new(side, pixels)
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_bytes(&mut w, REAL_MAGIC)?;
        write_u32(&mut w, self.side)?;
        for &v in &self.pixels {
            write_f64(&mut w, v)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a binary (P5) PGM with 8- or 16-bit samples, scaled to `[0, 1]`.
    pub fn read_pgm(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        parse_pgm(&bytes)
    }
}

fn parse_pgm(bytes: &[u8]) -> Result<RealImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Format("only binary (P5) PGM is supported".into()));
    }
    let parse = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field `{s}`")))
    };
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let maxval = parse(token()?)?;
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if width != height {
        return Err(Error::Format(format!("PGM must be square, got {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("bad PGM maxval {maxval}")));
    }
    let wide = maxval > 255;
    let count = width * height;
    let needed = count * if wide { 2 } else { 1 };
    let raster = bytes
        .get(pos..pos + needed)
        .ok_or_else(|| Error::Format("truncated PGM raster".into()))?;
    let scale = 1.0 / maxval as f64;
    let pixels = if wide {
        raster
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 * scale)
            .collect()
    } else {
        raster.iter().map(|&b| b as f64 * scale).collect()
    };
    RealImage::new(width, pixels)
}

impl ComplexImage {
    pub fn new(side: usize, pixels: Vec<Complex64>) -> Result<Self> {
        check_side(side, pixels.len())?;
        if pixels.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::NonFinite("complex image"));
        }
        Ok(Self { side, pixels })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixels(&self) -> &[Complex64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.pixels[row * self.side + col]
    }

    /// Magnitude-only view.
    pub fn magnitude(&self) -> RealImage {
        RealImage {
            side: self.side,
            pixels: self.pixels.iter().map(|c| c.norm()).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        Self {
            side: self.side,
            pixels: self.pixels.iter().map(|c| c.conj()).collect(),
        }
    }

    /// Reads the `PZC1` raw format (interleaved little-endian `f32` pairs).
    pub fn read_raw(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        expect_magic(&mut r, COMPLEX_MAGIC)?;
        let side = read_u32(&mut r)? as usize;
        let pixels = (0..side * side)
            .map(|_| {
                let re = read_f32(&mut r)? as f64;
                let im = read_f32(&mut r)? as f64;
                Ok(Complex64::new(re, im))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(side, pixels)
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_bytes(&mut w, COMPLEX_MAGIC)?;
        write_u32(&mut w, self.side)?;
        for v in &self.pixels {
            write_f32(&mut w, v.re as f32)?;
            write_f32(&mut w, v.im as f32)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Averages max-normalized magnitude and phase mapped to `[0, 1]`:
/// `0.5 (|z| / max|z| + (arg z + π) / 2π)`.
pub fn fuse_complex(image: &ComplexImage) -> Result<RealImage> {
    let max = image.pixels.iter().map(|c| c.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return Err(Error::Degenerate("cannot fuse an all-zero complex image".into()));
    }
    let pixels = image
        .pixels
        .iter()
        .map(|c| {
            let mag = c.norm() / max;
            let phase = (c.im.atan2(c.re) + PI) / (2.0 * PI);
            0.5 * (mag + phase)
        })
        .collect();
    Ok(RealImage {
        side: image.side,
        pixels,
    })
}

/// Resamples `g(x, y) = s(x/υ + m_x, y/υ + m_y)` with `m = μ10/μ00, μ01/μ00`
/// and `υ = sqrt(ξ / μ00)`, bilinear, zero outside the source grid.
pub fn normalize_scale_translation(
    geometry: &DiskGeometry,
    image: &RealImage,
    xi: f64,
) -> Result<RealImage> {
    if !(xi > 0.0 && xi.is_finite()) {
        return Err(Error::InvalidArgument(format!("xi must be positive, got {xi}")));
    }
    let mass = regular_moment(geometry, image, 0, 0)?;
    if mass <= 0.0 {
        return Err(Error::Degenerate("zero-mass image cannot be normalized".into()));
    }
    let mx = regular_moment(geometry, image, 1, 0)? / mass;
    let my = regular_moment(geometry, image, 0, 1)? / mass;
    let upsilon = (xi / mass).sqrt();
    let side = image.side;
    let mut pixels = vec![0.0; side * side];
    for row in 0..side {
        for col in 0..side {
            let j = crate::moments::pixel_index(side, row, col);
            let sx = geometry.x()[j] / upsilon + mx;
            let sy = geometry.y()[j] / upsilon + my;
            let (sr, sc) = geometry.to_pixel(sx, sy);
            pixels[row * side + col] = image.sample_bilinear(sr, sc).max(0.0);
        }
    }
    Ok(RealImage { side, pixels })
}

/// Column-major flattening, optionally scaled to unit ℓ2 norm.
pub fn vectorize(image: &RealImage, unit: bool) -> Result<ImageVector> {
    let side = image.side;
    let mut values = Vec::with_capacity(side * side);
    for col in 0..side {
        for row in 0..side {
            values.push(image.get(row, col));
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if unit {
        if norm == 0.0 {
            return Err(Error::Degenerate("cannot unit-normalize a zero image".into()));
        }
        values.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(ImageVector { values, norm, unit })
}

/// Inverse of [`vectorize`] for a non-unit vector.
pub fn devectorize(values: &[f64], side: usize) -> Result<RealImage> {
    check_side(side, values.len())?;
    let mut pixels = vec![0.0; side * side];
    for col in 0..side {
        for row in 0..side {
            pixels[row * side + col] = values[col * side + row];
        }
    }
    RealImage::new(side, pixels)
}

/// Exact counter-clockwise rotation by `k * 90` degrees.
pub fn rotate_quarter_turns(image: &RealImage, k: u32) -> RealImage {
    let side = image.side;
    let mut out = image.clone();
    for _ in 0..k % 4 {
        let src = out.pixels.clone();
        for row in 0..side {
            for col in 0..side {
                out.pixels[(side - 1 - col) * side + row] = src[row * side + col];
            }
        }
    }
    out
}

/// Counter-clockwise rotation about the grid centre with bilinear resampling.
pub fn rotate_bilinear(image: &RealImage, degrees: f64) -> RealImage {
    let side = image.side;
    let c = (side as f64 - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut pixels = vec![0.0; side * side];
    for row in 0..side {
        for col in 0..side {
            let x = col as f64 - c;
            let y = c - row as f64;
            let sx = cos * x + sin * y;
            let sy = -sin * x + cos * y;
            pixels[row * side + col] = image.sample_bilinear(c - sy, sx + c).max(0.0);
        }
    }
    RealImage { side, pixels }
}
