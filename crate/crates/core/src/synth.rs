//! Synthetic complex radar-style signatures of simple rotating targets.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ComplexImage;

/// Target outline; dimensions are fractions of the image side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Rectangle { width: f64, height: f64 },
    Ellipse { width: f64, height: f64 },
    /// Two bars of thickness `0.4 * min(width, height)` meeting at the
    /// lower-left corner of the bounding box.
    #[serde(rename = "lshape")]
    LShape { width: f64, height: f64 },
}

impl Shape {
    fn dims(&self) -> (f64, f64) {
        match *self {
            Shape::Rectangle { width, height }
            | Shape::Ellipse { width, height }
            | Shape::LShape { width, height } => (width, height),
        }
    }

    /// Area fraction of a pixel of size `pitch` centred at body coordinates
    /// `(bx, by)`, with a one-pitch linear edge ramp.
    fn coverage(&self, bx: f64, by: f64, pitch: f64) -> f64 {
        fn rect(bx: f64, by: f64, hw: f64, hh: f64, pitch: f64) -> f64 {
            let cx = (0.5 + (hw - bx.abs()) / pitch).clamp(0.0, 1.0);
            let cy = (0.5 + (hh - by.abs()) / pitch).clamp(0.0, 1.0);
            cx * cy
        }
        match *self {
            Shape::Rectangle { width, height } => rect(bx, by, width / 2.0, height / 2.0, pitch),
            Shape::Ellipse { width, height } => {
                let (a, b) = (width / 2.0, height / 2.0);
                let q = ((bx / a).powi(2) + (by / b).powi(2)).sqrt();
                (0.5 + (1.0 - q) * a.min(b) / pitch).clamp(0.0, 1.0)
            }
            Shape::LShape { width, height } => {
                let t = 0.4 * width.min(height);
                let bottom = rect(bx, by + (height - t) / 2.0, width / 2.0, t / 2.0, pitch);
                let left = rect(bx + (width - t) / 2.0, by, t / 2.0, height / 2.0, pitch);
                bottom.max(left)
            }
        }
    }
}

fn default_harmonics() -> usize {
    24
}

fn default_specular_width() -> f64 {
    4.0
}

/// One synthetic target class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub shape: Shape,
    /// Complex amplitude `[re, im]`.
    pub base_reflectivity: [f64; 2],
    /// Strength σ_a of the smooth per-angle amplitude perturbation.
    pub aspect_irregularity: f64,
    /// Standard deviation σ_c of additive circular complex Gaussian clutter.
    pub clutter_sigma: f64,
    pub seed: u64,
    /// Phase cycles across the target's width (a linear phase ramp in body
    /// coordinates). Zero gives a constant phase.
    #[serde(default)]
    pub phase_cycles: f64,
    /// Extra gain on the horizontal edges when the aspect angle is close to
    /// a multiple of 90 degrees.
    #[serde(default)]
    pub specular_gain: f64,
    /// Gaussian half-width in degrees of the specular response.
    #[serde(default = "default_specular_width")]
    pub specular_width: f64,
    /// Number of Fourier harmonics in the irregularity profile.
    #[serde(default = "default_harmonics")]
    pub irregularity_harmonics: usize,
}

impl TargetSpec {
    pub fn new(shape: Shape) -> Self {
        Self {
            shape,
            base_reflectivity: [1.0, 0.0],
            aspect_irregularity: 0.0,
            clutter_sigma: 0.0,
            seed: 0,
            phase_cycles: 0.0,
            specular_gain: 0.0,
            specular_width: default_specular_width(),
            irregularity_harmonics: default_harmonics(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.shape.dims();
        if !(w > 0.0 && w < 1.0 && h > 0.0 && h < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "shape dimensions must lie in (0, 1), got {w} x {h}"
            )));
        }
        let nonneg = [
            ("aspect_irregularity", self.aspect_irregularity),
            ("clutter_sigma", self.clutter_sigma),
            ("specular_gain", self.specular_gain),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.specular_width.is_nan() || self.specular_width <= 0.0 {
            return Err(Error::InvalidArgument("specular_width must be positive".into()));
        }
        if self.base_reflectivity.iter().any(|v| !v.is_finite()) || !self.phase_cycles.is_finite() {
            return Err(Error::NonFinite("target spec"));
        }
        Ok(())
    }

    /// Smooth zero-mean perturbation η(angle) with unit variance over random
    /// draws of the seed.
    pub fn irregularity(&self, degrees: f64) -> f64 {
        let h = self.irregularity_harmonics;
        if h == 0 {
            return 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let a = degrees.to_radians();
        let mut acc = 0.0;
        for k in 1..=h {
            let ca: f64 = rng.sample(StandardNormal);
            let sa: f64 = rng.sample(StandardNormal);
            let (s, c) = (k as f64 * a).sin_cos();
            acc += ca * c + sa * s;
        }
        acc / (h as f64).sqrt()
    }
}

/// Exact sine and cosine for whole quarter turns, so that renders at 0 and
/// 90 degrees are exact grid rotations of each other.
fn sin_cos_degrees(degrees: f64) -> (f64, f64) {
    let q = degrees / 90.0;
    if q == q.round() {
        match (q as i64).rem_euclid(4) {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        degrees.to_radians().sin_cos()
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Clutter stream for one `(seed, angle, side)` item.
fn item_seed(seed: u64, degrees: f64, side: usize) -> u64 {
    mix(mix(seed ^ 0x9e37_79b9_7f4a_7c15) ^ degrees.to_bits()).wrapping_add(side as u64)
}

/// Renders `spec` rotated counter-clockwise by `angle` degrees.
pub fn render_target(spec: &TargetSpec, angle: f64, side: usize) -> Result<ComplexImage> {
    if side < 32 {
        return Err(Error::InvalidArgument(format!("synthetic images need side >= 32, got {side}")));
    }
    if !angle.is_finite() {
        return Err(Error::NonFinite("aspect angle"));
    }
    spec.validate()?;
    let (sin, cos) = sin_cos_degrees(angle);
    let pitch = 1.0 / side as f64;
    let half_pitch = 0.5 * pitch;
    let (width, height) = spec.shape.dims();
    let base = Complex64::new(spec.base_reflectivity[0], spec.base_reflectivity[1]);
    let gain = (1.0 + spec.aspect_irregularity * spec.irregularity(angle)).max(0.0) * base.norm();
    let off_cardinal = (angle + 45.0).rem_euclid(90.0) - 45.0;
    let glint = spec.specular_gain * (-(off_cardinal / spec.specular_width).powi(2)).exp();

    let mut rng = ChaCha8Rng::seed_from_u64(item_seed(spec.seed, angle, side));
    let mut pixels = Vec::with_capacity(side * side);
    for row in 0..side {
        for col in 0..side {
            // Integer numerators keep the grid exactly symmetric.
            let px = (2 * col as i64 + 1 - side as i64) as f64 * half_pitch;
            let py = (side as i64 - 1 - 2 * row as i64) as f64 * half_pitch;
            let bx = cos * px + sin * py;
            let by = -sin * px + cos * py;
            let cov = spec.shape.coverage(bx, by, pitch);
            let mut z = Complex64::new(0.0, 0.0);
            if cov > 0.0 {
                let mut amp = gain * cov;
                if glint > 0.0 {
                    let edge = (1.0 - (by.abs() - height / 2.0).abs() / (2.0 * pitch)).clamp(0.0, 1.0);
                    amp *= 1.0 + glint * edge;
                }
                let phase = base.arg() + 2.0 * PI * spec.phase_cycles * bx / width;
                z = Complex64::from_polar(amp, phase);
            }
            if spec.clutter_sigma > 0.0 {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                z += Complex64::new(re, im) * (spec.clutter_sigma / 2f64.sqrt());
            }
            pixels.push(z);
        }
    }
    ComplexImage::new(side, pixels)
}

/// `count` angles evenly spaced over a full turn, starting at `start`.
pub fn even_angles(count: usize, start: f64) -> Vec<f64> {
    (0..count).map(|i| start + 360.0 * i as f64 / count as f64).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub id: String,
    pub spec: TargetSpec,
}

/// What to render: every class at every train and test angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthPlan {
    pub side: usize,
    pub classes: Vec<ClassEntry>,
    pub train_angles: Vec<f64>,
    pub test_angles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub class: String,
    pub angle: f64,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub side: usize,
    pub classes: Vec<ClassEntry>,
    pub train: Vec<ManifestItem>,
    pub test: Vec<ManifestItem>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn class_ids(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.id.clone()).collect()
    }
}

impl SynthPlan {
    pub fn validate(&self) -> Result<()> {
        if self.side < 32 {
            return Err(Error::InvalidArgument(format!(
                "synthetic images need side >= 32, got {}",
                self.side
            )));
        }
        let mut ids = BTreeSet::new();
        for c in &self.classes {
            c.spec.validate()?;
            if !ids.insert(c.id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate class `{}`", c.id)));
            }
            if c.id.is_empty() || c.id.contains(['/', '\\']) {
                return Err(Error::InvalidArgument(format!("class id `{}` is not file-name safe", c.id)));
            }
        }
        let train: BTreeSet<u64> = self.train_angles.iter().map(|a| a.to_bits()).collect();
        if let Some(a) = self.test_angles.iter().find(|a| train.contains(&a.to_bits())) {
            return Err(Error::InvalidArgument(format!(
                "angle {a} appears in both the train and test splits"
            )));
        }
        Ok(())
    }
}

/// Renders every `(class, split, angle)` item into `out_dir/images` and
/// writes `out_dir/manifest.json`.
pub fn generate_dataset(plan: &SynthPlan, out_dir: &Path) -> Result<DatasetManifest> {
    plan.validate()?;
    let image_dir = out_dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;

    let mut jobs = Vec::new();
    for class in &plan.classes {
        for (split, angles) in [("train", &plan.train_angles), ("test", &plan.test_angles)] {
            for (i, &angle) in angles.iter().enumerate() {
                let rel = PathBuf::from("images").join(format!("{}_{split}_{i:04}.pzc", class.id));
                jobs.push((class, split, angle, rel));
            }
        }
    }
    jobs.par_iter()
        .map(|(class, _, angle, rel)| {
            let img = render_target(&class.spec, *angle, plan.side)?;
            img.write_raw(&out_dir.join(rel))
        })
        .collect::<Result<Vec<()>>>()?;

    let item = |(class, _, angle, rel): &(&ClassEntry, &str, f64, PathBuf)| ManifestItem {
        class: class.id.clone(),
        angle: *angle,
        path: rel.clone(),
    };
    let manifest = DatasetManifest {
        side: plan.side,
        classes: plan.classes.clone(),
        train: jobs.iter().filter(|j| j.1 == "train").map(item).collect(),
        test: jobs.iter().filter(|j| j.1 == "test").map(item).collect(),
    };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::rotate_quarter_turns;

    fn square() -> TargetSpec {
        TargetSpec::new(Shape::Rectangle { width: 0.4, height: 0.4 })
    }

    #[test]
    fn quarter_turn_of_a_square_is_exact() {
        let spec = square();
        let a = render_target(&spec, 0.0, 48).unwrap().magnitude();
        let b = render_target(&spec, 90.0, 48).unwrap().magnitude();
        assert!(rotate_quarter_turns(&a, 1) == b);
        let rect = TargetSpec::new(Shape::Rectangle { width: 0.5, height: 0.2 });
        let a = render_target(&rect, 30.0, 48).unwrap().magnitude();
        let b = render_target(&rect, 120.0, 48).unwrap().magnitude();
        let diff = rotate_quarter_turns(&a, 1)
            .pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12);
    }

    #[test]
    fn noiseless_support_stays_on_the_footprint() {
        let spec = TargetSpec::new(Shape::Rectangle { width: 0.5, height: 0.25 });
        let side = 64;
        for angle in [0.0, 17.0, 45.0, 133.0] {
            let img = render_target(&spec, angle, side).unwrap();
            let (s, c) = sin_cos_degrees(angle);
            let pitch = 1.0 / side as f64;
            for row in 0..side {
                for col in 0..side {
                    if img.get(row, col).norm() == 0.0 {
                        continue;
                    }
                    let px = (col as f64 + 0.5) * pitch - 0.5;
                    let py = 0.5 - (row as f64 + 0.5) * pitch;
                    let bx = c * px + s * py;
                    let by = -s * px + c * py;
                    assert!(bx.abs() <= 0.25 + pitch && by.abs() <= 0.125 + pitch);
                }
            }
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let mut spec = TargetSpec::new(Shape::Ellipse { width: 0.4, height: 0.3 });
        spec.aspect_irregularity = 0.3;
        spec.clutter_sigma = 0.05;
        spec.seed = 11;
        let a = render_target(&spec, 12.5, 40).unwrap();
        let b = render_target(&spec, 12.5, 40).unwrap();
        assert_eq!(a, b);
        let c = render_target(&spec, 13.5, 40).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn irregularity_is_smooth_and_seeded() {
        let mut spec = square();
        spec.seed = 3;
        let a = spec.irregularity(10.0);
        assert_eq!(a, spec.irregularity(10.0));
        assert!((spec.irregularity(10.1) - a).abs() < 0.1);
        assert!((spec.irregularity(370.0) - a).abs() < 1e-9);
        spec.seed = 4;
        assert_ne!(spec.irregularity(10.0), a);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(render_target(&square(), 0.0, 16).is_err());
        let bad = TargetSpec::new(Shape::Rectangle { width: 1.2, height: 0.3 });
        assert!(render_target(&bad, 0.0, 64).is_err());
        let mut neg = square();
        neg.clutter_sigma = -1.0;
        assert!(render_target(&neg, 0.0, 64).is_err());
    }

    #[test]
    fn overlapping_splits_are_rejected() {
        let plan = SynthPlan {
            side: 32,
            classes: vec![ClassEntry { id: "a".into(), spec: square() }],
            train_angles: vec![0.0, 10.0],
            test_angles: vec![10.0],
        };
        assert!(plan.validate().is_err());
    }

    #[test]
    fn empty_plan_writes_only_a_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let plan = SynthPlan {
            side: 32,
            classes: vec![ClassEntry { id: "a".into(), spec: square() }],
            train_angles: vec![],
            test_angles: vec![],
        };
        let m = generate_dataset(&plan, dir.path()).unwrap();
        assert!(m.train.is_empty() && m.test.is_empty());
        assert_eq!(fs::read_dir(dir.path().join("images")).unwrap().count(), 0);
        let back = DatasetManifest::read(&dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(back, m);
    }
}
