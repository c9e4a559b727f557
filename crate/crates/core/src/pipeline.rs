//! End-to-end composition: image loading, feature extraction, dictionary
//! construction and batch classification driven by one [`RunConfig`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{classify, evaluate, ClassDecision, EvalReport};
use crate::dictionary::{assemble, AuxScheme, ClassSubdict, Dictionary};
use crate::error::{Error, Result};
use crate::imaging::{fuse_complex, normalize_scale_translation, vectorize, ComplexImage, ImageVector, RealImage};
use crate::moments::{build_basis, build_disk_geometry, project_moments, regular_moment, PzBasis};
use crate::sparse::{iht_encode, IhtConfig};
use crate::synth::{DatasetManifest, ManifestItem};

/// Fraction of the reference image's mass used as the default ξ.
pub const DEFAULT_XI_FRACTION: f64 = 0.25;

/// Candidate thresholds tried when the correlation threshold is tuned.
pub const UPSILON_GRID: [f64; 9] = [0.90, 0.91, 0.92, 0.93, 0.94, 0.95, 0.96, 0.97, 0.98];

fn default_true() -> bool {
    true
}

/// Every knob of a run. Serialized next to each output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub n_max: usize,
    /// Image side; taken from the manifest when absent.
    pub side: Option<usize>,
    #[serde(default = "default_true")]
    pub fusion: bool,
    /// Apply centroid/scale normalization before projection.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Target mass ξ; defaults to a quarter of the first training image's mass.
    pub xi: Option<f64>,
    pub aux: AuxKind,
    pub window: Option<usize>,
    #[serde(default)]
    pub circular: bool,
    /// Correlation threshold; tuned on the training split when absent.
    pub upsilon: Option<f64>,
    pub iht: IhtConfig,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxKind {
    #[default]
    None,
    Fix,
    Mov,
    Corr,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n_max: 10,
            side: None,
            fusion: true,
            normalize: true,
            xi: None,
            aux: AuxKind::None,
            window: None,
            circular: false,
            upsilon: None,
            iht: IhtConfig::default(),
            seed: 0,
            workers: 0,
        }
    }
}

pub const RUN_CONFIG_FILE: &str = "run_config.json";

impl RunConfig {
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

    pub fn validate(&self) -> Result<()> {
        crate::moments::RadialPoly::new(self.n_max, 0)?;
        self.iht.validate()?;
        if let Some(xi) = self.xi {
            if !(xi > 0.0 && xi.is_finite()) {
                return Err(Error::InvalidArgument(format!("xi must be positive, got {xi}")));
            }
        }
        if let Some(u) = self.upsilon {
            if !(u > 0.0 && u < 1.0) {
                return Err(Error::InvalidArgument(format!("upsilon must lie in (0, 1), got {u}")));
            }
        }
        if self.aux == AuxKind::Mov && self.window == Some(0) {
            return Err(Error::InvalidArgument("window must be at least 1".into()));
        }
        Ok(())
    }

    /// Runs `f` on a pool with the configured number of workers.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// Reads a measurement: `.pgm` and `.pzi` files are real intensities (zero
/// phase); anything else is expected in the complex `PZC1` layout.
pub fn load_image(path: &Path) -> Result<ComplexImage> {
    let real = |img: RealImage| {
        let px = img.pixels().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        ComplexImage::new(img.side(), px)
    };
    match path.extension().and_then(|e| e.to_str()) {
        Some("pgm") => real(RealImage::read_pgm(path)?),
        Some("pzi") => real(RealImage::read_raw(path)?),
        _ => ComplexImage::read_raw(path),
    }
}

/// Turns complex measurements into unit-norm magnitude moment vectors.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    basis: PzBasis,
    fusion: bool,
    normalize: bool,
    xi: f64,
}

impl FeatureExtractor {
    pub fn new(basis: PzBasis, fusion: bool, normalize: bool, xi: f64) -> Self {
        Self {
            basis,
            fusion,
            normalize,
            xi,
        }
    }

    pub fn basis(&self) -> &PzBasis {
        &self.basis
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Fused image (or magnitude when fusion is off).
    pub fn real_image(fusion: bool, image: &ComplexImage) -> Result<RealImage> {
        if fusion {
            fuse_complex(image)
        } else {
            Ok(image.magnitude())
        }
    }

    /// Fusion, normalization and unit vectorization.
    pub fn image_vector(&self, image: &ComplexImage) -> Result<ImageVector> {
        if image.side() != self.basis.side() {
            return Err(Error::DimensionMismatch {
                what: "image side",
                expected: self.basis.side(),
                actual: image.side(),
            });
        }
        let real = Self::real_image(self.fusion, image)?;
        let real = if self.normalize {
            normalize_scale_translation(self.basis.geometry(), &real, self.xi)?
        } else {
            real
        };
        vectorize(&real, true)
    }

    pub fn features(&self, image: &ComplexImage) -> Result<Vec<f64>> {
        let g = self.image_vector(image)?;
        let mut f = project_moments(&self.basis, &g.values)?.magnitudes();
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Degenerate("moment vector is zero".into()));
        }
        f.iter_mut().for_each(|v| *v /= norm);
        Ok(f)
    }
}

/// `ξ = 0.25 μ00` of the (fused) reference image.
pub fn default_xi(fusion: bool, reference: &ComplexImage) -> Result<f64> {
    let geometry = build_disk_geometry(reference.side())?;
    let real = FeatureExtractor::real_image(fusion, reference)?;
    let mass = regular_moment(&geometry, &real, 0, 0)?;
    if mass <= 0.0 {
        return Err(Error::Degenerate("reference image has zero mass".into()));
    }
    Ok(DEFAULT_XI_FRACTION * mass)
}

/// A manifest together with the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub root: PathBuf,
}

impl Dataset {
    pub fn open(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(manifest_path)?;
        let root = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { manifest, root })
    }

    pub fn path_of(&self, item: &ManifestItem) -> PathBuf {
        self.root.join(&item.path)
    }

    pub fn load(&self, item: &ManifestItem) -> Result<ComplexImage> {
        let img = load_image(&self.path_of(item))?;
        if img.side() != self.manifest.side {
            return Err(Error::DimensionMismatch {
                what: "image side in manifest",
                expected: self.manifest.side,
                actual: img.side(),
            });
        }
        Ok(img)
    }

    /// Builds the feature extractor for `config`, resolving ξ from the first
    /// training item when unset. Returns the resolved config as well.
    pub fn extractor(&self, config: &RunConfig) -> Result<(FeatureExtractor, RunConfig)> {
        config.validate()?;
        let side = config.side.unwrap_or(self.manifest.side);
        if side != self.manifest.side {
            return Err(Error::DimensionMismatch {
                what: "configured side vs manifest",
                expected: self.manifest.side,
                actual: side,
            });
        }
        let xi = match config.xi {
            Some(xi) => xi,
            None => {
                let first = self.manifest.train.first().ok_or_else(|| {
                    Error::InvalidArgument("manifest has no training items to derive xi from".into())
                })?;
                default_xi(config.fusion, &self.load(first)?)?
            }
        };
        let basis = build_basis(config.n_max, &build_disk_geometry(side)?)?;
        let mut resolved = config.clone();
        resolved.side = Some(side);
        resolved.xi = Some(xi);
        Ok((FeatureExtractor::new(basis, config.fusion, config.normalize, xi), resolved))
    }

    /// Features of every item, in item order, computed in parallel.
    pub fn features(&self, extractor: &FeatureExtractor, items: &[ManifestItem]) -> Result<Vec<Vec<f64>>> {
        items
            .par_iter()
            .map(|item| extractor.features(&self.load(item)?))
            .collect()
    }

    /// One sub-dictionary per manifest class, columns sorted by angle.
    pub fn subdicts(&self, train_features: &[Vec<f64>]) -> Result<Vec<ClassSubdict>> {
        subdicts_by_class(&self.manifest.class_ids(), &self.manifest.train, train_features)
    }
}

/// Groups `(item, feature)` pairs by class (in `class_ids` order) and sorts
/// each group by aspect angle.
pub fn subdicts_by_class(
    class_ids: &[String],
    items: &[ManifestItem],
    features: &[Vec<f64>],
) -> Result<Vec<ClassSubdict>> {
    if items.len() != features.len() {
        return Err(Error::DimensionMismatch {
            what: "feature count",
            expected: items.len(),
            actual: features.len(),
        });
    }
    if let Some(item) = items.iter().find(|i| !class_ids.contains(&i.class)) {
        return Err(Error::UnknownClass(item.class.clone()));
    }
    class_ids
        .iter()
        .map(|id| {
            let mut members: Vec<(f64, &Vec<f64>)> = items
                .iter()
                .zip(features)
                .filter(|(i, _)| &i.class == id)
                .map(|(i, f)| (i.angle, f))
                .collect();
            members.sort_by(|a, b| a.0.total_cmp(&b.0));
            let angles = members.iter().map(|m| m.0).collect();
            let cols: Vec<Vec<f64>> = members.into_iter().map(|m| m.1.clone()).collect();
            ClassSubdict::from_features(id.clone(), &cols, Some(angles))
        })
        .collect()
}

/// Resolves the auxiliary scheme of `config` against concrete sub-dictionaries.
/// A correlation scheme without a threshold is tuned with [`tune_upsilon`].
pub fn resolve_scheme(config: &RunConfig, subdicts: &[ClassSubdict]) -> Result<AuxScheme> {
    Ok(match config.aux {
        AuxKind::None => AuxScheme::None,
        AuxKind::Fix => AuxScheme::Fix,
        AuxKind::Mov => {
            let window = match config.window {
                Some(w) => w,
                None => {
                    // Half the smallest class.
                    let j = subdicts.iter().map(|s| s.num_atoms()).min().unwrap_or(2);
                    (j / 2).max(1)
                }
            };
            AuxScheme::Mov {
                window,
                circular: config.circular,
            }
        }
        AuxKind::Corr => AuxScheme::Corr {
            upsilon: match config.upsilon {
                Some(u) => u,
                None => tune_upsilon(subdicts, &config.iht, &UPSILON_GRID)?,
            },
        },
    })
}

/// Encodes and classifies every feature vector against `dict`, preserving order.
pub fn classify_all(dict: &Dictionary, features: &[Vec<f64>], iht: &IhtConfig) -> Result<Vec<ClassDecision>> {
    features
        .par_iter()
        .map(|y| classify(dict, iht_encode(dict, y, iht)?, y))
        .collect()
}

pub fn report(dict: &Dictionary, truths: &[String], decisions: &[ClassDecision]) -> Result<EvalReport> {
    let ids: Vec<String> = dict.classes().iter().map(|b| b.class_id.clone()).collect();
    let outcomes: Vec<(String, usize)> = truths
        .iter()
        .cloned()
        .zip(decisions.iter().map(|d| d.predicted))
        .collect();
    evaluate(&ids, &outcomes)
}

/// Builds, encodes, classifies and scores in one call.
pub fn run_experiment(
    subdicts: &[ClassSubdict],
    scheme: AuxScheme,
    test_features: &[Vec<f64>],
    truths: &[String],
    iht: &IhtConfig,
) -> Result<EvalReport> {
    let dict = assemble(subdicts, scheme)?;
    let decisions = classify_all(&dict, test_features, iht)?;
    report(&dict, truths, &decisions)
}

/// Picks the correlation threshold with the best held-out accuracy: every
/// fourth training column of each class is set aside and classified against
/// a dictionary built from the rest. Ties go to the smaller threshold.
pub fn tune_upsilon(subdicts: &[ClassSubdict], iht: &IhtConfig, grid: &[f64]) -> Result<f64> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    let mut fit = Vec::new();
    let mut held = Vec::new();
    let mut truths = Vec::new();
    for sub in subdicts {
        let mut cols = Vec::new();
        let mut angles = Vec::new();
        for j in 0..sub.num_atoms() {
            let col: Vec<f64> = sub.atoms.column(j).iter().cloned().collect();
            if j % 4 == 3 {
                held.push(col);
                truths.push(sub.class_id.clone());
            } else {
                cols.push(col);
                angles.push(sub.angles.as_ref().map_or(j as f64, |a| a[j]));
            }
        }
        fit.push(ClassSubdict::from_features(sub.class_id.clone(), &cols, Some(angles))?);
    }
    if held.is_empty() {
        return Ok(grid[0]);
    }
    let mut best = (f64::NEG_INFINITY, grid[0]);
    for &u in grid {
        let omega = run_experiment(&fit, AuxScheme::Corr { upsilon: u }, &held, &truths, iht)?.omega;
        if omega > best.0 {
            best = (omega, u);
        }
    }
    Ok(best.1)
}

/// Per-item decisions: `item,truth,predicted,residual_<class>...`.
pub fn write_decisions_csv<W: Write>(
    w: &mut W,
    dict: &Dictionary,
    items: &[ManifestItem],
    decisions: &[ClassDecision],
) -> std::io::Result<()> {
    write!(w, "item,angle,truth,predicted")?;
    for b in dict.classes() {
        write!(w, ",residual_{}", b.class_id)?;
    }
    writeln!(w)?;
    for (item, d) in items.iter().zip(decisions) {
        write!(w, "{},{:.6},{},{}", item.path.display(), item.angle, item.class, d.predicted_id)?;
        for r in &d.residuals {
            write!(w, ",{r:.6}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(class: &str, angle: f64) -> ManifestItem {
        ManifestItem {
            class: class.into(),
            angle,
            path: PathBuf::from(format!("{class}_{angle}.pzc")),
        }
    }

    #[test]
    fn grouping_sorts_by_angle() {
        let ids = vec!["a".to_string(), "b".to_string()];
        let items = vec![item("b", 5.0), item("a", 30.0), item("a", 10.0)];
        let feats = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let subs = subdicts_by_class(&ids, &items, &feats).unwrap();
        assert_eq!(subs[0].angles, Some(vec![10.0, 30.0]));
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((subs[0].atoms[(0, 0)] - h).abs() < 1e-15);
        assert_eq!(subs[1].num_atoms(), 1);
        let bad = vec![item("zz", 1.0)];
        assert!(subdicts_by_class(&ids, &bad, &feats[..1]).is_err());
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(RUN_CONFIG_FILE);
        let cfg = RunConfig {
            aux: AuxKind::Mov,
            window: Some(7),
            xi: Some(12.5),
            ..RunConfig::default()
        };
        cfg.write(&path).unwrap();
        assert_eq!(RunConfig::read(&path).unwrap(), cfg);
        let bad = RunConfig { n_max: 26, ..RunConfig::default() };
        assert!(bad.validate().is_err());
        let bad = RunConfig { upsilon: Some(1.5), ..RunConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn default_window_is_half_the_class() {
        let cols: Vec<Vec<f64>> = (0..10).map(|j| vec![1.0, j as f64]).collect();
        let sub = ClassSubdict::from_features("a", &cols, Some((0..10).map(|j| j as f64).collect())).unwrap();
        let cfg = RunConfig { aux: AuxKind::Mov, ..RunConfig::default() };
        assert_eq!(
            resolve_scheme(&cfg, &[sub]).unwrap(),
            AuxScheme::Mov { window: 5, circular: false }
        );
    }
}
