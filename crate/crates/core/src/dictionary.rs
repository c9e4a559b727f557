//! Per-class sub-dictionaries of pseudo-Zernike magnitude features, the
//! three auxiliary-atom generators and the assembled over-complete
//! dictionary.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::ImageVector;
use crate::io::{expect_magic, read_bytes, read_f64, read_u32, read_u8, write_bytes, write_f64, write_u32};
use crate::moments::{project_moments, PzBasis};

const DICT_MAGIC: &[u8; 4] = b"PZD1";

/// Auxiliary-atom policy applied to every class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AuxScheme {
    None,
    /// One atom per class: the normalized sum of all class atoms.
    Fix,
    /// One atom per column: normalized sum over a window of `window` columns
    /// centred on it (`⌊window/2⌋` either side). `circular` wraps around the
    /// class instead of zero-padding.
    Mov { window: usize, circular: bool },
    /// One atom per column: normalized sum of the columns whose inner product
    /// with it exceeds `upsilon`.
    Corr { upsilon: f64 },
}

impl fmt::Display for AuxScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AuxScheme::None => write!(f, "none"),
            AuxScheme::Fix => write!(f, "fix"),
            AuxScheme::Mov { window, circular: false } => write!(f, "mov(W={window})"),
            AuxScheme::Mov { window, circular: true } => write!(f, "mov(W={window},circular)"),
            AuxScheme::Corr { upsilon } => write!(f, "corr(Υ={upsilon})"),
        }
    }
}

/// Unit-norm magnitude features of one class's training measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassSubdict {
    pub class_id: String,
    pub atoms: DMatrix<f64>,
    /// Aspect angle of each column in degrees, when known.
    pub angles: Option<Vec<f64>>,
}

fn unit_column(mut v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("dictionary atom"));
    }
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::Degenerate(format!("{what} has zero norm")));
    }
    v /= norm;
    Ok(v)
}

impl ClassSubdict {
    /// Builds a sub-dictionary from raw feature columns, normalizing each.
    pub fn from_features(
        class_id: impl Into<String>,
        features: &[Vec<f64>],
        angles: Option<Vec<f64>>,
    ) -> Result<Self> {
        let class_id = class_id.into();
        let Some(first) = features.first() else {
            return Err(Error::InvalidArgument(format!(
                "class `{class_id}` has no training measurements"
            )));
        };
        let p = first.len();
        if let Some(a) = &angles {
            if a.len() != features.len() {
                return Err(Error::DimensionMismatch {
                    what: "angle count",
                    expected: features.len(),
                    actual: a.len(),
                });
            }
        }
        let mut cols = Vec::with_capacity(features.len());
        for (j, f) in features.iter().enumerate() {
            if f.len() != p {
                return Err(Error::DimensionMismatch {
                    what: "feature length",
                    expected: p,
                    actual: f.len(),
                });
            }
            let what = format!("measurement {j} of class `{class_id}`");
            cols.push(unit_column(DVector::from_column_slice(f), &what)?);
        }
        Ok(Self {
            class_id,
            atoms: DMatrix::from_columns(&cols),
            angles,
        })
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn num_moments(&self) -> usize {
        self.atoms.nrows()
    }
}

/// Column `j` is `|project_moments(basis, g_j)|` scaled to unit ℓ2 norm.
pub fn build_subdict(
    basis: &PzBasis,
    measurements: &[ImageVector],
    class_id: &str,
    angles: Option<Vec<f64>>,
) -> Result<ClassSubdict> {
    let features = measurements
        .iter()
        .map(|g| project_moments(basis, &g.values).map(|m| m.magnitudes()))
        .collect::<Result<Vec<_>>>()?;
    ClassSubdict::from_features(class_id, &features, angles)
}

fn normalize_columns(mut m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::Degenerate("auxiliary atom has zero norm".into()));
        }
        col /= norm;
    }
    Ok(m)
}

pub fn aux_fix(subdict: &ClassSubdict) -> Result<DMatrix<f64>> {
    let sum = subdict.atoms.column_sum();
    normalize_columns(DMatrix::from_column_slice(sum.len(), 1, sum.as_slice()))
}

pub fn aux_mov(subdict: &ClassSubdict, window: usize, circular: bool) -> Result<DMatrix<f64>> {
    if window == 0 {
        return Err(Error::InvalidArgument("moving-average window must be at least 1".into()));
    }
    let Some(angles) = &subdict.angles else {
        return Err(Error::InvalidArgument(format!(
            "class `{}` has no aspect angles; moving-average atoms need angle-ordered columns",
            subdict.class_id
        )));
    };
    if angles.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidArgument(format!(
            "class `{}` columns are not ordered by increasing aspect angle",
            subdict.class_id
        )));
    }
    let j_k = subdict.num_atoms() as i64;
    let half = (window / 2) as i64;
    let mut out = DMatrix::zeros(subdict.num_moments(), j_k as usize);
    for j in 0..j_k {
        let mut acc = out.column_mut(j as usize);
        if circular && 2 * half + 1 >= j_k {
            // The window covers the whole ring; count each column once.
            acc += subdict.atoms.column_sum();
            continue;
        }
        for w in -half..=half {
            let l = j + w;
            let l = if circular {
                l.rem_euclid(j_k)
            } else if (0..j_k).contains(&l) {
                l
            } else {
                continue;
            };
            acc += subdict.atoms.column(l as usize);
        }
    }
    normalize_columns(out)
}

pub fn aux_corr(subdict: &ClassSubdict, upsilon: f64) -> Result<DMatrix<f64>> {
    if !(upsilon > 0.0 && upsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "correlation threshold must lie in (0, 1), got {upsilon}"
        )));
    }
    let gram = subdict.atoms.transpose() * &subdict.atoms;
    let mut out = DMatrix::zeros(subdict.num_moments(), subdict.num_atoms());
    for j in 0..subdict.num_atoms() {
        let mut acc = out.column_mut(j);
        for l in 0..subdict.num_atoms() {
            // The self term always qualifies.
            if l == j || gram[(j, l)] > upsilon {
                acc += subdict.atoms.column(l);
            }
        }
    }
    normalize_columns(out)
}

/// Auxiliary atoms for one class under `scheme` (`P x L_k`).
pub fn aux_atoms(subdict: &ClassSubdict, scheme: AuxScheme) -> Result<DMatrix<f64>> {
    match scheme {
        AuxScheme::None => Ok(DMatrix::zeros(subdict.num_moments(), 0)),
        AuxScheme::Fix => aux_fix(subdict),
        AuxScheme::Mov { window, circular } => aux_mov(subdict, window, circular),
        AuxScheme::Corr { upsilon } => aux_corr(subdict, upsilon),
    }
}

/// Column ranges owned by one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassBlock {
    pub class_id: String,
    pub primary: Range<usize>,
    pub auxiliary: Range<usize>,
}

impl ClassBlock {
    pub fn columns(&self) -> Range<usize> {
        self.primary.start..self.auxiliary.end
    }

    pub fn num_primary(&self) -> usize {
        self.primary.len()
    }

    pub fn num_auxiliary(&self) -> usize {
        self.auxiliary.len()
    }
}

/// Over-complete dictionary `[[A¹, f(A¹)], [A², f(A²)], ...]` with unit
/// columns, plus its cached spectral norm.
#[derive(Debug, Clone)]
pub struct Dictionary {
    classes: Vec<ClassBlock>,
    matrix: DMatrix<f64>,
    scheme: AuxScheme,
    spectral_norm: f64,
    gram: DMatrix<f64>,
}

/// Largest singular value, from the eigenvalues of the smaller Gram matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = if m.nrows() <= m.ncols() {
        m * m.transpose()
    } else {
        m.transpose() * m
    };
    let eig = SymmetricEigen::new(gram);
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).sqrt()
}

pub fn assemble(subdicts: &[ClassSubdict], scheme: AuxScheme) -> Result<Dictionary> {
    let Some(first) = subdicts.first() else {
        return Err(Error::InvalidArgument("dictionary needs at least one class".into()));
    };
    let p = first.num_moments();
    let mut blocks = Vec::with_capacity(subdicts.len());
    let mut columns: Vec<DVector<f64>> = Vec::new();
    for sub in subdicts {
        if sub.num_moments() != p {
            return Err(Error::DimensionMismatch {
                what: "moments per atom",
                expected: p,
                actual: sub.num_moments(),
            });
        }
        if blocks.iter().any(|b: &ClassBlock| b.class_id == sub.class_id) {
            return Err(Error::InvalidArgument(format!(
                "duplicate class `{}`",
                sub.class_id
            )));
        }
        let aux = aux_atoms(sub, scheme)?;
        let start = columns.len();
        columns.extend(sub.atoms.column_iter().map(|c| c.into_owned()));
        let mid = columns.len();
        columns.extend(aux.column_iter().map(|c| c.into_owned()));
        blocks.push(ClassBlock {
            class_id: sub.class_id.clone(),
            primary: start..mid,
            auxiliary: mid..columns.len(),
        });
    }
    Dictionary::from_parts(blocks, DMatrix::from_columns(&columns), scheme)
}

impl Dictionary {
    fn from_parts(classes: Vec<ClassBlock>, matrix: DMatrix<f64>, scheme: AuxScheme) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary"));
        }
        let spectral_norm = spectral_norm(&matrix);
        let gram = matrix.tr_mul(&matrix);
        Ok(Self {
            classes,
            matrix,
            scheme,
            spectral_norm,
            gram,
        })
    }

    /// Wraps an arbitrary matrix as a single-class dictionary (columns are
    /// used as given). Handy for synthetic sparse-recovery experiments.
    pub fn from_matrix(class_id: &str, matrix: DMatrix<f64>) -> Result<Self> {
        let q = matrix.ncols();
        let blocks = vec![ClassBlock {
            class_id: class_id.to_string(),
            primary: 0..q,
            auxiliary: q..q,
        }];
        Self::from_parts(blocks, matrix, AuxScheme::None)
    }

    pub fn classes(&self) -> &[ClassBlock] {
        &self.classes
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn scheme(&self) -> AuxScheme {
        self.scheme
    }

    /// Cached `ΦᵀΦ`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Cached largest singular value of the matrix.
    pub fn spectral_norm(&self) -> f64 {
        self.spectral_norm
    }

    pub fn num_moments(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_atoms(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn class_index(&self, class_id: &str) -> Option<usize> {
        self.classes.iter().position(|b| b.class_id == class_id)
    }

    /// Primary (training) atoms of one class as a sub-dictionary.
    pub fn primary_subdict(&self, class_id: &str) -> Result<ClassSubdict> {
        let idx = self
            .class_index(class_id)
            .ok_or_else(|| Error::UnknownClass(class_id.to_string()))?;
        let block = &self.classes[idx];
        Ok(ClassSubdict {
            class_id: class_id.to_string(),
            atoms: self.matrix.columns(block.primary.start, block.primary.len()).into_owned(),
            angles: None,
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_bytes(w, DICT_MAGIC)?;
        write_u32(w, self.classes.len())?;
        for block in &self.classes {
            write_u32(w, block.class_id.len())?;
            write_bytes(w, block.class_id.as_bytes())?;
            write_u32(w, block.num_primary())?;
            write_u32(w, block.num_auxiliary())?;
        }
        write_u32(w, self.num_moments())?;
        write_u32(w, self.num_atoms())?;
        for v in self.matrix.as_slice() {
            write_f64(w, *v)?;
        }
        match self.scheme {
            AuxScheme::None => write_bytes(w, &[0]),
            AuxScheme::Fix => write_bytes(w, &[1]),
            AuxScheme::Mov { window, circular } => {
                write_bytes(w, &[if circular { 4 } else { 2 }])?;
                write_u32(w, window)
            }
            AuxScheme::Corr { upsilon } => {
                write_bytes(w, &[3])?;
                write_f64(w, upsilon)
            }
        }
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, DICT_MAGIC)?;
        let k = read_u32(r)? as usize;
        let mut blocks = Vec::with_capacity(k);
        let mut offset = 0;
        for _ in 0..k {
            let len = read_u32(r)? as usize;
            let class_id = String::from_utf8(read_bytes(r, len)?)
                .map_err(|_| Error::Format("class id is not valid UTF-8".into()))?;
            let j_k = read_u32(r)? as usize;
            let l_k = read_u32(r)? as usize;
            blocks.push(ClassBlock {
                class_id,
                primary: offset..offset + j_k,
                auxiliary: offset + j_k..offset + j_k + l_k,
            });
            offset += j_k + l_k;
        }
        let p = read_u32(r)? as usize;
        let q = read_u32(r)? as usize;
        if q != offset {
            return Err(Error::Format(format!(
                "dictionary declares Q={q} but class blocks sum to {offset}"
            )));
        }
        let data = (0..p * q).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
        let matrix = DMatrix::from_vec(p, q, data);
        let scheme = match read_u8(r)? {
            0 => AuxScheme::None,
            1 => AuxScheme::Fix,
            2 => AuxScheme::Mov { window: read_u32(r)? as usize, circular: false },
            4 => AuxScheme::Mov { window: read_u32(r)? as usize, circular: true },
            3 => AuxScheme::Corr { upsilon: read_f64(r)? },
            t => return Err(Error::Format(format!("unknown auxiliary scheme tag {t}"))),
        };
        Self::from_parts(blocks, matrix, scheme)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis_vec(p: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; p];
        v[i] = 1.0;
        v
    }

    fn subdict(cols: &[Vec<f64>]) -> ClassSubdict {
        let angles = (0..cols.len()).map(|j| j as f64).collect();
        ClassSubdict::from_features("c", cols, Some(angles)).unwrap()
    }

    fn assert_col(m: &DMatrix<f64>, j: usize, expect: &[f64]) {
        for (a, b) in m.column(j).iter().zip(expect) {
            assert!((a - b).abs() < 1e-12, "{:?} vs {expect:?}", m.column(j));
        }
    }

    #[test]
    fn fix_of_orthogonal_pair() {
        let s = subdict(&[basis_vec(3, 0), basis_vec(3, 1)]);
        let a = aux_fix(&s).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_eq!(a.ncols(), 1);
        assert_col(&a, 0, &[h, h, 0.0]);
        let single = subdict(&[vec![3.0, 4.0]]);
        assert_col(&aux_fix(&single).unwrap(), 0, &[0.6, 0.8]);
        let same = subdict(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_col(&aux_fix(&same).unwrap(), 0, same.atoms.column(0).as_slice());
    }

    #[test]
    fn moving_window() {
        let s = subdict(&[basis_vec(3, 0), basis_vec(3, 1), basis_vec(3, 2)]);
        let m = aux_mov(&s, 2, false).unwrap();
        let t = 1.0 / 3f64.sqrt();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_col(&m, 1, &[t, t, t]);
        assert_col(&m, 0, &[h, h, 0.0]);
        assert_col(&m, 2, &[0.0, h, h]);
        // An odd window uses the floor of half its width.
        assert_eq!(aux_mov(&s, 3, false).unwrap(), m);
        let wrapped = aux_mov(&s, 2, true).unwrap();
        assert_col(&wrapped, 0, &[t, t, t]);
    }

    #[test]
    fn wide_window_equals_fix() {
        let cols: Vec<Vec<f64>> = (0..7).map(|j| vec![1.0 + j as f64, 2.0, (j * j) as f64]).collect();
        let s = subdict(&cols);
        let fix = aux_fix(&s).unwrap();
        for circular in [false, true] {
            let m = aux_mov(&s, 14, circular).unwrap();
            for j in 0..7 {
                assert_col(&m, j, fix.column(0).as_slice());
            }
        }
    }

    #[test]
    fn moving_window_needs_ordered_angles() {
        let mut s = subdict(&[basis_vec(2, 0), basis_vec(2, 1)]);
        s.angles = Some(vec![10.0, 5.0]);
        assert!(aux_mov(&s, 2, false).is_err());
        s.angles = None;
        assert!(aux_mov(&s, 2, false).is_err());
        s.angles = Some(vec![0.0, 5.0]);
        assert!(aux_mov(&s, 0, false).is_err());
    }

    #[test]
    fn correlation_neighbourhoods() {
        let s = subdict(&[basis_vec(3, 0), basis_vec(3, 1), basis_vec(3, 2)]);
        assert_eq!(aux_corr(&s, 0.5).unwrap(), s.atoms);
        assert!(aux_corr(&s, 1.0).is_err());
        assert!(aux_corr(&s, 0.0).is_err());

        // Three unit columns with pairwise correlations c01=0.95, c02=0.90, c12=0.80.
        let (c01, c02, c12) = (0.95f64, 0.90f64, 0.80f64);
        let a0 = vec![1.0, 0.0, 0.0];
        let a1 = vec![c01, (1.0 - c01 * c01).sqrt(), 0.0];
        let y = (c12 - c02 * c01) / (1.0 - c01 * c01).sqrt();
        let a2 = vec![c02, y, (1.0 - c02 * c02 - y * y).sqrt()];
        let s = subdict(&[a0.clone(), a1.clone(), a2.clone()]);
        let g = s.atoms.transpose() * &s.atoms;
        assert!((g[(0, 1)] - c01).abs() < 1e-12);
        assert!((g[(0, 2)] - c02).abs() < 1e-12);
        assert!((g[(1, 2)] - c12).abs() < 1e-12);
        let m = aux_corr(&s, 0.94).unwrap();
        let sum: Vec<f64> = (0..3).map(|i| a0[i] + a1[i]).collect();
        let n = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_col(&m, 0, &sum.iter().map(|v| v / n).collect::<Vec<_>>());
        assert_col(&m, 2, &a2);
    }

    #[test]
    fn assemble_counts_and_ranges() {
        let mk = |id: &str, j: usize| {
            let cols: Vec<Vec<f64>> = (0..j).map(|c| vec![1.0, c as f64, 2.0]).collect();
            ClassSubdict::from_features(id, &cols, Some((0..j).map(|c| c as f64).collect())).unwrap()
        };
        let subs = vec![mk("a", 4), mk("b", 3), mk("c", 5)];
        let none = assemble(&subs, AuxScheme::None).unwrap();
        assert_eq!(none.num_atoms(), 12);
        let fix = assemble(&subs, AuxScheme::Fix).unwrap();
        assert_eq!(fix.num_atoms(), 15);
        let mov = assemble(&subs, AuxScheme::Mov { window: 2, circular: false }).unwrap();
        assert_eq!(mov.num_atoms(), 24);
        assert_eq!(mov.classes()[1].primary, 8..11);
        assert_eq!(mov.classes()[1].auxiliary, 11..14);
        let mut next = 0;
        for b in mov.classes() {
            assert_eq!(b.columns().start, next);
            next = b.columns().end;
        }
        assert_eq!(next, 24);
        for col in mov.matrix().column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }

        let bad = ClassSubdict::from_features("d", &[vec![1.0, 2.0]], None).unwrap();
        assert!(matches!(
            assemble(&[subs[0].clone(), bad], AuxScheme::None),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn degenerate_measurement() {
        assert!(matches!(
            ClassSubdict::from_features("z", &[vec![0.0, 0.0]], None),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn spectral_norm_of_known_matrix() {
        let m = DMatrix::from_row_slice(2, 3, &[3.0, 0.0, 0.0, 0.0, 4.0, 0.0]);
        assert!((spectral_norm(&m) - 4.0).abs() < 1e-12);
        assert!((spectral_norm(&m.transpose()) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn file_roundtrip_is_bit_exact() {
        let subs: Vec<ClassSubdict> = ["x", "yy"]
            .iter()
            .map(|id| {
                let cols: Vec<Vec<f64>> = (0..5).map(|c| vec![0.1 * c as f64 + 0.3, 1.0 / 3.0, 2.0]).collect();
                ClassSubdict::from_features(*id, &cols, Some((0..5).map(|c| c as f64).collect())).unwrap()
            })
            .collect();
        for scheme in [
            AuxScheme::None,
            AuxScheme::Fix,
            AuxScheme::Mov { window: 3, circular: false },
            AuxScheme::Mov { window: 2, circular: true },
            AuxScheme::Corr { upsilon: 0.95 },
        ] {
            let d = assemble(&subs, scheme).unwrap();
            let mut buf = Vec::new();
            d.write_to(&mut buf).unwrap();
            let back = Dictionary::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(back.classes(), d.classes());
            assert_eq!(back.scheme(), scheme);
            let same = back
                .matrix()
                .iter()
                .zip(d.matrix().iter())
                .all(|(a, b)| a.to_bits() == b.to_bits());
            assert!(same);
        }
    }
}
