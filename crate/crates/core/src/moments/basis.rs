use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::geometry::{pixel_index, DiskGeometry, DiskMapping};
use super::radial::{RadialPoly, MAX_DEGREE};
use super::{pz_index_list, PzIndex};
use crate::error::{Error, Result};
use crate::imaging::RealImage;
use crate::io::{read_u32, read_f64, write_u32, write_f64, expect_magic};

const BASIS_MAGIC: &[u8; 4] = b"PZB1";

/// Pseudo-Zernike basis matrix: row `i` holds `γ_n z_n^m` sampled at every
/// pixel of the geometry, with `γ_n = (n + 1) / (π N)`.
#[derive(Debug, Clone)]
pub struct PzBasis {
    n_max: usize,
    indices: Vec<PzIndex>,
    values: DMatrix<Complex64>,
    geometry: DiskGeometry,
}

/// Complex pseudo-Zernike moments, ordered like the basis rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentVector {
    pub values: Vec<Complex64>,
}

impl MomentVector {
    /// Rotation-invariant magnitudes `|a_n^m|`.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }
}

/// Radial polynomials for every `(n, |m|)` with `n <= n_max`, indexed by
/// `n (n + 1) / 2 + |m|`.
fn radial_table(n_max: usize) -> Result<Vec<RadialPoly>> {
    let mut table = Vec::with_capacity((n_max + 1) * (n_max + 2) / 2);
    for n in 0..=n_max {
        for m in 0..=n {
            table.push(RadialPoly::new(n, m as i64)?);
        }
    }
    Ok(table)
}

/// Unscaled polynomial samples `z_n^m(r_j, θ_j)` for one pixel, in index order.
fn pixel_samples(
    indices: &[PzIndex],
    radials: &[RadialPoly],
    n_max: usize,
    r: f64,
    theta: f64,
    out: &mut [Complex64],
) {
    let rho: Vec<f64> = radials.iter().map(|p| p.eval(r)).collect();
    let phase: Vec<Complex64> = (0..=n_max)
        .map(|m| {
            let a = m as f64 * theta;
            Complex64::new(a.cos(), a.sin())
        })
        .collect();
    for (slot, idx) in out.iter_mut().zip(indices) {
        let m_abs = idx.m.unsigned_abs() as usize;
        let value = phase[m_abs] * rho[idx.n * (idx.n + 1) / 2 + m_abs];
        *slot = if idx.m < 0 { value.conj() } else { value };
    }
}

fn check_degree(n_max: usize) -> Result<()> {
    if n_max > MAX_DEGREE {
        return Err(Error::DegreeCap {
            n_max,
            max: MAX_DEGREE,
        });
    }
    Ok(())
}

/// Samples `z_n^m` (unscaled) over the geometry as a `P x N` matrix. Pixels
/// outside the unit disk get zero columns.
fn sample_polynomials(n_max: usize, geometry: &DiskGeometry) -> Result<(Vec<PzIndex>, DMatrix<Complex64>)> {
    check_degree(n_max)?;
    let indices = pz_index_list(n_max);
    let radials = radial_table(n_max)?;
    let p = indices.len();
    let n = geometry.len();
    let mut flat = vec![Complex64::new(0.0, 0.0); p * n];
    flat.par_chunks_mut(p).enumerate().for_each(|(j, column)| {
        if geometry.inside(j) {
            pixel_samples(
                &indices,
                &radials,
                n_max,
                geometry.r()[j],
                geometry.theta()[j],
                column,
            );
        }
    });
    Ok((indices, DMatrix::from_vec(p, n, flat)))
}

pub fn build_basis(n_max: usize, geometry: &DiskGeometry) -> Result<PzBasis> {
    let (indices, mut values) = sample_polynomials(n_max, geometry)?;
    let big_n = geometry.len() as f64;
    for (i, idx) in indices.iter().enumerate() {
        let gamma = (idx.n as f64 + 1.0) / (PI * big_n);
        values.row_mut(i).iter_mut().for_each(|v| *v *= gamma);
    }
    Ok(PzBasis {
        n_max,
        indices,
        values,
        geometry: geometry.clone(),
    })
}

/// Gram matrix of the unscaled polynomial samples, using the geometry's pixel
/// area as quadrature weight and normalized by `sqrt(π/(n+1) · π/(n'+1))`.
/// For an exact quadrature of the unit disk this is the identity.
pub fn normalized_gram(n_max: usize, geometry: &DiskGeometry) -> Result<DMatrix<Complex64>> {
    let (indices, samples) = sample_polynomials(n_max, geometry)?;
    let mut gram = samples.conjugate() * samples.transpose();
    let area = geometry.pixel_area();
    let norm: Vec<f64> = indices
        .iter()
        .map(|idx| (PI / (idx.n as f64 + 1.0)).sqrt())
        .collect();
    for i in 0..gram.nrows() {
        for k in 0..gram.ncols() {
            gram[(i, k)] *= area / (norm[i] * norm[k]);
        }
    }
    Ok(gram)
}

impl PzBasis {
    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn side(&self) -> usize {
        self.geometry.side()
    }

    /// Number of moments `P = (n_max + 1)^2`.
    pub fn num_moments(&self) -> usize {
        self.indices.len()
    }

    /// Number of pixels `N = side^2`.
    pub fn num_pixels(&self) -> usize {
        self.values.ncols()
    }

    pub fn indices(&self) -> &[PzIndex] {
        &self.indices
    }

    pub fn values(&self) -> &DMatrix<Complex64> {
        &self.values
    }

    pub fn geometry(&self) -> &DiskGeometry {
        &self.geometry
    }

    /// Serializes in the `PZB1` layout: header, then `P * N` complex entries
    /// as little-endian `f64` pairs, row-major.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        if self.geometry.mapping() != DiskMapping::Circumscribed {
            return Err(Error::InvalidArgument(
                "only circumscribed bases can be serialized".into(),
            ));
        }
        let io = |e| Error::io("<basis>", e);
        w.write_all(BASIS_MAGIC).map_err(io)?;
        write_u32(w, self.n_max)?;
        write_u32(w, self.side())?;
        write_u32(w, self.num_moments())?;
        write_u32(w, self.num_pixels())?;
        for i in 0..self.num_moments() {
            for v in self.values.row(i).iter() {
                write_f64(w, v.re)?;
                write_f64(w, v.im)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        expect_magic(r, BASIS_MAGIC)?;
        let n_max = read_u32(r)? as usize;
        let side = read_u32(r)? as usize;
        let p = read_u32(r)? as usize;
        let n = read_u32(r)? as usize;
        check_degree(n_max)?;
        if p != (n_max + 1) * (n_max + 1) || n != side * side {
            return Err(Error::Format(format!(
                "inconsistent basis header: n_max={n_max} side={side} P={p} N={n}"
            )));
        }
        let geometry = DiskGeometry::new(side, DiskMapping::Circumscribed)?;
        let mut values = DMatrix::from_element(p, n, Complex64::new(0.0, 0.0));
        for i in 0..p {
            for j in 0..n {
                let re = read_f64(r)?;
                let im = read_f64(r)?;
                values[(i, j)] = Complex64::new(re, im);
            }
        }
        Ok(Self {
            n_max,
            indices: pz_index_list(n_max),
            values,
            geometry,
        })
    }
}

/// Projects a vectorized image onto the basis: `a = conj(Z) s`.
pub fn project_moments(basis: &PzBasis, image_vector: &[f64]) -> Result<MomentVector> {
    let n = basis.num_pixels();
    if image_vector.len() != n {
        return Err(Error::DimensionMismatch {
            what: "image vector length",
            expected: n,
            actual: image_vector.len(),
        });
    }
    if image_vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image vector"));
    }
    let mut acc = vec![Complex64::new(0.0, 0.0); basis.num_moments()];
    for (j, &s) in image_vector.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        for (a, z) in acc.iter_mut().zip(basis.values.column(j).iter()) {
            *a += z.conj() * s;
        }
    }
    Ok(MomentVector { values: acc })
}

/// Discrete regular moment `Σ x^p y^q s` over the geometry's pixel centres.
pub fn regular_moment(geometry: &DiskGeometry, image: &RealImage, p: u32, q: u32) -> Result<f64> {
    let side = geometry.side();
    if image.side() != side {
        return Err(Error::DimensionMismatch {
            what: "image side",
            expected: side,
            actual: image.side(),
        });
    }
    let mut sum = 0.0;
    for row in 0..side {
        for col in 0..side {
            let j = pixel_index(side, row, col);
            let s = image.get(row, col);
            if s != 0.0 {
                sum += geometry.x()[j].powi(p as i32) * geometry.y()[j].powi(q as i32) * s;
            }
        }
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{rotate_quarter_turns, vectorize};
    use crate::moments::build_disk_geometry;

    #[test]
    fn shape_and_constant_row() {
        let g = build_disk_geometry(16).unwrap();
        let b = build_basis(4, &g).unwrap();
        assert_eq!(b.num_moments(), 25);
        assert_eq!(b.num_pixels(), 256);
        let gamma0 = 1.0 / (PI * 256.0);
        for v in b.values().row(0).iter() {
            assert!((v.re - gamma0).abs() < 1e-18);
            assert_eq!(v.im, 0.0);
        }
    }

    #[test]
    fn degree_cap() {
        let g = build_disk_geometry(4).unwrap();
        assert!(matches!(
            build_basis(26, &g),
            Err(Error::DegreeCap { n_max: 26, max: 25 })
        ));
        assert!(build_basis(25, &g).is_ok());
    }

    #[test]
    fn conjugate_rows() {
        let g = build_disk_geometry(8).unwrap();
        let b = build_basis(3, &g).unwrap();
        let pos = |n: usize, m: i64| b.indices().iter().position(|i| i.n == n && i.m == m).unwrap();
        for (n, m) in [(1, 1), (2, 1), (3, 2), (3, 3)] {
            let (a, c) = (pos(n, m), pos(n, -m));
            for j in 0..b.num_pixels() {
                let d = b.values()[(a, j)] - b.values()[(c, j)].conj();
                assert!(d.norm() < 1e-15);
            }
        }
    }

    #[test]
    fn zero_and_constant_images() {
        let g = build_disk_geometry(24).unwrap();
        let b = build_basis(6, &g).unwrap();
        let zero = project_moments(&b, &vec![0.0; 576]).unwrap();
        assert!(zero.values.iter().all(|v| v.norm() == 0.0));
        let constant = project_moments(&b, &vec![1.0; 576]).unwrap();
        let dominant = constant.values[0].norm();
        for (idx, v) in b.indices().iter().zip(&constant.values) {
            if idx.m != 0 && idx.m % 4 != 0 {
                assert!(v.norm() <= 1e-10 * dominant, "{idx:?}: {}", v.norm());
            }
        }
    }

    #[test]
    fn quarter_turn_keeps_magnitudes() {
        let side = 20;
        let g = build_disk_geometry(side).unwrap();
        let b = build_basis(8, &g).unwrap();
        let pixels: Vec<f64> = (0..side * side).map(|i| ((i * 37) % 101) as f64 / 7.0).collect();
        let img = RealImage::new(side, pixels).unwrap();
        let base = project_moments(&b, &vectorize(&img, false).unwrap().values).unwrap().magnitudes();
        for k in 1..4 {
            let rot = rotate_quarter_turns(&img, k);
            let m = project_moments(&b, &vectorize(&rot, false).unwrap().values).unwrap().magnitudes();
            for (a, c) in base.iter().zip(&m) {
                assert!((a - c).abs() <= 1e-9 * a.max(1e-300));
            }
        }
    }

    #[test]
    fn length_mismatch() {
        let g = build_disk_geometry(4).unwrap();
        let b = build_basis(2, &g).unwrap();
        assert!(matches!(
            project_moments(&b, &[1.0; 15]),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut bad = vec![0.0; 16];
        bad[3] = f64::NAN;
        assert!(matches!(project_moments(&b, &bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn regular_moments() {
        let side = 6;
        let g = build_disk_geometry(side).unwrap();
        let mut px = vec![0.0; 36];
        px[2 * side + 4] = 1.0; // row 2, col 4
        let img = RealImage::new(side, px).unwrap();
        let j = pixel_index(side, 2, 4);
        let (x0, y0) = (g.x()[j], g.y()[j]);
        assert_eq!(regular_moment(&g, &img, 0, 0).unwrap(), 1.0);
        assert!((regular_moment(&g, &img, 2, 3).unwrap() - x0.powi(2) * y0.powi(3)).abs() < 1e-15);

        let sym = RealImage::new(side, vec![2.5; 36]).unwrap();
        assert_eq!(regular_moment(&g, &sym, 0, 0).unwrap(), 90.0);
        assert!(regular_moment(&g, &sym, 1, 0).unwrap().abs() < 1e-12);
        assert!(regular_moment(&g, &sym, 0, 1).unwrap().abs() < 1e-12);
    }

    #[test]
    fn inscribed_grid_is_nearly_orthogonal() {
        let g = DiskGeometry::new(96, DiskMapping::Inscribed).unwrap();
        let gram = normalized_gram(10, &g).unwrap();
        for i in 0..gram.nrows() {
            for k in 0..gram.ncols() {
                let v = gram[(i, k)];
                if i == k {
                    assert!((0.9..=1.1).contains(&v.re), "diag {i}: {v}");
                } else {
                    assert!(v.norm() <= 0.05, "({i},{k}): {v}");
                }
            }
        }
    }
}
