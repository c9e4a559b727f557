//! Pseudo-Zernike polynomials, the sampled basis matrix and moment projection.

mod basis;
mod geometry;
mod radial;

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use basis::{build_basis, normalized_gram, project_moments, regular_moment, MomentVector, PzBasis};
pub use geometry::{build_disk_geometry, pixel_index, DiskGeometry, DiskMapping};
pub use radial::{radial_poly, RadialPoly, MAX_DEGREE};

use crate::error::Result;

/// Degree `n` and angular frequency `m` of one polynomial, `|m| <= n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PzIndex {
    pub n: usize,
    pub m: i64,
}

impl fmt::Display for PzIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{:+})", self.n, self.m)
    }
}

/// All indices up to `n_max`: degree ascending, then `m` from `-n` to `+n`.
pub fn pz_index_list(n_max: usize) -> Vec<PzIndex> {
    (0..=n_max)
        .flat_map(|n| (-(n as i64)..=n as i64).map(move |m| PzIndex { n, m }))
        .collect()
}

/// `z_n^m(r, θ) = ρ_n^m(r) e^{jmθ}`.
pub fn pz_poly(n: usize, m: i64, r: f64, theta: f64) -> Result<Complex64> {
    let rho = radial_poly(n, m, r)?;
    let a = m as f64 * theta;
    Ok(Complex64::new(rho * a.cos(), rho * a.sin()))
}
