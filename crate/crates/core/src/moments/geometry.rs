use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the square pixel grid is placed relative to the unit disk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiskMapping {
    /// The whole square sits inside the unit disk (corners touch the rim).
    #[default]
    Circumscribed,
    /// The unit disk is inscribed in the square; pixels whose centre falls
    /// outside the disk carry no basis weight.
    Inscribed,
}

/// Polar coordinates of every pixel centre, in vectorization order
/// (column-major: index `v * side + u` for row `u`, column `v`).
#[derive(Debug, Clone)]
pub struct DiskGeometry {
    side: usize,
    mapping: DiskMapping,
    x: Vec<f64>,
    y: Vec<f64>,
    r: Vec<f64>,
    theta: Vec<f64>,
}

/// Column-major position of pixel `(row, col)`.
#[inline]
pub fn pixel_index(side: usize, row: usize, col: usize) -> usize {
    col * side + row
}

/// Circumscribed geometry: pixel `(u, v)` maps to
/// `x = (2v - side + 1) / (side √2)`, `y = (side - 1 - 2u) / (side √2)`.
pub fn build_disk_geometry(side: usize) -> Result<DiskGeometry> {
    DiskGeometry::new(side, DiskMapping::Circumscribed)
}

impl DiskGeometry {
    pub fn new(side: usize, mapping: DiskMapping) -> Result<Self> {
        if side < 2 {
            return Err(Error::InvalidArgument(format!(
                "image side must be at least 2, got {side}"
            )));
        }
        let scale = match mapping {
            DiskMapping::Circumscribed => side as f64 * SQRT_2,
            DiskMapping::Inscribed => side as f64,
        };
        let n = side * side;
        let (mut x, mut y) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for col in 0..side {
            for row in 0..side {
                // Integer numerators keep the 90-degree symmetry exact.
                x.push((2 * col as i64 - side as i64 + 1) as f64 / scale);
                y.push((side as i64 - 1 - 2 * row as i64) as f64 / scale);
            }
        }
        let r = x.iter().zip(&y).map(|(a, b)| a.hypot(*b)).collect();
        let theta = x.iter().zip(&y).map(|(a, b)| b.atan2(*a)).collect();
        Ok(Self {
            side,
            mapping,
            x,
            y,
            r,
            theta,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn len(&self) -> usize {
        self.side * self.side
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn mapping(&self) -> DiskMapping {
        self.mapping
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Area of one pixel in disk units.
    pub fn pixel_area(&self) -> f64 {
        let pitch = match self.mapping {
            DiskMapping::Circumscribed => SQRT_2 / self.side as f64,
            DiskMapping::Inscribed => 2.0 / self.side as f64,
        };
        pitch * pitch
    }

    /// Whether pixel `j` lies inside the unit disk.
    pub fn inside(&self, j: usize) -> bool {
        self.r[j] <= 1.0
    }

    /// Converts disk coordinates back to fractional `(row, col)` pixel indices.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let scale = match self.mapping {
            DiskMapping::Circumscribed => self.side as f64 * SQRT_2,
            DiskMapping::Inscribed => self.side as f64,
        };
        let s = self.side as f64;
        let col = (x * scale + s - 1.0) / 2.0;
        let row = (s - 1.0 - y * scale) / 2.0;
        (row, col)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn two_by_two_corner() {
        let g = build_disk_geometry(2).unwrap();
        let j = pixel_index(2, 0, 0);
        assert!((g.x()[j] + 1.0 / (2.0 * SQRT_2)).abs() < 1e-15);
        assert!((g.y()[j] - 1.0 / (2.0 * SQRT_2)).abs() < 1e-15);
        assert!((g.r()[j] - 0.5).abs() < 1e-15);
        assert!((g.theta()[j] - 3.0 * PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn radius_stays_below_one() {
        for side in [2, 3, 17, 64, 96] {
            let g = build_disk_geometry(side).unwrap();
            let max = g.r().iter().cloned().fold(0.0, f64::max);
            assert!(max < 1.0);
            assert!((0..g.len()).all(|j| g.inside(j)));
        }
    }

    #[test]
    fn even_sides_avoid_origin() {
        for side in [2, 4, 10, 96] {
            let g = build_disk_geometry(side).unwrap();
            assert!(g.r().iter().all(|&r| r > 0.0));
        }
        let g = build_disk_geometry(5).unwrap();
        let centre = pixel_index(5, 2, 2);
        assert_eq!(g.r()[centre], 0.0);
        assert_eq!(g.theta()[centre], 0.0);
    }

    #[test]
    fn quarter_turn_permutes_coordinates() {
        let side = 7;
        let g = build_disk_geometry(side).unwrap();
        // Counter-clockwise: pixel (u, v) lands on (side-1-v, u).
        for u in 0..side {
            for v in 0..side {
                let a = pixel_index(side, u, v);
                let b = pixel_index(side, side - 1 - v, u);
                assert_eq!(g.r()[a], g.r()[b]);
                assert_eq!(g.x()[b], -g.y()[a]);
                assert_eq!(g.y()[b], g.x()[a]);
                if g.r()[a] > 0.0 {
                    let d = (g.theta()[b] - g.theta()[a] - PI / 2.0).rem_euclid(2.0 * PI);
                    assert!(d < 1e-12 || 2.0 * PI - d < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pixel_roundtrip() {
        for mapping in [DiskMapping::Circumscribed, DiskMapping::Inscribed] {
            let g = DiskGeometry::new(9, mapping).unwrap();
            for u in 0..9 {
                for v in 0..9 {
                    let j = pixel_index(9, u, v);
                    let (row, col) = g.to_pixel(g.x()[j], g.y()[j]);
                    assert!((row - u as f64).abs() < 1e-12);
                    assert!((col - v as f64).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_tiny_grid() {
        assert!(build_disk_geometry(1).is_err());
    }
}
