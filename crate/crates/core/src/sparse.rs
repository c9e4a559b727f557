//! Iterative hard thresholding and an exhaustive ℓ0 oracle for small problems.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Upper bound on the number of supports `exhaustive_l0` will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepPolicy {
    /// Gradient step of 1, the plain recursion.
    Unit,
    /// Gradient step of `1 / σ_max(Φ)²`.
    #[default]
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IhtConfig {
    pub gamma: usize,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub step: StepPolicy,
}

impl Default for IhtConfig {
    fn default() -> Self {
        Self {
            gamma: 5,
            max_iters: 300,
            residual_tol: 1e-6,
            step: StepPolicy::Spectral,
        }
    }
}

impl IhtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma == 0 {
            return Err(Error::InvalidArgument("sparsity must be at least 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if self.residual_tol.is_nan() || self.residual_tol < 0.0 || !self.residual_tol.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "residual tolerance must be a finite non-negative number, got {}",
                self.residual_tol
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    pub coefficients: DVector<f64>,
    /// Indices of the nonzero coefficients, ascending.
    pub support: Vec<usize>,
    pub iterations: usize,
    /// `‖y − Φx‖² / ‖y‖²` after each iteration (empty for oracle codes).
    pub residual_history: Vec<f64>,
}

impl SparseCode {
    fn from_coefficients(coefficients: DVector<f64>, iterations: usize, residual_history: Vec<f64>) -> Self {
        let support = coefficients
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, _)| i)
            .collect();
        Self {
            coefficients,
            support,
            iterations,
            residual_history,
        }
    }

    /// Writes the residual history as `iteration,relative_residual` rows.
    pub fn write_residual_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "iteration,relative_residual")?;
        for (i, r) in self.residual_history.iter().enumerate() {
            writeln!(w, "{},{:.6}", i + 1, r)?;
        }
        Ok(())
    }
}

/// Indices of the `gamma` largest-magnitude entries, ascending; ties go to
/// the lower index.
fn top_indices(q: &[f64], gamma: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..q.len()).collect();
    let by_magnitude = |a: &usize, b: &usize| q[*b].abs().total_cmp(&q[*a].abs()).then(a.cmp(b));
    if gamma < order.len() {
        if gamma > 0 {
            order.select_nth_unstable_by(gamma - 1, by_magnitude);
        }
        order.truncate(gamma);
    }
    order.sort_unstable();
    order
}

/// Keeps the `gamma` entries of largest magnitude and zeroes the rest.
pub fn hard_threshold(q: &[f64], gamma: usize) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    for i in top_indices(q, gamma) {
        out[i] = q[i];
    }
    out
}

fn check_signal(dict: &Dictionary, y: &[f64]) -> Result<()> {
    if y.len() != dict.num_moments() {
        return Err(Error::DimensionMismatch {
            what: "signal length",
            expected: dict.num_moments(),
            actual: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal"));
    }
    Ok(())
}

pub fn iht_encode(dict: &Dictionary, y: &[f64], cfg: &IhtConfig) -> Result<SparseCode> {
    cfg.validate()?;
    check_signal(dict, y)?;
    let phi = dict.matrix();
    let y = DVector::from_column_slice(y);
    let y_energy = y.norm_squared();
    let q = dict.num_atoms();
    let mu = match cfg.step {
        StepPolicy::Unit => 1.0,
        StepPolicy::Spectral => {
            let s = dict.spectral_norm();
            if s > 0.0 {
                1.0 / (s * s)
            } else {
                1.0
            }
        }
    };

    let mut x = DVector::zeros(q);
    let mut history = Vec::new();
    if y_energy == 0.0 {
        history.push(0.0);
        return Ok(SparseCode::from_coefficients(x, 1, history));
    }
    // With a cached Gram matrix the gradient Φᵀy − ΦᵀΦx only touches the
    // columns of the current support.
    let gram = dict.gram();
    let phi_t_y = phi.tr_mul(&y);
    let mut support: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut step = DVector::zeros(q);
    while iterations < cfg.max_iters {
        iterations += 1;
        step.copy_from(&phi_t_y);
        for &i in &support {
            step.axpy(-x[i], &gram.column(i), 1.0);
        }
        step *= mu;
        for &i in &support {
            step[i] += x[i];
        }
        let kept = top_indices(step.as_slice(), cfg.gamma);
        for &i in &support {
            x[i] = 0.0;
        }
        for &i in &kept {
            x[i] = step[i];
        }
        support = kept.into_iter().filter(|&i| x[i] != 0.0).collect();
        // ‖y − Φx‖² = ‖y‖² − 2 xᵀΦᵀy + xᵀΦᵀΦx over the support.
        let mut energy = y_energy;
        for &i in &support {
            energy -= 2.0 * x[i] * phi_t_y[i];
            for &k in &support {
                energy += x[i] * gram[(i, k)] * x[k];
            }
        }
        let rel = energy.max(0.0) / y_energy;
        if !rel.is_finite() {
            return Err(Error::NonFinite("iterative hard thresholding residual"));
        }
        history.push(rel);
        if rel <= cfg.residual_tol {
            break;
        }
    }
    Ok(SparseCode::from_coefficients(x, iterations, history))
}

fn binomial_u128(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n as u128 - i) / (i + 1);
    }
    acc
}

/// Least-squares coefficients and squared residual for a fixed support.
fn solve_support(phi: &DMatrix<f64>, y: &DVector<f64>, support: &[usize]) -> Option<(DVector<f64>, f64)> {
    let sub = phi.select_columns(support);
    let svd = sub.clone().svd(true, true);
    let coeffs = svd.solve(y, 1e-12).ok()?;
    let r = (y - sub * &coeffs).norm_squared();
    Some((coeffs, r))
}

/// Globally optimal code with at most `gamma` nonzeros, by enumeration.
pub fn exhaustive_l0(dict: &Dictionary, y: &[f64], gamma: usize) -> Result<SparseCode> {
    check_signal(dict, y)?;
    let q = dict.num_atoms();
    let gamma = gamma.min(q);
    let count = binomial_u128(q, gamma);
    if count > EXHAUSTIVE_LIMIT {
        return Err(Error::GuardExceeded {
            count,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let phi = dict.matrix();
    let yv = DVector::from_column_slice(y);
    let mut best_support: Vec<usize> = Vec::new();
    let mut best_coeffs = DVector::zeros(0);
    let mut best_r = yv.norm_squared();
    // Supports of size exactly gamma contain every smaller support, so the
    // least-squares minimum over them is the global minimum.
    if gamma > 0 {
        let mut idx: Vec<usize> = (0..gamma).collect();
        loop {
            if let Some((c, r)) = solve_support(phi, &yv, &idx) {
                if r < best_r {
                    best_r = r;
                    best_support = idx.clone();
                    best_coeffs = c;
                }
            }
            // Next combination in lexicographic order.
            let mut i = gamma;
            while i > 0 && idx[i - 1] == q - gamma + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..gamma {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    let mut x = DVector::zeros(q);
    for (k, &i) in best_support.iter().enumerate() {
        x[i] = best_coeffs[k];
    }
    Ok(SparseCode::from_coefficients(x, 0, Vec::new()))
}

/// `‖y − Φx‖²` for an arbitrary code.
pub fn residual_energy(dict: &Dictionary, y: &[f64], code: &SparseCode) -> Result<f64> {
    check_signal(dict, y)?;
    if code.coefficients.len() != dict.num_atoms() {
        return Err(Error::DimensionMismatch {
            what: "code length",
            expected: dict.num_atoms(),
            actual: code.coefficients.len(),
        });
    }
    Ok((DVector::from_column_slice(y) - dict.matrix() * &code.coefficients).norm_squared())
}
