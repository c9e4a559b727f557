//! Class decisions from per-class reconstruction residuals, accuracy
//! reports and atom correlation tables.

use std::io::Write;

use nalgebra::DVector;

use crate::dictionary::{ClassSubdict, Dictionary};
use crate::error::{Error, Result};
use crate::sparse::SparseCode;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDecision {
    /// Index into the dictionary's class list.
    pub predicted: usize,
    pub predicted_id: String,
    /// `‖y − Φᵏx̂ᵏ‖²` for each class, in dictionary order.
    pub residuals: Vec<f64>,
    pub code: SparseCode,
}

/// Index of the smallest value; ties go to the lowest index.
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

pub fn classify(dict: &Dictionary, code: SparseCode, y: &[f64]) -> Result<ClassDecision> {
    if code.coefficients.len() != dict.num_atoms() {
        return Err(Error::DimensionMismatch {
            what: "code length",
            expected: dict.num_atoms(),
            actual: code.coefficients.len(),
        });
    }
    if y.len() != dict.num_moments() {
        return Err(Error::DimensionMismatch {
            what: "signal length",
            expected: dict.num_moments(),
            actual: y.len(),
        });
    }
    let yv = DVector::from_column_slice(y);
    let residuals: Vec<f64> = dict
        .classes()
        .iter()
        .map(|block| {
            let cols = block.columns();
            let phi_k = dict.matrix().columns(cols.start, cols.len());
            let x_k = code.coefficients.rows(cols.start, cols.len());
            (&yv - phi_k * x_k).norm_squared()
        })
        .collect();
    let predicted = argmin(&residuals);
    Ok(ClassDecision {
        predicted,
        predicted_id: dict.classes()[predicted].class_id.clone(),
        residuals,
        code,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub class_ids: Vec<String>,
    /// Row = truth, column = prediction.
    pub confusion: Vec<Vec<usize>>,
    pub per_class_totals: Vec<usize>,
    pub omega_k: Vec<f64>,
    pub omega: f64,
}

/// Builds a report from `(truth id, predicted class index)` pairs.
pub fn evaluate(class_ids: &[String], outcomes: &[(String, usize)]) -> Result<EvalReport> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("no test decisions to evaluate".into()));
    }
    let k = class_ids.len();
    let mut confusion = vec![vec![0usize; k]; k];
    for (truth, predicted) in outcomes {
        let t = class_ids
            .iter()
            .position(|c| c == truth)
            .ok_or_else(|| Error::UnknownClass(truth.clone()))?;
        if *predicted >= k {
            return Err(Error::DimensionMismatch {
                what: "predicted class index",
                expected: k,
                actual: *predicted,
            });
        }
        confusion[t][*predicted] += 1;
    }
    Ok(EvalReport::from_confusion(class_ids.to_vec(), confusion))
}

impl EvalReport {
    /// Classes with no test items are left out of the mean.
    pub fn from_confusion(class_ids: Vec<String>, confusion: Vec<Vec<usize>>) -> Self {
        let per_class_totals: Vec<usize> = confusion.iter().map(|row| row.iter().sum()).collect();
        let omega_k: Vec<f64> = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if per_class_totals[i] == 0 {
                    f64::NAN
                } else {
                    100.0 * row[i] as f64 / per_class_totals[i] as f64
                }
            })
            .collect();
        let present: Vec<f64> = omega_k.iter().cloned().filter(|v| !v.is_nan()).collect();
        let omega = present.iter().sum::<f64>() / present.len() as f64;
        Self {
            class_ids,
            confusion,
            per_class_totals,
            omega_k,
            omega,
        }
    }

    /// Confusion rows followed by per-class and overall accuracy.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "truth")?;
        for id in &self.class_ids {
            write!(w, ",{id}")?;
        }
        writeln!(w, ",total,omega_k")?;
        for (i, row) in self.confusion.iter().enumerate() {
            write!(w, "{}", self.class_ids[i])?;
            for c in row {
                write!(w, ",{c}")?;
            }
            writeln!(w, ",{},{:.6}", self.per_class_totals[i], self.omega_k[i])?;
        }
        write!(w, "overall")?;
        for _ in &self.class_ids {
            write!(w, ",")?;
        }
        let total: usize = self.per_class_totals.iter().sum();
        writeln!(w, ",{total},{:.6}", self.omega)
    }
}

/// Inner products of each reference column with every column of the class,
/// one row per reference.
pub fn atom_correlations(subdict: &ClassSubdict, reference_columns: &[usize]) -> Result<Vec<Vec<f64>>> {
    reference_columns
        .iter()
        .map(|&r| {
            if r >= subdict.num_atoms() {
                return Err(Error::InvalidArgument(format!(
                    "reference column {r} out of range for {} atoms",
                    subdict.num_atoms()
                )));
            }
            let a = subdict.atoms.column(r);
            Ok(subdict.atoms.column_iter().map(|c| a.dot(&c)).collect())
        })
        .collect()
}

/// Long-format correlation table: `space,reference,column,correlation`.
pub fn write_correlation_csv<W: Write>(
    w: &mut W,
    space: &str,
    reference_columns: &[usize],
    table: &[Vec<f64>],
    header: bool,
) -> std::io::Result<()> {
    if header {
        writeln!(w, "space,reference,column,correlation")?;
    }
    for (r, row) in reference_columns.iter().zip(table) {
        for (j, v) in row.iter().enumerate() {
            writeln!(w, "{space},{r},{j},{v:.6}")?;
        }
    }
    Ok(())
}
