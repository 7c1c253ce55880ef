//! Error metrics for simulation studies: integrated squared error of
//! covariance matrices and per-vertex fields, replicate averages, a
//! bias-squared/variance decomposition, and the CSV tables summarizing a
//! Monte-Carlo run.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mat1::atomic_write_text;

fn check_same_dim(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::Invalid(format!(
            "dimension mismatch: {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

/// Integrated squared error of a covariance matrix estimate: the sum of
/// squared entry differences divided by V^2.
pub fn ise_matrix(estimate: &ArrayView2<f64>, truth: &ArrayView2<f64>) -> Result<f64> {
    check_same_dim(estimate.dim(), truth.dim())?;
    let v = truth.nrows() as f64;
    let sum: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / (v * v))
}

/// Integrated squared error of a per-vertex field: mean squared difference.
pub fn ise_field(estimate: &ArrayView1<f64>, truth: &ArrayView1<f64>) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::Invalid(format!(
            "dimension mismatch: {} vs {}",
            estimate.len(),
            truth.len()
        )));
    }
    let sum: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / truth.len() as f64)
}

/// ISE divided by the truth's own mean square, making errors comparable
/// across components of different magnitude.
pub fn normalized_ise_matrix(
    estimate: &ArrayView2<f64>,
    truth: &ArrayView2<f64>,
) -> Result<f64> {
    check_same_dim(estimate.dim(), truth.dim())?;
    let num: f64 = estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = truth.iter().map(|x| x * x).sum();
    if den <= 0.0 {
        return Err(Error::Invalid("truth matrix is identically zero".into()));
    }
    Ok(num / den)
}

/// Mean ISE over replicates.
pub fn mise(ises: &[f64]) -> Result<f64> {
    if ises.is_empty() {
        return Err(Error::Invalid("no replicates to average".into()));
    }
    Ok(ises.iter().sum::<f64>() / ises.len() as f64)
}

/// Monte-Carlo error decomposition of one estimator against one truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasVariance {
    /// ISE of the replicate-mean estimate.
    pub bias2: f64,
    /// Mean ISE of each replicate against the replicate mean.
    pub variance: f64,
    /// Mean ISE against the truth; equals `bias2 + variance`.
    pub mise: f64,
}

/// Decomposes matrix-estimate error over replicates: the replicate mean
/// carries the bias, the scatter around it the variance, and their sum is
/// the MISE (an exact identity for squared error).
pub fn bias_variance_matrix(
    estimates: &[Array2<f64>],
    truth: &ArrayView2<f64>,
) -> Result<BiasVariance> {
    if estimates.is_empty() {
        return Err(Error::Invalid("no replicates to decompose".into()));
    }
    let mut mean = Array2::<f64>::zeros(truth.dim());
    for est in estimates {
        check_same_dim(est.dim(), truth.dim())?;
        mean += est;
    }
    mean /= estimates.len() as f64;
    let bias2 = ise_matrix(&mean.view(), truth)?;
    let mut mise_sum = 0.0;
    let mut var_sum = 0.0;
    for est in estimates {
        mise_sum += ise_matrix(&est.view(), truth)?;
        var_sum += ise_matrix(&est.view(), &mean.view())?;
    }
    let n = estimates.len() as f64;
    Ok(BiasVariance {
        bias2,
        variance: var_sum / n,
        mise: mise_sum / n,
    })
}

/// Field analogue of [`bias_variance_matrix`] (per-vertex normalization).
pub fn bias_variance_field(
    estimates: &[Array1<f64>],
    truth: &ArrayView1<f64>,
) -> Result<BiasVariance> {
    if estimates.is_empty() {
        return Err(Error::Invalid("no replicates to decompose".into()));
    }
    let mut mean = Array1::<f64>::zeros(truth.len());
    for est in estimates {
        if est.len() != truth.len() {
            return Err(Error::Invalid("field length mismatch".into()));
        }
        mean += est;
    }
    mean /= estimates.len() as f64;
    let bias2 = ise_field(&mean.view(), truth)?;
    let mut mise_sum = 0.0;
    let mut var_sum = 0.0;
    for est in estimates {
        mise_sum += ise_field(&est.view(), truth)?;
        var_sum += ise_field(&est.view(), &mean.view())?;
    }
    let n = estimates.len() as f64;
    Ok(BiasVariance {
        bias2,
        variance: var_sum / n,
        mise: mise_sum / n,
    })
}

/// Smallest eigenvalue of a symmetric matrix relative to its largest:
/// certification that a claimed-PSD output is numerically PSD.
pub use crate::psd::relative_min_eigenvalue;

/// Mean of a matrix diagonal — the spatial average variance of a
/// covariance estimate.
pub fn mean_diagonal(m: &ArrayView2<f64>) -> f64 {
    m.diag().sum() / m.nrows() as f64
}

/// One replicate's error record for the long-format results table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReplicateRow {
    pub replicate: usize,
    pub estimator: String,
    /// Component label (`sigma_a`, `sigma_c`, `sigma_eg`, or `h2`).
    pub component: String,
    pub ise: f64,
    pub ise_normalized: f64,
}

/// Writes the long-format replicate table: one row per
/// (replicate, estimator, component).
pub fn write_replicate_table(path: &Path, rows: &[ReplicateRow]) -> Result<()> {
    atomic_write_text(path, |out| {
        writeln!(out, "replicate,estimator,component,ise,ise_normalized")?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.replicate, r.estimator, r.component, r.ise, r.ise_normalized
            )?;
        }
        Ok(())
    })
}

/// One estimator-component summary for the wide results table.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SummaryRow {
    pub estimator: String,
    pub component: String,
    pub bias2: f64,
    pub variance: f64,
    pub mise: f64,
}

/// Writes the summary table: one row per (estimator, component) with the
/// bias-squared/variance/MISE decomposition.
pub fn write_summary_table(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    atomic_write_text(path, |out| {
        writeln!(out, "estimator,component,bias2,variance,mise")?;
        for r in rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.estimator, r.component, r.bias2, r.variance, r.mise
            )?;
        }
        Ok(())
    })
}

/// Mean over replicates of per-vertex fields, as an `R x V` stack reducer.
pub fn stack_mean(fields: &[Array1<f64>]) -> Result<Array1<f64>> {
    if fields.is_empty() {
        return Err(Error::Invalid("no fields to average".into()));
    }
    let v = fields[0].len();
    let mut stack = Array2::<f64>::zeros((fields.len(), v));
    for (i, f) in fields.iter().enumerate() {
        if f.len() != v {
            return Err(Error::Invalid("field length mismatch".into()));
        }
        stack.row_mut(i).assign(f);
    }
    Ok(stack.mean_axis(Axis(0)).expect("nonempty stack"))
}
