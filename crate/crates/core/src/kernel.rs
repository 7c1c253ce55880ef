//! Compactly supported spatial smoothing kernels.
//!
//! The smoothing weight between locations at great-circle distance `d`
//! (degrees) under bandwidth `h` (degrees) is the biweight function
//! `(15 / (16 h)) * (1 - (d/h)^2)^2` for `d < h` and exactly zero otherwise.
//! Infinite distances (cross-hemisphere pairs) therefore receive zero weight.

use ndarray::{Array1, ArrayView2};

use crate::domain::VertexSet;
use crate::error::{Error, Result};
use crate::sparse::Csr;

/// Biweight kernel weight; `d` in degrees, `h` in degrees.
pub fn biweight(d: f64, h: f64) -> f64 {
    debug_assert!(h > 0.0, "bandwidth must be positive");
    debug_assert!(!(d < 0.0), "distance must be non-negative");
    if d < h {
        let r = d / h;
        let u = 1.0 - r * r;
        15.0 / (16.0 * h) * u * u
    } else {
        0.0
    }
}

/// A raw kernel matrix `K` and its row-stochastic companion, built over a
/// fixed vertex set at one bandwidth.
#[derive(Debug, Clone)]
pub struct KernelOperator {
    h: f64,
    /// Raw symmetric kernel weights `K[v, v0] = biweight(d(v, v0), h)`.
    raw: Csr,
    /// Row-normalized smoother with rows summing to one.
    tilde: Csr,
    /// Raw row sums `w(v) = sum_v0 K[v, v0]`.
    weights: Array1<f64>,
}

impl KernelOperator {
    /// Builds both kernel matrices from a precomputed distance matrix
    /// (degrees, infinite across hemispheres).
    pub fn from_distances(distances: &ArrayView2<f64>, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Invalid(format!("bandwidth must be positive, got {h}")));
        }
        let v = distances.nrows();
        if distances.ncols() != v {
            return Err(Error::Invalid("distance matrix must be square".into()));
        }
        let mut rows = Vec::with_capacity(v);
        for i in 0..v {
            let mut row = Vec::new();
            for j in 0..v {
                let w = biweight(distances[[i, j]], h);
                if w > 0.0 {
                    row.push((j, w));
                }
            }
            rows.push(row);
        }
        let raw = Csr::from_rows(v, rows);
        let weights = raw.row_sums();
        // The self-weight is always positive, so every row sum is positive.
        let tilde = raw.scale_rows(&weights);
        Ok(KernelOperator {
            h,
            raw,
            tilde,
            weights,
        })
    }

    /// Convenience constructor computing distances from the vertex set.
    pub fn from_vertices(vertices: &VertexSet, h: f64) -> Result<Self> {
        let d = vertices.distance_matrix();
        Self::from_distances(&d.view(), h)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_vertices(&self) -> usize {
        self.raw.n_rows()
    }

    /// Raw kernel matrix `K`.
    pub fn raw(&self) -> &Csr {
        &self.raw
    }

    /// Row-stochastic smoother.
    pub fn tilde(&self) -> &Csr {
        &self.tilde
    }

    /// Raw row sums `w(v)`.
    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    /// Trace of the row-stochastic smoother.
    pub fn trace_tilde(&self) -> f64 {
        self.tilde.trace()
    }
}

/// A shared bank of kernel operators over one candidate bandwidth grid,
/// built once from a distance matrix and reused across selection criteria.
#[derive(Debug)]
pub struct KernelBank {
    kernels: Vec<KernelOperator>,
}

impl KernelBank {
    pub fn build(distances: &ArrayView2<f64>, bandwidths: &[f64]) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::Invalid("empty bandwidth grid".into()));
        }
        let mut sorted = bandwidths.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite bandwidths"));
        let kernels = sorted
            .iter()
            .map(|&h| KernelOperator::from_distances(distances, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelBank { kernels })
    }

    pub fn kernels(&self) -> &[KernelOperator] {
        &self.kernels
    }

    pub fn bandwidths(&self) -> Vec<f64> {
        self.kernels.iter().map(|k| k.h()).collect()
    }
}

/// Log-spaced bandwidth grid from just above the smallest inter-vertex
/// spacing to a quarter of the domain diameter (45 degrees of arc).
pub fn default_bandwidth_grid(vertices: &VertexSet, n: usize) -> Result<Vec<f64>> {
    let lo = vertices.min_spacing_deg() * 1.05;
    let hi = 45.0;
    log_spaced_grid(lo, hi, n)
}

/// Log-spaced grid of `n` bandwidths over `[lo, hi]`.
pub fn log_spaced_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0) || !(hi > lo) {
        return Err(Error::Invalid(format!(
            "bandwidth grid bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    if n < 2 {
        return Err(Error::Invalid("bandwidth grid needs at least 2 points".into()));
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..n)
        .map(|i| (llo + (lhi - llo) * i as f64 / (n - 1) as f64).exp())
        .collect())
}
