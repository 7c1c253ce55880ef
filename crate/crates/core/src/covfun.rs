//! Continuous covariance functions from fitted low-rank factors.
//!
//! A factor matrix `Z` only defines covariances at the observed vertices.
//! Evaluation everywhere uses normalized kernel weight vectors, whose rows
//! at the observed vertices are exactly the row-normalized kernel; so the
//! unsmoothed basis behind the fitted covariance is `W = K~^{-1} Z`. The
//! row-normalized kernel is typically too ill-conditioned to invert
//! directly, so `W` is formed as `K^- D Z`, where `K^-` is an
//! eigenvalue-truncated inverse of the raw symmetric kernel and
//! `D = diag(w)` holds its row sums (`K~ = D^{-1} K` makes the two
//! expressions equal in the well-conditioned limit). The covariance
//! between *any* two sphere locations is then the quadratic form
//! `k_h(v)^T W W^T k_h(v')` with `k_h(v)` the normalized weight vector
//! from the location to the observed vertices; at the observed vertices
//! this reproduces `Z Z^T` up to the truncation. Being a Gram form, the
//! result is a positive semidefinite function by construction.
//!
//! The same machinery supports a low-memory strategy: partition the
//! vertices, fit each subset, interpolate every partition's function back
//! to the full vertex set, and combine.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use std::path::Path;

use crate::cohort::FamilyIndex;
use crate::covariance::{sandwich_estimates, Component, CovTag, CovTriple, CrossProducts};
use crate::domain::{Hemisphere, VertexSet};
use crate::eigenutil::{eigh_descending, truncate_psd};
use crate::error::{Error, Result};
use crate::kernel::{biweight, KernelOperator};
use crate::mat1::atomic_write_text;
use crate::psd::{fit_psd_ace, initial_factors, CovFactorization, DescentConfig, PsdProblem};

/// How eigenvalues of the kernel matrix are deemed significant when forming
/// its regularized inverse.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InverseThreshold {
    /// Keep eigenvalues exceeding a fixed value.
    Absolute(f64),
    /// Keep eigenvalues exceeding a fraction of the largest eigenvalue.
    Relative(f64),
}

impl Default for InverseThreshold {
    fn default() -> Self {
        InverseThreshold::Absolute(1e-4)
    }
}

/// Regularized inverse of a symmetric kernel matrix: eigenvalues at or
/// below the threshold are dropped rather than inverted. Errors if nothing
/// survives the threshold.
pub fn robust_inverse(
    k: &Array2<f64>,
    threshold: InverseThreshold,
) -> Result<Array2<f64>> {
    let (vals, vecs) = eigh_descending(&k.view())?;
    let cut = match threshold {
        InverseThreshold::Absolute(t) => t,
        InverseThreshold::Relative(f) => f * vals[0].max(0.0),
    };
    let kept = vals.iter().take_while(|&&e| e > cut).count();
    if kept == 0 {
        return Err(Error::Numerical(format!(
            "no kernel eigenvalue exceeds the inversion threshold {cut:.3e}"
        )));
    }
    let v = k.nrows();
    let mut out = Array2::<f64>::zeros((v, v));
    for j in 0..kept {
        let col = vecs.column(j);
        let inv = 1.0 / vals[j];
        for a in 0..v {
            let ca = col[a] * inv;
            for b in 0..v {
                out[[a, b]] += ca * col[b];
            }
        }
    }
    Ok(out)
}

/// A point on the labeled sphere where a covariance function can be
/// evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    /// Polar angle in radians.
    pub theta: f64,
    /// Azimuth in radians.
    pub phi: f64,
    pub hemisphere: Hemisphere,
}

impl Location {
    pub fn at_vertex(vertices: &VertexSet, i: usize) -> Location {
        Location {
            theta: vertices.theta(i),
            phi: vertices.phi(i),
            hemisphere: vertices.hemisphere(i),
        }
    }
}

/// Interpolation factors for the three components: `W = K^- D Z` (the
/// robust inverse-smoothing of the fitted factors) together with the
/// source vertices and bandwidth needed to build weight vectors.
#[derive(Debug, Clone)]
pub struct InterpFactors {
    pub w_a: Array2<f64>,
    pub w_c: Array2<f64>,
    pub w_eg: Array2<f64>,
    vertices: VertexSet,
    h: f64,
}

impl InterpFactors {
    /// Builds interpolation factors from fitted low-rank factors on the
    /// given vertices: scales factor rows by the raw kernel row sums, then
    /// applies the robust inverse of the raw kernel matrix.
    pub fn new(
        factors: &CovFactorization,
        vertices: &VertexSet,
        h: f64,
        threshold: InverseThreshold,
    ) -> Result<Self> {
        let v = vertices.len();
        if factors.z_a.nrows() != v {
            return Err(Error::Invalid(
                "factor rows must match the vertex count".into(),
            ));
        }
        let kernel = KernelOperator::from_vertices(vertices, h)?;
        let k_inv = robust_inverse(&kernel.raw().to_dense(), threshold)?;
        let mass = kernel.raw().row_sums().insert_axis(Axis(1));
        Ok(InterpFactors {
            w_a: k_inv.dot(&(&factors.z_a * &mass)),
            w_c: k_inv.dot(&(&factors.z_c * &mass)),
            w_eg: k_inv.dot(&(&factors.z_eg * &mass)),
            vertices: vertices.clone(),
            h,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn vertices(&self) -> &VertexSet {
        &self.vertices
    }

    fn w(&self, component: Component) -> &Array2<f64> {
        match component {
            Component::A => &self.w_a,
            Component::C => &self.w_c,
            Component::EG => &self.w_eg,
        }
    }

    /// Normalized kernel weight vector from a location to the source
    /// vertices. All-zero when no vertex lies within the bandwidth.
    pub fn weight_vector(&self, loc: Location) -> Array1<f64> {
        let v = self.vertices.len();
        let mut k = Array1::<f64>::zeros(v);
        let mut total = 0.0;
        for j in 0..v {
            let d = self
                .vertices
                .distance_to_deg(loc.theta, loc.phi, loc.hemisphere, j);
            let kj = biweight(d, self.h);
            k[j] = kj;
            total += kj;
        }
        if total > 0.0 {
            k /= total;
        } else {
            log::warn!(
                "no observed vertex within bandwidth {} of the evaluation point; \
                 covariance evaluates to zero there",
                self.h
            );
        }
        k
    }

    /// Covariance of one component between two arbitrary locations:
    /// `k_h(v)^T W W^T k_h(v')`.
    pub fn evaluate(&self, component: Component, a: Location, b: Location) -> f64 {
        let w = self.w(component);
        let ka = self.weight_vector(a);
        let kb = self.weight_vector(b);
        let left = w.t().dot(&ka);
        let right = w.t().dot(&kb);
        left.dot(&right)
    }

    /// Gram matrix of one component over a list of locations.
    pub fn gram(&self, component: Component, locs: &[Location]) -> Array2<f64> {
        let w = self.w(component);
        let m = locs.len();
        let mut proj = Array2::<f64>::zeros((m, w.ncols()));
        for (i, &loc) in locs.iter().enumerate() {
            let k = self.weight_vector(loc);
            proj.row_mut(i).assign(&w.t().dot(&k));
        }
        proj.dot(&proj.t())
    }

    /// Evaluates one component at every pair of source vertices, which
    /// equals the row-normalized-kernel smoothing of `W W^T` aggregated to
    /// the vertex grid.
    pub fn gram_at_vertices(&self, component: Component) -> Array2<f64> {
        let locs: Vec<Location> = (0..self.vertices.len())
            .map(|i| Location::at_vertex(&self.vertices, i))
            .collect();
        self.gram(component, &locs)
    }
}

/// Writes one row of a covariance (or correlation) matrix as a
/// `vertex_index,value` table — a seed-based connectivity map.
pub fn write_seed_map(path: &Path, values: &ArrayView1<f64>) -> Result<()> {
    atomic_write_text(path, |out| {
        writeln!(out, "vertex_index,value")?;
        for (i, v) in values.iter().enumerate() {
            writeln!(out, "{i},{v}")?;
        }
        Ok(())
    })
}

// ---------------------------------------------------------------------------
// Partitioned fitting
// ---------------------------------------------------------------------------

/// Everything the per-partition covariance stage needs: residuals and
/// noise estimates from the pointwise stage plus the smoothing and descent
/// configuration.
#[derive(Debug)]
pub struct PartitionInputs<'a> {
    pub residuals: &'a Array2<f64>,
    pub families: &'a FamilyIndex,
    pub sigma2_el: &'a Array1<f64>,
    pub vertices: &'a VertexSet,
    /// Covariance-smoothing bandwidth (degrees), selected on the full
    /// domain.
    pub h: f64,
    /// Requested factor ranks for the three components.
    pub ranks: [usize; 3],
    pub descent: DescentConfig,
    pub threshold: InverseThreshold,
}

/// Diagnostics from a partitioned fit.
#[derive(Debug, Clone)]
pub struct PartitionReport {
    /// Vertex pairs no partition could evaluate (left at zero).
    pub unsupported_pairs: usize,
    /// Positive-eigenvalue counts from the final projection of each
    /// component.
    pub clip_counts: [usize; 3],
    /// Per-partition descent convergence flags.
    pub converged: Vec<bool>,
}

fn partition_factors(
    inputs: &PartitionInputs<'_>,
    members: &[usize],
) -> Result<(CovFactorization, VertexSet, bool)> {
    let sub_vertices = inputs.vertices.subset(members)?;
    let sub_residuals = inputs.residuals.select(Axis(1), members);
    let sub_sigma: Array1<f64> = members.iter().map(|&v| inputs.sigma2_el[v]).collect();
    let cp = CrossProducts::new(&sub_residuals, inputs.families, &sub_sigma)?;
    let kernel = KernelOperator::from_vertices(&sub_vertices, inputs.h)?;
    let smoothed = sandwich_estimates(&cp, &kernel)?;
    let (init, _) = initial_factors(&smoothed, inputs.ranks)?;
    let problem = PsdProblem::new(&cp, &sub_residuals, inputs.families, &sub_sigma, &kernel)?;
    let (factors, _, report) = fit_psd_ace(&init, &problem, &inputs.descent)?;
    Ok((factors, sub_vertices, report.converged))
}

/// Fits the PSD-constrained covariance estimator separately on each vertex
/// partition, interpolates every partition's covariance functions back to
/// the full vertex set, and combines:
///
/// * where both vertices belong to a partition, its fitted values are used
///   directly (averaged over such partitions);
/// * otherwise partitions that can reach both vertices through the kernel
///   contribute interpolated values, averaged;
/// * pairs no partition can reach stay zero and are counted.
///
/// A final eigenvalue projection removes the tiny negative eigenvalues
/// that mixing interpolated blocks can introduce.
pub fn partition_fit_combine(
    inputs: &PartitionInputs<'_>,
    partitions: &[Vec<usize>],
) -> Result<(CovTriple, PartitionReport)> {
    let v = inputs.vertices.len();
    if partitions.is_empty() {
        return Err(Error::Invalid("no partitions given".into()));
    }
    let mut covered = vec![false; v];
    for (pi, members) in partitions.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Invalid(format!("partition {pi} is empty")));
        }
        for &m in members {
            if m >= v {
                return Err(Error::Invalid(format!(
                    "partition {pi} references vertex {m} outside the domain"
                )));
            }
            covered[m] = true;
        }
    }
    if let Some(missing) = covered.iter().position(|&c| !c) {
        return Err(Error::Invalid(format!(
            "partitions do not cover vertex {missing}"
        )));
    }

    // Fit every partition (independent, so in parallel), preserving order.
    use rayon::prelude::*;
    let fits: Vec<(CovFactorization, VertexSet, bool)> = partitions
        .par_iter()
        .map(|members| partition_factors(inputs, members))
        .collect::<Result<_>>()?;
    let converged: Vec<bool> = fits.iter().map(|f| f.2).collect();

    // Per-partition machinery: direct covariances on members, interpolation
    // factors and full-domain weight vectors for everything else.
    let all_locs: Vec<Location> = (0..v)
        .map(|i| Location::at_vertex(inputs.vertices, i))
        .collect();
    struct Prepared {
        member_pos: Vec<Option<usize>>,
        direct: [Array2<f64>; 3],
        /// Projections `W^T k_h(v)` for all domain vertices, one row per
        /// vertex; zero rows mark unreachable vertices.
        proj: [Array2<f64>; 3],
        reach: Vec<bool>,
    }
    let mut prepared = Vec::with_capacity(partitions.len());
    for (members, fit) in partitions.iter().zip(&fits) {
        let (factors, sub_vertices, _) = fit;
        let mut member_pos = vec![None; v];
        for (pos, &m) in members.iter().enumerate() {
            member_pos[m] = Some(pos);
        }
        let direct = [
            factors.z_a.dot(&factors.z_a.t()),
            factors.z_c.dot(&factors.z_c.t()),
            factors.z_eg.dot(&factors.z_eg.t()),
        ];
        let interp = InterpFactors::new(factors, sub_vertices, inputs.h, inputs.threshold)?;
        let mut reach = vec![false; v];
        let mut proj = [
            Array2::<f64>::zeros((v, factors.z_a.ncols())),
            Array2::<f64>::zeros((v, factors.z_c.ncols())),
            Array2::<f64>::zeros((v, factors.z_eg.ncols())),
        ];
        for (i, &loc) in all_locs.iter().enumerate() {
            let k = interp.weight_vector(loc);
            if k.iter().any(|&x| x > 0.0) {
                reach[i] = true;
                proj[0].row_mut(i).assign(&interp.w_a.t().dot(&k));
                proj[1].row_mut(i).assign(&interp.w_c.t().dot(&k));
                proj[2].row_mut(i).assign(&interp.w_eg.t().dot(&k));
            }
        }
        prepared.push(Prepared {
            member_pos,
            direct,
            proj,
            reach,
        });
    }

    let mut combined = [
        Array2::<f64>::zeros((v, v)),
        Array2::<f64>::zeros((v, v)),
        Array2::<f64>::zeros((v, v)),
    ];
    let mut unsupported = 0usize;
    for i in 0..v {
        for j in i..v {
            // Direct tier: partitions holding both vertices.
            let mut direct_vals = [0.0f64; 3];
            let mut direct_count = 0usize;
            for p in &prepared {
                if let (Some(pi), Some(pj)) = (p.member_pos[i], p.member_pos[j]) {
                    for c in 0..3 {
                        direct_vals[c] += p.direct[c][[pi, pj]];
                    }
                    direct_count += 1;
                }
            }
            let (vals, count) = if direct_count > 0 {
                (direct_vals, direct_count)
            } else {
                // Interpolated tier: partitions reaching both vertices.
                let mut interp_vals = [0.0f64; 3];
                let mut interp_count = 0usize;
                for p in &prepared {
                    if p.reach[i] && p.reach[j] {
                        for c in 0..3 {
                            interp_vals[c] += p.proj[c].row(i).dot(&p.proj[c].row(j));
                        }
                        interp_count += 1;
                    }
                }
                (interp_vals, interp_count)
            };
            if count == 0 {
                unsupported += 1;
                continue;
            }
            for c in 0..3 {
                let value = vals[c] / count as f64;
                combined[c][[i, j]] = value;
                combined[c][[j, i]] = value;
            }
        }
    }
    if unsupported > 0 {
        log::warn!("{unsupported} vertex pairs were not reachable from any partition");
    }

    let (sigma_a, ka) = truncate_psd(&combined[0].view())?;
    let (sigma_c, kc) = truncate_psd(&combined[1].view())?;
    let (sigma_eg, ke) = truncate_psd(&combined[2].view())?;
    Ok((
        CovTriple {
            sigma_a,
            sigma_c,
            sigma_eg,
            tag: CovTag::PsdAce,
            h: inputs.h,
        },
        PartitionReport {
            unsupported_pairs: unsupported,
            clip_counts: [ka, kc, ke],
            converged,
        },
    ))
}
