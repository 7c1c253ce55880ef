//! Per-vertex variance-component estimation.
//!
//! At every vertex the phenotype follows a three-component family model:
//! twins within a family share covariance `sigma2_a + sigma2_c` (monozygotic)
//! or `0.5 * sigma2_a + sigma2_c` (dizygotic), every individual has total
//! variance `sigma2_a + sigma2_c + sigma2_e`, and distinct families are
//! independent. Fixed effects are profiled out by generalized least squares
//! at each candidate variance triple, so the optimization runs over the
//! three log-variances only.
//!
//! All likelihood evaluations reduce to a handful of per-vertex sufficient
//! statistics (within- and cross-twin second moments plus design/phenotype
//! cross products), which makes both the plain fits and the kernel-weighted
//! fits cheap enough to run over every vertex of a dense grid.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cohort::{FamilyIndex, FamilyKind, TwinCohort};
use crate::error::{Error, Result};
use crate::kernel::KernelOperator;
use crate::optim::{minimize, BfgsOptions};

/// Relative variance floor: each variance is kept at or above
/// `VARIANCE_FLOOR_RATIO * sample variance` during optimization.
pub const VARIANCE_FLOOR_RATIO: f64 = 1e-10;

/// Per-vertex estimates from a pointwise (or kernel-weighted) fit.
#[derive(Debug, Clone)]
pub struct ComponentFields {
    /// Fixed-effect coefficients, `p x V`.
    pub beta: Array2<f64>,
    pub sigma2_a: Array1<f64>,
    pub sigma2_c: Array1<f64>,
    /// Total unique variance (smooth unique environment plus measurement
    /// error; the two are not separable from a pointwise fit).
    pub sigma2_e: Array1<f64>,
    /// Narrow-sense heritability computed from the three fields above.
    pub h2: Array1<f64>,
    pub loglik: Array1<f64>,
    pub converged: Vec<bool>,
    /// Vertices where the phenotype was degenerate and the fit fell back to
    /// a boundary value.
    pub boundary: Vec<bool>,
}

impl ComponentFields {
    pub fn v(&self) -> usize {
        self.sigma2_a.len()
    }

    /// Heritability of each vertex: `sa / (sa + sc + se)` clipped to
    /// `[0, 1]` (component estimates may be negative), and zero — with a
    /// count returned — where the denominator is nonpositive.
    pub fn heritability(
        sigma2_a: &Array1<f64>,
        sigma2_c: &Array1<f64>,
        sigma2_e: &Array1<f64>,
    ) -> (Array1<f64>, usize) {
        let mut zeros = 0usize;
        let h2 = ndarray::Zip::from(sigma2_a)
            .and(sigma2_c)
            .and(sigma2_e)
            .map_collect(|&a, &c, &e| {
                let denom = a + c + e;
                if denom > 0.0 {
                    (a / denom).clamp(0.0, 1.0)
                } else {
                    zeros += 1;
                    0.0
                }
            });
        (h2, zeros)
    }
}

/// Residuals `Y - X B` for a per-vertex coefficient matrix `B` (`p x V`).
pub fn residuals(phenotype: &Array2<f64>, design: &Array2<f64>, beta: &Array2<f64>) -> Array2<f64> {
    phenotype - &design.dot(beta)
}

// ---------------------------------------------------------------------------
// Sufficient statistics
// ---------------------------------------------------------------------------

/// Cohort-level sufficient statistics for the profiled per-vertex likelihood.
pub struct CohortSuffStats {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n: usize,
    pub p: usize,
    // Design-only cross products (p x p).
    a_xx_mz: Array2<f64>,
    b_xx_mz: Array2<f64>,
    a_xx_dz: Array2<f64>,
    b_xx_dz: Array2<f64>,
    a_xx_s: Array2<f64>,
    // Design/phenotype cross products (p x V).
    a_xy_mz: Array2<f64>,
    b_xy_mz: Array2<f64>,
    a_xy_dz: Array2<f64>,
    b_xy_dz: Array2<f64>,
    a_xy_s: Array2<f64>,
    // Phenotype second moments (V).
    q_mz: Array1<f64>,
    c_mz: Array1<f64>,
    q_dz: Array1<f64>,
    c_dz: Array1<f64>,
    q_s: Array1<f64>,
    pub sample_var: Array1<f64>,
}

fn pair_rows(families: &FamilyIndex, kind: FamilyKind) -> (Vec<usize>, Vec<usize>) {
    let pairs: Vec<(usize, usize)> = match kind {
        FamilyKind::Mz => families.mz_pairs().collect(),
        FamilyKind::Dz => families.dz_pairs().collect(),
        FamilyKind::Singleton => unreachable!("singletons are not paired"),
    };
    (
        pairs.iter().map(|&(a, _)| a).collect(),
        pairs.iter().map(|&(_, b)| b).collect(),
    )
}

impl CohortSuffStats {
    pub fn new(cohort: &TwinCohort) -> Self {
        let y = &cohort.phenotype;
        let x = &cohort.design;
        let fam = &cohort.families;
        let (mz1, mz2) = pair_rows(fam, FamilyKind::Mz);
        let (dz1, dz2) = pair_rows(fam, FamilyKind::Dz);
        let singles: Vec<usize> = fam.singleton_rows().collect();

        let take = |rows: &[usize], m: &Array2<f64>| m.select(Axis(0), rows);

        let (y_mz1, y_mz2) = (take(&mz1, y), take(&mz2, y));
        let (y_dz1, y_dz2) = (take(&dz1, y), take(&dz2, y));
        let y_s = take(&singles, y);
        let (x_mz1, x_mz2) = (take(&mz1, x), take(&mz2, x));
        let (x_dz1, x_dz2) = (take(&dz1, x), take(&dz2, x));
        let x_s = take(&singles, x);

        let colwise_dot = |a: &Array2<f64>, b: &Array2<f64>| -> Array1<f64> {
            let mut out = Array1::<f64>::zeros(a.ncols());
            for (ra, rb) in a.rows().into_iter().zip(b.rows()) {
                for (j, (&xa, &xb)) in ra.iter().zip(rb.iter()).enumerate() {
                    out[j] += xa * xb;
                }
            }
            out
        };

        CohortSuffStats {
            n1: mz1.len(),
            n2: dz1.len(),
            n3: singles.len(),
            n: y.nrows(),
            p: x.ncols(),
            a_xx_mz: x_mz1.t().dot(&x_mz1) + x_mz2.t().dot(&x_mz2),
            b_xx_mz: x_mz1.t().dot(&x_mz2) + x_mz2.t().dot(&x_mz1),
            a_xx_dz: x_dz1.t().dot(&x_dz1) + x_dz2.t().dot(&x_dz2),
            b_xx_dz: x_dz1.t().dot(&x_dz2) + x_dz2.t().dot(&x_dz1),
            a_xx_s: x_s.t().dot(&x_s),
            a_xy_mz: x_mz1.t().dot(&y_mz1) + x_mz2.t().dot(&y_mz2),
            b_xy_mz: x_mz1.t().dot(&y_mz2) + x_mz2.t().dot(&y_mz1),
            a_xy_dz: x_dz1.t().dot(&y_dz1) + x_dz2.t().dot(&y_dz2),
            b_xy_dz: x_dz1.t().dot(&y_dz2) + x_dz2.t().dot(&y_dz1),
            a_xy_s: x_s.t().dot(&y_s),
            q_mz: &colwise_dot(&y_mz1, &y_mz1) + &colwise_dot(&y_mz2, &y_mz2),
            c_mz: colwise_dot(&y_mz1, &y_mz2),
            q_dz: &colwise_dot(&y_dz1, &y_dz1) + &colwise_dot(&y_dz2, &y_dz2),
            c_dz: colwise_dot(&y_dz1, &y_dz2),
            q_s: colwise_dot(&y_s, &y_s),
            sample_var: crate::cohort::phenotype_sample_variance(y),
        }
    }
}

/// Per-vertex second moments of a residual matrix, grouped by family kind.
#[derive(Debug, Clone)]
pub struct ResidualStats {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub q_mz: Array1<f64>,
    pub c_mz: Array1<f64>,
    pub q_dz: Array1<f64>,
    pub c_dz: Array1<f64>,
    pub q_s: Array1<f64>,
    /// Mean squared residual per vertex (used for variance floors).
    pub mean_square: Array1<f64>,
}

/// Computes residual second moments, optionally restricted to a subset of
/// families (`keep[f] == true`), which the cross-validation loop uses to
/// split training and held-out data.
pub fn residual_stats(
    residuals: &Array2<f64>,
    families: &FamilyIndex,
    keep: Option<&[bool]>,
) -> ResidualStats {
    let v = residuals.ncols();
    let mut q_mz = Array1::<f64>::zeros(v);
    let mut c_mz = Array1::<f64>::zeros(v);
    let mut q_dz = Array1::<f64>::zeros(v);
    let mut c_dz = Array1::<f64>::zeros(v);
    let mut q_s = Array1::<f64>::zeros(v);
    let mut mean_square = Array1::<f64>::zeros(v);
    let (mut n1, mut n2, mut n3, mut rows) = (0usize, 0usize, 0usize, 0usize);

    for (f, fam) in families.families().iter().enumerate() {
        if keep.is_some_and(|k| !k[f]) {
            continue;
        }
        match fam.kind {
            FamilyKind::Mz | FamilyKind::Dz => {
                let r1 = residuals.row(fam.rows[0]);
                let r2 = residuals.row(fam.rows[1]);
                let (q, c) = if fam.kind == FamilyKind::Mz {
                    n1 += 1;
                    (&mut q_mz, &mut c_mz)
                } else {
                    n2 += 1;
                    (&mut q_dz, &mut c_dz)
                };
                for j in 0..v {
                    let (a, b) = (r1[j], r2[j]);
                    q[j] += a * a + b * b;
                    c[j] += a * b;
                    mean_square[j] += a * a + b * b;
                }
                rows += 2;
            }
            FamilyKind::Singleton => {
                n3 += 1;
                let r = residuals.row(fam.rows[0]);
                for j in 0..v {
                    q_s[j] += r[j] * r[j];
                    mean_square[j] += r[j] * r[j];
                }
                rows += 1;
            }
        }
    }
    if rows > 0 {
        mean_square /= rows as f64;
    }
    ResidualStats {
        n1,
        n2,
        n3,
        q_mz,
        c_mz,
        q_dz,
        c_dz,
        q_s,
        mean_square,
    }
}

// ---------------------------------------------------------------------------
// Likelihood evaluation
// ---------------------------------------------------------------------------

const LN_2PI: f64 = 1.8378770664093453;

#[inline]
fn block_coefficients(t: f64, m: f64) -> Option<(f64, f64, f64)> {
    // Inverse of [[t, m], [m, t]] is (1/(t^2-m^2)) [[t, -m], [-m, t]].
    let det = t * t - m * m;
    if det <= 0.0 || t <= 0.0 {
        return None;
    }
    Some((t / det, -m / det, det))
}

/// Solves the small dense system `m x = rhs` in place (partial pivoting).
/// Returns false if the system is numerically singular.
fn solve_small(m: &mut [f64], rhs: &mut [f64], p: usize) -> bool {
    for col in 0..p {
        let mut pivot = col;
        for r in (col + 1)..p {
            if m[r * p + col].abs() > m[pivot * p + col].abs() {
                pivot = r;
            }
        }
        if m[pivot * p + col].abs() < 1e-300 {
            return false;
        }
        if pivot != col {
            for j in 0..p {
                m.swap(col * p + j, pivot * p + j);
            }
            rhs.swap(col, pivot);
        }
        let d = m[col * p + col];
        for r in (col + 1)..p {
            let factor = m[r * p + col] / d;
            if factor != 0.0 {
                for j in col..p {
                    m[r * p + j] -= factor * m[col * p + j];
                }
                rhs[r] -= factor * rhs[col];
            }
        }
    }
    for col in (0..p).rev() {
        let mut acc = rhs[col];
        for j in (col + 1)..p {
            acc -= m[col * p + j] * rhs[j];
        }
        rhs[col] = acc / m[col * p + col];
    }
    true
}

/// Profiled log-likelihood of the phenotype at one vertex for a variance
/// triple, together with the generalized-least-squares coefficient solution.
pub fn profile_loglik(
    stats: &CohortSuffStats,
    v: usize,
    sigma2: [f64; 3],
) -> Option<(f64, Vec<f64>)> {
    let [sa, sc, se] = sigma2;
    let t = sa + sc + se;
    let (u1, w1, det1) = block_coefficients(t, sa + sc)?;
    let (u2, w2, det2) = block_coefficients(t, 0.5 * sa + sc)?;
    let u3 = 1.0 / t;

    let p = stats.p;
    let mut m = vec![0.0; p * p];
    let mut rhs = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            m[i * p + j] = u1 * stats.a_xx_mz[[i, j]]
                + w1 * stats.b_xx_mz[[i, j]]
                + u2 * stats.a_xx_dz[[i, j]]
                + w2 * stats.b_xx_dz[[i, j]]
                + u3 * stats.a_xx_s[[i, j]];
        }
        rhs[i] = u1 * stats.a_xy_mz[[i, v]]
            + w1 * stats.b_xy_mz[[i, v]]
            + u2 * stats.a_xy_dz[[i, v]]
            + w2 * stats.b_xy_dz[[i, v]]
            + u3 * stats.a_xy_s[[i, v]];
    }
    let rhs_orig = rhs.clone();
    if !solve_small(&mut m, &mut rhs, p) {
        return None;
    }
    let beta = rhs;

    let y_quad = u1 * stats.q_mz[v] + 2.0 * w1 * stats.c_mz[v]
        + u2 * stats.q_dz[v]
        + 2.0 * w2 * stats.c_dz[v]
        + u3 * stats.q_s[v];
    let beta_term: f64 = beta.iter().zip(&rhs_orig).map(|(b, r)| b * r).sum();
    let quad = y_quad - beta_term;

    let logdet = stats.n1 as f64 * det1.ln()
        + stats.n2 as f64 * det2.ln()
        + stats.n3 as f64 * t.ln();
    let ll = -0.5 * (logdet + quad + stats.n as f64 * LN_2PI);
    Some((ll, beta))
}

/// Log-likelihood of zero-mean residual data summarized by (possibly
/// kernel-weighted) block second moments. `mass` scales the log-determinant
/// and normalizing terms; it is 1 for plain data and the total kernel weight
/// for weighted fits.
#[allow(clippy::too_many_arguments)]
fn residual_loglik(
    n1: f64,
    n2: f64,
    n3: f64,
    mass: f64,
    q_mz: f64,
    c_mz: f64,
    q_dz: f64,
    c_dz: f64,
    q_s: f64,
    sigma2: [f64; 3],
) -> f64 {
    let [sa, sc, se] = sigma2;
    let t = sa + sc + se;
    let Some((u1, w1, det1)) = block_coefficients(t, sa + sc) else {
        return f64::NEG_INFINITY;
    };
    let Some((u2, w2, det2)) = block_coefficients(t, 0.5 * sa + sc) else {
        return f64::NEG_INFINITY;
    };
    let u3 = 1.0 / t;
    let n_total = 2.0 * n1 + 2.0 * n2 + n3;
    let logdet = n1 * det1.ln() + n2 * det2.ln() + n3 * t.ln();
    let quad = u1 * q_mz + 2.0 * w1 * c_mz + u2 * q_dz + 2.0 * w2 * c_dz + u3 * q_s;
    -0.5 * (mass * (logdet + n_total * LN_2PI) + quad)
}

// ---------------------------------------------------------------------------
// Fitting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct VertexFit {
    pub beta: Vec<f64>,
    pub sigma2: [f64; 3],
    pub loglik: f64,
    pub converged: bool,
    pub boundary: bool,
}

fn optimize_triple<F: FnMut([f64; 3]) -> f64>(
    mut neg_loglik: F,
    scale: f64,
) -> (([f64; 3], f64), bool) {
    // The genetic and common-environment components may come out negative:
    // the likelihood only needs each family block to stay positive
    // definite, and sign-constrained estimates would be biased upward at
    // every vertex where the sampling noise is comparable to the component
    // size. The residual component is kept strictly positive through its
    // logarithm. All three are optimized in units of the sample variance so
    // the search (finite-difference steps, line search) is scale-invariant.
    let lower = [-1e6, -1e6, VARIANCE_FLOOR_RATIO.ln()];
    let upper = [1e6, 1e6, 1e6f64.ln()];
    let starts = [
        [1.0 / 3.0, 1.0 / 3.0, (1.0f64 / 3.0).ln()],
        [0.1, 0.1, 0.8f64.ln()],
    ];
    let mut best: Option<(Vec<f64>, f64, bool)> = None;
    for start in starts {
        let r = minimize(
            |theta: &[f64]| {
                neg_loglik([theta[0] * scale, theta[1] * scale, theta[2].exp() * scale])
            },
            &start,
            &lower,
            &upper,
            &BfgsOptions::default(),
        );
        if best.as_ref().is_none_or(|(_, f, _)| r.f < *f) {
            best = Some((r.x, r.f, r.converged));
        }
    }
    let (x, f, converged) = best.expect("at least one start");
    (([x[0] * scale, x[1] * scale, x[2].exp() * scale], -f), converged)
}

/// Maximum-likelihood fit at a single vertex.
pub fn fit_mle_vertex(stats: &CohortSuffStats, v: usize) -> VertexFit {
    let sv = stats.sample_var[v];
    if !(sv > 0.0) || !sv.is_finite() {
        return VertexFit {
            beta: vec![0.0; stats.p],
            sigma2: [0.0; 3],
            loglik: f64::NEG_INFINITY,
            converged: false,
            boundary: true,
        };
    }
    let ((sigma2, loglik), converged) = optimize_triple(
        |s| match profile_loglik(stats, v, s) {
            Some((ll, _)) => -ll,
            None => f64::INFINITY,
        },
        sv,
    );
    let beta = profile_loglik(stats, v, sigma2)
        .map(|(_, b)| b)
        .unwrap_or_else(|| vec![0.0; stats.p]);
    VertexFit {
        beta,
        sigma2,
        loglik,
        converged,
        boundary: false,
    }
}

fn collect_fields(fits: Vec<VertexFit>, p: usize) -> ComponentFields {
    let v = fits.len();
    let mut beta = Array2::<f64>::zeros((p, v));
    let mut sigma2_a = Array1::<f64>::zeros(v);
    let mut sigma2_c = Array1::<f64>::zeros(v);
    let mut sigma2_e = Array1::<f64>::zeros(v);
    let mut loglik = Array1::<f64>::zeros(v);
    let mut converged = vec![false; v];
    let mut boundary = vec![false; v];
    for (j, fit) in fits.into_iter().enumerate() {
        for (i, &b) in fit.beta.iter().enumerate() {
            beta[[i, j]] = b;
        }
        sigma2_a[j] = fit.sigma2[0];
        sigma2_c[j] = fit.sigma2[1];
        sigma2_e[j] = fit.sigma2[2];
        loglik[j] = fit.loglik;
        converged[j] = fit.converged;
        boundary[j] = fit.boundary;
    }
    let (h2, _) = ComponentFields::heritability(&sigma2_a, &sigma2_c, &sigma2_e);
    ComponentFields {
        beta,
        sigma2_a,
        sigma2_c,
        sigma2_e,
        h2,
        loglik,
        converged,
        boundary,
    }
}

/// Pointwise maximum-likelihood fit at every vertex (parallel over vertices,
/// deterministic gather).
pub fn fit_mle_all(cohort: &TwinCohort) -> Result<ComponentFields> {
    if cohort.families.n_mz() == 0 || cohort.families.n_dz() == 0 {
        return Err(Error::Identifiability(
            "variance-component fit needs both monozygotic and dizygotic pairs".into(),
        ));
    }
    let stats = CohortSuffStats::new(cohort);
    let fits: Vec<VertexFit> = (0..cohort.v())
        .into_par_iter()
        .map(|v| fit_mle_vertex(&stats, v))
        .collect();
    Ok(collect_fields(fits, cohort.p()))
}

/// Kernel-weighted likelihood fit of residual variance components at every
/// vertex: the objective at vertex `v` is the kernel-weighted sum over
/// neighbouring vertices of the residual log-likelihood evaluated there.
/// Fixed-effect coefficients are taken from the unweighted fit that produced
/// the residuals.
pub fn fit_mwle(
    residuals_mat: &Array2<f64>,
    families: &FamilyIndex,
    beta: &Array2<f64>,
    kernel: &KernelOperator,
) -> ComponentFields {
    let stats = residual_stats(residuals_mat, families, None);
    let fits = fit_weighted_stats(&stats, kernel);
    let mut fields = collect_fields(fits, beta.nrows());
    fields.beta = beta.clone();
    fields
}

fn fit_weighted_stats(stats: &ResidualStats, kernel: &KernelOperator) -> Vec<VertexFit> {
    let k = kernel.raw();
    let wq_mz = k.matvec(stats.q_mz.as_slice().unwrap());
    let wc_mz = k.matvec(stats.c_mz.as_slice().unwrap());
    let wq_dz = k.matvec(stats.q_dz.as_slice().unwrap());
    let wc_dz = k.matvec(stats.c_dz.as_slice().unwrap());
    let wq_s = k.matvec(stats.q_s.as_slice().unwrap());
    let wms = k.matvec(stats.mean_square.as_slice().unwrap());
    let mass = kernel.weights();
    let (n1, n2, n3) = (stats.n1 as f64, stats.n2 as f64, stats.n3 as f64);

    (0..wq_mz.len())
        .into_par_iter()
        .map(|v| {
            let scale = wms[v] / mass[v];
            if !(scale > 0.0) || !scale.is_finite() {
                return VertexFit {
                    beta: vec![],
                    sigma2: [0.0; 3],
                    loglik: f64::NEG_INFINITY,
                    converged: false,
                    boundary: true,
                };
            }
            let ((sigma2, loglik), converged) = optimize_triple(
                |s| {
                    -residual_loglik(
                        n1, n2, n3, mass[v], wq_mz[v], wc_mz[v], wq_dz[v], wc_dz[v], wq_s[v], s,
                    )
                },
                scale,
            );
            VertexFit {
                beta: vec![],
                sigma2,
                loglik,
                converged,
                boundary: false,
            }
        })
        .collect()
}

/// One candidate's cross-validation record.
#[derive(Debug, Clone)]
pub struct CvPoint {
    pub h: f64,
    pub score: f64,
}

/// Deterministic fold assignment over families: depends only on the seed and
/// the family list.
pub fn family_folds(families: &FamilyIndex, n_folds: usize, seed: u64) -> Vec<usize> {
    let f = families.families().len();
    let mut order: Vec<usize> = (0..f).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold = vec![0usize; f];
    for (rank, &fam) in order.iter().enumerate() {
        fold[fam] = rank % n_folds;
    }
    fold
}

/// Selects the kernel bandwidth for the weighted fit by leave-families-out
/// cross-validation: for each candidate, variance fields are fitted on the
/// training families and scored by the plain log-likelihood of the held-out
/// families' residuals, summed over vertices and folds. Ties prefer the
/// smaller bandwidth.
pub fn cv_bandwidth_mwle(
    residuals_mat: &Array2<f64>,
    families: &FamilyIndex,
    kernels: &[KernelOperator],
    n_folds: usize,
    seed: u64,
) -> Result<(usize, Vec<CvPoint>)> {
    if kernels.is_empty() {
        return Err(Error::Invalid("empty bandwidth candidate list".into()));
    }
    let n_fam = families.families().len();
    if n_fam < n_folds {
        return Err(Error::Invalid(format!(
            "{n_fam} families cannot be split into {n_folds} folds"
        )));
    }
    let fold_of = family_folds(families, n_folds, seed);

    // Precompute train/held-out stats per fold (independent of bandwidth).
    let mut fold_stats = Vec::with_capacity(n_folds);
    for fold in 0..n_folds {
        let keep_train: Vec<bool> = fold_of.iter().map(|&f| f != fold).collect();
        let keep_test: Vec<bool> = fold_of.iter().map(|&f| f == fold).collect();
        let train = residual_stats(residuals_mat, families, Some(&keep_train));
        let test = residual_stats(residuals_mat, families, Some(&keep_test));
        fold_stats.push((train, test));
    }

    let mut trace = Vec::with_capacity(kernels.len());
    let mut best: Option<usize> = None;
    for (idx, kernel) in kernels.iter().enumerate() {
        let mut score = 0.0;
        for (train, test) in &fold_stats {
            let fits = fit_weighted_stats(train, kernel);
            for (v, fit) in fits.iter().enumerate() {
                if fit.boundary {
                    continue;
                }
                let ll = residual_loglik(
                    test.n1 as f64,
                    test.n2 as f64,
                    test.n3 as f64,
                    1.0,
                    test.q_mz[v],
                    test.c_mz[v],
                    test.q_dz[v],
                    test.c_dz[v],
                    test.q_s[v],
                    fit.sigma2,
                );
                if ll.is_finite() {
                    score += ll;
                }
            }
        }
        trace.push(CvPoint {
            h: kernel.h(),
            score,
        });
        // Kernels are in ascending bandwidth order; strict improvement keeps
        // the smaller bandwidth on ties.
        if best.is_none_or(|b| score > trace[b].score) {
            best = Some(idx);
        }
    }
    Ok((best.expect("nonempty candidates"), trace))
}
