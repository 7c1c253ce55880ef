//! Rank-constrained PSD covariance estimation by gradient descent on
//! low-rank factors.
//!
//! Each component covariance is parameterized as `Z Z^T` with `Z` a `V x d`
//! factor, which makes the estimate PSD by construction. The loss is a
//! kernel-weighted least-squares fit of the implied family covariances to
//! the residual cross products, with three channels: self products against
//! the total smooth covariance, monozygotic cross products against the sum
//! of additive and common components, and dizygotic cross products against
//! half-additive plus common.
//!
//! Expanding the quartic loss turns the per-entry kernel sums into a few
//! fixed `V x V` matrices (built once), after which objective and gradient
//! evaluations cost `O(V^2 d)` per iteration.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use std::path::Path;

use crate::cohort::FamilyIndex;
use crate::covariance::{Component, CovTag, CovTriple, CrossProducts};
use crate::eigenutil::{eigh_descending, top_eigenpairs, truncate_psd};
use crate::error::{Error, Result};
use crate::kernel::KernelOperator;
use crate::mat1::atomic_write_text;

/// Learning rate below which the descent is declared stalled.
const LAMBDA_FLOOR: f64 = 1e-15;

/// Low-rank factors for the three covariance components.
#[derive(Debug, Clone, PartialEq)]
pub struct CovFactorization {
    pub z_a: Array2<f64>,
    pub z_c: Array2<f64>,
    pub z_eg: Array2<f64>,
}

impl CovFactorization {
    pub fn zeros(v: usize, ranks: [usize; 3]) -> Self {
        CovFactorization {
            z_a: Array2::zeros((v, ranks[0])),
            z_c: Array2::zeros((v, ranks[1])),
            z_eg: Array2::zeros((v, ranks[2])),
        }
    }

    pub fn ranks(&self) -> [usize; 3] {
        [self.z_a.ncols(), self.z_c.ncols(), self.z_eg.ncols()]
    }

    /// Joint Frobenius norm across the three factors.
    pub fn norm(&self) -> f64 {
        let ss: f64 = [&self.z_a, &self.z_c, &self.z_eg]
            .iter()
            .map(|z| z.iter().map(|x| x * x).sum::<f64>())
            .sum();
        ss.sqrt()
    }

    /// `self - lambda * other`, componentwise.
    pub fn step(&self, lambda: f64, other: &CovFactorization) -> CovFactorization {
        CovFactorization {
            z_a: &self.z_a - lambda * &other.z_a,
            z_c: &self.z_c - lambda * &other.z_c,
            z_eg: &self.z_eg - lambda * &other.z_eg,
        }
    }

    /// Materializes the three `Z Z^T` covariance matrices.
    pub fn covariances(&self, tag: CovTag, h: f64) -> CovTriple {
        CovTriple {
            sigma_a: self.z_a.dot(&self.z_a.t()),
            sigma_c: self.z_c.dot(&self.z_c.t()),
            sigma_eg: self.z_eg.dot(&self.z_eg.t()),
            tag,
            h,
        }
    }
}

// ---------------------------------------------------------------------------
// Rank selection
// ---------------------------------------------------------------------------

/// A suggested factor rank plus the scree data it was derived from.
#[derive(Debug, Clone)]
pub struct RankSuggestion {
    pub suggested: usize,
    pub scree: Vec<f64>,
}

/// Index of the scree elbow: the interior position with the largest second
/// difference, i.e. the sharpest drop-off. The returned value is the number
/// of leading eigenvalues before the elbow.
fn elbow_index(eigenvalues: &[f64]) -> usize {
    if eigenvalues.len() < 3 {
        return eigenvalues.iter().filter(|&&e| e > 0.0).count().max(1);
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_i = 1;
    for i in 1..eigenvalues.len() - 1 {
        let d2 = eigenvalues[i - 1] - 2.0 * eigenvalues[i] + eigenvalues[i + 1];
        if d2 > best {
            best = d2;
            best_i = i;
        }
    }
    best_i
}

/// Suggests a factor rank from a descending eigenvalue list. With more
/// vertices than individuals the rank of each cross-product contrast is
/// structurally bounded by the family design (twin-pair count for the
/// additive and common components, individuals minus monozygotic pairs for
/// the unique smooth component), so that bound is the suggestion; otherwise
/// the scree elbow is used.
pub fn select_rank(
    eigenvalues: &[f64],
    families: &FamilyIndex,
    component: Component,
) -> RankSuggestion {
    let v = eigenvalues.len();
    let n = families.n_individuals();
    let suggested = if v > n {
        match component {
            Component::A | Component::C => families.n_mz() + families.n_dz(),
            Component::EG => n - families.n_mz(),
        }
    } else {
        elbow_index(eigenvalues)
    };
    RankSuggestion {
        suggested,
        scree: eigenvalues.to_vec(),
    }
}

/// Builds a factor `Z = U_d diag(sqrt(lambda_d))` from the top eigenpairs of
/// a symmetric matrix, keeping only strictly positive eigenvalues among the
/// requested leading `rank`. Returns the factor and the rank actually used.
pub fn factor_from_matrix(m: &ArrayView2<f64>, rank: usize) -> Result<(Array2<f64>, usize)> {
    let v = m.nrows();
    let rank = rank.min(v);
    let (vals, vecs) = top_eigenpairs(m, rank)?;
    let tol = vals.first().copied().unwrap_or(0.0).max(0.0) * 1e-12;
    let kept = vals.iter().take_while(|&&e| e > tol).count();
    if kept < rank {
        log::warn!(
            "requested rank {rank} clamped to {kept} strictly positive eigenvalues"
        );
    }
    let mut z = Array2::<f64>::zeros((v, kept));
    for j in 0..kept {
        let scale = vals[j].sqrt();
        let col = vecs.column(j);
        z.column_mut(j).assign(&col.mapv(|x| x * scale));
    }
    Ok((z, kept))
}

/// Initial factors from a symmetric first-stage covariance triple.
pub fn initial_factors(
    triple: &CovTriple,
    ranks: [usize; 3],
) -> Result<(CovFactorization, [usize; 3])> {
    let (z_a, ra) = factor_from_matrix(&triple.sigma_a.view(), ranks[0])?;
    let (z_c, rc) = factor_from_matrix(&triple.sigma_c.view(), ranks[1])?;
    let (z_eg, re) = factor_from_matrix(&triple.sigma_eg.view(), ranks[2])?;
    Ok((CovFactorization { z_a, z_c, z_eg }, [ra, rc, re]))
}

/// Eigenvalue truncation of a symmetric covariance triple onto the PSD
/// cone; returns the projected triple and the positive-eigenvalue counts.
pub fn truncate_triple(triple: &CovTriple, tag: CovTag) -> Result<(CovTriple, [usize; 3])> {
    let (sigma_a, ka) = truncate_psd(&triple.sigma_a.view())?;
    let (sigma_c, kc) = truncate_psd(&triple.sigma_c.view())?;
    let (sigma_eg, ke) = truncate_psd(&triple.sigma_eg.view())?;
    Ok((
        CovTriple {
            sigma_a,
            sigma_c,
            sigma_eg,
            tag,
            h: triple.h,
        },
        [ka, kc, ke],
    ))
}

// ---------------------------------------------------------------------------
// Objective and gradients
// ---------------------------------------------------------------------------

/// Precomputed matrices and constants for the low-rank descent: the
/// kernel-aggregated cross-product channels, the kernel mass vector, and the
/// factor-independent data term of the loss.
#[derive(Debug, Clone)]
pub struct PsdProblem {
    /// `K S0 K` with the diagonal-corrected self products.
    g0: Array2<f64>,
    /// `K (2 S0 + 2 S1 + S2) K` — the additive-channel aggregate.
    g_a: Array2<f64>,
    /// `K (2 S0 + 2 S1 + 2 S2) K` — the common-channel aggregate.
    g_c: Array2<f64>,
    /// Kernel row masses `w(v)`.
    w: Array1<f64>,
    /// Factor-independent part of the loss (quartic in the residuals).
    c_data: f64,
    h: f64,
    v: usize,
}

impl PsdProblem {
    pub fn new(
        cp: &CrossProducts,
        residuals: &Array2<f64>,
        families: &FamilyIndex,
        sigma2_el: &Array1<f64>,
        kernel: &KernelOperator,
    ) -> Result<Self> {
        let v = cp.v();
        if kernel.n_vertices() != v || residuals.ncols() != v || sigma2_el.len() != v {
            return Err(Error::Invalid(
                "cross products, residuals, noise vector, and kernel disagree on vertex count"
                    .into(),
            ));
        }
        if families.n_individuals() != residuals.nrows() {
            return Err(Error::Invalid(
                "family index does not match residual row count".into(),
            ));
        }
        let n = residuals.nrows() as f64;
        let w = kernel.weights().to_owned();

        let s_a_star = 2.0 * &cp.s0 + 2.0 * &cp.s1 + &cp.s2;
        let s_c_star = 2.0 * (&cp.s0 + &cp.s1 + &cp.s2);
        let g0 = kernel.raw().sandwich_sym(&cp.s0.view());
        let g_a = kernel.raw().sandwich_sym(&s_a_star.view());
        let g_c = kernel.raw().sandwich_sym(&s_c_star.view());

        // Data constant: the loss at zero factors. Writing u_r for the
        // mass-weighted squared norm of row r and x_i for a pair's
        // mass-weighted residual inner product, the three channels reduce to
        // one pass over rows and pairs.
        let sq = residuals.mapv(|x| x * x);
        let u = sq.dot(&w);
        let s0u_diag = sq.sum_axis(Axis(0)) / n;
        let mut c_data = u.iter().map(|x| x * x).sum::<f64>() / n;
        for vtx in 0..v {
            let ww = w[vtx] * w[vtx];
            let s2 = sigma2_el[vtx];
            c_data += ww * s2 * s2 - 2.0 * ww * s2 * s0u_diag[vtx];
        }
        let pair_channel = |pairs: Vec<(usize, usize)>| -> f64 {
            let count = pairs.len() as f64;
            let mut acc = 0.0;
            for (r1, r2) in pairs {
                let x: f64 = residuals
                    .row(r1)
                    .iter()
                    .zip(residuals.row(r2).iter())
                    .zip(w.iter())
                    .map(|((&a, &b), &wv)| a * b * wv)
                    .sum();
                acc += 0.5 * (u[r1] * u[r2] + x * x);
            }
            acc / count
        };
        c_data += pair_channel(families.mz_pairs().collect());
        c_data += pair_channel(families.dz_pairs().collect());

        Ok(PsdProblem {
            g0,
            g_a,
            g_c,
            w,
            c_data,
            h: kernel.h(),
            v,
        })
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Loss at zero factors.
    pub fn data_constant(&self) -> f64 {
        self.c_data
    }

    fn check_shapes(&self, f: &CovFactorization) -> Result<()> {
        if f.z_a.nrows() != self.v || f.z_c.nrows() != self.v || f.z_eg.nrows() != self.v {
            return Err(Error::Invalid(format!(
                "factor rows must equal {} vertices",
                self.v
            )));
        }
        Ok(())
    }

    /// Mass-scaled copy of a factor (`diag(w) Z`).
    fn mass_scaled(&self, z: &Array2<f64>) -> Array2<f64> {
        z * &self.w.view().insert_axis(Axis(1))
    }

    /// `tr(Z^T G Z)`: the linear pairing of `Z Z^T` with a channel matrix.
    fn pair(g: &Array2<f64>, z: &Array2<f64>) -> f64 {
        let gz = g.dot(z);
        gz.iter().zip(z.iter()).map(|(a, b)| a * b).sum()
    }

    /// Mass-weighted Hadamard pairing of `Zx Zx^T` with `Zy Zy^T`:
    /// the squared Frobenius norm of `Zx^T diag(w) Zy`.
    fn hadamard_pair(&self, zx: &Array2<f64>, wy: &Array2<f64>) -> f64 {
        let m = zx.t().dot(wy);
        m.iter().map(|x| x * x).sum()
    }

    /// Evaluates the kernel-weighted least-squares loss at the factors.
    pub fn objective(&self, f: &CovFactorization) -> Result<f64> {
        self.check_shapes(f)?;
        let wa = self.mass_scaled(&f.z_a);
        let wc = self.mass_scaled(&f.z_c);
        let we = self.mass_scaled(&f.z_eg);
        let linear = Self::pair(&self.g_a, &f.z_a)
            + Self::pair(&self.g_c, &f.z_c)
            + 2.0 * Self::pair(&self.g0, &f.z_eg);
        let quad = 2.25 * self.hadamard_pair(&f.z_a, &wa)
            + 3.0 * self.hadamard_pair(&f.z_c, &wc)
            + self.hadamard_pair(&f.z_eg, &we)
            + 5.0 * self.hadamard_pair(&f.z_a, &wc)
            + 2.0 * self.hadamard_pair(&f.z_a, &we)
            + 2.0 * self.hadamard_pair(&f.z_c, &we);
        Ok(self.c_data - linear + quad)
    }

    /// `(Zx Zx^T (.) w w^T) Z'` without forming the `V x V` product:
    /// `diag(w) Zx (Zx^T diag(w) Z')`.
    fn hadamard_apply(&self, zx: &Array2<f64>, wx: &Array2<f64>, zp: &Array2<f64>) -> Array2<f64> {
        let inner = zx.t().dot(&self.mass_scaled(zp));
        wx.dot(&inner)
    }

    /// Analytic gradients of the loss with respect to the three factors.
    pub fn gradients(&self, f: &CovFactorization) -> Result<CovFactorization> {
        self.check_shapes(f)?;
        let wa = self.mass_scaled(&f.z_a);
        let wc = self.mass_scaled(&f.z_c);
        let we = self.mass_scaled(&f.z_eg);

        let grad_a = {
            let lin = self.g_a.dot(&f.z_a);
            let had = 4.5 * self.hadamard_apply(&f.z_a, &wa, &f.z_a)
                + 5.0 * self.hadamard_apply(&f.z_c, &wc, &f.z_a)
                + 2.0 * self.hadamard_apply(&f.z_eg, &we, &f.z_a);
            -2.0 * (lin - had)
        };
        let grad_c = {
            let lin = self.g_c.dot(&f.z_c);
            let had = 5.0 * self.hadamard_apply(&f.z_a, &wa, &f.z_c)
                + 6.0 * self.hadamard_apply(&f.z_c, &wc, &f.z_c)
                + 2.0 * self.hadamard_apply(&f.z_eg, &we, &f.z_c);
            -2.0 * (lin - had)
        };
        let grad_eg = {
            let lin = self.g0.dot(&f.z_eg);
            let had = self.hadamard_apply(&f.z_a, &wa, &f.z_eg)
                + self.hadamard_apply(&f.z_c, &wc, &f.z_eg)
                + self.hadamard_apply(&f.z_eg, &we, &f.z_eg);
            -4.0 * (lin - had)
        };
        Ok(CovFactorization {
            z_a: grad_a,
            z_c: grad_c,
            z_eg: grad_eg,
        })
    }
}

// ---------------------------------------------------------------------------
// Descent
// ---------------------------------------------------------------------------

/// Tuning parameters for the factor descent.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DescentConfig {
    /// Convergence threshold relative to the initial gradient norm.
    pub epsilon: f64,
    /// Initial learning rate.
    pub learning_rate: f64,
    /// Maximum number of accepted iterations.
    pub max_iterations: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        DescentConfig {
            epsilon: 1e-4,
            learning_rate: 0.1,
            max_iterations: 1000,
        }
    }
}

/// One accepted descent iterate.
#[derive(Debug, Clone, Copy)]
pub struct DescentStep {
    pub iter: usize,
    pub grad_norm: f64,
    pub lambda: f64,
    pub objective: f64,
}

/// Trajectory and termination status of a descent run.
#[derive(Debug, Clone)]
pub struct DescentReport {
    /// Accepted iterates, starting with the initial point as `iter = 0`.
    pub steps: Vec<DescentStep>,
    pub initial_grad_norm: f64,
    pub final_grad_norm: f64,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    /// Gradient norm fell below `epsilon` times its initial value.
    pub converged: bool,
    /// Learning rate underflowed before convergence.
    pub stalled: bool,
    pub final_lambda: f64,
}

impl DescentReport {
    /// Writes the trajectory as `iter,grad_norm,lambda,objective` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        atomic_write_text(path, |out| {
            writeln!(out, "iter,grad_norm,lambda,objective")?;
            for s in &self.steps {
                writeln!(out, "{},{},{},{}", s.iter, s.grad_norm, s.lambda, s.objective)?;
            }
            Ok(())
        })
    }
}

/// Gradient descent on the low-rank factors with norm-guarded steps: a step
/// whose gradient norm exceeds the current one is rolled back and retried
/// with the learning rate halved (the halving persists). Terminates when the
/// gradient norm drops below `epsilon` times its initial value, the
/// iteration budget is exhausted (flagged, not an error), or the learning
/// rate underflows (flagged as stalled).
pub fn fit_psd_ace(
    init: &CovFactorization,
    problem: &PsdProblem,
    config: &DescentConfig,
) -> Result<(CovFactorization, CovTriple, DescentReport)> {
    let mut z = init.clone();
    let mut grad = problem.gradients(&z)?;
    let mut norm = grad.norm();
    let alpha0 = norm;
    let initial_objective = problem.objective(&z)?;
    let mut lambda = config.learning_rate;
    let mut stalled = false;
    let mut steps = vec![DescentStep {
        iter: 0,
        grad_norm: norm,
        lambda,
        objective: initial_objective,
    }];

    let mut iterations = 0usize;
    while norm > config.epsilon * alpha0 && iterations < config.max_iterations {
        // Trial step with rollback: shrink the learning rate until the
        // gradient norm stops increasing.
        loop {
            let candidate = z.step(lambda, &grad);
            let cand_grad = problem.gradients(&candidate)?;
            let cand_norm = cand_grad.norm();
            if cand_norm <= norm {
                z = candidate;
                grad = cand_grad;
                norm = cand_norm;
                break;
            }
            lambda *= 0.5;
            if lambda < LAMBDA_FLOOR {
                stalled = true;
                break;
            }
        }
        if stalled {
            break;
        }
        iterations += 1;
        steps.push(DescentStep {
            iter: iterations,
            grad_norm: norm,
            lambda,
            objective: problem.objective(&z)?,
        });
    }

    let final_objective = problem.objective(&z)?;
    let converged = norm <= config.epsilon * alpha0;
    if !converged {
        log::warn!(
            "factor descent stopped without convergence: gradient ratio {:.3e} after {} iterations{}",
            if alpha0 > 0.0 { norm / alpha0 } else { 0.0 },
            iterations,
            if stalled { " (learning rate underflow)" } else { "" }
        );
    }
    debug_assert!(
        final_objective <= initial_objective + 1e-9 * initial_objective.abs().max(1.0),
        "descent must not increase the objective"
    );
    let triple = z.covariances(CovTag::PsdAce, problem.h());
    let report = DescentReport {
        steps,
        initial_grad_norm: alpha0,
        final_grad_norm: norm,
        initial_objective,
        final_objective,
        iterations,
        converged,
        stalled,
        final_lambda: lambda,
    };
    Ok((z, triple, report))
}

/// Smallest eigenvalue relative to the largest, for PSD validity checks.
pub fn relative_min_eigenvalue(m: &ArrayView2<f64>) -> Result<f64> {
    let (vals, _) = eigh_descending(m)?;
    let max = vals[0].abs().max(1e-300);
    Ok(vals[vals.len() - 1] / max)
}
