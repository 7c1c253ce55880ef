//! Closed-form smoothed covariance estimators built from residual cross
//! products.
//!
//! Residual second-moment matrices summarize all the covariance information
//! the family design provides:
//!
//! * `S0` — average self cross product over all individuals, diagonal
//!   corrected for measurement-error variance; expectation is the total
//!   smooth covariance (additive + common + unique-smooth).
//! * `S1` — symmetrized cross products within monozygotic pairs;
//!   expectation additive + common.
//! * `S2` — same for dizygotic pairs; expectation half-additive + common.
//!
//! Linear contrasts of these give raw component estimates, which are
//! denoised either by the diagonal-excluding closed form (kernel regression
//! on off-diagonal entries) or by the sandwich smoother (row-normalized
//! kernel on both sides).

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::cohort::{FamilyIndex, FamilyKind};
use crate::error::{Error, Result};
use crate::kernel::KernelOperator;
use crate::smoothing::GcvPoint;

/// Which estimator produced a covariance triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum CovTag {
    SFsem,
    SSw,
    PsdFsem,
    PsdSw,
    PsdAce,
}

impl CovTag {
    pub fn label(self) -> &'static str {
        match self {
            CovTag::SFsem => "s-fsem",
            CovTag::SSw => "s-sw",
            CovTag::PsdFsem => "psd-fsem",
            CovTag::PsdSw => "psd-sw",
            CovTag::PsdAce => "psd-ace",
        }
    }
}

/// Estimated covariance matrices for the three model components.
#[derive(Debug, Clone)]
pub struct CovTriple {
    pub sigma_a: Array2<f64>,
    pub sigma_c: Array2<f64>,
    pub sigma_eg: Array2<f64>,
    pub tag: CovTag,
    /// Bandwidth (degrees) of the kernel used to build the estimate.
    pub h: f64,
}

impl CovTriple {
    pub fn component(&self, which: Component) -> &Array2<f64> {
        match which {
            Component::A => &self.sigma_a,
            Component::C => &self.sigma_c,
            Component::EG => &self.sigma_eg,
        }
    }
}

/// The three covariance components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    A,
    C,
    EG,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::A, Component::C, Component::EG];

    pub fn label(self) -> &'static str {
        match self {
            Component::A => "a",
            Component::C => "c",
            Component::EG => "eg",
        }
    }
}

// ---------------------------------------------------------------------------
// Cross products
// ---------------------------------------------------------------------------

/// Uncorrected average self cross product `(1/N) R^T R`.
pub fn raw_second_moment(residuals: &Array2<f64>) -> Array2<f64> {
    let n = residuals.nrows() as f64;
    residuals.t().dot(residuals) / n
}

/// Residual cross-product summaries (`V x V`, symmetric).
#[derive(Debug, Clone)]
pub struct CrossProducts {
    /// `(1/N) R^T R - diag(sigma2_el)`.
    pub s0: Array2<f64>,
    /// `(1/(2 n1)) (R11^T R12 + R12^T R11)`.
    pub s1: Array2<f64>,
    /// Dizygotic analog of `s1`.
    pub s2: Array2<f64>,
    pub n: usize,
    pub n1: usize,
    pub n2: usize,
}

fn twin_split(
    residuals: &Array2<f64>,
    families: &FamilyIndex,
    kind: FamilyKind,
) -> (Array2<f64>, Array2<f64>) {
    let pairs: Vec<(usize, usize)> = match kind {
        FamilyKind::Mz => families.mz_pairs().collect(),
        FamilyKind::Dz => families.dz_pairs().collect(),
        FamilyKind::Singleton => unreachable!("singletons are not paired"),
    };
    let first: Vec<usize> = pairs.iter().map(|&(a, _)| a).collect();
    let second: Vec<usize> = pairs.iter().map(|&(_, b)| b).collect();
    (
        residuals.select(Axis(0), &first),
        residuals.select(Axis(0), &second),
    )
}

/// Monozygotic cross-product matrix `S1` on its own. The noise stage needs
/// it for bandwidth selection before any measurement-error estimate exists.
pub fn mz_cross_moment(
    residuals: &Array2<f64>,
    families: &FamilyIndex,
) -> Result<Array2<f64>> {
    let n1 = families.n_mz();
    if n1 == 0 {
        return Err(Error::Identifiability(
            "cross products need monozygotic pairs".into(),
        ));
    }
    let (r11, r12) = twin_split(residuals, families, FamilyKind::Mz);
    Ok((r11.t().dot(&r12) + r12.t().dot(&r11)) / (2.0 * n1 as f64))
}

impl CrossProducts {
    /// Builds the summaries from residuals in canonical family order and a
    /// per-vertex measurement-error variance (subtracted from the diagonal
    /// of the self-product term).
    pub fn new(
        residuals: &Array2<f64>,
        families: &FamilyIndex,
        sigma2_el: &Array1<f64>,
    ) -> Result<Self> {
        if families.n_mz() == 0 || families.n_dz() == 0 {
            return Err(Error::Identifiability(
                "cross products need both monozygotic and dizygotic pairs".into(),
            ));
        }
        if sigma2_el.len() != residuals.ncols() {
            return Err(Error::Invalid(format!(
                "measurement-error vector length {} does not match {} vertices",
                sigma2_el.len(),
                residuals.ncols()
            )));
        }
        if sigma2_el.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::Invalid(
                "measurement-error variances must be finite and nonnegative".into(),
            ));
        }
        let mut s0 = raw_second_moment(residuals);
        for (v, &s) in sigma2_el.iter().enumerate() {
            s0[[v, v]] -= s;
        }
        let (r21, r22) = twin_split(residuals, families, FamilyKind::Dz);
        let n1 = families.n_mz();
        let n2 = families.n_dz();
        let s1 = mz_cross_moment(residuals, families)?;
        let s2 = (r21.t().dot(&r22) + r22.t().dot(&r21)) / (2.0 * n2 as f64);
        Ok(CrossProducts {
            s0,
            s1,
            s2,
            n: residuals.nrows(),
            n1,
            n2,
        })
    }

    pub fn v(&self) -> usize {
        self.s0.nrows()
    }

    /// Additive-component contrast `2 S1 - 2 S2`.
    pub fn s_a(&self) -> Array2<f64> {
        2.0 * (&self.s1 - &self.s2)
    }

    /// Common-environment contrast `2 S2 - S1`.
    pub fn s_c(&self) -> Array2<f64> {
        2.0 * &self.s2 - &self.s1
    }

    /// Unique smooth-environment contrast `S0 - S1`.
    pub fn s_eg(&self) -> Array2<f64> {
        &self.s0 - &self.s1
    }
}

// ---------------------------------------------------------------------------
// Measurement-error (nugget) estimation
// ---------------------------------------------------------------------------

/// How the bandwidth-selection criterion for the diagonal-excluding signal
/// estimator is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseBandwidthRule {
    /// Raw reconstruction error of the monozygotic cross-product matrix,
    /// `||S1 - K~ S1 K~||_F^2`.
    #[default]
    Raw,
    /// Same residual divided by the squared Kronecker GCV denominator
    /// `(1 - tr(K~)^2 / V^2)^2`.
    GcvCorrected,
}

/// Result of measurement-error estimation.
#[derive(Debug, Clone)]
pub struct NoiseEstimate {
    /// Per-vertex measurement-error variance, clipped at zero.
    pub sigma2_el: Array1<f64>,
    /// Diagonal of the smoothed total signal covariance.
    pub signal_diag: Array1<f64>,
    /// Chosen bandwidth (degrees).
    pub h: f64,
    /// Index of the chosen bandwidth among the candidates.
    pub index: usize,
    /// Number of vertices clipped to zero.
    pub n_clipped: usize,
    /// Selection criterion per candidate (`NaN` = skipped).
    pub trace: Vec<GcvPoint>,
}

/// Checks that the elementwise divisor `w w^T - K (.) K` of the
/// diagonal-excluding estimator is strictly positive. Off-diagonal entries
/// are positive whenever vertices are distinct, so only the diagonal and the
/// kernel support need inspection.
fn divisor_is_positive(kernel: &KernelOperator) -> bool {
    let w = kernel.weights();
    let k = kernel.raw();
    for v in 0..k.n_rows() {
        let (cols, vals) = k.row(v);
        for (&j, &kvj) in cols.iter().zip(vals) {
            if w[v] * w[j] - kvj * kvj <= 0.0 {
                return false;
            }
        }
    }
    true
}

/// Smoothed total-signal covariance: kernel regression on the off-diagonal
/// entries of the uncorrected second-moment matrix,
/// `{K (S0u - diag S0u) K} ./ (w w^T - K (.) K)`
/// where `(.)` is the elementwise product. Errors if any divisor entry is
/// nonpositive (bandwidth too small to borrow strength across vertices).
pub fn smooth_signal_covariance(
    s0_raw: &Array2<f64>,
    kernel: &KernelOperator,
) -> Result<Array2<f64>> {
    let v = s0_raw.nrows();
    if kernel.n_vertices() != v {
        return Err(Error::Invalid("kernel and matrix dimensions differ".into()));
    }
    if !divisor_is_positive(kernel) {
        return Err(Error::Numerical(format!(
            "bandwidth {} leaves vertices with no off-diagonal kernel mass; \
             increase the bandwidth",
            kernel.h()
        )));
    }
    let mut hollow = s0_raw.clone();
    for i in 0..v {
        hollow[[i, i]] = 0.0;
    }
    let mut numer = kernel.raw().sandwich_sym(&hollow.view());
    let w = kernel.weights();
    let ksq = kernel.raw().to_dense();
    for i in 0..v {
        for j in 0..v {
            let divisor = w[i] * w[j] - ksq[[i, j]] * ksq[[i, j]];
            numer[[i, j]] /= divisor;
        }
    }
    Ok(numer)
}

/// Selects the bandwidth for the signal estimator by minimizing the
/// reconstruction error of the monozygotic cross products, skipping
/// candidates whose divisor is not positive (and, in GCV-corrected mode,
/// candidates without residual degrees of freedom). Ties keep the smaller
/// bandwidth.
pub fn select_noise_bandwidth(
    s1: &Array2<f64>,
    kernels: &[KernelOperator],
    rule: NoiseBandwidthRule,
) -> Result<(usize, Vec<GcvPoint>)> {
    if kernels.is_empty() {
        return Err(Error::Invalid("empty bandwidth candidate list".into()));
    }
    let v = s1.nrows() as f64;
    let mut trace = Vec::with_capacity(kernels.len());
    let mut best: Option<(usize, f64)> = None;
    for (idx, kernel) in kernels.iter().enumerate() {
        if !divisor_is_positive(kernel) {
            trace.push(GcvPoint {
                h: kernel.h(),
                gcv: f64::NAN,
            });
            continue;
        }
        let smoothed = kernel.tilde().sandwich_sym(&s1.view());
        let resid: f64 = s1
            .iter()
            .zip(smoothed.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let score = match rule {
            NoiseBandwidthRule::Raw => resid,
            NoiseBandwidthRule::GcvCorrected => {
                let tr = kernel.trace_tilde();
                let dof = 1.0 - (tr * tr) / (v * v);
                if dof <= 0.0 {
                    trace.push(GcvPoint {
                        h: kernel.h(),
                        gcv: f64::NAN,
                    });
                    continue;
                }
                resid / (dof * dof)
            }
        };
        trace.push(GcvPoint {
            h: kernel.h(),
            gcv: score,
        });
        if best.is_none_or(|(_, b)| score < b) {
            best = Some((idx, score));
        }
    }
    match best {
        Some((idx, _)) => Ok((idx, trace)),
        None => Err(Error::Invalid(
            "no valid bandwidth candidate for measurement-error estimation".into(),
        )),
    }
}

/// Estimates per-vertex measurement-error variance as the gap between the
/// smoothed-fit total variance and the diagonal of the smoothed signal
/// covariance; negative estimates are clipped to zero and counted.
pub fn estimate_noise(
    s0_raw: &Array2<f64>,
    s1: &Array2<f64>,
    sigma2_total: &Array1<f64>,
    kernels: &[KernelOperator],
    rule: NoiseBandwidthRule,
) -> Result<NoiseEstimate> {
    let (index, trace) = select_noise_bandwidth(s1, kernels, rule)?;
    let kernel = &kernels[index];
    let signal = smooth_signal_covariance(s0_raw, kernel)?;
    let signal_diag = signal.diag().to_owned();
    let mut n_clipped = 0usize;
    let sigma2_el = ndarray::Zip::from(sigma2_total)
        .and(&signal_diag)
        .map_collect(|&total, &sig| {
            let raw = total - sig;
            if raw < 0.0 {
                n_clipped += 1;
                0.0
            } else {
                raw
            }
        });
    Ok(NoiseEstimate {
        sigma2_el,
        signal_diag,
        h: kernel.h(),
        index,
        n_clipped,
        trace,
    })
}

// ---------------------------------------------------------------------------
// Closed-form estimators
// ---------------------------------------------------------------------------

/// Kernel-regression sum with the diagonal excluded: `K (S - diag S) K`.
fn hollow_sandwich(kernel: &KernelOperator, s: &Array2<f64>) -> Array2<f64> {
    let mut hollow = s.clone();
    for i in 0..hollow.nrows() {
        hollow[[i, i]] = 0.0;
    }
    kernel.raw().sandwich_sym(&hollow.view())
}

/// Diagonal-excluding closed-form estimator: per-entry kernel regression of
/// the component contrasts on off-diagonal cross products, normalized by the
/// paired kernel mass `w*(v,v') = sum_{v0 != v0'} k(v,v0) k(v',v0')`.
pub fn sfsem_estimates(cp: &CrossProducts, kernel: &KernelOperator) -> Result<CovTriple> {
    let v = cp.v();
    if kernel.n_vertices() != v {
        return Err(Error::Invalid("kernel and matrix dimensions differ".into()));
    }
    let sw0 = hollow_sandwich(kernel, &cp.s0);
    let sw1 = hollow_sandwich(kernel, &cp.s1);
    let sw2 = hollow_sandwich(kernel, &cp.s2);

    // w* = w w^T - K K^T (the v0 = v0' terms removed from the full sum).
    let w = kernel.weights();
    let kdense = kernel.raw().to_dense();
    let ksq = kernel.raw().mul_dense(&kdense.view());
    let mut wstar = Array2::<f64>::zeros((v, v));
    for i in 0..v {
        for j in 0..v {
            wstar[[i, j]] = w[i] * w[j] - ksq[[i, j]];
        }
    }
    if wstar.iter().any(|&x| x <= 0.0) {
        return Err(Error::Numerical(format!(
            "bandwidth {} has vertex pairs with no off-diagonal kernel mass; \
             increase the bandwidth",
            kernel.h()
        )));
    }

    let mut sigma_a = Array2::<f64>::zeros((v, v));
    let mut sigma_c = Array2::<f64>::zeros((v, v));
    let mut sigma_eg = Array2::<f64>::zeros((v, v));
    for i in 0..v {
        for j in 0..v {
            let ws = wstar[[i, j]];
            sigma_a[[i, j]] = 2.0 * (sw1[[i, j]] - sw2[[i, j]]) / ws;
            sigma_c[[i, j]] = (-sw1[[i, j]] + 2.0 * sw2[[i, j]]) / ws;
            sigma_eg[[i, j]] = (sw0[[i, j]] - sw1[[i, j]]) / ws;
        }
    }
    Ok(CovTriple {
        sigma_a,
        sigma_c,
        sigma_eg,
        tag: CovTag::SFsem,
        h: kernel.h(),
    })
}

/// Sandwich estimator: the row-normalized smoother applied to both sides of
/// each component contrast, `K~ S K~^T`.
pub fn sandwich_estimates(cp: &CrossProducts, kernel: &KernelOperator) -> Result<CovTriple> {
    if kernel.n_vertices() != cp.v() {
        return Err(Error::Invalid("kernel and matrix dimensions differ".into()));
    }
    let kt = kernel.tilde();
    Ok(CovTriple {
        sigma_a: kt.sandwich_sym(&cp.s_a().view()),
        sigma_c: kt.sandwich_sym(&cp.s_c().view()),
        sigma_eg: kt.sandwich_sym(&cp.s_eg().view()),
        tag: CovTag::SSw,
        h: kernel.h(),
    })
}

/// GCV for the sandwich smoother, treating the two-sided smoothing as the
/// Kronecker-product linear smoother acting on the vectorized matrix: the
/// effective degrees of freedom is `tr(K~)^2` out of `V^2`. Returns the
/// winning candidate index (ties keep the smaller bandwidth).
pub fn gcv_cov_bandwidth(
    s: &ArrayView2<f64>,
    kernels: &[KernelOperator],
) -> Result<(usize, Vec<GcvPoint>)> {
    if kernels.is_empty() {
        return Err(Error::Invalid("empty bandwidth candidate list".into()));
    }
    let v = s.nrows() as f64;
    let mut trace = Vec::with_capacity(kernels.len());
    let mut best: Option<(usize, f64)> = None;
    for (idx, kernel) in kernels.iter().enumerate() {
        let tr = kernel.trace_tilde();
        let dof = 1.0 - (tr * tr) / (v * v);
        if dof <= 0.0 {
            trace.push(GcvPoint {
                h: kernel.h(),
                gcv: f64::NAN,
            });
            continue;
        }
        let smoothed = kernel.tilde().sandwich_sym(s);
        let resid: f64 = s
            .iter()
            .zip(smoothed.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let score = resid / (v * v * dof * dof);
        trace.push(GcvPoint {
            h: kernel.h(),
            gcv: score,
        });
        if best.is_none_or(|(_, b)| score < b) {
            best = Some((idx, score));
        }
    }
    match best {
        Some((idx, _)) => Ok((idx, trace)),
        None => Err(Error::Invalid(
            "no covariance bandwidth candidate left residual degrees of freedom".into(),
        )),
    }
}

/// Maximum absolute asymmetry `max |M - M^T|`, for validity checks.
pub fn max_asymmetry(m: &ArrayView2<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}
