//! The estimator family behind the `--estimator` switch, with the shared
//! staged pipeline they draw from.
//!
//! Every estimator consumes a [`FitContext`], which lazily computes and
//! caches the pipeline stages (pointwise fit, field smoothing, residuals,
//! measurement-error estimation, residual cross products, covariance
//! bandwidth, closed-form covariance estimates, factorized descent), so
//! that fitting several estimators on one cohort shares all common work.
//!
//! Field estimators (`mle`, `mwle`, `smle`) produce per-vertex variance
//! fields; covariance estimators (`s-fsem`, `psd-fsem`, `s-sw`, `psd-sw`,
//! `psd-ace`) produce the three full covariance matrices, from whose
//! diagonals the variance fields and heritability are read off.

use ndarray::{Array1, Array2};
use std::collections::BTreeMap;
use std::time::Instant;

use crate::cohort::TwinCohort;
use crate::covariance::{
    estimate_noise, gcv_cov_bandwidth, mz_cross_moment, raw_second_moment, sandwich_estimates,
    sfsem_estimates, Component, CovTriple, CrossProducts, NoiseBandwidthRule, NoiseEstimate,
};
use crate::eigenutil::eigh_descending;
use crate::error::{Error, Result};
use crate::kernel::{log_spaced_grid, KernelBank, KernelOperator};
use crate::pointwise::{
    cv_bandwidth_mwle, fit_mle_all, fit_mwle, residuals as fixed_effect_residuals,
    ComponentFields, CvPoint,
};
use crate::psd::{
    fit_psd_ace, initial_factors, select_rank, truncate_triple, CovFactorization, DescentConfig,
    DescentReport,
};
use crate::smoothing::{GcvPoint, SmoothedFit};

/// What an estimator produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// Per-vertex variance fields only.
    Fields,
    /// Full covariance matrices (fields read off the diagonals).
    Covariances,
}

impl EstimatorKind {
    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Fields => "fields",
            EstimatorKind::Covariances => "covariances",
        }
    }
}

/// A log-spaced bandwidth grid; the lower bound defaults to just above the
/// minimum inter-vertex spacing when unset.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub lo: Option<f64>,
    pub hi: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn bandwidths(&self, min_spacing_deg: f64) -> Result<Vec<f64>> {
        let lo = self.lo.unwrap_or(min_spacing_deg * 1.05);
        if lo >= self.hi {
            return Err(Error::Invalid(format!(
                "bandwidth grid lower bound {lo:.3} is not below the upper bound {:.3}",
                self.hi
            )));
        }
        log_spaced_grid(lo, self.hi, self.n)
    }
}

/// Factor ranks for the descent estimator: fixed per component, or chosen
/// from the initialization's eigenvalue spectra.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankChoice {
    Auto,
    Fixed([usize; 3]),
}

/// Configuration of the full fitting pipeline.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FitConfig {
    /// Grid for smoothing the pointwise parameter fields.
    pub smooth_grid: GridSpec,
    /// Grid for the weighted-likelihood bandwidth search.
    pub mwle_grid: GridSpec,
    /// Grid for the measurement-error (noise) bandwidth.
    pub noise_grid: GridSpec,
    /// Grid for the covariance-smoothing bandwidth.
    pub cov_grid: GridSpec,
    pub noise_rule: NoiseBandwidthRule,
    pub ranks: RankChoice,
    pub descent: DescentConfig,
    pub cv_folds: usize,
    pub cv_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            smooth_grid: GridSpec {
                lo: None,
                hi: 45.0,
                n: 20,
            },
            mwle_grid: GridSpec {
                lo: Some(0.5),
                hi: 10.0,
                n: 8,
            },
            noise_grid: GridSpec {
                lo: None,
                hi: 22.5,
                n: 10,
            },
            cov_grid: GridSpec {
                lo: None,
                hi: 22.5,
                n: 12,
            },
            noise_rule: NoiseBandwidthRule::Raw,
            ranks: RankChoice::Fixed([8, 8, 6]),
            descent: DescentConfig::default(),
            cv_folds: 5,
            cv_seed: 17,
        }
    }
}

/// Sidecar metadata describing one fit.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FitMeta {
    pub estimator: String,
    pub kind: String,
    /// Selected bandwidths by stage name (degrees).
    pub bandwidths: BTreeMap<String, f64>,
    /// Factor ranks actually used (descent estimator only).
    pub ranks: Option<[usize; 3]>,
    /// Positive eigenvalues kept by the final projection (eigenvalue-
    /// truncated estimators only).
    pub kept_eigenvalues: Option<[usize; 3]>,
    /// Vertices whose measurement-error estimate was clipped at zero.
    pub noise_clipped: Option<usize>,
    /// Vertices where the heritability denominator was nonpositive.
    pub h2_zero_denominators: usize,
    /// Gradient-descent convergence (descent estimator only).
    pub converged: Option<bool>,
    pub iterations: Option<usize>,
    pub wall_seconds: f64,
}

impl FitMeta {
    fn new(estimator: &str, kind: EstimatorKind) -> Self {
        FitMeta {
            estimator: estimator.to_string(),
            kind: kind.label().to_string(),
            bandwidths: BTreeMap::new(),
            ranks: None,
            kept_eigenvalues: None,
            noise_clipped: None,
            h2_zero_denominators: 0,
            converged: None,
            iterations: None,
            wall_seconds: 0.0,
        }
    }
}

/// One estimator's output: variance fields and heritability always, the
/// covariance matrices and diagnostics where the estimator produces them.
#[derive(Debug, Clone)]
pub struct EstimateSet {
    pub sigma2_a: Array1<f64>,
    pub sigma2_c: Array1<f64>,
    /// Unique variance: the full unique+error total for field estimators,
    /// the smooth unique component for covariance estimators.
    pub sigma2_e: Array1<f64>,
    pub h2: Array1<f64>,
    pub cov: Option<CovTriple>,
    pub sigma2_el: Option<Array1<f64>>,
    pub beta: Option<Array2<f64>>,
    pub descent: Option<DescentReport>,
    pub meta: FitMeta,
}

/// Lazily computed pipeline stages over one cohort.
pub struct FitContext<'a> {
    cohort: &'a TwinCohort,
    config: &'a FitConfig,
    distances: Option<Array2<f64>>,
    smooth_bank: Option<KernelBank>,
    mwle_bank: Option<KernelBank>,
    noise_bank: Option<KernelBank>,
    cov_bank: Option<KernelBank>,
    mle: Option<ComponentFields>,
    mwle: Option<(ComponentFields, f64, Vec<CvPoint>)>,
    smoothed: Option<SmoothedFit>,
    residuals: Option<Array2<f64>>,
    noise: Option<NoiseEstimate>,
    cross: Option<CrossProducts>,
    cov_choice: Option<(usize, Vec<GcvPoint>)>,
    ssw: Option<CovTriple>,
    sfsem: Option<CovTriple>,
    psd: Option<(CovFactorization, CovTriple, DescentReport, [usize; 3])>,
}

impl<'a> FitContext<'a> {
    pub fn new(cohort: &'a TwinCohort, config: &'a FitConfig) -> Self {
        FitContext {
            cohort,
            config,
            distances: None,
            smooth_bank: None,
            mwle_bank: None,
            noise_bank: None,
            cov_bank: None,
            mle: None,
            mwle: None,
            smoothed: None,
            residuals: None,
            noise: None,
            cross: None,
            cov_choice: None,
            ssw: None,
            sfsem: None,
            psd: None,
        }
    }

    pub fn cohort(&self) -> &TwinCohort {
        self.cohort
    }

    pub fn config(&self) -> &FitConfig {
        self.config
    }

    fn ensure_distances(&mut self) -> Result<()> {
        if self.distances.is_none() {
            self.distances = Some(self.cohort.vertices.distance_matrix());
        }
        Ok(())
    }

    fn build_bank(&mut self, grid: GridSpec) -> Result<KernelBank> {
        self.ensure_distances()?;
        let spacing = self.cohort.vertices.min_spacing_deg();
        let bandwidths = grid.bandwidths(spacing)?;
        KernelBank::build(&self.distances.as_ref().unwrap().view(), &bandwidths)
    }

    fn ensure_mle(&mut self) -> Result<()> {
        if self.mle.is_none() {
            self.mle = Some(fit_mle_all(self.cohort)?);
        }
        Ok(())
    }

    pub fn mle(&mut self) -> Result<&ComponentFields> {
        self.ensure_mle()?;
        Ok(self.mle.as_ref().unwrap())
    }

    fn ensure_mwle(&mut self) -> Result<()> {
        if self.mwle.is_some() {
            return Ok(());
        }
        self.ensure_mle()?;
        if self.mwle_bank.is_none() {
            self.mwle_bank = Some(self.build_bank(self.config.mwle_grid)?);
        }
        // Weighted fits run on residuals from the unweighted coefficients.
        let beta = self.mle.as_ref().unwrap().beta.clone();
        let resid =
            fixed_effect_residuals(&self.cohort.phenotype, &self.cohort.design, &beta);
        let kernels = self.mwle_bank.as_ref().unwrap().kernels();
        let (index, trace) = cv_bandwidth_mwle(
            &resid,
            &self.cohort.families,
            kernels,
            self.config.cv_folds,
            self.config.cv_seed,
        )?;
        let fields = fit_mwle(&resid, &self.cohort.families, &beta, &kernels[index]);
        self.mwle = Some((fields, kernels[index].h(), trace));
        Ok(())
    }

    pub fn mwle(&mut self) -> Result<&(ComponentFields, f64, Vec<CvPoint>)> {
        self.ensure_mwle()?;
        Ok(self.mwle.as_ref().unwrap())
    }

    fn ensure_smoothed(&mut self) -> Result<()> {
        if self.smoothed.is_some() {
            return Ok(());
        }
        self.ensure_mle()?;
        if self.smooth_bank.is_none() {
            self.smooth_bank = Some(self.build_bank(self.config.smooth_grid)?);
        }
        let (fit, resid) = crate::smoothing::smle(
            self.cohort,
            self.mle.as_ref().unwrap(),
            self.smooth_bank.as_ref().unwrap().kernels(),
        )?;
        self.smoothed = Some(fit);
        self.residuals = Some(resid);
        Ok(())
    }

    pub fn smoothed(&mut self) -> Result<&SmoothedFit> {
        self.ensure_smoothed()?;
        Ok(self.smoothed.as_ref().unwrap())
    }

    /// Residuals from the smoothed fixed-effect coefficients: the input to
    /// every covariance estimator.
    pub fn residuals(&mut self) -> Result<&Array2<f64>> {
        self.ensure_smoothed()?;
        Ok(self.residuals.as_ref().unwrap())
    }

    fn ensure_noise(&mut self) -> Result<()> {
        if self.noise.is_some() {
            return Ok(());
        }
        self.ensure_smoothed()?;
        if self.noise_bank.is_none() {
            self.noise_bank = Some(self.build_bank(self.config.noise_grid)?);
        }
        let resid = self.residuals.as_ref().unwrap();
        let s0_raw = raw_second_moment(resid);
        let s1 = mz_cross_moment(resid, &self.cohort.families)?;
        // Total variance from the smoothed fields: the noise estimate is
        // the gap between this total and the smoothed signal diagonal.
        let sm = &self.smoothed.as_ref().unwrap().fields;
        let sigma2_total = &sm.sigma2_a + &sm.sigma2_c + &sm.sigma2_e;
        self.noise = Some(estimate_noise(
            &s0_raw,
            &s1,
            &sigma2_total,
            self.noise_bank.as_ref().unwrap().kernels(),
            self.config.noise_rule,
        )?);
        Ok(())
    }

    pub fn noise(&mut self) -> Result<&NoiseEstimate> {
        self.ensure_noise()?;
        Ok(self.noise.as_ref().unwrap())
    }

    fn ensure_cross(&mut self) -> Result<()> {
        if self.cross.is_some() {
            return Ok(());
        }
        self.ensure_noise()?;
        self.cross = Some(CrossProducts::new(
            self.residuals.as_ref().unwrap(),
            &self.cohort.families,
            &self.noise.as_ref().unwrap().sigma2_el,
        )?);
        Ok(())
    }

    pub fn cross(&mut self) -> Result<&CrossProducts> {
        self.ensure_cross()?;
        Ok(self.cross.as_ref().unwrap())
    }

    fn ensure_cov_choice(&mut self) -> Result<()> {
        if self.cov_choice.is_some() {
            return Ok(());
        }
        self.ensure_cross()?;
        if self.cov_bank.is_none() {
            self.cov_bank = Some(self.build_bank(self.config.cov_grid)?);
        }
        // One shared bandwidth for the three components, selected on the
        // additive contrast.
        let s_a = self.cross.as_ref().unwrap().s_a();
        let (index, trace) =
            gcv_cov_bandwidth(&s_a.view(), self.cov_bank.as_ref().unwrap().kernels())?;
        self.cov_choice = Some((index, trace));
        Ok(())
    }

    /// The selected covariance-smoothing kernel (shared by all covariance
    /// estimators).
    pub fn cov_kernel(&mut self) -> Result<&KernelOperator> {
        self.ensure_cov_choice()?;
        let index = self.cov_choice.as_ref().unwrap().0;
        Ok(&self.cov_bank.as_ref().unwrap().kernels()[index])
    }

    pub fn cov_gcv_trace(&mut self) -> Result<&[GcvPoint]> {
        self.ensure_cov_choice()?;
        Ok(&self.cov_choice.as_ref().unwrap().1)
    }

    fn ensure_sfsem(&mut self) -> Result<()> {
        if self.sfsem.is_some() {
            return Ok(());
        }
        self.ensure_cov_choice()?;
        let index = self.cov_choice.as_ref().unwrap().0;
        let kernel = &self.cov_bank.as_ref().unwrap().kernels()[index];
        self.sfsem = Some(sfsem_estimates(self.cross.as_ref().unwrap(), kernel)?);
        Ok(())
    }

    pub fn sfsem(&mut self) -> Result<&CovTriple> {
        self.ensure_sfsem()?;
        Ok(self.sfsem.as_ref().unwrap())
    }

    fn ensure_ssw(&mut self) -> Result<()> {
        if self.ssw.is_some() {
            return Ok(());
        }
        self.ensure_cov_choice()?;
        let index = self.cov_choice.as_ref().unwrap().0;
        let kernel = &self.cov_bank.as_ref().unwrap().kernels()[index];
        self.ssw = Some(sandwich_estimates(self.cross.as_ref().unwrap(), kernel)?);
        Ok(())
    }

    pub fn ssw(&mut self) -> Result<&CovTriple> {
        self.ensure_ssw()?;
        Ok(self.ssw.as_ref().unwrap())
    }

    /// The factor ranks the descent estimator will use: the configured
    /// fixed ranks, or per-component suggestions from the symmetric
    /// initialization's eigenvalue spectra.
    pub fn resolve_ranks(&mut self) -> Result<[usize; 3]> {
        match self.config.ranks {
            RankChoice::Fixed(r) => Ok(r),
            RankChoice::Auto => {
                self.ensure_ssw()?;
                let ssw = self.ssw.as_ref().unwrap();
                let mut out = [0usize; 3];
                for (slot, component) in Component::ALL.iter().enumerate() {
                    let (vals, _) = eigh_descending(&ssw.component(*component).view())?;
                    out[slot] = select_rank(
                        vals.as_slice().expect("contiguous"),
                        &self.cohort.families,
                        *component,
                    )
                    .suggested;
                }
                Ok(out)
            }
        }
    }

    fn ensure_psd(&mut self) -> Result<()> {
        if self.psd.is_some() {
            return Ok(());
        }
        self.ensure_ssw()?;
        let ranks = self.resolve_ranks()?;
        let (init, used) = initial_factors(self.ssw.as_ref().unwrap(), ranks)?;
        let index = self.cov_choice.as_ref().unwrap().0;
        let kernel = &self.cov_bank.as_ref().unwrap().kernels()[index];
        let problem = crate::psd::PsdProblem::new(
            self.cross.as_ref().unwrap(),
            self.residuals.as_ref().unwrap(),
            &self.cohort.families,
            &self.noise.as_ref().unwrap().sigma2_el,
            kernel,
        )?;
        let (factors, triple, report) = fit_psd_ace(&init, &problem, &self.config.descent)?;
        self.psd = Some((factors, triple, report, used));
        Ok(())
    }

    pub fn psd(
        &mut self,
    ) -> Result<&(CovFactorization, CovTriple, DescentReport, [usize; 3])> {
        self.ensure_psd()?;
        Ok(self.psd.as_ref().unwrap())
    }

    fn smoothed_beta(&mut self) -> Result<Array2<f64>> {
        self.ensure_smoothed()?;
        Ok(self.smoothed.as_ref().unwrap().fields.beta.clone())
    }
}

/// One member of the estimator family.
pub trait CovarianceEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn kind(&self) -> EstimatorKind;
    fn fit(&self, ctx: &mut FitContext<'_>) -> Result<EstimateSet>;
}

fn set_from_fields(name: &str, fields: &ComponentFields) -> EstimateSet {
    let mut meta = FitMeta::new(name, EstimatorKind::Fields);
    meta.h2_zero_denominators = fields
        .h2
        .iter()
        .zip(fields.sigma2_a.iter())
        .filter(|&(&h, &a)| h == 0.0 && a > 0.0)
        .count();
    EstimateSet {
        sigma2_a: fields.sigma2_a.clone(),
        sigma2_c: fields.sigma2_c.clone(),
        sigma2_e: fields.sigma2_e.clone(),
        h2: fields.h2.clone(),
        cov: None,
        sigma2_el: None,
        beta: Some(fields.beta.clone()),
        descent: None,
        meta,
    }
}

/// Heritability from covariance diagonals, left unclipped: symmetric
/// estimators can produce negative variance estimates, and those carry
/// through to the reported heritability (PSD-constrained diagonals are
/// nonnegative, so their ratios land in `[0, 1]` on their own).
fn cov_heritability(
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
                a / denom
            } else {
                zeros += 1;
                0.0
            }
        });
    (h2, zeros)
}

fn set_from_cov(
    name: &str,
    triple: CovTriple,
    noise: &NoiseEstimate,
    beta: Array2<f64>,
) -> EstimateSet {
    let sigma2_a = triple.sigma_a.diag().to_owned();
    let sigma2_c = triple.sigma_c.diag().to_owned();
    let sigma2_e = triple.sigma_eg.diag().to_owned();
    let (h2, zeros) = cov_heritability(&sigma2_a, &sigma2_c, &sigma2_e);
    let mut meta = FitMeta::new(name, EstimatorKind::Covariances);
    meta.h2_zero_denominators = zeros;
    meta.noise_clipped = Some(noise.n_clipped);
    meta.bandwidths.insert("noise".into(), noise.h);
    meta.bandwidths.insert("covariance".into(), triple.h);
    EstimateSet {
        sigma2_a,
        sigma2_c,
        sigma2_e,
        h2,
        cov: Some(triple),
        sigma2_el: Some(noise.sigma2_el.clone()),
        beta: Some(beta),
        descent: None,
        meta,
    }
}

struct Mle;
struct Mwle;
struct Smle;
struct SFsem;
struct PsdFsem;
struct SSw;
struct PsdSw;
struct PsdAce;

impl CovarianceEstimator for Mle {
    fn name(&self) -> &'static str {
        "mle"
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Fields
    }
    fn fit(&self, ctx: &mut FitContext<'_>) -> Result<EstimateSet> {
        let t0 = Instant::now();
        let fields = ctx.mle()?.clone();
        let mut set = set_from_fields(self.name(), &fields);
        set.meta.wall_seconds = t0.elapsed().as_secs_f64();
        Ok(set)
    }
}

impl CovarianceEstimator for Mwle {
    fn name(&self) -> &'static str {
        "mwle"
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Fields
    }
    fn fit(&self, ctx: &mut FitContext<'_>) -> Result<EstimateSet> {
        let t0 = Instant::now();
        let (fields, h, _) = ctx.mwle()?.clone();
        let mut set = set_from_fields(self.name(), &fields);
        set.meta.bandwidths.insert("mwle".into(), h);
        set.meta.wall_seconds = t0.elapsed().as_secs_f64();
        Ok(set)
    }
}

impl CovarianceEstimator for Smle {
    fn name(&self) -> &'static str {
        "smle"
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Fields
    }
    fn fit(&self, ctx: &mut FitContext<'_>) -> Result<EstimateSet> {
        let t0 = Instant::now();
        let smoothed = ctx.smoothed()?;
        let fields = smoothed.fields.clone();
        let bandwidths = smoothed.sigma_bandwidths;
        let mut set = set_from_fields(self.name(), &fields);
        for (label, h) in ["sigma_a", "sigma_c", "sigma_e"].iter().zip(bandwidths) {
            set.meta.bandwidths.insert((*label).into(), h);
        }
        set.meta.wall_seconds = t0.elapsed().as_secs_f64();
        Ok(set)
    }
}

impl CovarianceEstimator for SFsem {
    fn name(&self) -> &'static str {
        "s-fsem"
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Covariances
    }
    fn fit(&self, ctx: &mut FitContext<'_>) -> Result<EstimateSet> {
        let t0 = Instant::now();
        let triple = ctx.sfsem()?.clone();
        let beta = ctx.smoothed_beta()?;
        let noise = ctx.noise()?.clone();
        let mut set = set_from_cov(self.name(), triple, &noise, beta);
        set.meta.wall_seconds = t0.elapsed().as_secs_f64();
        Ok(set)
    }
}

impl CovarianceEstimator for PsdFsem {
    fn name(&self) -> &'static str {
        "psd-fsem"
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Covariances
    }
    fn fit(&self, ctx: &mut FitContext<'_>) -> Result<EstimateSet> {
        let t0 = Instant::now();
        let (triple, kept) = truncate_triple(ctx.sfsem()?, crate::covariance::CovTag::PsdFsem)?;
        let beta = ctx.smoothed_beta()?;
        let noise = ctx.noise()?.clone();
        let mut set = set_from_cov(self.name(), triple, &noise, beta);
        set.meta.kept_eigenvalues = Some(kept);
        set.meta.wall_seconds = t0.elapsed().as_secs_f64();
        Ok(set)
    }
}

impl CovarianceEstimator for SSw {
    fn name(&self) -> &'static str {
        "s-sw"
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Covariances
    }
    fn fit(&self, ctx: &mut FitContext<'_>) -> Result<EstimateSet> {
        let t0 = Instant::now();
        let triple = ctx.ssw()?.clone();
        let beta = ctx.smoothed_beta()?;
        let noise = ctx.noise()?.clone();
        let mut set = set_from_cov(self.name(), triple, &noise, beta);
        set.meta.wall_seconds = t0.elapsed().as_secs_f64();
        Ok(set)
    }
}

impl CovarianceEstimator for PsdSw {
    fn name(&self) -> &'static str {
        "psd-sw"
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Covariances
    }
    fn fit(&self, ctx: &mut FitContext<'_>) -> Result<EstimateSet> {
        let t0 = Instant::now();
        let (triple, kept) = truncate_triple(ctx.ssw()?, crate::covariance::CovTag::PsdSw)?;
        let beta = ctx.smoothed_beta()?;
        let noise = ctx.noise()?.clone();
        let mut set = set_from_cov(self.name(), triple, &noise, beta);
        set.meta.kept_eigenvalues = Some(kept);
        set.meta.wall_seconds = t0.elapsed().as_secs_f64();
        Ok(set)
    }
}

impl CovarianceEstimator for PsdAce {
    fn name(&self) -> &'static str {
        "psd-ace"
    }
    fn kind(&self) -> EstimatorKind {
        EstimatorKind::Covariances
    }
    fn fit(&self, ctx: &mut FitContext<'_>) -> Result<EstimateSet> {
        let t0 = Instant::now();
        let (_, triple, report, ranks) = ctx.psd()?.clone();
        let beta = ctx.smoothed_beta()?;
        let noise = ctx.noise()?.clone();
        let mut set = set_from_cov(self.name(), triple, &noise, beta);
        set.meta.ranks = Some(ranks);
        set.meta.converged = Some(report.converged);
        set.meta.iterations = Some(report.iterations);
        set.descent = Some(report);
        set.meta.wall_seconds = t0.elapsed().as_secs_f64();
        Ok(set)
    }
}

/// All built-in estimators, addressable by name.
pub struct EstimatorRegistry {
    estimators: Vec<Box<dyn CovarianceEstimator>>,
}

impl EstimatorRegistry {
    pub fn builtin() -> Self {
        EstimatorRegistry {
            estimators: vec![
                Box::new(Mle),
                Box::new(Mwle),
                Box::new(Smle),
                Box::new(SFsem),
                Box::new(PsdFsem),
                Box::new(SSw),
                Box::new(PsdSw),
                Box::new(PsdAce),
            ],
        }
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.estimators.iter().map(|e| e.name()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&dyn CovarianceEstimator> {
        self.estimators
            .iter()
            .find(|e| e.name() == name)
            .map(|e| e.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn CovarianceEstimator> {
        self.estimators.iter().map(|e| e.as_ref())
    }

    /// Fits one named estimator, erroring on unknown names.
    pub fn fit(&self, name: &str, ctx: &mut FitContext<'_>) -> Result<EstimateSet> {
        let est = self.get(name).ok_or_else(|| {
            Error::Invalid(format!(
                "unknown estimator {name:?}; available: {}",
                self.names().join(", ")
            ))
        })?;
        est.fit(ctx)
    }
}
