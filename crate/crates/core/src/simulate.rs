//! Simulation truth and cohort generation on the sphere.
//!
//! The truth covariance functions are low-rank sums of outer products of
//! even-degree spherical harmonics, each scaled so that its mean diagonal
//! hits a fixed target; measurement error is an independent per-vertex
//! white-noise field. Cohorts are drawn from the twin family model: within
//! a monozygotic pair the additive field is fully shared, within a
//! dizygotic pair it splits into equally weighted shared and individual
//! halves, the common field is shared within any pair, and the smooth
//! unique field plus white noise are individual.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cohort::{block_family_index, cohort_from_parts, TwinCohort};
use crate::domain::VertexSet;
use crate::error::Result;
use crate::harmonics::real_harmonics_basis;
use crate::pointwise::ComponentFields;

/// 1-based rows of the harmonic basis spanning each truth component.
pub const BASIS_ROWS_A: [usize; 5] = [1, 7, 13, 19, 25];
pub const BASIS_ROWS_C: [usize; 5] = [2, 8, 14, 20, 26];
pub const BASIS_ROWS_EG: [usize; 6] = [1, 3, 9, 15, 21, 27];
pub const BASIS_ROWS_EL: [usize; 6] = [1, 4, 10, 16, 22, 28];

/// Mean-diagonal targets of the four variance components.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ComponentTargets {
    pub a: f64,
    pub c: f64,
    pub eg: f64,
    pub el: f64,
}

impl Default for ComponentTargets {
    fn default() -> Self {
        ComponentTargets {
            a: 0.015,
            c: 0.010,
            eg: 0.12,
            el: 0.03,
        }
    }
}

/// Ground truth for one simulated domain: covariance matrices at the grid,
/// the white-noise variance field, heritability, and the sampling roots.
#[derive(Debug, Clone)]
pub struct SimTruth {
    pub vertices: VertexSet,
    /// 28 x V evaluated harmonic basis.
    pub basis: Array2<f64>,
    pub sigma_a: Array2<f64>,
    pub sigma_c: Array2<f64>,
    pub sigma_eg: Array2<f64>,
    pub sigma2_el: Array1<f64>,
    /// True narrow-sense heritability field (white noise excluded).
    pub h2: Array1<f64>,
    /// Scale factors applied to the A, C, E-G, E-L basis blocks.
    pub alphas: [f64; 4],
    root_a: Array2<f64>,
    root_c: Array2<f64>,
    root_eg: Array2<f64>,
}

impl SimTruth {
    pub fn v(&self) -> usize {
        self.sigma2_el.len()
    }
}

/// Selects 1-based basis rows as a `|rows| x V` block.
fn basis_block(basis: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let v = basis.ncols();
    let mut block = Array2::<f64>::zeros((rows.len(), v));
    for (out, &r) in rows.iter().enumerate() {
        block.row_mut(out).assign(&basis.row(r - 1));
    }
    block
}

/// Scale factor alpha with `mean(diag(alpha * B^T B)) = target`.
fn diag_scale(block: &Array2<f64>, target: f64) -> f64 {
    let v = block.ncols() as f64;
    let trace: f64 = block.iter().map(|x| x * x).sum();
    target * v / trace
}

/// Builds the simulation truth on a domain: each covariance is
/// `alpha * B^T B` over its basis block with alpha set by the mean-diagonal
/// target, and the white-noise variances are the scaled diagonal of the
/// noise block's outer product.
pub fn build_truth(vertices: &VertexSet, targets: &ComponentTargets) -> Result<SimTruth> {
    let basis = real_harmonics_basis(vertices)?;
    let blocks = [
        basis_block(&basis, &BASIS_ROWS_A),
        basis_block(&basis, &BASIS_ROWS_C),
        basis_block(&basis, &BASIS_ROWS_EG),
    ];
    let alphas_sig = [
        diag_scale(&blocks[0], targets.a),
        diag_scale(&blocks[1], targets.c),
        diag_scale(&blocks[2], targets.eg),
    ];
    let mut covs = Vec::with_capacity(3);
    let mut roots = Vec::with_capacity(3);
    for (block, &alpha) in blocks.iter().zip(&alphas_sig) {
        covs.push(block.t().dot(block) * alpha);
        roots.push(block.t().to_owned() * alpha.sqrt());
    }
    let el_block = basis_block(&basis, &BASIS_ROWS_EL);
    let el_diag_unscaled: Array1<f64> = el_block
        .columns()
        .into_iter()
        .map(|col| col.iter().map(|x| x * x).sum())
        .collect();
    let alpha_el = diag_scale(&el_block, targets.el);
    let sigma2_el = el_diag_unscaled * alpha_el;

    let diag = |m: &Array2<f64>| -> Array1<f64> { m.diag().to_owned() };
    let (h2, _) = ComponentFields::heritability(
        &diag(&covs[0]),
        &diag(&covs[1]),
        &diag(&covs[2]),
    );

    let sigma_eg = covs.pop().expect("three covariances");
    let sigma_c = covs.pop().expect("two covariances");
    let sigma_a = covs.pop().expect("one covariance");
    let root_eg = roots.pop().expect("three roots");
    let root_c = roots.pop().expect("two roots");
    let root_a = roots.pop().expect("one root");
    Ok(SimTruth {
        vertices: vertices.clone(),
        basis,
        sigma_a,
        sigma_c,
        sigma_eg,
        sigma2_el,
        h2,
        alphas: [alphas_sig[0], alphas_sig[1], alphas_sig[2], alpha_el],
        root_a,
        root_c,
        root_eg,
    })
}

/// One mean-zero Gaussian field with covariance `root * root^T`.
fn sample_field(root: &Array2<f64>, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let z = Array1::from_shape_fn(root.ncols(), |_| rng.sample::<f64, _>(StandardNormal));
    root.dot(&z)
}

/// Per-vertex white noise with variances `sigma2_el`.
fn sample_noise(sigma2_el: &Array1<f64>, rng: &mut ChaCha8Rng) -> Array1<f64> {
    sigma2_el.mapv(f64::sqrt)
        * &Array1::from_shape_fn(sigma2_el.len(), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Simulation run configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Grid size on the unit sphere.
    pub v: usize,
    pub n_mz: usize,
    pub n_dz: usize,
    pub n_singletons: usize,
    pub seed: u64,
    pub targets: ComponentTargets,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            v: 1002,
            n_mz: 100,
            n_dz: 100,
            n_singletons: 200,
            seed: 7,
            targets: ComponentTargets::default(),
        }
    }
}

/// Draws one cohort from the truth. The RNG stream index separates
/// replicates sharing a master seed; identical `(seed, stream)` pairs give
/// bit-identical cohorts. The design matrix is an intercept plus one
/// standard-normal covariate whose true coefficients are zero.
pub fn simulate_cohort(
    truth: &SimTruth,
    n_mz: usize,
    n_dz: usize,
    n_singletons: usize,
    seed: u64,
    stream: u64,
) -> Result<TwinCohort> {
    let v = truth.v();
    let families = block_family_index(n_mz, n_dz, n_singletons);
    let n = families.n_individuals();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);

    let mut y = Array2::<f64>::zeros((n, v));
    let mut row = 0usize;
    let individual =
        |y: &mut Array2<f64>, row: usize, shared: &Array1<f64>, rng: &mut ChaCha8Rng| {
            let e = sample_field(&truth.root_eg, rng) + sample_noise(&truth.sigma2_el, rng);
            let mut out = y.row_mut(row);
            out.assign(shared);
            out += &e;
        };
    for _ in 0..n_mz {
        let shared = sample_field(&truth.root_a, &mut rng) + sample_field(&truth.root_c, &mut rng);
        for _ in 0..2 {
            individual(&mut y, row, &shared, &mut rng);
            row += 1;
        }
    }
    let half = 0.5f64.sqrt();
    for _ in 0..n_dz {
        let shared =
            sample_field(&truth.root_a, &mut rng) * half + sample_field(&truth.root_c, &mut rng);
        for _ in 0..2 {
            let own = sample_field(&truth.root_a, &mut rng) * half + &shared;
            individual(&mut y, row, &own, &mut rng);
            row += 1;
        }
    }
    for _ in 0..n_singletons {
        let shared = sample_field(&truth.root_a, &mut rng) + sample_field(&truth.root_c, &mut rng);
        individual(&mut y, row, &shared, &mut rng);
        row += 1;
    }

    let mut x = Array2::<f64>::zeros((n, 2));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        x[[i, 1]] = rng.sample(StandardNormal);
    }
    cohort_from_parts(
        y,
        x,
        vec!["intercept".into(), "x1".into()],
        families,
        truth.vertices.clone(),
    )
}
