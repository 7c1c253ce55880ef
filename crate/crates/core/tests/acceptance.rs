//! Acceptance suite for the estimator family.
//!
//! A shared Monte Carlo run of the reference simulation design (1002
//! sphere vertices; 100 monozygotic pairs, 100 dizygotic pairs, 200
//! singletons per cohort) scores the estimators against pinned quality
//! windows; self-contained exactness and structure checks follow. One
//! line per criterion is written to stderr (`PASS`/`FAIL`) and the test
//! fails if any criterion does.
//!
//! The replicate count defaults to 30. Set `ACCEPTANCE_REPLICATES` to
//! probe with fewer replicates; the pinned windows assume the full count,
//! so reduced runs are for debugging only.

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use twinspan::cohort::{block_family_index, FamilyIndex};
use twinspan::covariance::{sandwich_estimates, sfsem_estimates, Component, CrossProducts};
use twinspan::covfun::{
    partition_fit_combine, InterpFactors, InverseThreshold, Location, PartitionInputs,
};
use twinspan::domain::{Hemisphere, VertexSet};
use twinspan::eigenutil::eigh_descending;
use twinspan::estimators::{EstimatorRegistry, FitConfig, FitContext, GridSpec};
use twinspan::kernel::KernelOperator;
use twinspan::metrics::{ise_field, ise_matrix};
use twinspan::psd::{relative_min_eigenvalue, CovFactorization, DescentConfig, PsdProblem};
use twinspan::simulate::{build_truth, simulate_cohort, ComponentTargets, SimTruth};

const V: usize = 1002;
const N_MZ: usize = 100;
const N_DZ: usize = 100;
const N_SINGLETONS: usize = 200;
const MASTER_SEED: u64 = 7;
const DEFAULT_REPLICATES: usize = 30;

/// Estimators scored by the Monte Carlo criteria.
const FIELD_ESTIMATORS: [&str; 2] = ["mle", "mwle"];
const COV_ESTIMATORS: [&str; 4] = ["s-fsem", "psd-fsem", "psd-sw", "psd-ace"];
const PSD_ESTIMATORS: [&str; 3] = ["psd-fsem", "psd-sw", "psd-ace"];

fn stderr_line(text: &str) {
    // Bypass the test harness's output capture so the per-criterion report
    // is visible even when the test passes.
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
}

// ---------------------------------------------------------------------------
// Shared Monte Carlo harness
// ---------------------------------------------------------------------------

#[derive(Default)]
struct RepRecord {
    /// Integrated squared error of covariance estimates, keyed by
    /// (estimator, component); V^2-normalized.
    ise: BTreeMap<(&'static str, &'static str), f64>,
    /// Spatial mean of the additive variance estimate (matrix diagonal for
    /// covariance estimators, the field itself for pointwise ones).
    mean_diag_a: BTreeMap<&'static str, f64>,
    /// Integrated squared error of the heritability field; V-normalized.
    h2_ise: BTreeMap<&'static str, f64>,
    /// Smallest relative eigenvalue across all PSD-constrained outputs.
    min_rel_eig: f64,
    initial_objective: f64,
    final_objective: f64,
}

/// Replicate-0 state reused by the partition and interpolation criteria.
struct Capture {
    residuals: Array2<f64>,
    sigma2_el: Array1<f64>,
    families: FamilyIndex,
    vertices: VertexSet,
    cov_h: f64,
    ranks: [usize; 3],
    descent: DescentConfig,
    psd_sigma_a: Array2<f64>,
    psd_factors: CovFactorization,
}

fn run_replicate(
    truth: &SimTruth,
    config: &FitConfig,
    rep: usize,
    capture: &mut Option<Capture>,
) -> RepRecord {
    let cohort = simulate_cohort(truth, N_MZ, N_DZ, N_SINGLETONS, MASTER_SEED, rep as u64)
        .expect("cohort simulation");
    let registry = EstimatorRegistry::builtin();
    let mut ctx = FitContext::new(&cohort, config);
    let mut rec = RepRecord {
        min_rel_eig: f64::INFINITY,
        ..RepRecord::default()
    };

    for name in FIELD_ESTIMATORS {
        let set = registry.fit(name, &mut ctx).expect(name);
        rec.mean_diag_a.insert(name, set.sigma2_a.mean().unwrap());
        rec.h2_ise.insert(
            name,
            ise_field(&set.h2.view(), &truth.h2.view()).unwrap(),
        );
    }
    for name in COV_ESTIMATORS {
        let set = registry.fit(name, &mut ctx).expect(name);
        let cov = set.cov.as_ref().expect("covariance output");
        rec.ise.insert(
            (name, "sigma_a"),
            ise_matrix(&cov.sigma_a.view(), &truth.sigma_a.view()).unwrap(),
        );
        rec.ise.insert(
            (name, "sigma_c"),
            ise_matrix(&cov.sigma_c.view(), &truth.sigma_c.view()).unwrap(),
        );
        rec.mean_diag_a
            .insert(name, cov.sigma_a.diag().mean().unwrap());
        rec.h2_ise.insert(
            name,
            ise_field(&set.h2.view(), &truth.h2.view()).unwrap(),
        );
        if PSD_ESTIMATORS.contains(&name) {
            for m in [&cov.sigma_a, &cov.sigma_c, &cov.sigma_eg] {
                let rel = relative_min_eigenvalue(&m.view()).unwrap();
                rec.min_rel_eig = rec.min_rel_eig.min(rel);
            }
        }
        if name == "psd-ace" {
            let report = set.descent.as_ref().expect("descent report");
            rec.initial_objective = report.initial_objective;
            rec.final_objective = report.final_objective;
            stderr_line(&format!(
                "  psd-ace descent: {} iters converged={} stalled={} obj {:.6e} -> {:.6e} grad ratio {:.3e}",
                report.iterations,
                report.converged,
                report.stalled,
                report.initial_objective,
                report.final_objective,
                report.final_grad_norm / report.initial_grad_norm.max(f64::MIN_POSITIVE),
            ));
            if rep == 0 {
                let cov_h = ctx.cov_kernel().unwrap().h();
                let ranks = ctx.resolve_ranks().unwrap();
                let residuals = ctx.residuals().unwrap().clone();
                let noise = ctx.noise().unwrap();
                let sigma2_el = noise.sigma2_el.clone();
                stderr_line(&format!(
                    "  noise stage: mean sigma2_el {:.5} bandwidth {:.3} clipped {}; cov bandwidth {:.3}",
                    noise.sigma2_el.mean().unwrap(),
                    noise.h,
                    noise.n_clipped,
                    cov_h,
                ));
                let (factors, triple, _, _) = ctx.psd().unwrap();
                *capture = Some(Capture {
                    residuals,
                    sigma2_el,
                    families: cohort.families.clone(),
                    vertices: cohort.vertices.clone(),
                    cov_h,
                    ranks,
                    descent: config.descent,
                    psd_sigma_a: triple.sigma_a.clone(),
                    psd_factors: factors.clone(),
                });
            }
        }
    }
    rec
}

// ---------------------------------------------------------------------------
// Criterion helpers
// ---------------------------------------------------------------------------

struct Criterion {
    index: usize,
    label: &'static str,
    pass: bool,
    detail: String,
}

fn mean_over<F: Fn(&RepRecord) -> f64>(reps: &[RepRecord], f: F) -> f64 {
    reps.iter().map(f).sum::<f64>() / reps.len() as f64
}

/// Count of eigenvalues exceeding a relative positivity threshold.
fn count_positive(m: &Array2<f64>) -> usize {
    let (vals, _) = eigh_descending(&m.view()).unwrap();
    let scale = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    vals.iter().filter(|&&l| l > 1e-12 * scale).count()
}

/// Biweight kernel weight, written out from the defining formula for use
/// in self-contained oracles (degrees in, degrees in).
fn biweight_oracle(d: f64, h: f64) -> f64 {
    if d < h {
        let u = 1.0 - (d / h) * (d / h);
        15.0 / (16.0 * h) * u * u
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Criterion 5: analytic gradients vs. central finite differences
// ---------------------------------------------------------------------------

/// The kernel-weighted least-squares loss written as its literal sum over
/// individuals and twin pairs: smoothed raw products against the modeled
/// component sums, in the mass-weighted squared Frobenius norm. Differs
/// from the production objective only by a factor-independent constant,
/// so finite differences of this form must match the analytic gradients.
fn literal_objective(
    residuals: &Array2<f64>,
    families: &FamilyIndex,
    sigma2_el: &Array1<f64>,
    vertices: &VertexSet,
    h: f64,
    f: &CovFactorization,
) -> f64 {
    let v = vertices.len();
    let d = vertices.distance_matrix();
    let mut k = Array2::<f64>::zeros((v, v));
    for i in 0..v {
        for j in 0..v {
            k[[i, j]] = biweight_oracle(d[[i, j]], h);
        }
    }
    let w = k.sum_axis(Axis(1));
    let mut ktilde = k.clone();
    for (mut row, &wi) in ktilde.rows_mut().into_iter().zip(&w) {
        row /= wi;
    }
    let a = f.z_a.dot(&f.z_a.t());
    let c = f.z_c.dot(&f.z_c.t());
    let e = f.z_eg.dot(&f.z_eg.t());

    let wnorm2 = |x: &Array2<f64>| -> f64 {
        let mut acc = 0.0;
        for i in 0..v {
            for j in 0..v {
                acc += w[i] * w[j] * x[[i, j]] * x[[i, j]];
            }
        }
        acc
    };
    let smooth = |m: &Array2<f64>| ktilde.dot(m).dot(&ktilde.t());
    let outer = |r1: ndarray::ArrayView1<f64>, r2: ndarray::ArrayView1<f64>| {
        let mut m = Array2::<f64>::zeros((v, v));
        for i in 0..v {
            for j in 0..v {
                m[[i, j]] = 0.5 * (r1[i] * r2[j] + r2[i] * r1[j]);
            }
        }
        m
    };

    let n = residuals.nrows() as f64;
    let mut total = 0.0;
    for r in 0..residuals.nrows() {
        let row = residuals.row(r);
        let mut m = outer(row, row);
        for i in 0..v {
            m[[i, i]] -= sigma2_el[i];
        }
        let x = smooth(&m) - &a - &c - &e;
        total += wnorm2(&x) / n;
    }
    let n1 = families.n_mz() as f64;
    for (r1, r2) in families.mz_pairs() {
        let m = outer(residuals.row(r1), residuals.row(r2));
        let x = smooth(&m) - &a - &c;
        total += wnorm2(&x) / n1;
    }
    let n2 = families.n_dz() as f64;
    for (r1, r2) in families.dz_pairs() {
        let m = outer(residuals.row(r1), residuals.row(r2));
        let x = smooth(&m) - &(0.5 * &a) - &c;
        total += wnorm2(&x) / n2;
    }
    total
}

fn gradient_check(instances: usize, tol: f64) -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let v = rng.random_range(4..=10usize);
        let thetas: Vec<f64> = (0..v)
            .map(|_| rng.random_range(0.2..std::f64::consts::PI - 0.2))
            .collect();
        let phis: Vec<f64> = (0..v)
            .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
            .collect();
        let vertices = VertexSet::new(thetas, phis, vec![Hemisphere::Left; v]).unwrap();
        let h = rng.random_range(60.0..150.0f64);
        let n1 = rng.random_range(2..=4usize);
        let n3 = rng.random_range(0..=2usize);
        let families = block_family_index(n1, n1, n3);
        let n = 4 * n1 + n3;
        let residuals =
            Array2::from_shape_fn((n, v), |_| rng.sample::<f64, _>(StandardNormal));
        let sigma2_el = Array1::from_shape_fn(v, |_| rng.random_range(0.0..0.5f64));
        let ranks = [
            rng.random_range(1..=3usize),
            rng.random_range(1..=3usize),
            rng.random_range(1..=3usize),
        ];
        let z = CovFactorization {
            z_a: Array2::from_shape_fn((v, ranks[0]), |_| {
                0.5 * rng.sample::<f64, _>(StandardNormal)
            }),
            z_c: Array2::from_shape_fn((v, ranks[1]), |_| {
                0.5 * rng.sample::<f64, _>(StandardNormal)
            }),
            z_eg: Array2::from_shape_fn((v, ranks[2]), |_| {
                0.5 * rng.sample::<f64, _>(StandardNormal)
            }),
        };

        let kernel = KernelOperator::from_vertices(&vertices, h).unwrap();
        let cp = CrossProducts::new(&residuals, &families, &sigma2_el).unwrap();
        let problem =
            PsdProblem::new(&cp, &residuals, &families, &sigma2_el, &kernel).unwrap();
        let analytic = problem.gradients(&z).unwrap();

        let delta = 1e-4;
        let mut fd = CovFactorization {
            z_a: Array2::zeros(z.z_a.dim()),
            z_c: Array2::zeros(z.z_c.dim()),
            z_eg: Array2::zeros(z.z_eg.dim()),
        };
        for slot in 0..3 {
            let dim = [z.z_a.dim(), z.z_c.dim(), z.z_eg.dim()][slot];
            for i in 0..dim.0 {
                for j in 0..dim.1 {
                    let mut plus = z.clone();
                    let mut minus = z.clone();
                    {
                        let (p, m) = match slot {
                            0 => (&mut plus.z_a, &mut minus.z_a),
                            1 => (&mut plus.z_c, &mut minus.z_c),
                            _ => (&mut plus.z_eg, &mut minus.z_eg),
                        };
                        p[[i, j]] += delta;
                        m[[i, j]] -= delta;
                    }
                    let fp =
                        literal_objective(&residuals, &families, &sigma2_el, &vertices, h, &plus);
                    let fm =
                        literal_objective(&residuals, &families, &sigma2_el, &vertices, h, &minus);
                    let g = (fp - fm) / (2.0 * delta);
                    match slot {
                        0 => fd.z_a[[i, j]] = g,
                        1 => fd.z_c[[i, j]] = g,
                        _ => fd.z_eg[[i, j]] = g,
                    }
                }
            }
        }
        for (got, want) in [
            (&analytic.z_a, &fd.z_a),
            (&analytic.z_c, &fd.z_c),
            (&analytic.z_eg, &fd.z_eg),
        ] {
            let num = (got - want).iter().map(|x| x * x).sum::<f64>().sqrt();
            let den = want.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-8);
            worst = worst.max(num / den);
        }
    }
    (
        worst <= tol,
        format!("max relative gradient error {worst:.3e} over {instances} instances (tol {tol:.0e})"),
    )
}

// ---------------------------------------------------------------------------
// Criterion 7: closed-form estimators vs. brute-force least squares
// ---------------------------------------------------------------------------

/// Minimizes a one-dimensional weighted least-squares objective generically:
/// ternary search narrows the bracket, then the vertex of the parabola
/// through three widely spaced samples pins the minimum to machine
/// precision (the objective is exactly quadratic in the constant being
/// fitted). No closed-form normal-equation identity is used.
fn bruteforce_min(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    for _ in 0..100 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if f(m1) < f(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let c = 0.5 * (a + b);
    let d = 0.25 * (hi - lo);
    let (f_lo, f_c, f_hi) = (f(c - d), f(c), f(c + d));
    let denom = f_lo - 2.0 * f_c + f_hi;
    if denom <= 0.0 {
        return c;
    }
    c + 0.5 * d * (f_lo - f_hi) / denom
}

fn closed_form_oracle_check(tol: f64) -> (bool, String) {
    let vertices = VertexSet::new(
        vec![0.3, 0.9, 1.4],
        vec![0.0, 0.5, 2.0],
        vec![Hemisphere::Left; 3],
    )
    .unwrap();
    let h = 120.0;
    // One monozygotic pair, one dizygotic pair, one singleton.
    let residuals = ndarray::array![
        [0.9, -0.4, 0.2],
        [0.7, -0.1, 0.35],
        [-0.5, 0.8, -0.6],
        [-0.2, 0.3, -0.1],
        [0.4, 0.4, -0.9],
    ];
    let sigma2_el = ndarray::array![0.05, 0.1, 0.02];
    let families = block_family_index(1, 1, 1);
    let cp = CrossProducts::new(&residuals, &families, &sigma2_el).unwrap();
    let kernel = KernelOperator::from_vertices(&vertices, h).unwrap();
    let sfsem = sfsem_estimates(&cp, &kernel).unwrap();
    let ssw = sandwich_estimates(&cp, &kernel).unwrap();

    let d = vertices.distance_matrix();
    let mut k = Array2::<f64>::zeros((3, 3));
    for i in 0..3 {
        for j in 0..3 {
            k[[i, j]] = biweight_oracle(d[[i, j]], h);
        }
    }

    let contrasts = [cp.s_a(), cp.s_c(), cp.s_eg()];
    let mut worst = 0.0f64;
    for (slot, s) in contrasts.iter().enumerate() {
        let est_fsem = [&sfsem.sigma_a, &sfsem.sigma_c, &sfsem.sigma_eg][slot];
        let est_ssw = [&ssw.sigma_a, &ssw.sigma_c, &ssw.sigma_eg][slot];
        for v0 in 0..3 {
            for v1 in 0..3 {
                // Diagonal-excluding estimator: weighted least-squares
                // constant fit over off-diagonal source pairs.
                let obj_fsem = |m: f64| {
                    let mut acc = 0.0;
                    for u0 in 0..3 {
                        for u1 in 0..3 {
                            if u0 != u1 {
                                let wgt = k[[v0, u0]] * k[[v1, u1]];
                                acc += wgt * (s[[u0, u1]] - m) * (s[[u0, u1]] - m);
                            }
                        }
                    }
                    acc
                };
                let m_fsem = bruteforce_min(-10.0, 10.0, obj_fsem);
                worst = worst.max((est_fsem[[v0, v1]] - m_fsem).abs());
                // Sandwich estimator: same fit over all source pairs.
                let obj_ssw = |m: f64| {
                    let mut acc = 0.0;
                    for u0 in 0..3 {
                        for u1 in 0..3 {
                            let wgt = k[[v0, u0]] * k[[v1, u1]];
                            acc += wgt * (s[[u0, u1]] - m) * (s[[u0, u1]] - m);
                        }
                    }
                    acc
                };
                let m_ssw = bruteforce_min(-10.0, 10.0, obj_ssw);
                worst = worst.max((est_ssw[[v0, v1]] - m_ssw).abs());
            }
        }
    }
    (
        worst <= tol,
        format!("max |closed form - brute force| = {worst:.3e} (tol {tol:.0e})"),
    )
}

// ---------------------------------------------------------------------------
// Criterion 8: structural rank bounds when V exceeds N
// ---------------------------------------------------------------------------

fn rank_structure_check() -> (bool, String) {
    let vertices = VertexSet::fibonacci_lattice(80, Hemisphere::Left).unwrap();
    let truth = build_truth(&vertices, &ComponentTargets::default()).unwrap();
    let cohort = simulate_cohort(&truth, 8, 8, 6, 1234, 0).unwrap();
    let config = FitConfig {
        smooth_grid: GridSpec {
            lo: None,
            hi: 60.0,
            n: 6,
        },
        mwle_grid: GridSpec {
            lo: None,
            hi: 60.0,
            n: 4,
        },
        noise_grid: GridSpec {
            lo: None,
            hi: 60.0,
            n: 5,
        },
        cov_grid: GridSpec {
            lo: None,
            hi: 60.0,
            n: 5,
        },
        ..FitConfig::default()
    };
    let mut ctx = FitContext::new(&cohort, &config);
    let ssw = ctx.ssw().unwrap();
    let n = cohort.n();
    let n_pairs = N_PAIRS_SMALL.0 + N_PAIRS_SMALL.1;
    let pos_a = count_positive(&ssw.sigma_a);
    let pos_eg = count_positive(&ssw.sigma_eg);
    let bound_a = n_pairs;
    let bound_eg = n - N_PAIRS_SMALL.0;
    let pass = cohort.v() > n && pos_a <= bound_a && pos_eg <= bound_eg;
    (
        pass,
        format!(
            "V={} > N={n}; positive eigenvalues: additive {pos_a} <= {bound_a}, \
             unique-smooth {pos_eg} <= {bound_eg}",
            cohort.v()
        ),
    )
}

const N_PAIRS_SMALL: (usize, usize) = (8, 8);

// ---------------------------------------------------------------------------
// Criterion 10: partitioned fitting consistency
// ---------------------------------------------------------------------------

fn partition_consistency_check(cap: &Capture) -> (bool, String) {
    let inputs = PartitionInputs {
        residuals: &cap.residuals,
        families: &cap.families,
        sigma2_el: &cap.sigma2_el,
        vertices: &cap.vertices,
        h: cap.cov_h,
        ranks: cap.ranks,
        descent: cap.descent,
        threshold: InverseThreshold::default(),
    };
    let v = cap.vertices.len();

    let all: Vec<usize> = (0..v).collect();
    let (single, _) = partition_fit_combine(&inputs, &[all]).unwrap();
    let max_abs = single
        .sigma_a
        .iter()
        .zip(cap.psd_sigma_a.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);

    // Two overlapping subsets covering the sphere: each drops a distinct
    // quarter of the indices, so each holds three quarters of the vertices
    // and they share half. Index order follows latitude, so both subsets
    // span the whole domain.
    let p1: Vec<usize> = (0..v).filter(|i| i % 4 != 1).collect();
    let p2: Vec<usize> = (0..v).filter(|i| i % 4 != 3).collect();
    let (two, report) = partition_fit_combine(&inputs, &[p1, p2]).unwrap();
    let num = (&two.sigma_a - &cap.psd_sigma_a)
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let den = cap.psd_sigma_a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let rel = num / den;

    let pass = max_abs <= 1e-10 && rel <= 0.10;
    (
        pass,
        format!(
            "single-partition max |diff| {max_abs:.2e} (tol 1e-10); \
             overlapping-partitions relative error {rel:.4} (tol 0.10); \
             unsupported pairs {}",
            report.unsupported_pairs
        ),
    )
}

// ---------------------------------------------------------------------------
// The suite
// ---------------------------------------------------------------------------

#[test]
fn acceptance_criteria() {
    let replicates: usize = std::env::var("ACCEPTANCE_REPLICATES")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(DEFAULT_REPLICATES);
    let config = FitConfig::default();

    let t0 = Instant::now();
    let vertices = VertexSet::fibonacci_lattice(V, Hemisphere::Left).unwrap();
    let truth = build_truth(&vertices, &ComponentTargets::default()).unwrap();
    stderr_line(&format!(
        "acceptance: truth built in {:.1}s; running {replicates} replicates",
        t0.elapsed().as_secs_f64()
    ));

    let mut reps: Vec<RepRecord> = Vec::with_capacity(replicates);
    let mut capture: Option<Capture> = None;
    for rep in 0..replicates {
        let t = Instant::now();
        reps.push(run_replicate(&truth, &config, rep, &mut capture));
        stderr_line(&format!(
            "acceptance: replicate {rep} done in {:.1}s",
            t.elapsed().as_secs_f64()
        ));
    }
    let capture = capture.expect("replicate 0 captured");
    let n_reps = reps.len();

    let mut criteria: Vec<Criterion> = Vec::new();

    // 1. Per-replicate error dominance of the factorized estimator.
    {
        let need = n_reps.saturating_sub(2);
        let wins = |component: &'static str| {
            reps.iter()
                .filter(|r| {
                    r.ise[&("psd-ace", component)] < r.ise[&("s-fsem", component)]
                        && r.ise[&("psd-ace", component)] < r.ise[&("psd-fsem", component)]
                })
                .count()
        };
        let wins_a = wins("sigma_a");
        let wins_c = wins("sigma_c");
        criteria.push(Criterion {
            index: 1,
            label: "error dominance over the symmetric and truncated estimators",
            pass: wins_a >= need && wins_c >= need,
            detail: format!(
                "additive {wins_a}/{n_reps}, common {wins_c}/{n_reps} replicates \
                 (need >= {need})"
            ),
        });
    }

    // 2. Spatial mean of the additive variance estimate.
    {
        let mean = |name: &'static str| mean_over(&reps, |r| r.mean_diag_a[name]);
        let ace = mean("psd-ace");
        let mle = mean("mle");
        let mwle = mean("mwle");
        let fsem = mean("psd-fsem");
        let pass = (0.015..=0.025).contains(&ace)
            && (0.013..=0.017).contains(&mle)
            && (0.013..=0.017).contains(&mwle)
            && fsem >= 0.05;
        criteria.push(Criterion {
            index: 2,
            label: "additive-variance level (truth mean 0.015)",
            pass,
            detail: format!(
                "psd-ace {ace:.4} in [0.015,0.025]; mle {mle:.4}, mwle {mwle:.4} \
                 in [0.013,0.017]; psd-fsem {fsem:.4} >= 0.05"
            ),
        });
    }

    // 3. Heritability error ordering (mean integrated squared error x V).
    {
        let mise = |name: &'static str| mean_over(&reps, |r| r.h2_ise[name]) * V as f64;
        let ace = mise("psd-ace");
        let mwle = mise("mwle");
        let mle = mise("mle");
        let pfsem = mise("psd-fsem");
        let sfsem = mise("s-fsem");
        let pass = ace < mwle
            && mwle <= 1.1 * mle
            && 1.1 * mle < pfsem
            && pfsem < sfsem
            && (3.0..=10.0).contains(&ace);
        criteria.push(Criterion {
            index: 3,
            label: "heritability MISE ordering",
            pass,
            detail: format!(
                "xV: psd-ace {ace:.2} < mwle {mwle:.2} <= 1.1*mle {:.2} < \
                 psd-fsem {pfsem:.2} < s-fsem {sfsem:.2}; psd-ace in [3,10]",
                1.1 * mle
            ),
        });
    }

    // 4. Additive-covariance error magnitude (MISE x V^2).
    {
        let mise = |name: &'static str| {
            mean_over(&reps, |r| r.ise[&(name, "sigma_a")]) * (V * V) as f64
        };
        let ace = mise("psd-ace");
        let sfsem = mise("s-fsem");
        let pass = (30.0..=80.0).contains(&ace) && (700.0..=1500.0).contains(&sfsem);
        criteria.push(Criterion {
            index: 4,
            label: "additive-covariance MISE magnitude",
            pass,
            detail: format!(
                "xV^2: psd-ace {ace:.1} in [30,80]; s-fsem {sfsem:.1} in [700,1500]"
            ),
        });
    }

    // 5. Analytic gradients against finite differences of the literal loss.
    {
        let (pass, detail) = gradient_check(50, 1e-4);
        criteria.push(Criterion {
            index: 5,
            label: "descent gradients match finite differences",
            pass,
            detail,
        });
    }

    // 6. PSD guarantees: eigenvalue floors and interpolation Gram matrices.
    {
        let min_eig = reps
            .iter()
            .map(|r| r.min_rel_eig)
            .fold(f64::INFINITY, f64::min);
        let interp = InterpFactors::new(
            &capture.psd_factors,
            &capture.vertices,
            capture.cov_h,
            InverseThreshold::default(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut min_gram = f64::INFINITY;
        for _ in 0..100 {
            let m = rng.random_range(2..=6usize);
            let locs: Vec<Location> = (0..m)
                .map(|_| Location {
                    theta: rng.random_range(0.05..std::f64::consts::PI - 0.05),
                    phi: rng.random_range(0.0..std::f64::consts::TAU),
                    hemisphere: Hemisphere::Left,
                })
                .collect();
            for component in Component::ALL {
                let gram = interp.gram(component, &locs);
                let rel = relative_min_eigenvalue(&gram.view()).unwrap();
                min_gram = min_gram.min(rel);
            }
        }
        let pass = min_eig >= -1e-8 && min_gram >= -1e-8;
        criteria.push(Criterion {
            index: 6,
            label: "PSD floors on constrained outputs and interpolation Grams",
            pass,
            detail: format!(
                "min relative eigenvalue {min_eig:.2e} (outputs), {min_gram:.2e} \
                 (100 Gram draws); floor -1e-8"
            ),
        });
    }

    // 7. Closed-form estimators equal brute-force least squares.
    {
        let (pass, detail) = closed_form_oracle_check(1e-8);
        criteria.push(Criterion {
            index: 7,
            label: "closed-form estimates equal brute-force least squares",
            pass,
            detail,
        });
    }

    // 8. Structural rank bounds when vertices outnumber individuals.
    {
        let (pass, detail) = rank_structure_check();
        criteria.push(Criterion {
            index: 8,
            label: "positive-eigenvalue counts bounded by the family design",
            pass,
            detail,
        });
    }

    // 9. Descent never ends above its starting objective.
    {
        let mut worst: f64 = f64::NEG_INFINITY;
        let pass = reps.iter().all(|r| {
            let slack = 1e-12 * r.initial_objective.abs();
            worst = worst.max(r.final_objective - r.initial_objective);
            r.final_objective <= r.initial_objective + slack
        });
        criteria.push(Criterion {
            index: 9,
            label: "descent improves on its initialization",
            pass,
            detail: format!(
                "max (final - initial) objective {worst:.3e} over {n_reps} fits \
                 (slack 1e-12 relative)"
            ),
        });
    }

    // 10. Partitioned fits agree with the unpartitioned fit.
    {
        let (pass, detail) = partition_consistency_check(&capture);
        criteria.push(Criterion {
            index: 10,
            label: "partitioned fitting consistency",
            pass,
            detail,
        });
    }

    let mut failed = Vec::new();
    for c in &criteria {
        stderr_line(&format!(
            "criterion {:2} [{}]: {} - {}",
            c.index,
            c.label,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        ));
        if !c.pass {
            failed.push(c.index);
        }
    }
    stderr_line(&format!(
        "acceptance: total wall time {:.1}s",
        t0.elapsed().as_secs_f64()
    ));
    assert!(
        failed.is_empty(),
        "acceptance criteria failed: {failed:?} (see report above)"
    );
}
