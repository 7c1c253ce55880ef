//! Shared helpers for unit tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cohort::{block_family_index, cohort_from_parts, TwinCohort};
use crate::domain::{Hemisphere, VertexSet};

/// Variance components used by [`toy_cohort`]: additive, common, unique.
pub const TOY_TRUTH: [f64; 3] = [0.8, 0.5, 1.2];

/// Builds a small synthetic twin cohort with known variance structure
/// ([`TOY_TRUTH`]), independent across vertices, zero true fixed effects,
/// and a two-column design (intercept plus standard-normal covariate).
pub fn toy_cohort(v: usize, n1: usize, n2: usize, n3: usize, seed: u64) -> TwinCohort {
    let truth = TOY_TRUTH;
    let vs = VertexSet::fibonacci_lattice(v, Hemisphere::Left).unwrap();
    let families = block_family_index(n1, n2, n3);
    let n = families.n_individuals();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Array2::<f64>::zeros((n, v));
    let mut normal = || -> f64 { rng.sample(StandardNormal) };
    for j in 0..v {
        let mut row = 0usize;
        for _ in 0..n1 {
            let a = truth[0].sqrt() * normal();
            let c = truth[1].sqrt() * normal();
            for _ in 0..2 {
                y[[row, j]] = a + c + truth[2].sqrt() * normal();
                row += 1;
            }
        }
        for _ in 0..n2 {
            let a_shared = (0.5 * truth[0]).sqrt() * normal();
            let c = truth[1].sqrt() * normal();
            for _ in 0..2 {
                let a_own = (0.5 * truth[0]).sqrt() * normal();
                y[[row, j]] = a_shared + a_own + c + truth[2].sqrt() * normal();
                row += 1;
            }
        }
        for _ in 0..n3 {
            let a = truth[0].sqrt() * normal();
            let c = truth[1].sqrt() * normal();
            y[[row, j]] = a + c + truth[2].sqrt() * normal();
            row += 1;
        }
    }
    let mut x = Array2::<f64>::zeros((n, 2));
    for i in 0..n {
        x[[i, 0]] = 1.0;
        x[[i, 1]] = normal();
    }
    cohort_from_parts(y, x, vec!["intercept".into(), "z".into()], families, vs).unwrap()
}
