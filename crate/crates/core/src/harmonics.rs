//! Real spherical harmonics of even degree on the unit sphere.
//!
//! The simulation truth is built from the 28 real spherical harmonics of
//! degree l in {0, 2, 4, 6}. Basis rows are ordered degree-major with the
//! order m ascending from -l to l, and are orthonormal with respect to the
//! uniform surface measure: integral of Y_i * Y_j over the sphere = delta_ij.

use ndarray::Array2;

use crate::domain::VertexSet;
use crate::error::{Error, Result};

/// Even degrees contributing to the simulation basis.
pub const EVEN_DEGREES: [usize; 4] = [0, 2, 4, 6];

/// Number of rows of the even-degree basis: sum of (2l + 1) = 1+5+9+13.
pub const N_BASIS: usize = 28;

/// Associated Legendre values P_l^m(x) for all l <= l_max at one argument,
/// for a fixed order m, by the standard three-term recurrence. Includes the
/// Condon-Shortley phase.
fn legendre_column(l_max: usize, m: usize, x: f64) -> Vec<f64> {
    debug_assert!(m <= l_max);
    let mut out = vec![0.0; l_max + 1];
    // Seed P_m^m = (-1)^m (2m-1)!! (1 - x^2)^{m/2}.
    let mut pmm = 1.0;
    if m > 0 {
        let s = ((1.0 - x) * (1.0 + x)).max(0.0).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * s;
            fact += 2.0;
        }
    }
    out[m] = pmm;
    if m == l_max {
        return out;
    }
    // P_{m+1}^m = x (2m+1) P_m^m.
    let mut prev = pmm;
    let mut curr = x * (2 * m + 1) as f64 * pmm;
    out[m + 1] = curr;
    for l in (m + 2)..=l_max {
        let next = (x * (2 * l - 1) as f64 * curr - (l + m - 1) as f64 * prev)
            / (l - m) as f64;
        prev = curr;
        curr = next;
        out[l] = curr;
    }
    out
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Orthonormalization constant sqrt((2l+1)/(4 pi) * (l-m)!/(l+m)!).
fn norm_constant(l: usize, m: usize) -> f64 {
    let ratio = factorial(l - m) / factorial(l + m);
    ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt()
}

/// One real spherical harmonic Y_{l,m}(theta, phi): the m = 0 zonal
/// harmonic, cosine type for m > 0, sine type for m < 0.
pub fn real_harmonic(l: usize, m: i64, theta: f64, phi: f64) -> f64 {
    let m_abs = m.unsigned_abs() as usize;
    assert!(m_abs <= l, "order |{m}| exceeds degree {l}");
    let p = legendre_column(l, m_abs, theta.cos())[l];
    let n = norm_constant(l, m_abs);
    if m == 0 {
        n * p
    } else if m > 0 {
        std::f64::consts::SQRT_2 * n * p * (m_abs as f64 * phi).cos()
    } else {
        std::f64::consts::SQRT_2 * n * p * (m_abs as f64 * phi).sin()
    }
}

/// The (degree, order) pairs of the even-degree basis in row order.
pub fn basis_orders() -> Vec<(usize, i64)> {
    let mut orders = Vec::with_capacity(N_BASIS);
    for &l in &EVEN_DEGREES {
        for m in -(l as i64)..=(l as i64) {
            orders.push((l, m));
        }
    }
    orders
}

/// Evaluates the 28-function even-degree basis at every vertex of a
/// single-hemisphere-labeled domain: a 28 x V matrix, row i the i-th basis
/// function. Errors if the domain spans both hemisphere labels (the basis
/// is a function on one sphere).
pub fn real_harmonics_basis(vertices: &VertexSet) -> Result<Array2<f64>> {
    let v = vertices.len();
    let first = vertices.hemisphere(0);
    if (0..v).any(|i| vertices.hemisphere(i) != first) {
        return Err(Error::Invalid(
            "harmonic basis requires a single-sphere domain".into(),
        ));
    }
    let orders = basis_orders();
    let mut basis = Array2::<f64>::zeros((N_BASIS, v));
    for (row, &(l, m)) in orders.iter().enumerate() {
        for i in 0..v {
            basis[[row, i]] = real_harmonic(l, m, vertices.theta(i), vertices.phi(i));
        }
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Hemisphere;
    use approx::assert_abs_diff_eq;

    #[test]
    fn basis_has_twenty_eight_rows_and_constant_first_row() {
        let vs = VertexSet::fibonacci_lattice(50, Hemisphere::Left).unwrap();
        let basis = real_harmonics_basis(&vs).unwrap();
        assert_eq!(basis.nrows(), 28);
        let want = 1.0 / (4.0 * std::f64::consts::PI).sqrt();
        for i in 0..50 {
            assert_abs_diff_eq!(basis[[0, i]], want, epsilon = 1e-14);
        }
    }

    #[test]
    fn row_order_is_degree_major_with_ascending_order() {
        let orders = basis_orders();
        assert_eq!(orders.len(), 28);
        assert_eq!(orders[0], (0, 0));
        assert_eq!(orders[1], (2, -2));
        assert_eq!(orders[5], (2, 2));
        assert_eq!(orders[6], (4, -4));
        assert_eq!(orders[14], (4, 4));
        assert_eq!(orders[15], (6, -6));
        assert_eq!(orders[27], (6, 6));
    }

    /// Closed-form zonal harmonics, frozen from the standard polynomial
    /// expressions in cos(theta).
    #[test]
    fn zonal_harmonics_match_closed_forms() {
        let four_pi = 4.0 * std::f64::consts::PI;
        for &theta in &[0.3f64, 1.0, 1.9, 2.8] {
            let x = theta.cos();
            let y2 = (5.0 / four_pi).sqrt() * 0.5 * (3.0 * x * x - 1.0);
            assert_abs_diff_eq!(real_harmonic(2, 0, theta, 0.7), y2, epsilon = 1e-12);
            let y4 = (9.0 / four_pi).sqrt() * 0.125
                * (35.0 * x.powi(4) - 30.0 * x * x + 3.0);
            assert_abs_diff_eq!(real_harmonic(4, 0, theta, -0.2), y4, epsilon = 1e-12);
            let y6 = (13.0 / four_pi).sqrt() / 16.0
                * (231.0 * x.powi(6) - 315.0 * x.powi(4) + 105.0 * x * x - 5.0);
            assert_abs_diff_eq!(real_harmonic(6, 0, theta, 0.0), y6, epsilon = 1e-12);
        }
    }

    /// Frozen sectoral value: Y_{2,2}(theta, phi) =
    /// sqrt(15/(16 pi)) sin^2(theta) cos(2 phi) against the recurrence path.
    #[test]
    fn sectoral_harmonic_matches_closed_form() {
        let (theta, phi) = (1.2f64, 0.8f64);
        let want = (15.0 / (16.0 * std::f64::consts::PI)).sqrt()
            * theta.sin().powi(2)
            * (2.0 * phi).cos();
        assert_abs_diff_eq!(real_harmonic(2, 2, theta, phi), want, epsilon = 1e-12);
        let want_sin = (15.0 / (16.0 * std::f64::consts::PI)).sqrt()
            * theta.sin().powi(2)
            * (2.0 * phi).sin();
        assert_abs_diff_eq!(real_harmonic(2, -2, theta, phi), want_sin, epsilon = 1e-12);
    }

    #[test]
    fn basis_is_orthonormal_under_sphere_quadrature() {
        // Quasi-uniform lattice as a quadrature rule with equal weights
        // 4 pi / n: the Gram matrix of the 28 functions approximates the
        // identity.
        let n = 100_000;
        let vs = VertexSet::fibonacci_lattice(n, Hemisphere::Left).unwrap();
        let basis = real_harmonics_basis(&vs).unwrap();
        let gram = basis.dot(&basis.t()) * (4.0 * std::f64::consts::PI / n as f64);
        for i in 0..28 {
            for j in 0..28 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (gram[[i, j]] - want).abs() < 1e-2,
                    "gram[{i},{j}] = {}",
                    gram[[i, j]]
                );
            }
        }
    }

    #[test]
    fn two_hemisphere_domain_is_rejected() {
        let vs = VertexSet::new(
            vec![0.5, 0.6],
            vec![0.1, 0.2],
            vec![Hemisphere::Left, Hemisphere::Right],
        )
        .unwrap();
        assert!(real_harmonics_basis(&vs).is_err());
    }
}
