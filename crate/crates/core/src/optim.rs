//! Small box-constrained quasi-Newton minimizer.
//!
//! Used for the low-dimensional per-vertex likelihood optimizations. The
//! gradient is taken by central finite differences, the inverse Hessian is
//! maintained with BFGS updates, steps use Armijo backtracking, and iterates
//! are projected onto the feasible box after each step.

/// Options controlling the minimizer.
#[derive(Debug, Clone)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the infinity norm of the gradient.
    pub gradient_tolerance: f64,
    /// Convergence threshold on the relative objective decrease.
    pub objective_tolerance: f64,
    /// Finite-difference step.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            objective_tolerance: 1e-13,
            fd_step: 1e-6,
        }
    }
}

/// Result of a minimization run.
#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

fn gradient<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
    step: f64,
    g: &mut [f64],
) {
    let n = x.len();
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = step * (1.0 + x[i].abs());
        let hi = (x[i] + h).min(upper[i]);
        let lo = (x[i] - h).max(lower[i]);
        xp[i] = hi;
        let fp = f(&xp);
        xp[i] = lo;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = if hi > lo { (fp - fm) / (hi - lo) } else { 0.0 };
    }
}

/// Minimizes `f` over the box `[lower, upper]` starting from `x0`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    options: &BfgsOptions,
) -> BfgsResult {
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n);
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut fx = f(&x);
    let mut g = vec![0.0; n];
    gradient(&mut f, &x, lower, upper, options.fd_step, &mut g);

    // Inverse Hessian approximation, row-major.
    let mut hinv = vec![0.0; n * n];
    let reset_hinv = |hinv: &mut [f64]| {
        hinv.fill(0.0);
        for i in 0..n {
            hinv[i * n + i] = 1.0;
        }
    };
    reset_hinv(&mut hinv);

    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..options.max_iterations {
        iterations += 1;
        let gnorm = g.iter().fold(0.0f64, |m, &gi| m.max(gi.abs()));
        if gnorm < options.gradient_tolerance {
            converged = true;
            break;
        }

        // Search direction d = -Hinv g.
        let mut d = vec![0.0; n];
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc -= hinv[i * n + j] * g[j];
            }
            d[i] = acc;
        }
        let descent: f64 = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();
        if descent >= 0.0 {
            // Not a descent direction; restart from steepest descent.
            reset_hinv(&mut hinv);
            for i in 0..n {
                d[i] = -g[i];
            }
        }
        let descent: f64 = d.iter().zip(&g).map(|(di, gi)| di * gi).sum();

        // Armijo backtracking with projection onto the box.
        let mut t = 1.0;
        let mut x_new = x.clone();
        let mut f_new = fx;
        let mut accepted = false;
        for _ in 0..50 {
            for i in 0..n {
                x_new[i] = x[i] + t * d[i];
            }
            project(&mut x_new, lower, upper);
            f_new = f(&x_new);
            if f_new <= fx + 1e-4 * t * descent || f_new < fx - 1e-15 * (1.0 + fx.abs()) {
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            converged = true; // no descent possible at float resolution
            break;
        }

        let mut g_new = vec![0.0; n];
        gradient(&mut f, &x_new, lower, upper, options.fd_step, &mut g_new);

        // BFGS update on s = x_new - x, y = g_new - g.
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum::<f64>().sqrt();
        let yy: f64 = y.iter().map(|a| a * a).sum::<f64>().sqrt();
        if sy > 1e-12 * ss * yy {
            // Hinv <- (I - s yᵀ / sy) Hinv (I - y sᵀ / sy) + s sᵀ / sy
            let mut hy = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += hinv[i * n + j] * y[j];
                }
                hy[i] = acc;
            }
            let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
            for i in 0..n {
                for j in 0..n {
                    hinv[i * n + j] += -(s[i] * hy[j] + hy[i] * s[j]) / sy
                        + (1.0 + yhy / sy) / sy * s[i] * s[j];
                }
            }
        }

        let improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if improvement.abs() <= options.objective_tolerance * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
    }

    BfgsResult {
        x,
        f: fx,
        iterations,
        converged,
    }
}
