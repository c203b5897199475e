//! Small optimizers used by the fitters: Nelder–Mead simplex for the
//! low-dimensional likelihood fits, a projected Levenberg–Marquardt for the
//! least-squares problems, and finite-difference Hessians for error
//! estimates.

use nalgebra::{DMatrix, DVector};

/// Outcome of a minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Derivative-free simplex minimizer with adaptive coefficients
/// (Gao & Han), which behave better than the textbook ones beyond two
/// dimensions.
#[derive(Debug, Clone)]
pub struct NelderMead {
    pub max_evaluations: usize,
    /// Stop when the simplex values span less than this, relative to
    /// `1 + |f|`.
    pub f_tol: f64,
    /// Absolute allowance added to the value tolerance, for objectives
    /// whose rounding noise grows with their size.
    pub f_abs: f64,
    /// ... and every vertex lies within this of the best one.
    pub x_tol: f64,
    pub initial_step: f64,
    /// Rebuild the simplex around the optimum this many times.
    pub restarts: usize,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            max_evaluations: 4000,
            f_tol: 1e-10,
            f_abs: 0.0,
            x_tol: 1e-9,
            initial_step: 0.2,
            restarts: 2,
        }
    }
}

impl NelderMead {
    fn value_tol(&self, f: f64) -> f64 {
        self.f_tol * (1.0 + f.abs()) + self.f_abs
    }

    pub fn minimize<F: Fn(&[f64]) -> f64>(&self, f: F, x0: &[f64]) -> Minimum {
        let f = |x: &[f64]| {
            let v = f(x);
            if v.is_nan() {
                f64::INFINITY
            } else {
                v
            }
        };
        let mut best = self.run(&f, x0, self.initial_step);
        let mut evaluations = best.evaluations;
        for _ in 0..self.restarts {
            if evaluations >= self.max_evaluations {
                break;
            }
            let again = self.run(&f, &best.x, self.initial_step * 0.25);
            evaluations += again.evaluations;
            let improved = again.value < best.value - self.value_tol(best.value);
            if again.value <= best.value {
                best = again;
            }
            if !improved {
                break;
            }
        }
        best.evaluations = evaluations;
        best
    }

    fn run<F: Fn(&[f64]) -> f64>(&self, f: &F, x0: &[f64], step: f64) -> Minimum {
        let dim = x0.len();
        let d = dim as f64;
        let (alpha, gamma) = (1.0, 1.0 + 2.0 / d);
        let (rho, sigma) = (0.75 - 1.0 / (2.0 * d), 1.0 - 1.0 / d.max(1.0));
        let sigma = if dim == 1 { 0.5 } else { sigma };

        let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
        for i in 0..dim {
            let mut v = x0.to_vec();
            v[i] += if v[i].abs() > 1e-8 { step * v[i].abs().max(1.0) } else { step };
            simplex.push(v);
        }
        let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
        let mut evaluations = dim + 1;
        let mut converged = false;

        while evaluations < self.max_evaluations {
            let mut order: Vec<usize> = (0..=dim).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            simplex = order.iter().map(|&i| simplex[i].clone()).collect();
            values = order.iter().map(|&i| values[i]).collect();

            let spread = values[dim] - values[0];
            let size = simplex[1..]
                .iter()
                .flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max);
            if spread.abs() <= self.value_tol(values[0]) && size <= self.x_tol {
                converged = true;
                break;
            }

            let centroid: Vec<f64> = (0..dim)
                .map(|j| simplex[..dim].iter().map(|v| v[j]).sum::<f64>() / d)
                .collect();
            let toward = |coef: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[dim])
                    .map(|(c, w)| c + coef * (c - w))
                    .collect()
            };

            let xr = toward(alpha);
            let fr = f(&xr);
            evaluations += 1;
            if fr < values[0] {
                let xe = toward(alpha * gamma);
                let fe = f(&xe);
                evaluations += 1;
                if fe < fr {
                    simplex[dim] = xe;
                    values[dim] = fe;
                } else {
                    simplex[dim] = xr;
                    values[dim] = fr;
                }
                continue;
            }
            if fr < values[dim - 1] {
                simplex[dim] = xr;
                values[dim] = fr;
                continue;
            }
            let (xc, fc) = if fr < values[dim] {
                let xc = toward(alpha * rho);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = toward(-rho);
                let fc = f(&xc);
                (xc, fc)
            };
            evaluations += 1;
            if fc < values[dim].min(fr) {
                simplex[dim] = xc;
                values[dim] = fc;
                continue;
            }
            // shrink toward the best vertex
            for i in 1..=dim {
                for j in 0..dim {
                    simplex[i][j] = simplex[0][j] + sigma * (simplex[i][j] - simplex[0][j]);
                }
                values[i] = f(&simplex[i]);
            }
            evaluations += dim;
        }

        let best = (0..=dim)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap_or(0);
        Minimum {
            x: simplex[best].clone(),
            value: values[best],
            evaluations,
            converged,
        }
    }
}

/// Runs the simplex from every start and keeps the lowest minimum.
pub fn multi_start<F: Fn(&[f64]) -> f64>(nm: &NelderMead, f: F, starts: &[Vec<f64>]) -> Minimum {
    starts
        .iter()
        .map(|s| nm.minimize(&f, s))
        .min_by(|a, b| a.value.total_cmp(&b.value))
        .expect("at least one start point")
}

/// Central-difference Hessian with per-coordinate steps.
pub fn hessian<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], steps: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let f0 = f(x);
    let at = |d: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, v) in d {
            y[i] += v;
        }
        f(&y)
    };
    for i in 0..n {
        let hi = steps[i];
        h[(i, i)] = (at(&[(i, hi)]) - 2.0 * f0 + at(&[(i, -hi)])) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let v = (at(&[(i, hi), (j, hj)]) - at(&[(i, hi), (j, -hj)]) - at(&[(i, -hi), (j, hj)])
                + at(&[(i, -hi), (j, -hj)]))
                / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

/// Inverse of a symmetric positive-definite matrix, `None` otherwise.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    m.clone().cholesky().map(|c| c.inverse())
}

/// A residual vector `r(x)` to be minimized in the least-squares sense.
pub trait LeastSquares {
    fn residuals(&self, x: &[f64]) -> Vec<f64>;

    /// `J[i][j] = ∂r_i/∂x_j`; forward differences unless overridden.
    fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let r0 = self.residuals(x);
        let mut j = DMatrix::zeros(r0.len(), x.len());
        let mut y = x.to_vec();
        for k in 0..x.len() {
            let h = 1e-7 * x[k].abs().max(1e-3);
            y[k] = x[k] + h;
            let r1 = self.residuals(&y);
            for i in 0..r0.len() {
                j[(i, k)] = (r1[i] - r0[i]) / h;
            }
            y[k] = x[k];
        }
        j
    }
}

#[derive(Debug, Clone)]
pub struct LevenbergMarquardt {
    pub max_iterations: usize,
    /// Relative cost decrease below which the fit is declared converged.
    pub tol: f64,
    /// Optional per-parameter lower bounds, enforced by projection.
    pub lower: Option<Vec<f64>>,
}

impl Default for LevenbergMarquardt {
    fn default() -> Self {
        Self {
            max_iterations: 300,
            tol: 1e-12,
            lower: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqFit {
    pub x: Vec<f64>,
    /// `Σ r²` at the solution.
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `JᵀJ` at the solution, for covariance estimates.
    pub jtj: DMatrix<f64>,
}

impl LevenbergMarquardt {
    pub fn fit<P: LeastSquares>(&self, problem: &P, x0: &[f64]) -> LsqFit {
        let project = |x: &mut Vec<f64>| {
            if let Some(lo) = &self.lower {
                for (v, l) in x.iter_mut().zip(lo) {
                    if *v < *l {
                        *v = *l;
                    }
                }
            }
        };
        let cost = |x: &[f64]| problem.residuals(x).iter().map(|r| r * r).sum::<f64>();
        let mut x = x0.to_vec();
        project(&mut x);
        let mut c = cost(&x);
        let mut lambda = 1e-3;
        let mut converged = false;
        let mut iterations = 0;
        let mut jac = problem.jacobian(&x);
        while iterations < self.max_iterations {
            iterations += 1;
            let r = DVector::from_vec(problem.residuals(&x));
            let jtj = jac.transpose() * &jac;
            let g = jac.transpose() * &r;
            if g.amax() <= 1e-15 * (1.0 + c) {
                converged = true;
                break;
            }
            let mut accepted = false;
            for _ in 0..30 {
                let mut a = jtj.clone();
                for i in 0..a.nrows() {
                    a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
                }
                let Some(chol) = a.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let step = chol.solve(&(-&g));
                let mut xn: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
                project(&mut xn);
                let cn = cost(&xn);
                if cn.is_finite() && cn <= c {
                    let rel = (c - cn) / c.max(1e-300);
                    let moved = x
                        .iter()
                        .zip(&xn)
                        .map(|(a, b)| (a - b).abs() / a.abs().max(1e-8))
                        .fold(0.0, f64::max);
                    x = xn;
                    c = cn;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    if rel < self.tol && moved < 1e-10 {
                        converged = true;
                    }
                    break;
                }
                lambda *= 4.0;
            }
            if !accepted {
                // no downhill step at any damping: stationary to working precision
                converged = true;
                break;
            }
            jac = problem.jacobian(&x);
            if converged || c == 0.0 {
                converged = true;
                break;
            }
        }
        let jac = problem.jacobian(&x);
        LsqFit {
            jtj: jac.transpose() * &jac,
            x,
            chi2: c,
            iterations,
            converged,
        }
    }
}
