//! Levenberg-Marquardt for small dense weighted least-squares problems.
//!
//! Minimizes `0.5 * sum_i r_i(p)^2` where the problem supplies already
//! weighted residuals `r_i = (y_i - f_i(p)) / sigma_i` and their Jacobian.
//! Box constraints are applied by projecting every trial point.

use nalgebra::{DMatrix, DVector};

/// A weighted least-squares problem.
pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_residuals(&self) -> usize;

    /// Weighted residuals at `p`.
    fn residuals(&self, p: &[f64], out: &mut [f64]);

    /// Jacobian of the residuals, row-major `n_residuals x n_params`.
    /// The default is a central finite difference.
    fn jacobian(&self, p: &[f64], out: &mut [f64]) {
        let (m, n) = (self.n_residuals(), self.n_params());
        let mut q = p.to_vec();
        let mut plus = vec![0.0; m];
        let mut minus = vec![0.0; m];
        for k in 0..n {
            let step = 1e-6 * p[k].abs().max(1e-6);
            q[k] = p[k] + step;
            self.residuals(&q, &mut plus);
            q[k] = p[k] - step;
            self.residuals(&q, &mut minus);
            q[k] = p[k];
            for i in 0..m {
                out[i * n + k] = (plus[i] - minus[i]) / (2.0 * step);
            }
        }
    }

    /// Map a trial point back into the feasible set.
    fn project(&self, _p: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when the relative cost decrease of an accepted step is below this.
    pub ftol: f64,
    /// Stop when the relative step length is below this.
    pub xtol: f64,
    /// Stop when the scaled gradient is below this.
    pub gtol: f64,
    pub initial_lambda: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            ftol: 1e-15,
            xtol: 1e-13,
            gtol: 1e-14,
            initial_lambda: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmReport {
    pub params: Vec<f64>,
    /// `0.5 * sum r^2` at the solution.
    pub cost: f64,
    /// `sum r^2 / (m - n)`; 0 when there are no degrees of freedom.
    pub reduced_chi2: f64,
    /// `(J^T J)^-1` at the solution, `None` if singular.
    pub covariance: Option<DMatrix<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

impl LmReport {
    /// One-sigma parameter uncertainties from the covariance diagonal.
    pub fn std_errors(&self) -> Vec<f64> {
        match &self.covariance {
            Some(c) => (0..c.nrows()).map(|i| c[(i, i)].max(0.0).sqrt()).collect(),
            None => vec![f64::NAN; self.params.len()],
        }
    }
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

pub fn minimize<P: LeastSquares + ?Sized>(problem: &P, start: &[f64], opts: LmOptions) -> LmReport {
    let n = problem.n_params();
    let m = problem.n_residuals();
    assert_eq!(start.len(), n, "parameter vector length");

    let mut p = start.to_vec();
    problem.project(&mut p);
    let mut r = vec![0.0; m];
    let mut jac = vec![0.0; m * n];
    problem.residuals(&p, &mut r);
    let mut cost = cost_of(&r);
    let mut lambda = opts.initial_lambda;
    let mut converged = false;
    let mut iterations = 0;
    let mut trial = vec![0.0; n];
    let mut r_trial = vec![0.0; m];

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        problem.jacobian(&p, &mut jac);
        let j = DMatrix::from_row_slice(m, n, &jac);
        let jtj = j.transpose() * &j;
        let grad = j.transpose() * DVector::from_column_slice(&r);

        let gmax = (0..n)
            .map(|k| grad[k].abs() / (jtj[(k, k)].sqrt() * (2.0 * cost).sqrt()).max(1e-300))
            .fold(0.0, f64::max);
        if gmax < opts.gtol || cost == 0.0 {
            converged = true;
            break;
        }

        loop {
            let mut a = jtj.clone();
            for k in 0..n {
                let d = jtj[(k, k)].max(1e-300);
                a[(k, k)] += lambda * d;
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break 'outer;
                    }
                    continue;
                }
            };
            for k in 0..n {
                trial[k] = p[k] + step[k];
            }
            problem.project(&mut trial);
            problem.residuals(&trial, &mut r_trial);
            let trial_cost = cost_of(&r_trial);

            if trial_cost.is_finite() && trial_cost <= cost {
                let dx = (0..n)
                    .map(|k| (trial[k] - p[k]).abs() / (p[k].abs() + 1e-12))
                    .fold(0.0, f64::max);
                let df = (cost - trial_cost) / cost.max(1e-300);
                p.copy_from_slice(&trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                if df < opts.ftol || dx < opts.xtol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            lambda *= 4.0;
            if lambda > 1e16 {
                // no downhill step exists at machine precision
                converged = true;
                break 'outer;
            }
        }
    }

    problem.jacobian(&p, &mut jac);
    let j = DMatrix::from_row_slice(m, n, &jac);
    // invert with Jacobi scaling to tame badly scaled parameters
    let jtj = j.transpose() * &j;
    let d = DVector::from_iterator(n, (0..n).map(|k| 1.0 / jtj[(k, k)].max(1e-300).sqrt()));
    let scaled = DMatrix::from_fn(n, n, |a, b| jtj[(a, b)] * d[a] * d[b]);
    let covariance = scaled
        .try_inverse()
        .map(|inv| DMatrix::from_fn(n, n, |a, b| inv[(a, b)] * d[a] * d[b]))
        .filter(|c| (0..n).all(|k| c[(k, k)] > 0.0 && c[(k, k)].is_finite()));
    let dof = m.saturating_sub(n);
    let reduced_chi2 = if dof > 0 { 2.0 * cost / dof as f64 } else { 0.0 };

    LmReport {
        params: p,
        cost,
        reduced_chi2,
        covariance,
        iterations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Exp {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Exp {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for (i, (&x, &y)) in self.x.iter().zip(&self.y).enumerate() {
                out[i] = y - p[0] * (-p[1] * x).exp();
            }
        }
    }

    #[test]
    fn recovers_exponential() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 * 0.1).collect();
        let y = x.iter().map(|&x| 2.5 * (-1.3 * x).exp()).collect();
        let rep = minimize(&Exp { x, y }, &[1.0, 0.5], LmOptions::default());
        assert!(rep.converged);
        assert!((rep.params[0] - 2.5).abs() < 1e-10);
        assert!((rep.params[1] - 1.3).abs() < 1e-10);
    }

    struct Line {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Line {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for ((o, x), y) in out.iter_mut().zip(&self.x).zip(&self.y) {
                *o = y - (p[0] + p[1] * x);
            }
        }
        fn project(&self, p: &mut [f64]) {
            p[1] = p[1].min(0.5);
        }
    }

    #[test]
    fn projection_is_respected() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = x.iter().map(|&x| 1.0 + 2.0 * x).collect();
        let rep = minimize(&Line { x, y }, &[0.0, 0.0], LmOptions::default());
        assert!(rep.params[1] <= 0.5);
    }

    struct FreeLine {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for FreeLine {
        fn n_params(&self) -> usize {
            2
        }
        fn n_residuals(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], out: &mut [f64]) {
            for ((o, x), y) in out.iter_mut().zip(&self.x).zip(&self.y) {
                *o = y - (p[0] + p[1] * x);
            }
        }
    }

    #[test]
    fn covariance_of_linear_fit_matches_closed_form() {
        let x: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![1.0, 3.1, 4.9, 7.2];
        let rep = minimize(&FreeLine { x: x.clone(), y }, &[0.0, 0.0], LmOptions::default());
        let c = rep.covariance.unwrap();
        // (X^T X)^-1 for X = [1 x]
        let n = 4.0;
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let det = n * sxx - sx * sx;
        assert!((c[(0, 0)] - sxx / det).abs() < 1e-8);
        assert!((c[(1, 1)] - n / det).abs() < 1e-8);
    }
}
