//! Damped least-squares engine shared by all fitters in the crate.
//!
//! Classic Levenberg-Marquardt on the normal equations: solve
//! `(J'J + lambda diag(J'J)) step = -J' r`, shrink the damping tenfold on
//! an accepted step and grow it tenfold on a rejected one. Problems supply
//! residuals and optionally an analytic Jacobian; otherwise forward
//! differences with per-parameter scaled steps fill in.

use nalgebra::{Cholesky, DMatrix, DVector};

/// A residual vector with optional analytic derivatives.
pub trait LmProblem {
    fn residual_len(&self) -> usize;

    /// Writes the residual vector for `params` into `out`
    /// (`out.len() == residual_len()`).
    fn residuals(&self, params: &[f64], out: &mut [f64]);

    /// Writes the row-major Jacobian (`residual_len() x params.len()`) and
    /// returns true, or returns false to request finite differences.
    fn jacobian(&self, _params: &[f64], _out: &mut [f64]) -> bool {
        false
    }

    /// Characteristic magnitude per parameter, used for difference steps
    /// and for the relative step-size convergence test.
    fn param_scales(&self, params: &[f64]) -> Vec<f64> {
        params
            .iter()
            .map(|p| {
                let m = p.abs();
                if m > 1e-12 {
                    m
                } else {
                    1.0
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    /// Damping growth past this value aborts the solve as non-converged.
    pub max_damping: f64,
    /// Relative cost decrease below which an accepted step ends the solve.
    pub cost_tolerance: f64,
    /// Relative step size below which the solve ends.
    pub step_tolerance: f64,
    pub fd_relative_step: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            // Noisy multi-line fits can crawl along a shallow width/amplitude
            // valley for several hundred accepted steps before the relative
            // improvement drops below tolerance; the cap must outlast that.
            max_iterations: 1000,
            initial_damping: 1e-3,
            max_damping: 1e12,
            cost_tolerance: 1e-12,
            step_tolerance: 1e-11,
            fd_relative_step: 1e-7,
        }
    }
}

/// Outcome of a solve. `cost` is the plain sum of squared residuals at
/// `params`; `iterations` counts accepted steps.
#[derive(Clone, Debug)]
pub struct LmReport {
    pub params: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Row-major forward-difference Jacobian.
pub fn finite_difference_jacobian<P: LmProblem + ?Sized>(
    problem: &P,
    params: &[f64],
    fd_relative_step: f64,
) -> Vec<f64> {
    let m = problem.residual_len();
    let n = params.len();
    let scales = problem.param_scales(params);
    let mut base = vec![0.0; m];
    problem.residuals(params, &mut base);
    let mut out = vec![0.0; m * n];
    let mut p = params.to_vec();
    let mut r = vec![0.0; m];
    for j in 0..n {
        let saved = p[j];
        p[j] = saved + fd_relative_step * scales[j];
        // the step that was actually representable, not the nominal one
        let h = p[j] - saved;
        problem.residuals(&p, &mut r);
        for i in 0..m {
            out[i * n + j] = (r[i] - base[i]) / h;
        }
        p[j] = saved;
    }
    out
}

pub fn levenberg_marquardt<P: LmProblem + ?Sized>(
    problem: &P,
    initial: &[f64],
    opts: &LmOptions,
) -> LmReport {
    let m = problem.residual_len();
    let n = initial.len();
    let mut params = initial.to_vec();
    let mut residual = vec![0.0; m];
    problem.residuals(&params, &mut residual);
    let mut cost = sumsq(&residual);

    let mut report = LmReport {
        params: params.clone(),
        cost,
        iterations: 0,
        converged: false,
    };
    if !cost.is_finite() || opts.max_iterations == 0 {
        return report;
    }

    let mut lambda = opts.initial_damping;
    let mut jac = vec![0.0; m * n];
    let mut trial = vec![0.0; n];
    let mut trial_res = vec![0.0; m];

    'outer: for _ in 0..opts.max_iterations {
        if !problem.jacobian(&params, &mut jac) {
            jac = finite_difference_jacobian(problem, &params, opts.fd_relative_step);
        }
        let jmat = DMatrix::from_row_slice(m, n, &jac);
        let jt = jmat.transpose();
        let a = &jt * &jmat;
        let g = &jt * DVector::from_column_slice(&residual);
        let scales = problem.param_scales(&params);

        let mut max_diag = 0.0f64;
        for i in 0..n {
            max_diag = max_diag.max(a[(i, i)]);
        }

        loop {
            let mut aug = a.clone();
            for i in 0..n {
                let d = a[(i, i)];
                // the relative floor keeps directions with a dying diagonal
                // (e.g. the center of a peak whose amplitude collapsed) from
                // taking arbitrarily large steps
                aug[(i, i)] = d * (1.0 + lambda) + lambda * 1e-8 * max_diag + 1e-300;
            }
            let Some(chol) = Cholesky::new(aug) else {
                lambda *= 10.0;
                if lambda > opts.max_damping {
                    break 'outer;
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut step = 0.0f64;
            for j in 0..n {
                step = step.max((delta[j] / scales[j]).abs());
                trial[j] = params[j] + delta[j];
            }
            problem.residuals(&trial, &mut trial_res);
            let trial_cost = sumsq(&trial_res);

            if trial_cost.is_finite() && trial_cost < cost {
                let improvement = (cost - trial_cost) / cost.max(f64::MIN_POSITIVE);
                params.copy_from_slice(&trial);
                std::mem::swap(&mut residual, &mut trial_res);
                cost = trial_cost;
                report.iterations += 1;
                lambda = (lambda * 0.1).max(1e-14);
                if improvement <= opts.cost_tolerance || step <= opts.step_tolerance {
                    report.converged = true;
                    break 'outer;
                }
                break;
            }

            // rejected: a vanishing step that still cannot improve the cost
            // means we are at the numerical floor
            if step <= opts.step_tolerance {
                report.converged = true;
                break 'outer;
            }
            lambda *= 10.0;
            if lambda > opts.max_damping {
                break 'outer;
            }
        }
    }

    report.params = params;
    report.cost = cost;
    report
}

fn sumsq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}
