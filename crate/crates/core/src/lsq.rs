//! Damped Gauss–Newton (Levenberg–Marquardt) for small dense problems.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A least-squares problem in residual form.
///
/// Residuals are expected to be pre-weighted, `r_i = √w_i·(f_i(p) − y_i)`, so
/// that the cost is `Σ r_i²` and `(JᵀJ)⁻¹` is the parameter covariance.
pub trait Residuals {
    fn len(&self) -> usize;

    /// Fills `r` (length [`Residuals::len`]) and `jac` (len × params).
    fn eval(&self, params: &[f64], r: &mut DVector<f64>, jac: &mut DMatrix<f64>);
}

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Relative step size below which the iteration stops.
    pub step_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            step_tolerance: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmSolution {
    pub params: Vec<f64>,
    /// Σ r² at the solution.
    pub cost: f64,
    pub iterations: usize,
    /// `(JᵀJ)⁻¹` at the solution.
    pub covariance: DMatrix<f64>,
}

pub fn levenberg_marquardt<R: Residuals>(
    problem: &R,
    initial: &[f64],
    opts: LmOptions,
) -> Result<LmSolution> {
    let m = problem.len();
    let k = initial.len();
    if m < k {
        return Err(Error::InsufficientData(format!(
            "{m} residuals for {k} parameters"
        )));
    }
    let mut p = DVector::from_column_slice(initial);
    let mut r = DVector::zeros(m);
    let mut jac = DMatrix::zeros(m, k);
    problem.eval(p.as_slice(), &mut r, &mut jac);
    let mut cost = r.norm_squared();
    if !cost.is_finite() {
        return Err(Error::NonConvergence {
            iterations: 0,
            last: initial.to_vec(),
        });
    }

    let mut lambda = opts.initial_damping;
    let mut trial_r = DVector::zeros(m);
    let mut trial_jac = DMatrix::zeros(m, k);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        let mut accepted = false;

        while lambda < 1e20 {
            let mut a = jtj.clone();
            for i in 0..k {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&grad);
            let trial = &p + &step;
            problem.eval(trial.as_slice(), &mut trial_r, &mut trial_jac);
            let trial_cost = trial_r.norm_squared();
            if trial_cost.is_finite() && trial_cost <= cost {
                let small = step.norm() <= opts.step_tolerance * (p.norm() + opts.step_tolerance);
                let flat = cost - trial_cost <= 1e-15 * cost;
                p = trial;
                std::mem::swap(&mut r, &mut trial_r);
                std::mem::swap(&mut jac, &mut trial_jac);
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if small || flat {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        // No downhill step at any damping: already at a minimum to machine precision.
        if !accepted {
            converged = true;
        }
        if converged {
            break;
        }
    }

    if !converged {
        return Err(Error::NonConvergence {
            iterations,
            last: p.as_slice().to_vec(),
        });
    }
    let jtj = jac.transpose() * &jac;
    let covariance = jtj.clone().try_inverse().ok_or_else(|| {
        Error::RankDeficient("singular normal matrix at the least-squares solution".into())
    })?;
    Ok(LmSolution {
        params: p.as_slice().to_vec(),
        cost,
        iterations,
        covariance,
    })
}
