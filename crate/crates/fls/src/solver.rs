//! Dense Levenberg-Marquardt for small nonlinear least-squares problems.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

pub trait LeastSquaresProblem {
    fn num_params(&self) -> usize;
    fn num_residuals(&self) -> usize;
    fn residuals(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    /// Relative decrease of cost below which the solve terminates.
    pub cost_tolerance: f64,
    /// Max-norm of the gradient below which the solve terminates.
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_damping: 1e-4,
            damping_increase: 10.0,
            damping_decrease: 0.5,
            cost_tolerance: 1e-10,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        let all_positive = self.max_iterations > 0
            && self.initial_damping > 0.0
            && self.damping_increase > 1.0
            && self.damping_decrease > 0.0
            && self.damping_decrease < 1.0
            && self.cost_tolerance > 0.0
            && self.gradient_tolerance > 0.0
            && self.step_tolerance > 0.0;
        if all_positive {
            Ok(())
        } else {
            Err(Error::Config("solver options must all be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    CostTolerance,
    GradientTolerance,
    StepTolerance,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub iterations: usize,
    pub termination: Termination,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

impl SolverReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }
}

const MAX_DAMPING: f64 = 1e32;

/// Levenberg-Marquardt with multiplicative damping and Marquardt diagonal
/// scaling: accepted steps solve `(J^T J + mu diag(J^T J)) dx = -J^T r`.
pub fn solve(
    problem: &dyn LeastSquaresProblem,
    x0: &DVector<f64>,
    options: &SolverOptions,
) -> Result<(DVector<f64>, SolverReport)> {
    options.validate()?;
    if x0.len() != problem.num_params() {
        return Err(Error::DimensionMismatch {
            expected: problem.num_params(),
            got: x0.len(),
        });
    }

    let mut x = x0.clone();
    let mut residuals = problem.residuals(&x);
    if residuals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Solver("non-finite residual at initial point".into()));
    }
    let mut cost = residuals.norm_squared();
    let mut history = vec![cost];
    let mut damping = options.initial_damping;
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    'outer: while iterations < options.max_iterations {
        let jacobian = problem.jacobian(&x);
        if jacobian.iter().any(|v| !v.is_finite()) {
            if iterations == 0 {
                return Err(Error::Solver("non-finite Jacobian at initial point".into()));
            }
            break;
        }
        let gradient = jacobian.transpose() * &residuals;
        if gradient.amax() < options.gradient_tolerance {
            termination = Termination::GradientTolerance;
            break;
        }
        let hessian = jacobian.transpose() * &jacobian;

        loop {
            let mut damped = hessian.clone();
            for i in 0..damped.nrows() {
                let diag = hessian[(i, i)].max(1e-12);
                damped[(i, i)] += damping * diag;
            }
            let step = Cholesky::new(damped).map(|ch| ch.solve(&(-&gradient)));
            let step = match step {
                Some(s) => s,
                None => {
                    damping *= options.damping_increase;
                    if damping > MAX_DAMPING {
                        return Err(Error::Solver(
                            "normal equations not solvable at maximum damping".into(),
                        ));
                    }
                    continue;
                }
            };

            let x_new = &x + &step;
            let r_new = problem.residuals(&x_new);
            let cost_new = if r_new.iter().all(|v| v.is_finite()) {
                r_new.norm_squared()
            } else {
                f64::INFINITY
            };

            if cost_new <= cost {
                let decrease = cost - cost_new;
                let step_norm = step.norm();
                x = x_new;
                residuals = r_new;
                cost = cost_new;
                history.push(cost);
                iterations += 1;
                damping = (damping * options.damping_decrease).max(1e-12);
                if decrease <= options.cost_tolerance * cost.max(1e-300) {
                    termination = Termination::CostTolerance;
                    break 'outer;
                }
                if step_norm <= options.step_tolerance * (1.0 + x.norm()) {
                    termination = Termination::StepTolerance;
                    break 'outer;
                }
                break;
            }

            damping *= options.damping_increase;
            if damping > MAX_DAMPING {
                // Cannot make progress from here; report what we have.
                termination = Termination::StepTolerance;
                break 'outer;
            }
        }
    }

    Ok((
        x,
        SolverReport {
            iterations,
            termination,
            final_cost: cost,
            cost_history: history,
        },
    ))
}

/// Jacobian audit: compares `problem.jacobian` against central finite
/// differences. Returns the worst offending entry as an error description.
pub fn check_jacobian(
    problem: &dyn LeastSquaresProblem,
    x: &DVector<f64>,
    step: f64,
    rel_tol: f64,
    abs_floor: f64,
) -> std::result::Result<(), String> {
    let analytic = problem.jacobian(x);
    let mut worst: Option<(usize, usize, f64, f64, f64)> = None;
    for j in 0..problem.num_params() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let fd = (problem.residuals(&xp) - problem.residuals(&xm)) / (2.0 * step);
        for i in 0..problem.num_residuals() {
            let a = analytic[(i, j)];
            let f = fd[i];
            let scale = a.abs().max(f.abs());
            if scale <= abs_floor {
                continue;
            }
            let rel = (a - f).abs() / scale;
            if rel > rel_tol && (a - f).abs() > abs_floor {
                if worst.map_or(true, |w| rel > w.4) {
                    worst = Some((i, j, a, f, rel));
                }
            }
        }
    }
    match worst {
        None => Ok(()),
        Some((i, j, a, f, rel)) => Err(format!(
            "jacobian entry ({i},{j}): analytic {a:.6e}, finite-diff {f:.6e}, rel err {rel:.3e}"
        )),
    }
}
