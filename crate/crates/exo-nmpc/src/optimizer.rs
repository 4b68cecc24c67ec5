//! Dense small-scale SQP solver for smooth objectives under linear
//! inequality constraints and simple bounds.
//!
//! The Hessian is a Powell-damped BFGS approximation started from the
//! identity, each step solves an inequality-constrained QP subproblem with
//! the active-set solver in [`qp`], and steps are globalized by a
//! backtracking line search on an ℓ1 merit function whose penalty tracks the
//! largest constraint multiplier. Gradients may be supplied analytically or
//! fall back to central finite differences.

pub mod qp;

use nalgebra::{DMatrix, DVector};

pub use qp::{constraint_violation, solve_qp, QpError, QpSolution};

/// Linear inequality constraints A x ≤ b.
#[derive(Debug, Clone)]
pub struct LinearInequalities {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl LinearInequalities {
    pub fn none(n: usize) -> Self {
        Self { a: DMatrix::zeros(0, n), b: DVector::zeros(0) }
    }
}

/// A smooth nonlinear program: minimize `objective` subject to A x ≤ b and
/// lo ≤ x ≤ hi. Use ±∞ bounds for free variables.
pub struct NlpProblem<'a> {
    pub objective: Box<dyn Fn(&DVector<f64>) -> f64 + 'a>,
    /// Analytic gradient; when absent, central finite differences are used.
    pub gradient: Option<Box<dyn Fn(&DVector<f64>) -> DVector<f64> + 'a>>,
    pub inequalities: LinearInequalities,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl<'a> NlpProblem<'a> {
    pub fn unconstrained(n: usize, objective: impl Fn(&DVector<f64>) -> f64 + 'a) -> Self {
        Self {
            objective: Box::new(objective),
            gradient: None,
            inequalities: LinearInequalities::none(n),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// SQP solver settings.
#[derive(Debug, Clone, Copy)]
pub struct SqpSettings {
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub step_tolerance: f64,
    /// Central finite-difference step for internal gradients.
    pub fd_step: f64,
}

impl Default for SqpSettings {
    fn default() -> Self {
        Self { max_iterations: 30, kkt_tolerance: 1e-6, step_tolerance: 1e-9, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqpStatus {
    Converged,
    MaxIterations,
    QpInfeasible,
}

/// Result of one SQP solve. On `MaxIterations` the best iterate found so far
/// is returned and remains feasible.
#[derive(Debug, Clone)]
pub struct SqpResult {
    pub x: DVector<f64>,
    pub objective: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub status: SqpStatus,
}

const ARMIJO_C: f64 = 1e-4;
const MIN_STEP_FRACTION: f64 = 1e-12;

/// SQP solver with mutable workspace (Hessian approximation and merit
/// penalty). Use one instance per thread; distinct instances are independent.
#[derive(Debug, Clone)]
pub struct SqpSolver {
    pub settings: SqpSettings,
    /// Count of solves that hit the iteration limit (monitoring aid).
    pub non_converged_solves: usize,
}

impl SqpSolver {
    pub fn new(settings: SqpSettings) -> Self {
        Self { settings, non_converged_solves: 0 }
    }

    pub fn solve(&mut self, problem: &NlpProblem, x0: &DVector<f64>) -> SqpResult {
        let n = problem.dim();
        assert_eq!(x0.len(), n, "x0 dimension must match problem");
        let s = self.settings;

        let mut x = x0.clone();
        for j in 0..n {
            x[j] = x[j].clamp(problem.lower[j], problem.upper[j]);
        }

        let eval = |x: &DVector<f64>| (problem.objective)(x);
        let grad = |x: &DVector<f64>| match &problem.gradient {
            Some(g) => g(x),
            None => central_difference_gradient(&problem.objective, x, s.fd_step),
        };

        let mut f = eval(&x);
        let mut g = grad(&x);
        let mut hess = DMatrix::identity(n, n);
        let mut penalty = 1.0_f64;

        let a = &problem.inequalities.a;
        let b = &problem.inequalities.b;
        let merit = |f: f64, x: &DVector<f64>, penalty: f64| {
            f + penalty * constraint_violation(x, a, b, &problem.lower, &problem.upper)
        };

        let mut best = (x.clone(), f, f64::INFINITY);
        let mut status = SqpStatus::MaxIterations;
        let mut kkt_residual = f64::INFINITY;
        let mut iterations = 0;

        for iter in 1..=s.max_iterations {
            iterations = iter;

            // QP subproblem in the step p: A(x+p) ≤ b, lo ≤ x+p ≤ hi
            let b_shift = b - a * &x;
            let lo_shift = &problem.lower - &x;
            let hi_shift = &problem.upper - &x;
            let qp_sol = match solve_qp(&hess, &g, a, &b_shift, &lo_shift, &hi_shift) {
                Ok(sol) => sol,
                Err(_) => {
                    status = SqpStatus::QpInfeasible;
                    break;
                }
            };
            let p = qp_sol.x.clone();

            // with QP stationarity Hp + g + Aᵀλ = 0, the NLP stationarity
            // residual at x equals ‖Hp‖
            let stationarity = (&hess * &p).amax();
            kkt_residual = stationarity.max(constraint_violation(&x, a, b, &problem.lower, &problem.upper));
            if kkt_residual <= s.kkt_tolerance {
                status = SqpStatus::Converged;
                best = (x.clone(), f, merit(f, &x, penalty));
                break;
            }
            if p.amax() <= s.step_tolerance {
                status = SqpStatus::Converged;
                best = (x.clone(), f, merit(f, &x, penalty));
                break;
            }

            penalty = penalty.max(1.5 * qp_sol.max_multiplier() + 1e-3);

            // ℓ1 merit backtracking line search
            let phi0 = merit(f, &x, penalty);
            let descent = g.dot(&p) - penalty * constraint_violation(&x, a, b, &problem.lower, &problem.upper);
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha >= MIN_STEP_FRACTION {
                let xt = &x + &p * alpha;
                let ft = eval(&xt);
                let phit = merit(ft, &xt, penalty);
                if phit.is_finite() && phit <= phi0 + ARMIJO_C * alpha * descent {
                    let gt = grad(&xt);
                    let step = &xt - &x;
                    let y = &gt - &g;
                    damped_bfgs_update(&mut hess, &step, &y);
                    x = xt;
                    f = ft;
                    g = gt;
                    if phit < best.2 {
                        best = (x.clone(), f, phit);
                    }
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                // no acceptable step along a descent direction: numerically
                // stalled, report the best iterate
                break;
            }
        }

        if status != SqpStatus::Converged {
            self.non_converged_solves += 1;
        }
        let (mut x_out, f_out, _) = best;
        // final exact clamp removes line-search rounding dust on the bounds
        for j in 0..n {
            x_out[j] = x_out[j].clamp(problem.lower[j], problem.upper[j]);
        }
        SqpResult { x: x_out, objective: f_out, kkt_residual, iterations, status }
    }
}

/// Central finite-difference gradient.
pub fn central_difference_gradient<F: Fn(&DVector<f64>) -> f64>(
    objective: F,
    x: &DVector<f64>,
    step: f64,
) -> DVector<f64> {
    let n = x.len();
    let mut g = DVector::zeros(n);
    let mut xp = x.clone();
    for i in 0..n {
        let xi = x[i];
        xp[i] = xi + step;
        let fp = objective(&xp);
        xp[i] = xi - step;
        let fm = objective(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// Powell-damped BFGS update keeping the approximation positive definite.
/// Verified by Cholesky after every update; a failed factorization resets
/// the approximation to the identity.
fn damped_bfgs_update(hess: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let hs = &*hess * s;
    let s_hs = s.dot(&hs);
    if s_hs <= 1e-14 {
        return;
    }
    let sy = s.dot(y);
    let r = if sy >= 0.2 * s_hs {
        y.clone()
    } else {
        let theta = 0.8 * s_hs / (s_hs - sy);
        y * theta + &hs * (1.0 - theta)
    };
    let sr = s.dot(&r);
    if sr <= 1e-14 {
        return;
    }
    *hess -= &hs * hs.transpose() / s_hs;
    *hess += &r * r.transpose() / sr;
    // keep exactly symmetric against rounding drift
    let sym = (&*hess + hess.transpose()) * 0.5;
    *hess = sym;
    if hess.clone().cholesky().is_none() {
        *hess = DMatrix::identity(s.len(), s.len());
    }
}
