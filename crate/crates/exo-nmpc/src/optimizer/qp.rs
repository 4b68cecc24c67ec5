//! Dense primal active-set solver for small convex quadratic programs
//!
//! ```text
//!     minimize    ½ xᵀHx + gᵀx
//!     subject to  A x ≤ b,  lo ≤ x ≤ hi
//! ```
//!
//! All factorizations are dense; the intended problem sizes are a handful of
//! variables and a few dozen constraint rows, where an exact active-set
//! method is both simple and fast.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QpError {
    /// The starting point violates the general constraints, or no feasible
    /// point exists.
    #[error("quadratic program infeasible")]
    Infeasible,
    /// The active-set loop failed to terminate (degenerate or ill-posed data).
    #[error("active-set iteration limit reached")]
    IterationLimit,
}

/// Solution of a QP: the minimizer and the KKT multipliers split by
/// constraint group (general rows, lower bounds, upper bounds).
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub lower_multipliers: DVector<f64>,
    pub upper_multipliers: DVector<f64>,
    pub iterations: usize,
}

impl QpSolution {
    /// Largest multiplier magnitude over every constraint group.
    pub fn max_multiplier(&self) -> f64 {
        let m1 = if self.multipliers.is_empty() { 0.0 } else { self.multipliers.amax() };
        let m2 = if self.lower_multipliers.is_empty() { 0.0 } else { self.lower_multipliers.amax() };
        let m3 = if self.upper_multipliers.is_empty() { 0.0 } else { self.upper_multipliers.amax() };
        m1.max(m2).max(m3)
    }
}

const FEAS_TOL: f64 = 1e-9;
const STEP_TOL: f64 = 1e-11;
const MULT_TOL: f64 = 1e-9;
const EIG_FLOOR: f64 = 1e-8;

/// One inequality row a·x ≤ rhs tagged with its origin.
#[derive(Clone, Copy, PartialEq)]
enum RowKind {
    General(usize),
    Lower(usize),
    Upper(usize),
}

/// Solves the QP with a primal active-set method started from the feasible
/// point clamp(0, lo, hi). H is symmetrized and its spectrum floored at 1e-8
/// by a diagonal shift before solving.
pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    assert_eq!(h.nrows(), n, "H must be n×n");
    assert_eq!(h.ncols(), n, "H must be n×n");
    assert_eq!(a.ncols(), n, "A must have n columns");
    assert_eq!(a.nrows(), b.len(), "A rows must match b");
    assert_eq!(lo.len(), n, "lo must have length n");
    assert_eq!(hi.len(), n, "hi must have length n");

    let m = a.nrows();
    let h = regularize(h);

    // unified row list: general constraints, then finite upper/lower bounds
    let mut rows: Vec<(DVector<f64>, f64, RowKind)> = Vec::with_capacity(m + 2 * n);
    for i in 0..m {
        rows.push((a.row(i).transpose(), b[i], RowKind::General(i)));
    }
    for j in 0..n {
        if hi[j].is_finite() {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            rows.push((e, hi[j], RowKind::Upper(j)));
        }
        if lo[j].is_finite() {
            let mut e = DVector::zeros(n);
            e[j] = -1.0;
            rows.push((e, -lo[j], RowKind::Lower(j)));
        }
    }

    let mut x = DVector::<f64>::zeros(n);
    for j in 0..n {
        x[j] = x[j].clamp(lo[j], hi[j]);
    }
    for (row, rhs, _) in &rows {
        if row.dot(&x) > rhs + FEAS_TOL {
            return Err(QpError::Infeasible);
        }
    }

    let mut working: Vec<usize> = Vec::new();
    let max_iters = 100 * (n + rows.len() + 1);

    for iter in 1..=max_iters {
        let grad = &h * &x + g;
        let (p, lambda) = solve_eqp(&h, &grad, &rows, &working)?;

        if p.amax() <= STEP_TOL {
            // stationary on the working set: check multiplier signs
            let (min_idx, min_val) = lambda
                .iter()
                .copied()
                .enumerate()
                .fold((usize::MAX, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
            if working.is_empty() || min_val >= -MULT_TOL {
                return Ok(assemble_solution(x, &rows, &working, &lambda, m, n, iter));
            }
            working.remove(min_idx);
            continue;
        }

        // ratio test against rows not in the working set
        let mut alpha = 1.0;
        let mut blocker: Option<usize> = None;
        for (i, (row, rhs, _)) in rows.iter().enumerate() {
            if working.contains(&i) {
                continue;
            }
            let d = row.dot(&p);
            if d > 1e-12 {
                let step = (rhs - row.dot(&x)) / d;
                if step < alpha {
                    alpha = step.max(0.0);
                    blocker = Some(i);
                }
            }
        }
        x += &p * alpha;
        if let Some(i) = blocker {
            // a blocking row is always independent of the working set
            // (dependent rows satisfy a·p = 0 on the null space of W)
            working.push(i);
        }
    }

    Err(QpError::IterationLimit)
}

/// Symmetrize and floor the spectrum at EIG_FLOOR via a diagonal shift.
fn regularize(h: &DMatrix<f64>) -> DMatrix<f64> {
    let mut sym = (h + h.transpose()) * 0.5;
    let min_eig = sym
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if min_eig < EIG_FLOOR {
        let shift = EIG_FLOOR - min_eig;
        for i in 0..sym.nrows() {
            sym[(i, i)] += shift;
        }
    }
    sym
}

/// Equality-constrained subproblem on the working set:
/// min ½pᵀHp + gradᵀp  s.t.  a_i·p = 0 (i ∈ W), via the dense KKT system.
fn solve_eqp(
    h: &DMatrix<f64>,
    grad: &DVector<f64>,
    rows: &[(DVector<f64>, f64, RowKind)],
    working: &[usize],
) -> Result<(DVector<f64>, DVector<f64>), QpError> {
    let n = grad.len();
    let k = working.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(h);
    for (wi, &idx) in working.iter().enumerate() {
        let row = &rows[idx].0;
        for j in 0..n {
            kkt[(n + wi, j)] = row[j];
            kkt[(j, n + wi)] = row[j];
        }
    }
    let mut rhs = DVector::zeros(n + k);
    for j in 0..n {
        rhs[j] = -grad[j];
    }
    let sol = kkt.full_piv_lu().solve(&rhs).ok_or(QpError::IterationLimit)?;
    let p = sol.rows(0, n).into_owned();
    let lambda = sol.rows(n, k).into_owned();
    Ok((p, lambda))
}

fn assemble_solution(
    x: DVector<f64>,
    rows: &[(DVector<f64>, f64, RowKind)],
    working: &[usize],
    lambda: &DVector<f64>,
    m: usize,
    n: usize,
    iterations: usize,
) -> QpSolution {
    let mut general = DVector::zeros(m);
    let mut lower = DVector::zeros(n);
    let mut upper = DVector::zeros(n);
    for (wi, &idx) in working.iter().enumerate() {
        let val = lambda[wi].max(0.0);
        match rows[idx].2 {
            RowKind::General(i) => general[i] = val,
            RowKind::Lower(j) => lower[j] = val,
            RowKind::Upper(j) => upper[j] = val,
        }
    }
    QpSolution { x, multipliers: general, lower_multipliers: lower, upper_multipliers: upper, iterations }
}

/// Maximum violation of A x ≤ b and the bounds at x (0 when feasible).
pub fn constraint_violation(
    x: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
) -> f64 {
    let mut v: f64 = 0.0;
    if a.nrows() > 0 {
        let ax = a * x;
        for i in 0..b.len() {
            v = v.max(ax[i] - b[i]);
        }
    }
    for j in 0..x.len() {
        v = v.max(lo[j] - x[j]).max(x[j] - hi[j]);
    }
    v.max(0.0)
}
