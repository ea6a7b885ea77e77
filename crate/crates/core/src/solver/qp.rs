//! Convex QP relaxation of a [`MiqpModel`].
//!
//! Fixed columns are substituted out and singleton rows are turned into
//! bounds before the remaining problem is handed to an interior-point
//! solver (clarabel). The returned point is checked independently: primal
//! feasibility on the original rows and bounds, stationarity on the
//! reduced KKT system.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT, ZeroConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VvoError};
use crate::formulation::MiqpModel;

pub const PRIMAL_TOL: f64 = 1e-7;
pub const STATIONARITY_TOL: f64 = 1e-6;
const PRESOLVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktResiduals {
    /// Largest row or bound violation of the returned point.
    pub primal: f64,
    /// `|P x + A' z|_inf` on the reduced problem.
    pub stationarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpResult {
    pub status: QpStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    pub residuals: KktResiduals,
    pub iterations: u32,
}

impl QpResult {
    fn infeasible(n: usize) -> Self {
        QpResult {
            status: QpStatus::Infeasible,
            objective: f64::INFINITY,
            x: vec![f64::NAN; n],
            residuals: KktResiduals::default(),
            iterations: 0,
        }
    }
}

/// Relaxation with the integer columns relaxed to their intervals and the
/// given `(column, value)` fixings imposed.
pub fn solve_qp_relaxation(problem: &MiqpModel, fixings: &[(usize, f64)]) -> Result<QpResult> {
    let mut lb = problem.lb.clone();
    let mut ub = problem.ub.clone();
    for &(j, v) in fixings {
        if j >= problem.n_vars() {
            return Err(VvoError::InvalidInput(format!("fixing refers to column {j} of {}", problem.n_vars())));
        }
        if !(v >= lb[j] - PRESOLVE_TOL && v <= ub[j] + PRESOLVE_TOL) {
            return Err(VvoError::InvalidInput(format!(
                "fixing of column {j} to {v} lies outside [{}, {}]",
                lb[j],
                ub[j]
            )));
        }
        lb[j] = v;
        ub[j] = v;
    }
    Ok(solve_with_bounds(problem, &lb, &ub))
}

struct Presolved {
    lb: Vec<f64>,
    ub: Vec<f64>,
    alive: Vec<bool>,
}

fn is_fixed(lb: f64, ub: f64) -> bool {
    ub - lb <= 1e-12
}

/// Bound propagation through empty and singleton rows. `None` = infeasible.
fn presolve(problem: &MiqpModel, lb: &[f64], ub: &[f64]) -> Option<Presolved> {
    let mut lb = lb.to_vec();
    let mut ub = ub.to_vec();
    for j in 0..lb.len() {
        if lb[j] > ub[j] + PRESOLVE_TOL {
            return None;
        }
        if is_fixed(lb[j], ub[j]) {
            let mid = 0.5 * (lb[j] + ub[j]);
            lb[j] = mid;
            ub[j] = mid;
        }
    }
    let mut alive = vec![true; problem.rows.len()];
    loop {
        let mut changed = false;
        for (i, row) in problem.rows.iter().enumerate() {
            if !alive[i] {
                continue;
            }
            let mut constant = 0.0;
            let mut free = None;
            let mut n_free = 0;
            for &(j, a) in &row.coeffs {
                if a == 0.0 {
                    continue;
                }
                if is_fixed(lb[j], ub[j]) {
                    constant += a * lb[j];
                } else {
                    n_free += 1;
                    free = Some((j, a));
                }
            }
            match (n_free, free) {
                (0, _) => {
                    let tol = PRESOLVE_TOL * (1.0 + constant.abs());
                    if constant < row.lo - tol || constant > row.hi + tol {
                        return None;
                    }
                    alive[i] = false;
                }
                (1, Some((j, a))) if a.abs() > 1e-9 => {
                    let (mut lo, mut hi) = ((row.lo - constant) / a, (row.hi - constant) / a);
                    if a < 0.0 {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    if lo > lb[j] {
                        lb[j] = lo;
                    }
                    if hi < ub[j] {
                        ub[j] = hi;
                    }
                    if lb[j] > ub[j] + PRESOLVE_TOL * (1.0 + lb[j].abs()) {
                        return None;
                    }
                    if lb[j] > ub[j] || is_fixed(lb[j], ub[j]) {
                        let mid = 0.5 * (lb[j] + ub[j]);
                        lb[j] = mid;
                        ub[j] = mid;
                    }
                    alive[i] = false;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }
    Some(Presolved { lb, ub, alive })
}

/// Largest violation of rows and of the given bounds.
pub fn primal_residual(problem: &MiqpModel, lb: &[f64], ub: &[f64], x: &[f64]) -> f64 {
    let bounds = (0..x.len()).map(|j| (lb[j] - x[j]).max(x[j] - ub[j]).max(0.0));
    let rows = problem.rows.iter().map(|r| {
        let a = r.activity(x);
        (r.lo - a).max(a - r.hi).max(0.0)
    });
    bounds.chain(rows).fold(0.0, f64::max)
}

/// Relaxation over explicit column bounds.
pub fn solve_with_bounds(problem: &MiqpModel, lb: &[f64], ub: &[f64]) -> QpResult {
    let n = problem.n_vars();
    let Some(pre) = presolve(problem, lb, ub) else {
        return QpResult::infeasible(n);
    };

    let mut col_of = vec![usize::MAX; n];
    let mut free_cols = Vec::new();
    for j in 0..n {
        if !is_fixed(pre.lb[j], pre.ub[j]) {
            col_of[j] = free_cols.len();
            free_cols.push(j);
        }
    }
    let nf = free_cols.len();

    // Equality rows first (zero cone), then inequalities (nonnegative cone).
    let mut eq_trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut eq_b = Vec::new();
    let mut in_trip: Vec<(usize, usize, f64)> = Vec::new();
    let mut in_b = Vec::new();
    for (i, row) in problem.rows.iter().enumerate() {
        if !pre.alive[i] {
            continue;
        }
        let mut constant = 0.0;
        let mut coeffs = Vec::with_capacity(row.coeffs.len());
        for &(j, a) in &row.coeffs {
            if col_of[j] == usize::MAX {
                constant += a * pre.lb[j];
            } else {
                coeffs.push((col_of[j], a));
            }
        }
        if row.is_equality() {
            let r = eq_b.len();
            eq_trip.extend(coeffs.iter().map(|&(k, a)| (r, k, a)));
            eq_b.push(row.hi - constant);
            continue;
        }
        if row.hi.is_finite() {
            let r = in_b.len();
            in_trip.extend(coeffs.iter().map(|&(k, a)| (r, k, a)));
            in_b.push(row.hi - constant);
        }
        if row.lo.is_finite() {
            let r = in_b.len();
            in_trip.extend(coeffs.iter().map(|&(k, a)| (r, k, -a)));
            in_b.push(constant - row.lo);
        }
    }
    for (k, &j) in free_cols.iter().enumerate() {
        if pre.ub[j].is_finite() {
            let r = in_b.len();
            in_trip.push((r, k, 1.0));
            in_b.push(pre.ub[j]);
        }
        if pre.lb[j].is_finite() {
            let r = in_b.len();
            in_trip.push((r, k, -1.0));
            in_b.push(-pre.lb[j]);
        }
    }

    let mut x_full: Vec<f64> = pre.lb.clone();
    if nf == 0 {
        let primal = primal_residual(problem, lb, ub, &x_full);
        let status = if primal <= PRIMAL_TOL { QpStatus::Optimal } else { QpStatus::Infeasible };
        return QpResult {
            status,
            objective: problem.objective(&x_full),
            x: x_full,
            residuals: KktResiduals { primal, stationarity: 0.0 },
            iterations: 0,
        };
    }

    let n_eq = eq_b.len();
    let m = n_eq + in_b.len();
    let (mut ri, mut ci, mut vi) = (Vec::new(), Vec::new(), Vec::new());
    for &(r, k, a) in &eq_trip {
        ri.push(r);
        ci.push(k);
        vi.push(a);
    }
    for &(r, k, a) in &in_trip {
        ri.push(r + n_eq);
        ci.push(k);
        vi.push(a);
    }
    let a_mat = CscMatrix::new_from_triplets(m, nf, ri, ci, vi);
    let mut b = eq_b;
    b.extend(in_b);

    let mut pi = Vec::new();
    let mut pv = Vec::new();
    for (k, &j) in free_cols.iter().enumerate() {
        if problem.obj_diag[j] > 0.0 {
            pi.push(k);
            pv.push(2.0 * problem.obj_diag[j]);
        }
    }
    let p_mat = CscMatrix::new_from_triplets(nf, nf, pi.clone(), pi, pv);
    let q = vec![0.0; nf];

    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if n_eq > 0 {
        cones.push(ZeroConeT(n_eq));
    }
    if m > n_eq {
        cones.push(NonnegativeConeT(m - n_eq));
    }
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_feas(1e-10)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .presolve_enable(false)
        .build()
        .expect("static settings are valid");
    let mut solver = match DefaultSolver::new(&p_mat, &q, &a_mat, &b, &cones, settings) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("QP setup failed: {e}");
            return QpResult { status: QpStatus::NumericalFailure, ..QpResult::infeasible(n) };
        }
    };
    solver.solve();
    let sol = &solver.solution;
    let iterations = sol.iterations;
    match sol.status {
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return QpResult { iterations, ..QpResult::infeasible(n) };
        }
        SolverStatus::Solved | SolverStatus::AlmostSolved => {}
        other => {
            log::debug!("QP relaxation ended with {other:?}");
            return QpResult { status: QpStatus::NumericalFailure, iterations, ..QpResult::infeasible(n) };
        }
    }
    for (k, &j) in free_cols.iter().enumerate() {
        x_full[j] = sol.x[k];
    }

    // Stationarity P x + A' z on the reduced problem.
    let mut grad: Vec<f64> = (0..nf)
        .map(|k| {
            let j = free_cols[k];
            2.0 * problem.obj_diag[j] * sol.x[k]
        })
        .collect();
    for (k, g) in grad.iter_mut().enumerate() {
        for idx in a_mat.colptr[k]..a_mat.colptr[k + 1] {
            *g += a_mat.nzval[idx] * sol.z[a_mat.rowval[idx]];
        }
    }
    let stationarity = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
    let primal = primal_residual(problem, lb, ub, &x_full);
    let residuals = KktResiduals { primal, stationarity };
    let status = if primal <= PRIMAL_TOL && stationarity <= STATIONARITY_TOL {
        QpStatus::Optimal
    } else {
        log::debug!("QP residuals too large: {residuals:?} ({:?})", sol.status);
        QpStatus::NumericalFailure
    };
    QpResult { status, objective: problem.objective(&x_full), x: x_full, residuals, iterations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{Row, RowFamily, VarKind};

    fn model(diag: Vec<f64>, lb: Vec<f64>, ub: Vec<f64>, rows: Vec<Row>) -> MiqpModel {
        MiqpModel { kinds: vec![VarKind::Continuous; diag.len()], lb, ub, obj_diag: diag, rows }
    }

    fn row(coeffs: Vec<(usize, f64)>, lo: f64, hi: f64) -> Row {
        Row { coeffs, lo, hi, family: RowFamily::Generic }
    }

    #[test]
    fn unconstrained_diagonal() {
        let inf = f64::INFINITY;
        let m = model(vec![1.0, 2.0, 0.5], vec![-inf; 3], vec![inf; 3], vec![]);
        let r = solve_qp_relaxation(&m, &[]).unwrap();
        assert_eq!(r.status, QpStatus::Optimal);
        assert!(r.x.iter().all(|v| v.abs() < 1e-7));
        assert!(r.objective.abs() < 1e-12);
    }

    #[test]
    fn active_lower_bound_via_row() {
        let inf = f64::INFINITY;
        // x >= 3 as a two-variable row so presolve does not absorb it
        let m = model(vec![1.0, 0.0], vec![-inf, 0.0], vec![inf, 0.0], vec![row(vec![(0, 1.0), (1, 1.0)], 3.0, inf)]);
        let r = solve_qp_relaxation(&m, &[]).unwrap();
        assert_eq!(r.status, QpStatus::Optimal);
        assert!((r.x[0] - 3.0).abs() < 1e-7);
        assert!((r.objective - 9.0).abs() < 1e-6);

        let m = model(vec![1.0, 1.0], vec![-inf; 2], vec![inf; 2], vec![row(vec![(0, 1.0), (1, 1.0)], 3.0, inf)]);
        let r = solve_qp_relaxation(&m, &[]).unwrap();
        assert!((r.x[0] - 1.5).abs() < 1e-7 && (r.x[1] - 1.5).abs() < 1e-7);
        assert!(r.residuals.stationarity <= STATIONARITY_TOL);
    }

    #[test]
    fn infeasible_rows_and_fixings() {
        let inf = f64::INFINITY;
        let m = model(
            vec![1.0, 1.0],
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![row(vec![(0, 1.0), (1, 1.0)], 3.0, inf)],
        );
        assert_eq!(solve_qp_relaxation(&m, &[]).unwrap().status, QpStatus::Infeasible);
        let m = model(vec![1.0, 1.0], vec![-inf; 2], vec![inf; 2], vec![row(vec![(0, 1.0), (1, 1.0)], 1.0, 1.0)]);
        let r = solve_qp_relaxation(&m, &[(0, 2.0)]).unwrap();
        assert!((r.x[1] + 1.0).abs() < 1e-9);
        assert!(solve_qp_relaxation(&m, &[(5, 0.0)]).is_err());
    }
}
