//! Dense strictly convex QP solver:
//!
//! ```text
//! minimize  U'HU + 2F'U   subject to  G U >= h
//! ```
//!
//! Dual active-set method in the Goldfarb–Idnani form. Starting from the
//! unconstrained minimum, the most violated row is added at each outer
//! iteration; the primal/dual step either makes it active (full step) or
//! releases an active row whose multiplier reaches zero (partial step). If a
//! violated row is a nonnegative combination of the active rows, the problem
//! is infeasible and the combination is returned as a Farkas certificate
//! `y >= 0, G'y = 0, h'y > 0`.
//!
//! Variables are Jacobi-scaled and rows are normalized internally; every
//! reported quantity (solution, multipliers, certificate) is in the units of
//! the caller's problem.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::mpc::QpProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub max_iter: usize,
    pub feas_tol: f64,
    pub kkt_tol: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self { max_iter: 500, feas_tol: 1e-8, kkt_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub status: QpStatus,
    pub u: DVector<f64>,
    /// `U'HU + 2F'U` at `u`.
    pub objective: f64,
    /// Active rows, in the order they were added.
    pub active_set: Vec<usize>,
    /// One multiplier per row of G; zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Farkas certificate when infeasible.
    pub certificate: Option<DVector<f64>>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Solver with its own settings and the active set of the last solve, used
/// to warm start the next one.
#[derive(Debug, Clone, Default)]
pub struct QpSolver {
    pub settings: QpSettings,
    last_active: Vec<usize>,
}

impl QpSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings, last_active: Vec::new() }
    }

    /// Solve, warm started from the previous optimal active set.
    pub fn solve(&mut self, qp: &QpProblem) -> QpSolution {
        let prior = std::mem::take(&mut self.last_active);
        let sol = solve_with(qp, &self.settings, &prior);
        if sol.is_optimal() {
            self.last_active = sol.active_set.clone();
        }
        sol
    }

    pub fn reset(&mut self) {
        self.last_active.clear();
    }
}

/// Cold-start solve with default settings.
pub fn solve(qp: &QpProblem) -> QpSolution {
    solve_with(qp, &QpSettings::default(), &[])
}

/// `max(‖2HU + 2F − G'μ‖, primal violation, dual violation, max |μ_i s_i|)`.
pub fn kkt_residual(qp: &QpProblem, sol: &QpSolution) -> Result<f64> {
    if !sol.is_optimal() {
        return Err(Error::NotOptimal);
    }
    Ok(residual(qp, &sol.u, &sol.multipliers))
}

fn residual(qp: &QpProblem, u: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let grad = (&qp.quad * u + &qp.lin) * 2.0;
    let stationarity = (grad - qp.g.tr_mul(mu)).norm();
    let slack = qp.slack(u);
    let primal = slack.iter().fold(0.0f64, |acc, s| acc.max(-s));
    let dual = mu.iter().fold(0.0f64, |acc, m| acc.max(-m));
    let comp = mu.iter().zip(slack.iter()).fold(0.0f64, |acc, (m, s)| acc.max((m * s).abs()));
    stationarity.max(primal).max(dual).max(comp)
}

/// Check `y >= 0`, `G'y ≈ 0` and `h'y > 0`.
pub fn verify_certificate(qp: &QpProblem, y: &DVector<f64>) -> bool {
    if y.len() != qp.num_rows() || y.iter().any(|v| *v < -1e-12) {
        return false;
    }
    let scale: f64 = y.iter().zip(qp.g.row_iter()).map(|(yi, r)| yi.abs() * r.norm()).sum();
    let combo = qp.g.tr_mul(y);
    combo.amax() <= 1e-8 * scale.max(1e-300) && qp.h.dot(y) > 0.0
}

/// Problem in scaled variables `u = D z` with unit-norm rows.
struct Scaled {
    chol: Cholesky<f64, Dyn>,
    /// Gradient offset 2 D F.
    c: DVector<f64>,
    /// Normalized rows, one per original row.
    rows: DMatrix<f64>,
    rhs: DVector<f64>,
    /// Row norm after variable scaling; 1 for all-zero rows.
    row_scale: DVector<f64>,
    d: DVector<f64>,
}

impl Scaled {
    fn new(qp: &QpProblem) -> Self {
        let n = qp.num_vars();
        let m = qp.num_rows();
        let d = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let q = 2.0 * qp.quad[(i, i)];
                if q > 0.0 { 1.0 / q.sqrt() } else { 1.0 }
            }),
        );
        let mut q = DMatrix::from_fn(n, n, |i, j| 2.0 * qp.quad[(i, j)] * d[i] * d[j]);
        q = (&q + q.transpose()) * 0.5;
        let chol = match Cholesky::new(q.clone()) {
            Some(c) => c,
            None => {
                // Only PSD: regularize just enough to factor.
                let mut delta = 1e-12 * q.diagonal().amax().max(1.0);
                loop {
                    let reg = &q + DMatrix::identity(n, n) * delta;
                    if let Some(c) = Cholesky::new(reg) {
                        break c;
                    }
                    delta *= 10.0;
                }
            }
        };
        let c = qp.lin.component_mul(&d) * 2.0;
        let mut rows = DMatrix::from_fn(m, n, |i, j| qp.g[(i, j)] * d[j]);
        let mut rhs = qp.h.clone();
        let mut row_scale = DVector::from_element(m, 1.0);
        for i in 0..m {
            let norm = rows.row(i).norm();
            if norm > 0.0 {
                rows.row_mut(i).unscale_mut(norm);
                rhs[i] /= norm;
                row_scale[i] = norm;
            }
        }
        Self { chol, c, rows, rhs, row_scale, d }
    }

    fn l_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.l_dirty().solve_lower_triangular(v).expect("cholesky factor is nonsingular")
    }

    fn lt_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.l_dirty().tr_solve_lower_triangular(v).expect("cholesky factor is nonsingular")
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.rows.row(i).transpose()
    }

    fn slack(&self, i: usize, z: &DVector<f64>) -> f64 {
        self.rows.row(i).dot(&z.transpose()) - self.rhs[i]
    }

    /// `L^{-1} N_A` for the active rows.
    fn active_columns(&self, active: &[usize]) -> DMatrix<f64> {
        let n = self.c.len();
        let mut cols = DMatrix::zeros(n, active.len());
        for (k, &i) in active.iter().enumerate() {
            cols.set_column(k, &self.l_solve(&self.row(i)));
        }
        cols
    }
}

/// Least-squares fit of `target` by the columns of `cols`: returns the
/// coefficients and the residual.
fn project(cols: &DMatrix<f64>, target: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if cols.ncols() == 0 {
        return (DVector::zeros(0), target.clone());
    }
    let qr = cols.clone().qr();
    let qt = qr.q().tr_mul(target);
    let r = qr.r();
    let coef = r.solve_upper_triangular(&qt).unwrap_or_else(|| DVector::zeros(cols.ncols()));
    let resid = target - cols * &coef;
    (coef, resid)
}

const DEPENDENCE_TOL: f64 = 1e-10;

fn independent_of(cols: &DMatrix<f64>, candidate: &DVector<f64>) -> bool {
    let (_, resid) = project(cols, candidate);
    resid.norm() > DEPENDENCE_TOL * candidate.norm().max(1.0)
}

struct State {
    z: DVector<f64>,
    active: Vec<usize>,
    lambda: Vec<f64>,
    iterations: usize,
}

/// Minimum of the equality-constrained subproblem on `active`, dropping rows
/// until all multipliers are nonnegative.
fn warm_state(sc: &Scaled, z0: &DVector<f64>, prior: &[usize]) -> State {
    let m = sc.rhs.len();
    let mut active: Vec<usize> = Vec::new();
    let mut cols = DMatrix::zeros(z0.len(), 0);
    for &i in prior {
        if i >= m || active.contains(&i) || sc.rhs[i] < -1e11 {
            continue;
        }
        let col = sc.l_solve(&sc.row(i));
        if col.norm() == 0.0 || !independent_of(&cols, &col) {
            continue;
        }
        let at = cols.ncols();
        cols = cols.insert_column(at, 0.0);
        let last = cols.ncols() - 1;
        cols.set_column(last, &col);
        active.push(i);
    }
    if active.is_empty() {
        return State { z: z0.clone(), active, lambda: Vec::new(), iterations: 0 };
    }
    loop {
        let cols = sc.active_columns(&active);
        let gram = cols.tr_mul(&cols);
        let gap = DVector::from_iterator(active.len(), active.iter().map(|&i| -sc.slack(i, z0)));
        let lambda = gram.lu().solve(&gap).unwrap_or_else(|| DVector::zeros(active.len()));
        let worst = lambda
            .iter()
            .enumerate()
            .filter(|(_, l)| **l < 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1).then(active[a.0].cmp(&active[b.0])));
        match worst {
            Some((k, _)) => {
                active.remove(k);
                if active.is_empty() {
                    return State { z: z0.clone(), active, lambda: Vec::new(), iterations: 1 };
                }
            }
            None => {
                let z = z0 + sc.lt_solve(&(&cols * &lambda));
                return State { z, active, lambda: lambda.iter().copied().collect(), iterations: 1 };
            }
        }
    }
}

pub fn solve_with(qp: &QpProblem, settings: &QpSettings, warm_start: &[usize]) -> QpSolution {
    let m = qp.num_rows();
    let sc = Scaled::new(qp);
    let z0 = -sc.chol.solve(&sc.c);
    let mut st = warm_state(&sc, &z0, warm_start);

    let status = 'outer: loop {
        // Most violated inactive row, lowest index on ties.
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..m {
            if st.active.contains(&i) {
                continue;
            }
            let s = sc.slack(i, &st.z);
            if s < -settings.feas_tol && pick.is_none_or(|(_, best)| s < best) {
                pick = Some((i, s));
            }
        }
        let Some((p, _)) = pick else {
            break QpStatus::Optimal;
        };

        let np = sc.row(p);
        let np_tilde = sc.l_solve(&np);
        let mut lambda_p = 0.0;
        loop {
            if st.iterations >= settings.max_iter {
                break 'outer QpStatus::IterationLimit;
            }
            let cols = sc.active_columns(&st.active);
            let (r, w) = project(&cols, &np_tilde);
            let curvature = w.norm_squared();
            let dependent = w.norm() <= DEPENDENCE_TOL * np_tilde.norm().max(1.0);

            let full = if dependent { f64::INFINITY } else { -sc.slack(p, &st.z) / curvature };
            let mut partial = f64::INFINITY;
            let mut drop_at = None;
            for (k, (&rk, &lk)) in r.iter().zip(&st.lambda).enumerate() {
                if rk > 0.0 {
                    let t = lk / rk;
                    if t < partial || (t == partial && drop_at.is_some_and(|d: usize| st.active[k] < st.active[d])) {
                        partial = t;
                        drop_at = Some(k);
                    }
                }
            }

            if full.is_infinite() && partial.is_infinite() {
                let mut y = DVector::zeros(m);
                y[p] = 1.0 / sc.row_scale[p];
                for (k, &i) in st.active.iter().enumerate() {
                    y[i] = (-r[k]).max(0.0) / sc.row_scale[i];
                }
                return finish(qp, &sc, st, QpStatus::Infeasible, Some(y));
            }

            let t = full.min(partial);
            if !dependent {
                st.z += sc.lt_solve(&w) * t;
            }
            for (lk, rk) in st.lambda.iter_mut().zip(r.iter()) {
                *lk -= t * rk;
            }
            lambda_p += t;
            st.iterations += 1;

            if full <= partial {
                st.active.push(p);
                st.lambda.push(lambda_p);
                continue 'outer;
            }
            let k = drop_at.expect("finite partial step has a blocking row");
            st.active.remove(k);
            st.lambda.remove(k);
        }
    };
    debug_assert_eq!(st.lambda.len(), st.active.len());
    finish(qp, &sc, st, status, None)
}

fn finish(
    qp: &QpProblem,
    sc: &Scaled,
    st: State,
    status: QpStatus,
    certificate: Option<DVector<f64>>,
) -> QpSolution {
    let u = st.z.component_mul(&sc.d);
    let mut multipliers = DVector::zeros(qp.num_rows());
    if status == QpStatus::Optimal {
        for (&i, &l) in st.active.iter().zip(&st.lambda) {
            multipliers[i] = l.max(0.0) / sc.row_scale[i];
        }
    }
    let kkt_residual = residual(qp, &u, &multipliers);
    QpSolution {
        status,
        objective: qp.objective(&u),
        u,
        active_set: if status == QpStatus::Optimal { st.active } else { Vec::new() },
        multipliers,
        iterations: st.iterations,
        kkt_residual,
        certificate,
    }
}
