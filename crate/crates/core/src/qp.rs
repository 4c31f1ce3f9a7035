//! Dense strictly convex QP solver (Goldfarb-Idnani dual active-set method).
//!
//! Solves
//!
//! ```text
//!     minimize    1/2 x' Q x + c' x
//!     subject to  A x  = b
//!                 D x <= f
//! ```
//!
//! The method starts from the unconstrained minimum and adds violated
//! constraints one at a time while keeping the working set dual feasible. The
//! Cholesky factor of `Q` is computed once; the active-constraint matrix is
//! maintained as an orthogonal factorization `J' N = [R; 0]` with `J = L^-T`,
//! updated by Givens rotations on every add/drop.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Regularization added to the Hessian diagonal by default.
pub const DEFAULT_RHO: f64 = 1e-8;

/// Constraint violation below which a constraint counts as satisfied.
pub const VIOLATION_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("Hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    NumericalFailure,
}

/// Dense QP in the form `min 1/2 x'Qx + c'x  s.t.  Ax = b, Dx <= f`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub d: DMatrix<f64>,
    pub f: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        q: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        d: DMatrix<f64>,
        f: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = c.len();
        if q.nrows() != n || q.ncols() != n {
            return Err(QpError::Dimension(format!(
                "Q is {}x{}, c has {n} entries",
                q.nrows(),
                q.ncols()
            )));
        }
        if a.ncols() != n || a.nrows() != b.len() {
            return Err(QpError::Dimension(format!(
                "A is {}x{}, b has {} entries, n = {n}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if d.ncols() != n || d.nrows() != f.len() {
            return Err(QpError::Dimension(format!(
                "D is {}x{}, f has {} entries, n = {n}",
                d.nrows(),
                d.ncols(),
                f.len()
            )));
        }
        if a.nrows() > n {
            return Err(QpError::Dimension(format!(
                "{} equalities exceed {n} variables",
                a.nrows()
            )));
        }
        let scale = q.amax().max(1.0);
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(Self { q, c, a, b, d, f })
    }

    pub fn unconstrained(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self, QpError> {
        let n = c.len();
        Self::new(
            q,
            c,
            DMatrix::zeros(0, n),
            DVector::zeros(0),
            DMatrix::zeros(0, n),
            DVector::zeros(0),
        )
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_eq(&self) -> usize {
        self.b.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    /// `max |Ax - b|`, zero without equalities.
    pub fn equality_residual(&self, x: &DVector<f64>) -> f64 {
        if self.num_eq() == 0 {
            return 0.0;
        }
        (&self.a * x - &self.b).amax()
    }

    /// `max(Dx - f)` clipped at zero.
    pub fn inequality_violation(&self, x: &DVector<f64>) -> f64 {
        if self.num_ineq() == 0 {
            return 0.0;
        }
        (&self.d * x - &self.f).max().max(0.0)
    }
}

/// `Q + rho I`.
pub fn regularize(q: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let mut out = q.clone();
    for i in 0..out.nrows().min(out.ncols()) {
        out[(i, i)] += rho;
    }
    out
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Indices of inequality rows in the final working set.
    pub active_set: Vec<usize>,
    pub status: QpStatus,
    pub iterations: usize,
    /// Multipliers with the sign convention `Qx + c + A'lambda + D'mu = 0`.
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// KKT residuals of a candidate solution.
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    pub stationarity: f64,
    pub equality: f64,
    pub inequality: f64,
    pub min_multiplier: f64,
    pub complementarity: f64,
}

pub fn kkt_report(p: &QpProblem, s: &QpSolution) -> KktReport {
    let mut grad = &p.q * &s.x + &p.c;
    if p.num_eq() > 0 {
        grad += p.a.transpose() * &s.eq_multipliers;
    }
    if p.num_ineq() > 0 {
        grad += p.d.transpose() * &s.ineq_multipliers;
    }
    let slack = if p.num_ineq() > 0 {
        &p.d * &s.x - &p.f
    } else {
        DVector::zeros(0)
    };
    KktReport {
        stationarity: grad.amax(),
        equality: p.equality_residual(&s.x),
        inequality: p.inequality_violation(&s.x),
        min_multiplier: s.ineq_multipliers.iter().copied().fold(0.0, f64::min),
        complementarity: slack
            .iter()
            .zip(s.ineq_multipliers.iter())
            .map(|(a, b)| (a * b).abs())
            .fold(0.0, f64::max),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Row {
    Eq(usize),
    Ineq(usize),
}

/// Reusable solver workspace. One solve at a time per instance.
#[derive(Debug, Default)]
pub struct QpSolver {
    /// Optional override of the `10 (n + m_i)` iteration cap.
    pub max_iterations: Option<usize>,
    trace: Option<Vec<f64>>,
}

struct Factor {
    n: usize,
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    active: Vec<Row>,
    r_norm: f64,
}

impl Factor {
    fn new(j: DMatrix<f64>) -> Self {
        let n = j.nrows();
        Self {
            n,
            j,
            r: DMatrix::zeros(n, n),
            active: Vec::with_capacity(n),
            r_norm: 1.0,
        }
    }

    fn q(&self) -> usize {
        self.active.len()
    }

    /// d = J' np
    fn compute_d(&self, np: &DVector<f64>) -> DVector<f64> {
        self.j.tr_mul(np)
    }

    /// Primal step direction z = J2 d2.
    fn step_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let q = self.q();
        let mut z = DVector::zeros(self.n);
        for col in q..self.n {
            z.axpy(d[col], &self.j.column(col), 1.0);
        }
        z
    }

    /// Dual step direction r = R^-1 d1.
    fn dual_direction(&self, d: &DVector<f64>) -> DVector<f64> {
        let q = self.q();
        let mut r = DVector::zeros(q);
        for i in (0..q).rev() {
            let mut sum = d[i];
            for k in (i + 1)..q {
                sum -= self.r[(i, k)] * r[k];
            }
            r[i] = sum / self.r[(i, i)];
        }
        r
    }

    /// Appends a constraint whose transformed normal is `d`. Returns false if
    /// it is linearly dependent on the working set (the factorization is then
    /// left with the column appended and must be dropped by the caller).
    fn add(&mut self, mut d: DVector<f64>, row: Row) -> bool {
        let n = self.n;
        let iq = self.q();
        for jj in ((iq + 1)..n).rev() {
            let mut cc = d[jj - 1];
            let mut ss = d[jj];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                let new_a = t1 * cc + t2 * ss;
                self.j[(k, jj - 1)] = new_a;
                self.j[(k, jj)] = xny * (t1 + new_a) - t2;
            }
        }
        self.active.push(row);
        let iq = self.q();
        for i in 0..iq {
            self.r[(i, iq - 1)] = d[i];
        }
        let diag = d[iq - 1].abs();
        if diag <= f64::EPSILON * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(diag);
        true
    }

    /// Removes the working-set entry at position `pos` and restores the triangular factor.
    fn drop_at(&mut self, pos: usize, u: &mut Vec<f64>) {
        let n = self.n;
        self.active.remove(pos);
        if pos < u.len() {
            u.remove(pos);
        }
        let iq = self.q();
        for col in pos..iq {
            for i in 0..n {
                self.r[(i, col)] = self.r[(i, col + 1)];
            }
        }
        for i in 0..n {
            self.r[(i, iq)] = 0.0;
        }
        for jj in pos..iq {
            let mut cc = self.r[(jj, jj)];
            let mut ss = self.r[(jj + 1, jj)];
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = 0.0;
            if cc < 0.0 {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in (jj + 1)..iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                let new_a = t1 * cc + t2 * ss;
                self.r[(jj, k)] = new_a;
                self.r[(jj + 1, k)] = xny * (t1 + new_a) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                let new_a = t1 * cc + t2 * ss;
                self.j[(k, jj)] = new_a;
                self.j[(k, jj + 1)] = xny * (new_a + t1) - t2;
            }
        }
    }
}

struct Data<'a> {
    p: &'a QpProblem,
    /// Inequality normals as columns, oriented so that `n_i' x >= -f_i`.
    ineq_normals: DMatrix<f64>,
}

impl<'a> Data<'a> {
    fn normal(&self, row: Row) -> DVector<f64> {
        match row {
            Row::Eq(j) => self.p.a.row(j).transpose(),
            Row::Ineq(i) => self.ineq_normals.column(i).into_owned(),
        }
    }

    /// Right-hand side of `normal' x = target` when the row is active.
    fn target(&self, row: Row) -> f64 {
        match row {
            Row::Eq(j) => self.p.b[j],
            Row::Ineq(i) => -self.p.f[i],
        }
    }

    /// Slack `f_i - D_i x`; negative means violated.
    fn slack(&self, i: usize, x: &DVector<f64>) -> f64 {
        self.p.f[i] + self.ineq_normals.column(i).dot(x)
    }
}

impl QpSolver {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the objective value after every step of subsequent solves.
    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    /// Objective values recorded during the last solve.
    pub fn trace(&self) -> &[f64] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn solve(&mut self, p: &QpProblem) -> QpSolution {
        self.solve_warm(p, &[])
    }

    /// Solves starting from a working set built out of `hint` (inequality row
    /// indices). Hint entries that are out of range, dependent, or carry a
    /// negative multiplier are discarded.
    pub fn solve_warm(&mut self, p: &QpProblem, hint: &[usize]) -> QpSolution {
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        let n = p.num_vars();
        let m = p.num_ineq();
        let cap = self.max_iterations.unwrap_or(10 * (n + m));
        let fail = |status: QpStatus| QpSolution {
            x: DVector::zeros(n),
            objective: f64::NAN,
            active_set: Vec::new(),
            status,
            iterations: 0,
            eq_multipliers: DVector::zeros(p.num_eq()),
            ineq_multipliers: DVector::zeros(m),
        };
        if n == 0 {
            return fail(QpStatus::Optimal);
        }

        let chol = match p.q.clone().cholesky() {
            Some(c) => c,
            None => return fail(QpStatus::NumericalFailure),
        };
        let l = chol.l();
        let j = match l.transpose().try_inverse() {
            Some(j) => j,
            None => return fail(QpStatus::NumericalFailure),
        };
        let data = Data {
            p,
            ineq_normals: -p.d.transpose(),
        };
        let mut fac = Factor::new(j);

        // Initial working set: all equalities, then the hint.
        for eq in 0..p.num_eq() {
            let d = fac.compute_d(&data.normal(Row::Eq(eq)));
            if !fac.add(d, Row::Eq(eq)) {
                return fail(QpStatus::NumericalFailure);
            }
        }
        let mut seen = vec![false; m];
        for &i in hint {
            if i >= m || seen[i] || fac.q() >= n {
                continue;
            }
            seen[i] = true;
            let d = fac.compute_d(&data.normal(Row::Ineq(i)));
            if !fac.add(d, Row::Ineq(i)) {
                let mut scratch = Vec::new();
                let pos = fac.q() - 1;
                fac.drop_at(pos, &mut scratch);
            }
        }
        let (mut x, mut u) = loop {
            let (x, u) = self.working_set_solution(&fac, &data);
            let worst = fac
                .active
                .iter()
                .zip(u.iter())
                .enumerate()
                .filter(|(_, (row, _))| matches!(row, Row::Ineq(_)))
                .min_by(|a, b| a.1 .1.total_cmp(b.1 .1));
            match worst {
                Some((pos, (_, &val))) if val < 0.0 => {
                    let mut scratch = Vec::new();
                    fac.drop_at(pos, &mut scratch);
                }
                _ => break (x, u),
            }
        };
        let mut objective = p.objective(&x);
        self.record(objective);

        let mut excluded = vec![false; m];
        let mut iterations = 0usize;
        let status = 'outer: loop {
            // choose the most violated inactive constraint
            let mut in_set = vec![false; m];
            for row in &fac.active {
                if let Row::Ineq(i) = row {
                    in_set[*i] = true;
                }
            }
            let mut ip = None;
            let mut worst = -VIOLATION_TOL;
            for i in 0..m {
                if in_set[i] || excluded[i] {
                    continue;
                }
                let s = data.slack(i, &x);
                if s < worst {
                    worst = s;
                    ip = Some(i);
                }
            }
            let Some(ip) = ip else {
                break QpStatus::Optimal;
            };
            let np = data.normal(Row::Ineq(ip));
            let x_old = x.clone();
            let u_old = u.clone();
            let active_old = fac.active.clone();
            let j_old = fac.j.clone();
            let r_old = fac.r.clone();
            let mut u_new = 0.0;

            loop {
                iterations += 1;
                if iterations > cap {
                    break 'outer QpStatus::MaxIterations;
                }
                let d = fac.compute_d(&np);
                let z = fac.step_direction(&d);
                let r = fac.dual_direction(&d);

                // partial (dual) step length
                let mut t1 = f64::INFINITY;
                let mut drop_pos = None;
                for (k, row) in fac.active.iter().enumerate() {
                    if matches!(row, Row::Ineq(_)) && r[k] > 0.0 {
                        let ratio = u[k] / r[k];
                        if ratio < t1 {
                            t1 = ratio;
                            drop_pos = Some(k);
                        }
                    }
                }
                // full (primal) step length
                let ztn = z.dot(&np);
                let t2 = if z.norm_squared() > f64::EPSILON * f64::EPSILON * np.norm_squared()
                    && ztn.abs() > 0.0
                {
                    -data.slack(ip, &x) / ztn
                } else {
                    f64::INFINITY
                };
                let t = t1.min(t2);
                if !t.is_finite() {
                    break 'outer QpStatus::Infeasible;
                }
                if !t2.is_finite() {
                    // dual step only
                    for k in 0..u.len() {
                        u[k] -= t * r[k];
                    }
                    u_new += t;
                    let pos = drop_pos.expect("finite t1 has a blocking constraint");
                    fac.drop_at(pos, &mut u);
                    continue;
                }
                x.axpy(t, &z, 1.0);
                objective += t * ztn * (0.5 * t + u_new);
                for k in 0..u.len() {
                    u[k] -= t * r[k];
                }
                u_new += t;
                self.record(objective);

                if t == t2 {
                    let d = fac.compute_d(&np);
                    if !fac.add(d, Row::Ineq(ip)) {
                        // dependent: restore and exclude this row
                        excluded[ip] = true;
                        x = x_old;
                        u = u_old;
                        fac.active = active_old;
                        fac.j = j_old;
                        fac.r = r_old;
                        objective = p.objective(&x);
                        continue 'outer;
                    }
                    u.push(u_new);
                    continue 'outer;
                }
                let pos = drop_pos.expect("partial step has a blocking constraint");
                fac.drop_at(pos, &mut u);
            }
        };

        let mut eq_mult = DVector::zeros(p.num_eq());
        let mut ineq_mult = DVector::zeros(m);
        let mut active_set = Vec::new();
        for (row, val) in fac.active.iter().zip(u.iter()) {
            match row {
                Row::Eq(j) => eq_mult[*j] = -val,
                Row::Ineq(i) => {
                    ineq_mult[*i] = *val;
                    active_set.push(*i);
                }
            }
        }
        let status = match status {
            QpStatus::Optimal if x.iter().any(|v| !v.is_finite()) => QpStatus::NumericalFailure,
            s => s,
        };
        QpSolution {
            objective: p.objective(&x),
            x,
            active_set,
            status,
            iterations,
            eq_multipliers: eq_mult,
            ineq_multipliers: ineq_mult,
        }
    }

    fn record(&mut self, v: f64) {
        if let Some(t) = self.trace.as_mut() {
            t.push(v);
        }
    }

    /// Minimizer over the working set treated as equalities, and its multipliers
    /// (`Qx + c = N u`).
    fn working_set_solution(&self, fac: &Factor, data: &Data) -> (DVector<f64>, Vec<f64>) {
        let n = fac.n;
        let q = fac.q();
        let g0 = &data.p.c;
        // y = R^-T b
        let mut y = DVector::zeros(q);
        for i in 0..q {
            let mut sum = data.target(fac.active[i]);
            for k in 0..i {
                sum -= fac.r[(k, i)] * y[k];
            }
            y[i] = sum / fac.r[(i, i)];
        }
        let jtg = fac.j.tr_mul(g0);
        let mut x = DVector::zeros(n);
        for col in 0..q {
            x.axpy(y[col], &fac.j.column(col), 1.0);
        }
        for col in q..n {
            x.axpy(-jtg[col], &fac.j.column(col), 1.0);
        }
        // u = R^-1 (J1' g0 + y)
        let mut rhs = DVector::zeros(q);
        for i in 0..q {
            rhs[i] = jtg[i] + y[i];
        }
        let u = fac.dual_direction(&rhs);
        (x, u.iter().copied().collect())
    }
}

/// Convenience wrapper around a fresh [`QpSolver`].
pub fn solve(p: &QpProblem) -> QpSolution {
    QpSolver::new().solve(p)
}

pub fn solve_warm(p: &QpProblem, hint: &[usize]) -> QpSolution {
    QpSolver::new().solve_warm(p, hint)
}
