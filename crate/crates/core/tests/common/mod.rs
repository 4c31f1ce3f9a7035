//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use hybrid_locomotion::qp::QpProblem;
use hybrid_locomotion::spline::{AirSegment, ContactSegment};
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;

/// 64-point Gauss-Legendre nodes and weights on [-1, 1] via Newton iteration
/// on the Legendre recurrence.
pub fn gauss_legendre_64() -> (Vec<f64>, Vec<f64>) {
    let n = 64;
    let legendre = |x: f64| {
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        (p1, dp)
    };
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(x);
        nodes.push(x);
        weights.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Integrates `f` over `[a, b]` with the 64-point rule.
pub fn integrate<F: Fn(f64) -> f64>(a: f64, b: f64, f: F) -> f64 {
    let (nodes, weights) = gauss_legendre_64();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes
        .iter()
        .zip(&weights)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Contact position obtained by integrating the rolling velocity numerically.
pub fn contact_position_by_quadrature(seg: &ContactSegment, tau: f64) -> Vector3<f64> {
    let x = integrate(0.0, tau, |s| {
        seg.rolling_speed(s) * (seg.omega * (seg.t_start + s)).cos()
    });
    let y = integrate(0.0, tau, |s| {
        seg.rolling_speed(s) * (seg.omega * (seg.t_start + s)).sin()
    });
    Vector3::new(seg.x0 + x, seg.y0 + y, 0.0)
}

/// `int |r''|^2` over an air segment with acceleration written out per power.
pub fn air_accel_energy(seg: &AirSegment) -> f64 {
    integrate(0.0, seg.duration, |t| {
        (0..3)
            .map(|axis| {
                let c = &seg.coeffs[axis];
                let a =
                    20.0 * c[0] * t.powi(3) + 12.0 * c[1] * t.powi(2) + 6.0 * c[2] * t + 2.0 * c[3];
                a * a
            })
            .sum()
    })
}

/// `int |r''|^2` over a contact segment using finite differences of the
/// quadrature position. Slow but shares no code with the closed form.
pub fn contact_accel_energy(seg: &ContactSegment) -> f64 {
    integrate(0.0, seg.duration, |t| {
        let v = |s: f64| {
            let phi = seg.omega * (seg.t_start + s);
            Vector3::new(phi.cos(), phi.sin(), 0.0) * seg.rolling_speed(s)
        };
        let h = 1e-5;
        let a = (v(t + h) - v(t - h)) / (2.0 * h);
        a.norm_squared()
    })
}

pub struct OracleResult {
    pub x: DVector<f64>,
    pub objective: f64,
}

/// Exhaustive active-set enumeration: solves the KKT system for every subset
/// of inequality rows and keeps the feasible, dual-feasible candidate with the
/// lowest objective. `None` means no subset produced a feasible point.
pub fn brute_force_qp(p: &QpProblem) -> Option<OracleResult> {
    let n = p.num_vars();
    let me = p.num_eq();
    let mi = p.num_ineq();
    assert!(mi <= 16, "enumeration limited to 16 inequalities");
    let mut best: Option<OracleResult> = None;
    for mask in 0u32..(1u32 << mi) {
        let rows: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let k = me + rows.len();
        if k > n {
            continue;
        }
        let dim = n + k;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.q);
        for i in 0..n {
            rhs[i] = -p.c[i];
        }
        for e in 0..me {
            for j in 0..n {
                kkt[(n + e, j)] = p.a[(e, j)];
                kkt[(j, n + e)] = p.a[(e, j)];
            }
            rhs[n + e] = p.b[e];
        }
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + r, j)] = p.d[(i, j)];
                kkt[(j, n + me + r)] = p.d[(i, j)];
            }
            rhs[n + me + r] = p.f[i];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let mu_ok = (0..rows.len()).all(|r| sol[n + me + r] >= -1e-9);
        let primal_ok = (0..mi).all(|i| p.d.row(i).dot(&x.transpose()) <= p.f[i] + 1e-9);
        let eq_ok = me == 0 || (&p.a * &x - &p.b).amax() < 1e-8;
        if !(mu_ok && primal_ok && eq_ok) {
            continue;
        }
        let obj = p.objective(&x);
        if best.as_ref().is_none_or(|b| obj < b.objective) {
            best = Some(OracleResult { x, objective: obj });
        }
    }
    best
}

/// Random strictly convex QP with a known feasible point.
pub fn random_feasible_qp<R: Rng>(rng: &mut R, n: usize, me: usize, mi: usize) -> QpProblem {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = &m * m.transpose();
    for i in 0..n {
        q[(i, i)] += 0.1;
    }
    let q = 0.5 * (&q + q.transpose());
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a = DMatrix::from_fn(me, n, |_, _| rng.gen_range(-1.0..1.0));
    let b = &a * &x0;
    let d = DMatrix::from_fn(mi, n, |_, _| rng.gen_range(-1.0..1.0));
    let slack = DVector::from_fn(mi, |_, _| rng.gen_range(0.0..0.5));
    let f = &d * &x0 + slack;
    QpProblem::new(q, c, a, b, d, f).expect("well-formed random problem")
}

/// Planner on flat ground walking straight along x; the gait starts at `gait_start`.
pub fn planner(gait: &str, v: f64, gait_start: f64) -> hybrid_locomotion::planner::Planner {
    use hybrid_locomotion::planner::{Planner, PlannerConfig};
    use hybrid_locomotion::robot::NominalMotion;
    use nalgebra::Vector2;
    Planner {
        config: PlannerConfig::default(),
        gait: hybrid_locomotion::gait::gait_by_name(gait).expect("builtin gait"),
        plane: hybrid_locomotion::terrain::TerrainPlane::flat(),
        reference: NominalMotion {
            position: Vector2::zeros(),
            yaw: 0.0,
            v_ref: Vector2::new(v, 0.0),
            omega_ref: 0.0,
        },
        twist_changes: Vec::new(),
        gait_start,
    }
}
