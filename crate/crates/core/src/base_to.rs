//! Base trajectory optimization with a zero-moment-point balance constraint.
//!
//! COM position and yaw-pitch-roll angles are quintic segment sequences.
//! The ZMP must stay inside the support polygon spanned by the planned wheel
//! positions at every sample. That constraint is bilinear in COM position and
//! acceleration, so the COM problem is solved by SQP: each iteration
//! linearizes the ZMP rows about the current iterate and solves a QP. The
//! angle problem has no inequality and is solved once.

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::ContactSchedule;
use crate::qp::{regularize, QpError, QpProblem, QpSolver, QpStatus};
use crate::robot::{NominalMotion, RobotConfig};
use crate::spline::{
    accel_hessian_air, AirSegment, Derivative, KinematicState, Segment, SegmentSequence,
    SplineError,
};
use crate::terrain::TerrainPlane;
use crate::wheel_to::WheelPlan;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaseToError {
    #[error("invalid base planner config: {0}")]
    Config(String),
    #[error("inconsistent planning input: {0}")]
    Input(String),
    #[error("contact is not pressing (normal force {0:e} N)")]
    DegenerateContact(f64),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Problem(#[from] QpError),
    #[error("base QP failed with status {0:?}")]
    Solver(QpStatus),
    #[error("ZMP leaves the support polygon by {violation:e} m at t = {time}")]
    ZmpViolation { violation: f64, time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseToConfig {
    /// COM acceleration weight per world axis.
    pub w_acc: [f64; 3],
    pub w_vel: f64,
    pub w_pos: f64,
    pub w_height: f64,
    pub w_pre_pos: f64,
    pub w_pre_vel: f64,
    pub w_pre_acc: f64,
    pub w_ang_acc: f64,
    pub w_yaw_rate: f64,
    pub w_yaw: f64,
    pub w_tilt: f64,
    pub samples: usize,
    pub rho: f64,
    /// Half-width of line and point supports (m).
    pub epsilon: f64,
    /// Minimum normal acceleration against gravity (m/s^2).
    pub g_min: f64,
    pub penalty: f64,
    pub max_sqp_iterations: usize,
    pub step_tol: f64,
    /// Allowed nonlinear ZMP violation of an accepted plan (m).
    pub certificate_tol: f64,
}

impl Default for BaseToConfig {
    fn default() -> Self {
        Self {
            w_acc: [1e-3, 1e-3, 100.0],
            w_vel: 1.0,
            w_pos: 10.0,
            w_height: 100.0,
            w_pre_pos: 1.0,
            w_pre_vel: 0.1,
            w_pre_acc: 1e-3,
            w_ang_acc: 1e-3,
            w_yaw_rate: 1.0,
            w_yaw: 1.0,
            w_tilt: 10.0,
            samples: 40,
            rho: crate::qp::DEFAULT_RHO,
            epsilon: 0.02,
            g_min: 1.0,
            penalty: 1e3,
            max_sqp_iterations: 5,
            step_tol: 1e-5,
            certificate_tol: 1e-6,
        }
    }
}

impl BaseToConfig {
    pub fn validate(&self) -> Result<(), BaseToError> {
        let w = [
            self.w_acc[0],
            self.w_acc[1],
            self.w_acc[2],
            self.w_vel,
            self.w_pos,
            self.w_height,
            self.w_pre_pos,
            self.w_pre_vel,
            self.w_pre_acc,
            self.w_ang_acc,
            self.w_yaw_rate,
            self.w_yaw,
            self.w_tilt,
            self.rho,
            self.penalty,
        ];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(BaseToError::Config(
                "weights must be finite and >= 0".into(),
            ));
        }
        if !(self.epsilon > 0.0) || self.samples < 2 || self.max_sqp_iterations == 0 {
            return Err(BaseToError::Config(
                "epsilon > 0, samples >= 2 and at least one SQP iteration required".into(),
            ));
        }
        if self.w_acc.contains(&0.0) || self.w_ang_acc == 0.0 {
            return Err(BaseToError::Config(
                "acceleration weights must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Inputs of the gravito-inertial wrench that do not depend on the trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchParams {
    pub mass: f64,
    pub gravity: Vector3<f64>,
    pub l_dot: Vector3<f64>,
}

impl WrenchParams {
    pub fn from_robot(robot: &RobotConfig) -> Self {
        Self {
            mass: robot.mass,
            gravity: robot.gravity_vector(),
            l_dot: Vector3::zeros(),
        }
    }

    /// `(f_gi, m_gi)` with moments taken about `origin`.
    pub fn wrench(
        &self,
        r: &Vector3<f64>,
        r_acc: &Vector3<f64>,
        origin: &Vector3<f64>,
    ) -> (Vector3<f64>, Vector3<f64>) {
        let f = self.mass * (self.gravity - r_acc);
        let m = (r - origin).cross(&f) - self.l_dot;
        (f, m)
    }
}

/// Zero-moment point on the terrain plane.
///
/// Gravity points down, so `n' f_gi` is negative while the robot presses on
/// the ground; the point is `p0 + n x m_gi / (n' f_gi)` with moments about
/// the plane point `p0`.
pub fn zmp_point(
    r: &Vector3<f64>,
    r_acc: &Vector3<f64>,
    w: &WrenchParams,
    plane: &TerrainPlane,
) -> Result<Vector3<f64>, BaseToError> {
    let (f, m) = w.wrench(r, r_acc, &plane.point);
    let normal_force = plane.normal.dot(&f);
    let g = w.gravity.norm().max(1.0);
    if normal_force > -1e-9 * w.mass * g {
        return Err(BaseToError::DegenerateContact(-normal_force));
    }
    Ok(plane.point + plane.normal.cross(&m) / normal_force)
}

/// Edge line `p x + q y + r >= 0` with unit `(p, q)`; positive inside.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub p: f64,
    pub q: f64,
    pub r: f64,
}

impl Edge {
    fn through(a: &Vector2<f64>, inward: &Vector2<f64>, offset: f64) -> Self {
        let n = inward.normalize();
        Self {
            p: n.x,
            q: n.y,
            r: -n.dot(a) + offset,
        }
    }

    pub fn eval(&self, x: &Vector2<f64>) -> f64 {
        self.p * x.x + self.q * x.y + self.r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportKind {
    Polygon,
    Line,
    Point,
    Flight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportPolygon {
    pub kind: SupportKind,
    /// Hull vertices in counter-clockwise order (world xy).
    pub vertices: Vec<Vector2<f64>>,
    pub edges: Vec<Edge>,
}

impl SupportPolygon {
    /// Smallest edge value at `x`; `None` in flight.
    pub fn margin(&self, x: &Vector2<f64>) -> Option<f64> {
        self.edges.iter().map(|e| e.eval(x)).reduce(f64::min)
    }
}

fn cross2(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull (monotone chain), counter-clockwise, collinear points removed.
pub fn convex_hull(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Vector2<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while hull.len() >= start + 2
                && cross2(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 1e-12
            {
                hull.pop();
            }
            hull.push(*p);
        }
        hull.pop();
    }
    hull
}

/// Support region of the given contact points (world xy).
pub fn support_from_points(points: &[Vector2<f64>], eps: f64) -> SupportPolygon {
    let box_around = |c: &Vector2<f64>| SupportPolygon {
        kind: SupportKind::Point,
        vertices: vec![*c],
        edges: vec![
            Edge::through(c, &Vector2::new(1.0, 0.0), eps),
            Edge::through(c, &Vector2::new(-1.0, 0.0), eps),
            Edge::through(c, &Vector2::new(0.0, 1.0), eps),
            Edge::through(c, &Vector2::new(0.0, -1.0), eps),
        ],
    };
    let slab = |a: &Vector2<f64>, b: &Vector2<f64>| {
        let u = (b - a).normalize();
        let nu = Vector2::new(-u.y, u.x);
        SupportPolygon {
            kind: SupportKind::Line,
            vertices: vec![*a, *b],
            edges: vec![
                Edge::through(a, &nu, eps),
                Edge::through(a, &-nu, eps),
                Edge::through(a, &u, eps),
                Edge::through(b, &-u, eps),
            ],
        }
    };
    match points.len() {
        0 => SupportPolygon {
            kind: SupportKind::Flight,
            vertices: Vec::new(),
            edges: Vec::new(),
        },
        1 => box_around(&points[0]),
        _ => {
            let hull = convex_hull(points);
            match hull.len() {
                0 => unreachable!("non-empty input"),
                1 => box_around(&hull[0]),
                2 => slab(&hull[0], &hull[1]),
                _ => {
                    let edges = (0..hull.len())
                        .map(|i| {
                            let a = hull[i];
                            let b = hull[(i + 1) % hull.len()];
                            let d = b - a;
                            Edge::through(&a, &Vector2::new(-d.y, d.x), 0.0)
                        })
                        .collect();
                    SupportPolygon {
                        kind: SupportKind::Polygon,
                        vertices: hull,
                        edges,
                    }
                }
            }
        }
    }
}

/// Support region at absolute time `t` from the wheel plans and contact flags.
pub fn support_polygon(
    t: f64,
    wheels: &[&WheelPlan; 4],
    flags: [bool; 4],
    eps: f64,
) -> SupportPolygon {
    let pts: Vec<Vector2<f64>> = (0..4)
        .filter(|&i| flags[i])
        .map(|i| wheels[i].eval_world_clamped(t).position.xy())
        .collect();
    support_from_points(&pts, eps)
}

/// Denominator-free ZMP row value: `F ([p q 0] r_zmp + r)` with pressing force `F`.
pub fn zmp_row_value(
    edge: &Edge,
    r: &Vector3<f64>,
    r_acc: &Vector3<f64>,
    w: &WrenchParams,
    plane: &TerrainPlane,
) -> f64 {
    let (f, m) = w.wrench(r, r_acc, &plane.point);
    let force = -plane.normal.dot(&f);
    let moment = -plane.normal.cross(&m);
    let e = Vector3::new(edge.p, edge.q, 0.0);
    e.dot(&moment) + (edge.r + e.dot(&plane.point)) * force
}

/// Gradient of [`zmp_row_value`] with respect to COM position and acceleration.
pub fn zmp_row_gradient(
    edge: &Edge,
    r: &Vector3<f64>,
    r_acc: &Vector3<f64>,
    w: &WrenchParams,
    plane: &TerrainPlane,
) -> (Vector3<f64>, Vector3<f64>) {
    let e = Vector3::new(edge.p, edge.q, 0.0);
    let u = e.cross(&plane.normal);
    let rho = r - plane.point;
    let m = w.mass;
    // e'M = m u'((g - a) x rho)
    let d_pos = m * u.cross(&(w.gravity - r_acc));
    let d_acc = -m * rho.cross(&u) + m * (edge.r + e.dot(&plane.point)) * plane.normal;
    (d_pos, d_acc)
}

/// Planned base motion in world coordinates, time relative to `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseTrajectory {
    pub t0: f64,
    pub com: SegmentSequence,
    /// Yaw, pitch, roll.
    pub angles: SegmentSequence,
}

impl BaseTrajectory {
    /// Both sequences hold `state` over `[t0, t0 + horizon]`.
    pub fn hold(
        t0: f64,
        horizon: f64,
        com: &Vector3<f64>,
        angles: &Vector3<f64>,
    ) -> Result<Self, SplineError> {
        let rest = |p: &Vector3<f64>| -> Result<SegmentSequence, SplineError> {
            let s = KinematicState::at_rest(*p);
            SegmentSequence::new(vec![Segment::Air(AirSegment::hermite(
                0.0, horizon, &s, &s,
            )?)])
        };
        Ok(Self {
            t0,
            com: rest(com)?,
            angles: rest(angles)?,
        })
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.com.horizon()
    }

    pub fn covers(&self, t: f64) -> bool {
        t >= self.t0 - 1e-9 && t <= self.end() + 1e-9
    }

    pub fn com_at(&self, t: f64) -> Result<KinematicState, SplineError> {
        self.com.eval(t - self.t0)
    }

    pub fn angles_at(&self, t: f64) -> Result<KinematicState, SplineError> {
        self.angles.eval(t - self.t0)
    }

    pub fn com_clamped(&self, t: f64) -> KinematicState {
        self.com.eval_clamped(t - self.t0)
    }

    pub fn angles_clamped(&self, t: f64) -> KinematicState {
        self.angles.eval_clamped(t - self.t0)
    }

    pub fn max_junction_residual(&self) -> f64 {
        self.com
            .max_junction_residual()
            .max(self.angles.max_junction_residual())
    }
}

/// One ZMP sample of the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ZmpSample {
    /// Time relative to the plan start.
    pub t: f64,
    pub support: SupportPolygon,
}

/// Everything one base solve needs.
#[derive(Debug, Clone)]
pub struct BaseTask<'a> {
    pub t0: f64,
    pub horizon: f64,
    pub plane: TerrainPlane,
    pub com_init: KinematicState,
    pub angles_init: KinematicState,
    /// Reference motion evaluated at `t0`.
    pub nominal: NominalMotion,
    pub schedule: &'a ContactSchedule,
    pub wheels: [&'a WheelPlan; 4],
    pub previous: Option<&'a BaseTrajectory>,
    pub robot: &'a RobotConfig,
}

#[derive(Debug, Clone)]
pub struct BaseCertificate {
    /// Smallest ZMP margin over non-flight samples (m); `+inf` if all are flight.
    pub worst_margin: f64,
    pub worst_time: f64,
    pub continuity: f64,
    pub initial_state: f64,
    pub margins: Vec<Option<f64>>,
}

#[derive(Debug, Clone)]
pub struct BaseSolution {
    pub plan: BaseTrajectory,
    pub samples: Vec<ZmpSample>,
    pub certificate: BaseCertificate,
    pub sqp_iterations: usize,
    pub qp_iterations: usize,
    pub converged: bool,
    /// Merit of the initial guess followed by each accepted iterate.
    pub merit_trace: Vec<f64>,
    pub objective: f64,
    pub initial_objective: f64,
}

#[derive(Debug, Clone)]
struct AirLayout {
    starts: Vec<f64>,
    durations: Vec<f64>,
}

impl AirLayout {
    fn new(boundaries: &[f64]) -> Self {
        let starts = boundaries[..boundaries.len() - 1].to_vec();
        let durations = boundaries.windows(2).map(|w| w[1] - w[0]).collect();
        Self { starts, durations }
    }

    fn nseg(&self) -> usize {
        self.starts.len()
    }

    fn n(&self) -> usize {
        AirSegment::NUM_VARS * self.nseg()
    }

    fn locate(&self, t: f64) -> usize {
        (0..self.nseg())
            .find(|&i| t < self.starts[i] + self.durations[i] - 1e-9)
            .unwrap_or(self.nseg() - 1)
    }

    fn basis_in(&self, seg: usize, tau: f64, d: Derivative) -> DMatrix<f64> {
        let local: Matrix3xX<f64> = AirSegment::basis(tau, d);
        let mut m = DMatrix::zeros(3, self.n());
        m.view_mut((0, AirSegment::NUM_VARS * seg), (3, AirSegment::NUM_VARS))
            .copy_from(&local);
        m
    }

    fn basis_at(&self, t: f64, d: Derivative) -> DMatrix<f64> {
        let i = self.locate(t);
        let tau = (t - self.starts[i]).clamp(0.0, self.durations[i]);
        self.basis_in(i, tau, d)
    }

    fn scaling(&self) -> DVector<f64> {
        let mut s = DVector::from_element(self.n(), 1.0);
        for (seg, d) in self.durations.iter().enumerate() {
            for axis in 0..3 {
                for i in 0..6 {
                    s[AirSegment::NUM_VARS * seg + 6 * axis + i] = d.powi(-((5 - i) as i32));
                }
            }
        }
        s
    }

    fn build(&self, xi: &DVector<f64>) -> Result<SegmentSequence, SplineError> {
        let segs = (0..self.nseg())
            .map(|i| {
                let v: Vec<f64> = xi
                    .rows(AirSegment::NUM_VARS * i, AirSegment::NUM_VARS)
                    .iter()
                    .copied()
                    .collect();
                Ok(Segment::Air(AirSegment::from_slice(
                    &v,
                    self.starts[i],
                    self.durations[i],
                )?))
            })
            .collect::<Result<Vec<_>, SplineError>>()?;
        SegmentSequence::new(segs)
    }

    /// Coefficients of the piecewise Hermite fit through `state(t)` at the boundaries.
    fn hermite_fit<F: Fn(f64) -> KinematicState>(
        &self,
        state: F,
    ) -> Result<DVector<f64>, SplineError> {
        let mut xi = DVector::zeros(self.n());
        let mut start = state(0.0);
        for i in 0..self.nseg() {
            let end = state(self.starts[i] + self.durations[i]);
            let seg = AirSegment::hermite(self.starts[i], self.durations[i], &start, &end)?;
            xi.rows_mut(AirSegment::NUM_VARS * i, AirSegment::NUM_VARS)
                .copy_from_slice(&seg.to_vec());
            start = end;
        }
        Ok(xi)
    }
}

/// Segment boundaries: contact changes, merged when closer than `min_gap`,
/// with segments longer than half the horizon split. A change within
/// `min_gap` of the start is moved to `min_gap`.
fn segment_boundaries(schedule: &ContactSchedule, t0: f64, horizon: f64, min_gap: f64) -> Vec<f64> {
    let mut b = vec![0.0];
    for t in schedule.contact_change_times() {
        let rel = t - t0;
        let last = b[b.len() - 1];
        // a change right after the start still gets its own first segment
        let at = if b.len() == 1 { rel.max(min_gap) } else { rel };
        if rel > 0.0 && at >= last + min_gap && at < horizon - min_gap {
            b.push(at);
        }
    }
    b.push(horizon);
    let mut out = vec![0.0];
    for w in b.windows(2) {
        let len = w[1] - w[0];
        let pieces = (len / (0.5 * horizon) - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            out.push(if k == pieces {
                w[1]
            } else {
                w[0] + len * k as f64 / pieces as f64
            });
        }
    }
    out
}

struct QuadCost {
    q: DMatrix<f64>,
    c: DVector<f64>,
}

impl QuadCost {
    fn new(n: usize) -> Self {
        Self {
            q: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
        }
    }

    fn square(&mut self, row: &DVector<f64>, target: f64, w: f64) {
        if w == 0.0 {
            return;
        }
        self.q.ger(2.0 * w, row, row, 1.0);
        self.c.axpy(-2.0 * w * target, row, 1.0);
    }

    fn axis(&mut self, m: &DMatrix<f64>, axis: usize, target: f64, w: f64) {
        self.square(&m.row(axis).transpose(), target, w);
    }
}

fn equalities(layout: &AirLayout, init: &KinematicState) -> (Vec<DVector<f64>>, Vec<f64>) {
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for d in Derivative::ALL {
        let m = layout.basis_in(0, 0.0, d);
        for axis in 0..3 {
            rows.push(m.row(axis).transpose());
            rhs.push(init.get(d)[axis]);
        }
    }
    for i in 0..layout.nseg().saturating_sub(1) {
        for d in Derivative::ALL {
            let m = layout.basis_in(i + 1, 0.0, d) - layout.basis_in(i, layout.durations[i], d);
            for axis in 0..3 {
                rows.push(m.row(axis).transpose());
                rhs.push(0.0);
            }
        }
    }
    (rows, rhs)
}

fn stack(rows: &[DVector<f64>], n: usize, scale: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j] * scale[j])
}

/// Scaled COM problem without the ZMP rows.
struct ComProblem {
    layout: AirLayout,
    scale: DVector<f64>,
    q: DMatrix<f64>,
    c: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    samples: Vec<ZmpSample>,
    pos_basis: Vec<DMatrix<f64>>,
    acc_basis: Vec<DMatrix<f64>>,
    wrench: WrenchParams,
    plane: TerrainPlane,
    g_min: f64,
    penalty: f64,
}

impl ComProblem {
    fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.q * z)) + self.c.dot(z)
    }

    fn pressing_force(&self, a: &Vector3<f64>) -> f64 {
        self.wrench.mass * self.plane.normal.dot(&(a - self.wrench.gravity))
    }

    /// Nonlinear constraint values, >= 0 when satisfied: ZMP edge margins (m)
    /// and the normalized pressing margin.
    fn constraint_values(&self, z: &DVector<f64>) -> Vec<f64> {
        let mut out = Vec::new();
        let g = self.wrench.gravity.norm();
        for (k, s) in self.samples.iter().enumerate() {
            if s.support.kind == SupportKind::Flight {
                continue;
            }
            let r = Vector3::from_iterator((&self.pos_basis[k] * z).iter().copied());
            let a = Vector3::from_iterator((&self.acc_basis[k] * z).iter().copied());
            let force = self.pressing_force(&a);
            for e in &s.support.edges {
                let v = zmp_row_value(e, &r, &a, &self.wrench, &self.plane);
                out.push(if force > 0.0 { v / force } else { -1.0 });
            }
            let n = &self.plane.normal;
            out.push((n.dot(&a) - self.g_min - n.dot(&self.wrench.gravity)) / g);
        }
        out
    }

    fn merit(&self, z: &DVector<f64>) -> f64 {
        let viol: f64 = self
            .constraint_values(z)
            .iter()
            .map(|v| (-v).max(0.0))
            .sum();
        self.objective(z) + self.penalty * viol
    }

    /// Re-solves an infeasible subproblem with an l1-penalized slack on every inequality row.
    fn solve_elastic(
        &self,
        qp: &QpProblem,
        solver: &mut QpSolver,
    ) -> Result<(DVector<f64>, usize), BaseToError> {
        let n = qp.num_vars();
        let m = qp.num_ineq();
        let nt = n + m;
        let mut q = DMatrix::zeros(nt, nt);
        q.view_mut((0, 0), (n, n)).copy_from(&qp.q);
        for i in n..nt {
            q[(i, i)] = 1e-6;
        }
        let mut c = DVector::from_element(nt, self.penalty);
        c.rows_mut(0, n).copy_from(&qp.c);
        let mut a = DMatrix::zeros(qp.num_eq(), nt);
        a.view_mut((0, 0), (qp.num_eq(), n)).copy_from(&qp.a);
        let mut d = DMatrix::zeros(2 * m, nt);
        d.view_mut((0, 0), (m, n)).copy_from(&qp.d);
        for i in 0..m {
            d[(i, n + i)] = -1.0;
            d[(m + i, n + i)] = -1.0;
        }
        let mut f = DVector::zeros(2 * m);
        f.rows_mut(0, m).copy_from(&qp.f);
        let elastic = QpProblem::new(q, c, a, qp.b.clone(), d, f)?;
        let sol = solver.solve(&elastic);
        if sol.status != QpStatus::Optimal {
            return Err(BaseToError::Solver(sol.status));
        }
        Ok((sol.x.rows(0, n).into_owned(), sol.iterations))
    }

    /// ZMP margins linearized about `z`, plus the linear pressing rows, as `D x <= f`.
    fn linearized_rows(&self, z: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = z.len();
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let g = self.wrench.gravity.norm();
        let nrm = &self.plane.normal;
        for (k, s) in self.samples.iter().enumerate() {
            if s.support.kind == SupportKind::Flight {
                continue;
            }
            let bp = &self.pos_basis[k];
            let ba = &self.acc_basis[k];
            let r = Vector3::from_iterator((bp * z).iter().copied());
            let a = Vector3::from_iterator((ba * z).iter().copied());
            // linearize about a pressing point even if the iterate is not
            let force = self.pressing_force(&a).max(self.wrench.mass * self.g_min);
            let d_force = self.wrench.mass * nrm;
            for e in &s.support.edges {
                let margin = zmp_row_value(e, &r, &a, &self.wrench, &self.plane) / force;
                let (dp, da) = zmp_row_gradient(e, &r, &a, &self.wrench, &self.plane);
                let da = (da - margin * d_force) / force;
                let dp = dp / force;
                let grad = bp.transpose() * dp + ba.transpose() * da;
                // margin + grad (x - z) >= 0
                rhs.push(margin - grad.dot(z));
                rows.push(-grad);
            }
            let grad = ba.transpose() * nrm / g;
            rows.push(-grad);
            rhs.push(-(self.g_min + nrm.dot(&self.wrench.gravity)) / g);
        }
        let d = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
        (d, DVector::from_vec(rhs))
    }
}

/// Solves the base problem: angles by one QP, COM by SQP.
pub fn plan_base(
    task: &BaseTask,
    cfg: &BaseToConfig,
    solver: &mut QpSolver,
) -> Result<BaseSolution, BaseToError> {
    cfg.validate()?;
    if !(task.horizon > 0.0) {
        return Err(BaseToError::Input("horizon must be positive".into()));
    }
    let h = task.horizon;
    let dt = h / cfg.samples as f64;
    let boundaries = segment_boundaries(task.schedule, task.t0, h, 0.5 * dt);
    let layout = AirLayout::new(&boundaries);
    let n = layout.n();
    let times: Vec<f64> = (1..=cfg.samples).map(|k| k as f64 * dt).collect();
    let nominal = &task.nominal;
    let plane = &task.plane;
    let robot = task.robot;

    // ZMP samples from the wheel plans
    let samples: Vec<ZmpSample> = times
        .iter()
        .map(|&t| {
            let abs = task.t0 + t;
            let flags = task_flags(task, abs);
            ZmpSample {
                t,
                support: support_polygon(abs, &task.wheels, flags, cfg.epsilon),
            }
        })
        .collect();

    // COM costs
    let mut com = QuadCost::new(n);
    for i in 0..layout.nseg() {
        let hq = accel_hessian_air(layout.durations[i], &Vector3::from(cfg.w_acc))?;
        let o = AirSegment::NUM_VARS * i;
        let mut block = com
            .q
            .view_mut((o, o), (AirSegment::NUM_VARS, AirSegment::NUM_VARS));
        block += hq;
    }
    let n_plane = plane.normal;
    for &t in &times {
        let bp = layout.basis_at(t, Derivative::Position);
        let bv = layout.basis_at(t, Derivative::Velocity);
        let (p_nom, _) = nominal.pose(t);
        let v_nom = nominal.velocity(t);
        for axis in 0..2 {
            com.axis(&bv, axis, v_nom[axis], cfg.w_vel * dt);
            com.axis(&bp, axis, p_nom[axis], cfg.w_pos * dt);
        }
        // height along the normal
        let row = bp.transpose() * n_plane;
        com.square(
            &row,
            robot.com_height + n_plane.dot(&plane.point),
            cfg.w_height * dt,
        );
        if let Some(prev) = task.previous {
            let st = prev.com_clamped(task.t0 + t);
            let ba = layout.basis_at(t, Derivative::Acceleration);
            for axis in 0..3 {
                com.axis(&bp, axis, st.position[axis], cfg.w_pre_pos * dt);
                com.axis(&bv, axis, st.velocity[axis], cfg.w_pre_vel * dt);
                com.axis(&ba, axis, st.acceleration[axis], cfg.w_pre_acc * dt);
            }
        }
    }

    let scale = layout.scaling();
    let s = DMatrix::from_diagonal(&scale);
    let q = &s * &com.q * &s;
    let q = regularize(&(0.5 * (&q + q.transpose())), cfg.rho);
    let c = com.c.component_mul(&scale);
    let (eq_rows, eq_rhs) = equalities(&layout, &task.com_init);
    let a = stack(&eq_rows, n, &scale);
    let b = DVector::from_vec(eq_rhs);

    let scale_rows = |m: DMatrix<f64>| -> DMatrix<f64> {
        let mut m = m;
        for (j, mut col) in m.column_iter_mut().enumerate() {
            col *= scale[j];
        }
        m
    };
    let pos_basis: Vec<DMatrix<f64>> = times
        .iter()
        .map(|&t| scale_rows(layout.basis_at(t, Derivative::Position)))
        .collect();
    let acc_basis: Vec<DMatrix<f64>> = times
        .iter()
        .map(|&t| scale_rows(layout.basis_at(t, Derivative::Acceleration)))
        .collect();

    let problem = ComProblem {
        layout: layout.clone(),
        scale: scale.clone(),
        q,
        c,
        a,
        b,
        samples,
        pos_basis,
        acc_basis,
        wrench: WrenchParams::from_robot(robot),
        plane: *plane,
        g_min: cfg.g_min,
        penalty: cfg.penalty,
    };

    // initial guess: Hermite refit of the previous plan (or a hold), starting at the measured state
    let com_init = task.com_init;
    let xi0 = match task.previous {
        Some(prev) => layout.hermite_fit(|t| {
            if t <= 0.0 {
                com_init
            } else {
                prev.com_clamped(task.t0 + t)
            }
        })?,
        None => layout.hermite_fit(|t| {
            if t <= 0.0 {
                com_init
            } else {
                KinematicState::at_rest(com_init.position)
            }
        })?,
    };
    let mut z = xi0.component_div(&problem.scale);
    let initial_objective = problem.objective(&z);
    let mut merit = problem.merit(&z);
    let mut merit_trace = vec![merit];
    let mut hint: Vec<usize> = Vec::new();
    let mut qp_iterations = 0;
    let mut sqp_iterations = 0;
    let mut converged = false;
    for _ in 0..cfg.max_sqp_iterations {
        sqp_iterations += 1;
        let (d, f) = problem.linearized_rows(&z);
        let qp = QpProblem::new(
            problem.q.clone(),
            problem.c.clone(),
            problem.a.clone(),
            problem.b.clone(),
            d,
            f,
        )?;
        let mut sol = solver.solve_warm(&qp, &hint);
        qp_iterations += sol.iterations;
        if sol.status == QpStatus::Infeasible {
            let (x, iters) = problem.solve_elastic(&qp, solver)?;
            qp_iterations += iters;
            sol.x = x;
            sol.active_set.clear();
        } else if sol.status != QpStatus::Optimal {
            return Err(BaseToError::Solver(sol.status));
        }
        hint = sol.active_set.clone();
        let step = &sol.x - &z;
        if step.amax() < cfg.step_tol {
            z = sol.x;
            merit = problem.merit(&z);
            merit_trace.push(merit);
            converged = true;
            break;
        }
        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..5 {
            let cand = &z + alpha * &step;
            let m = problem.merit(&cand);
            if m <= merit + 1e-9 * (1.0 + merit.abs()) {
                accepted = Some((cand, m));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, m)) = accepted else {
            break;
        };
        z = cand;
        merit = m;
        merit_trace.push(m);
    }
    let objective = problem.objective(&z);
    let xi = z.component_mul(&problem.scale);
    let com_seq = problem.layout.build(&xi)?;

    let angles_seq = solve_angles(task, cfg, &layout, &times, dt, solver)?;
    let plan = BaseTrajectory {
        t0: task.t0,
        com: com_seq,
        angles: angles_seq,
    };
    let certificate = certify_base(
        &plan,
        &problem.samples,
        &problem.wrench,
        plane,
        &task.com_init,
    );
    if certificate.worst_margin < -cfg.certificate_tol {
        return Err(BaseToError::ZmpViolation {
            violation: -certificate.worst_margin,
            time: task.t0 + certificate.worst_time,
        });
    }
    Ok(BaseSolution {
        plan,
        samples: problem.samples,
        certificate,
        sqp_iterations,
        qp_iterations,
        converged,
        merit_trace,
        objective,
        initial_objective,
    })
}

/// Contact flags from the wheel plans where they cover `t`, else from the schedule.
fn task_flags(task: &BaseTask, t: f64) -> [bool; 4] {
    let sched = task
        .schedule
        .contact_flags(t.clamp(task.schedule.t0, task.schedule.end()))
        .unwrap_or([true; 4]);
    [0, 1, 2, 3].map(|i| {
        let w = task.wheels[i];
        if w.covers(t) {
            w.in_contact(t)
        } else {
            sched[i]
        }
    })
}

fn solve_angles(
    task: &BaseTask,
    cfg: &BaseToConfig,
    layout: &AirLayout,
    times: &[f64],
    dt: f64,
    solver: &mut QpSolver,
) -> Result<SegmentSequence, BaseToError> {
    let n = layout.n();
    let mut cost = QuadCost::new(n);
    for i in 0..layout.nseg() {
        let hq = accel_hessian_air(layout.durations[i], &Vector3::from_element(cfg.w_ang_acc))?;
        let o = AirSegment::NUM_VARS * i;
        let mut block = cost
            .q
            .view_mut((o, o), (AirSegment::NUM_VARS, AirSegment::NUM_VARS));
        block += hq;
    }
    // unwrap the nominal yaw near the measured one
    let yaw0 = task.angles_init.position[0];
    let nominal_yaw0 = task.nominal.yaw;
    let yaw_offset =
        ((yaw0 - nominal_yaw0) / std::f64::consts::TAU).round() * std::f64::consts::TAU;
    for &t in times {
        let bp = layout.basis_at(t, Derivative::Position);
        let bv = layout.basis_at(t, Derivative::Velocity);
        let (_, yaw_nom) = task.nominal.pose(t);
        let yaw_nom = yaw_nom + yaw_offset;
        cost.axis(&bv, 0, task.nominal.omega_ref, cfg.w_yaw_rate * dt);
        cost.axis(&bp, 0, yaw_nom, cfg.w_yaw * dt);
        let (pitch, roll) = task.plane.pitch_roll(yaw_nom);
        cost.axis(&bp, 1, pitch, cfg.w_tilt * dt);
        cost.axis(&bp, 2, roll, cfg.w_tilt * dt);
        if let Some(prev) = task.previous {
            let st = prev.angles_clamped(task.t0 + t);
            let ba = layout.basis_at(t, Derivative::Acceleration);
            for axis in 0..3 {
                cost.axis(&bp, axis, st.position[axis], cfg.w_pre_pos * dt);
                cost.axis(&bv, axis, st.velocity[axis], cfg.w_pre_vel * dt);
                cost.axis(&ba, axis, st.acceleration[axis], cfg.w_pre_acc * dt);
            }
        }
    }
    let scale = layout.scaling();
    let s = DMatrix::from_diagonal(&scale);
    let q = &s * &cost.q * &s;
    let q = regularize(&(0.5 * (&q + q.transpose())), cfg.rho);
    let c = cost.c.component_mul(&scale);
    let (rows, rhs) = equalities(layout, &task.angles_init);
    let qp = QpProblem::new(
        q,
        c,
        stack(&rows, n, &scale),
        DVector::from_vec(rhs),
        DMatrix::zeros(0, n),
        DVector::zeros(0),
    )?;
    let sol = solver.solve(&qp);
    if sol.status != QpStatus::Optimal {
        return Err(BaseToError::Solver(sol.status));
    }
    Ok(layout.build(&sol.x.component_mul(&scale))?)
}

/// Recomputes the ZMP from the returned splines at every sample and measures
/// its distance inside the support region.
pub fn certify_base(
    plan: &BaseTrajectory,
    samples: &[ZmpSample],
    wrench: &WrenchParams,
    plane: &TerrainPlane,
    init: &KinematicState,
) -> BaseCertificate {
    let mut worst = f64::INFINITY;
    let mut worst_time = 0.0;
    let mut margins = Vec::with_capacity(samples.len());
    for s in samples {
        if s.support.kind == SupportKind::Flight {
            margins.push(None);
            continue;
        }
        let st = plan.com.eval_clamped(s.t);
        let m = match zmp_point(&st.position, &st.acceleration, wrench, plane) {
            Ok(z) => s.support.margin(&z.xy()).unwrap_or(f64::INFINITY),
            Err(_) => f64::NEG_INFINITY,
        };
        if m < worst {
            worst = m;
            worst_time = s.t;
        }
        margins.push(Some(m));
    }
    let start = plan.com.eval_clamped(0.0);
    let initial_state = [
        (start.position - init.position).amax(),
        (start.velocity - init.velocity).amax(),
        (start.acceleration - init.acceleration).amax(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    BaseCertificate {
        worst_margin: worst,
        worst_time,
        continuity: plan.max_junction_residual(),
        initial_state,
        margins,
    }
}
