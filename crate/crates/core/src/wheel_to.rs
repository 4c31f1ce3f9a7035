//! Per-wheel trajectory optimization.
//!
//! Each wheel is planned independently in its terrain frame `W` over one
//! stride. The trajectory alternates rolling-contact segments and quintic air
//! segments following the leg's contact schedule. All costs are quadratic and
//! all constraints linear, so one QP solve gives the plan.

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gait::{Leg, LegSchedule, PhaseKind};
use crate::qp::{regularize, QpError, QpProblem, QpSolver, QpStatus};
use crate::spline::{
    accel_hessian_air, accel_hessian_contact, AirSegment, ContactSegment, Derivative,
    KinematicState, Segment, SegmentSequence, SplineError,
};
use crate::terrain::WheelFrame;

/// Phases shorter than this are merged into a neighbour before planning.
pub const MIN_SEGMENT: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WheelToError {
    #[error("invalid wheel planner config: {0}")]
    Config(String),
    #[error("inconsistent planning input: {0}")]
    Input(String),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Problem(#[from] QpError),
    #[error("wheel QP failed with status {0:?}")]
    Solver(QpStatus),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WheelToConfig {
    pub w_acc: [f64; 3],
    pub w_pre_pos: f64,
    pub w_pre_vel: f64,
    pub w_pre_acc: f64,
    pub w_ref: f64,
    pub w_def: f64,
    pub w_fh: [f64; 2],
    pub w_sh: f64,
    pub x_kin: f64,
    pub y_kin: f64,
    pub z_kin: f64,
    pub z_sh: f64,
    pub k_inv: f64,
    pub samples: usize,
    pub rho: f64,
}

impl Default for WheelToConfig {
    fn default() -> Self {
        Self {
            w_acc: [1e-2; 3],
            w_pre_pos: 1.0,
            w_pre_vel: 0.1,
            w_pre_acc: 1e-3,
            w_ref: 10.0,
            w_def: 1.0,
            w_fh: [50.0; 2],
            w_sh: 50.0,
            x_kin: 0.2,
            y_kin: 0.1,
            z_kin: 0.25,
            z_sh: 0.1,
            k_inv: 1.0,
            samples: 40,
            rho: crate::qp::DEFAULT_RHO,
        }
    }
}

impl WheelToConfig {
    pub fn validate(&self) -> Result<(), WheelToError> {
        let weights = [
            self.w_acc[0],
            self.w_acc[1],
            self.w_acc[2],
            self.w_pre_pos,
            self.w_pre_vel,
            self.w_pre_acc,
            self.w_ref,
            self.w_def,
            self.w_fh[0],
            self.w_fh[1],
            self.w_sh,
            self.rho,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(WheelToError::Config(
                "weights must be finite and >= 0".into(),
            ));
        }
        if [self.x_kin, self.y_kin, self.z_kin]
            .iter()
            .any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(WheelToError::Config(
                "kinematic half-extents must be > 0".into(),
            ));
        }
        if self.samples < 10 {
            return Err(WheelToError::Config(format!(
                "need at least 10 samples, got {}",
                self.samples
            )));
        }
        Ok(())
    }
}

/// Reference motion seen by one wheel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelReference {
    /// Reference COM velocity in the heading frame.
    pub v_ref: Vector3<f64>,
    pub omega_ref: f64,
    pub v_bh_ref: Vector3<f64>,
    pub v_bh: Vector3<f64>,
    /// Hip height above ground.
    pub h: f64,
    pub g: f64,
    /// COM to projected wheel position, heading frame.
    pub r_bw_xy: Vector2<f64>,
}

impl WheelReference {
    /// Rigid-body velocity of the wheel point under the reference twist.
    pub fn wheel_velocity(&self) -> Vector2<f64> {
        let w = self.omega_ref;
        Vector2::new(
            self.v_ref.x - w * self.r_bw_xy.y,
            self.v_ref.y + w * self.r_bw_xy.x,
        )
    }
}

/// Inverted-pendulum foothold correction `k_inv (v_bh_ref - v_bh) sqrt(h / g)`.
pub fn inverted_pendulum_offset(r: &WheelReference, k_inv: f64) -> Vector3<f64> {
    k_inv * (r.v_bh_ref - r.v_bh) * (r.h / r.g).sqrt()
}

/// Default foothold advanced by the reference twist over `dt`.
pub fn foothold_reference(r: &WheelReference, r_def_xy: &Vector2<f64>, dt: f64) -> Vector2<f64> {
    r_def_xy + r.wheel_velocity() * dt
}

/// A solved wheel trajectory, expressed in its frame `W` with time relative to `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct WheelPlan {
    pub leg: Leg,
    pub frame: WheelFrame,
    pub t0: f64,
    pub sequence: SegmentSequence,
    /// Kinematic-limit rows active at the optimum, for warm starts.
    pub active_keys: Vec<RowKey>,
}

impl WheelPlan {
    /// A plan that keeps the wheel at rest in contact.
    pub fn hold(leg: Leg, frame: WheelFrame, t0: f64, horizon: f64) -> Result<Self, SplineError> {
        let seg = ContactSegment::new([0.0; 3], 0.0, 0.0, 0.0, 0.0, horizon)?;
        Ok(Self {
            leg,
            frame,
            t0,
            sequence: SegmentSequence::new(vec![Segment::Contact(seg)])?,
            active_keys: Vec::new(),
        })
    }

    pub fn end(&self) -> f64 {
        self.t0 + self.sequence.horizon()
    }

    pub fn covers(&self, t: f64) -> bool {
        t >= self.t0 - 1e-9 && t <= self.end() + 1e-9
    }

    pub fn eval_local(&self, t: f64) -> Result<KinematicState, SplineError> {
        self.sequence.eval(t - self.t0)
    }

    pub fn eval_world(&self, t: f64) -> Result<KinematicState, SplineError> {
        Ok(self
            .eval_local(t)?
            .from_frame(&self.frame.origin, &self.frame.rotation))
    }

    pub fn eval_world_clamped(&self, t: f64) -> KinematicState {
        self.sequence
            .eval_clamped(t - self.t0)
            .from_frame(&self.frame.origin, &self.frame.rotation)
    }

    /// Contact according to the segment type; junctions belong to the later segment.
    pub fn in_contact(&self, t: f64) -> bool {
        let rel = (t - self.t0).clamp(0.0, self.sequence.horizon());
        self.sequence
            .locate(rel)
            .map(|i| self.sequence.segments()[i].is_contact())
            .unwrap_or(true)
    }
}

/// Identifies one kinematic-limit row: sample index, axis, and side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RowKey {
    pub sample: usize,
    pub axis: usize,
    pub upper: bool,
}

/// Everything one wheel solve needs. Positions and states are in world coordinates.
#[derive(Debug, Clone)]
pub struct WheelTask<'a> {
    pub leg: Leg,
    pub t0: f64,
    pub horizon: f64,
    pub schedule: &'a LegSchedule,
    pub frame: WheelFrame,
    pub init: KinematicState,
    /// Default wheel position at `t0 + k * horizon / samples` for `k = 0..=samples`.
    pub defaults: Vec<Vector3<f64>>,
    pub reference: WheelReference,
    pub previous: Option<&'a WheelPlan>,
}

/// Quality measures of a solved plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelCertificate {
    pub continuity: f64,
    pub kinematic_violation: f64,
    pub lateral_slip: f64,
    pub initial_state: f64,
}

impl WheelCertificate {
    pub fn passes(&self, tol: f64) -> bool {
        self.continuity < tol
            && self.kinematic_violation < tol
            && self.lateral_slip < tol
            && self.initial_state < tol
    }
}

#[derive(Debug, Clone)]
pub struct WheelSolution {
    pub plan: WheelPlan,
    pub certificate: WheelCertificate,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    contact: bool,
    t_start: f64,
    duration: f64,
    offset: usize,
}

impl Slot {
    fn nvars(&self) -> usize {
        if self.contact {
            ContactSegment::NUM_VARS
        } else {
            AirSegment::NUM_VARS
        }
    }

    fn end(&self) -> f64 {
        self.t_start + self.duration
    }
}

#[derive(Debug, Clone)]
struct Layout {
    slots: Vec<Slot>,
    n: usize,
    omega: f64,
}

impl Layout {
    /// Segments for the schedule clipped to `[0, horizon]` (relative time). A
    /// swing cut by the horizon end is completed and followed by `tail` of
    /// contact so that its touch-down is part of the plan.
    fn from_schedule(
        schedule: &LegSchedule,
        t0: f64,
        horizon: f64,
        tail: f64,
        omega: f64,
    ) -> Result<Self, WheelToError> {
        let mut raw: Vec<(bool, f64, f64)> = schedule
            .phases
            .iter()
            .map(|p| (p.kind == PhaseKind::Contact, p.start - t0, p.end - t0))
            .collect();
        let (first, last) = match (raw.first(), raw.last()) {
            (Some(f), Some(l)) => (f.1, l.2),
            _ => return Err(WheelToError::Input("empty leg schedule".into())),
        };
        if first.abs() > 1e-9 || (last - horizon).abs() > 1e-9 {
            return Err(WheelToError::Input(format!(
                "schedule spans [{first}, {last}], expected [0, {horizon}]"
            )));
        }
        let mut horizon = horizon;
        let end = raw.len() - 1;
        let straddling = schedule
            .swings
            .iter()
            .find(|sw| sw.t_lo - t0 < horizon && sw.t_td - t0 > horizon - 1e-9);
        match straddling {
            Some(sw) if !raw[end].0 => {
                let (sh, td) = (sw.t_sh - t0, sw.t_td - t0);
                if raw[end].1 < sh - 1e-9 {
                    raw[end].2 = sh;
                    raw.push((false, sh, td));
                } else {
                    raw[end].2 = td;
                }
                raw.push((true, td, td + tail));
                horizon = td + tail;
            }
            _ if end > 0 && raw[end].0 && !raw[end - 1].0 && raw[end].2 - raw[end].1 < tail => {
                raw[end].2 = raw[end].1 + tail;
                horizon = raw[end].2;
            }
            _ => {}
        }
        // absorb short phases: a short first phase into its successor, any
        // other into its predecessor
        while raw.len() > 1 && raw[0].2 - raw[0].1 < MIN_SEGMENT {
            let start = raw[0].1;
            raw.remove(0);
            raw[0].1 = start;
        }
        let mut phases: Vec<(bool, f64, f64)> = Vec::with_capacity(raw.len());
        for ph in raw {
            match phases.last_mut() {
                Some(prev) if ph.2 - ph.1 < MIN_SEGMENT || (prev.0 && ph.0) => prev.2 = ph.2,
                _ => phases.push(ph),
            }
        }
        let mut slots = Vec::with_capacity(phases.len());
        let mut offset = 0;
        let mut t = 0.0;
        for (contact, _, end) in &phases {
            let end = end.min(horizon);
            let slot = Slot {
                contact: *contact,
                t_start: t,
                duration: end - t,
                offset,
            };
            if !(slot.duration > 0.0) {
                return Err(WheelToError::Input("degenerate phase after merging".into()));
            }
            offset += slot.nvars();
            t = end;
            slots.push(slot);
        }
        if let Some(last) = slots.last_mut() {
            last.duration = horizon - last.t_start;
        }
        Ok(Self {
            slots,
            n: offset,
            omega,
        })
    }

    fn end(&self) -> f64 {
        self.slots.last().map_or(0.0, |s| s.end())
    }

    fn locate(&self, t: f64) -> usize {
        self.slots
            .iter()
            .position(|s| t < s.end() - 1e-9)
            .unwrap_or(self.slots.len() - 1)
    }

    fn local_basis(&self, slot: &Slot, tau: f64, d: Derivative) -> Matrix3xX<f64> {
        if slot.contact {
            ContactSegment::basis(self.omega, slot.t_start, tau, d)
        } else {
            AirSegment::basis(tau, d)
        }
    }

    /// 3 x n map from the decision vector to the derivative at time `t`,
    /// using the segment that starts or contains `t`.
    fn basis_at(&self, t: f64, d: Derivative) -> DMatrix<f64> {
        let slot = self.slots[self.locate(t)];
        self.basis_in(&slot, (t - slot.t_start).clamp(0.0, slot.duration), d)
    }

    fn basis_in(&self, slot: &Slot, tau: f64, d: Derivative) -> DMatrix<f64> {
        let local = self.local_basis(slot, tau, d);
        let mut m = DMatrix::zeros(3, self.n);
        m.view_mut((0, slot.offset), (3, slot.nvars()))
            .copy_from(&local);
        m
    }

    /// Column scaling that maps each coefficient onto normalized segment time.
    fn scaling(&self) -> DVector<f64> {
        let mut s = DVector::from_element(self.n, 1.0);
        for slot in &self.slots {
            let d = slot.duration;
            if slot.contact {
                s[slot.offset + 1] = 1.0 / d;
                s[slot.offset + 2] = 1.0 / (d * d);
            } else {
                for axis in 0..3 {
                    for i in 0..6 {
                        s[slot.offset + 6 * axis + i] = d.powi(-((5 - i) as i32));
                    }
                }
            }
        }
        s
    }

    fn build(&self, xi: &DVector<f64>) -> Result<SegmentSequence, SplineError> {
        let segs = self
            .slots
            .iter()
            .map(|slot| {
                let v = xi.rows(slot.offset, slot.nvars());
                let v: Vec<f64> = v.iter().copied().collect();
                Ok(if slot.contact {
                    Segment::Contact(ContactSegment::from_slice(
                        &v,
                        self.omega,
                        slot.t_start,
                        slot.duration,
                    )?)
                } else {
                    Segment::Air(AirSegment::from_slice(&v, slot.t_start, slot.duration)?)
                })
            })
            .collect::<Result<Vec<_>, SplineError>>()?;
        SegmentSequence::new(segs)
    }
}

struct Accumulator {
    q: DMatrix<f64>,
    c: DVector<f64>,
    eq_rows: Vec<(DVector<f64>, f64)>,
    ineq_rows: Vec<(DVector<f64>, f64, RowKey)>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            q: DMatrix::zeros(n, n),
            c: DVector::zeros(n),
            eq_rows: Vec::new(),
            ineq_rows: Vec::new(),
        }
    }

    /// Adds `w (row . xi - target)^2`.
    fn square(&mut self, row: &DVector<f64>, target: f64, w: f64) {
        if w == 0.0 {
            return;
        }
        self.q.ger(2.0 * w, row, row, 1.0);
        self.c.axpy(-2.0 * w * target, row, 1.0);
    }

    fn square_rows(&mut self, m: &DMatrix<f64>, target: &Vector3<f64>, w: &[f64; 3]) {
        for axis in 0..3 {
            self.square(&m.row(axis).transpose(), target[axis], w[axis]);
        }
    }

    fn equality(&mut self, row: DVector<f64>, rhs: f64) {
        if row.amax() < 1e-14 {
            return;
        }
        self.eq_rows.push((row, rhs));
    }

    fn upper(&mut self, row: DVector<f64>, rhs: f64, key: RowKey) {
        if row.amax() < 1e-14 && rhs >= 0.0 {
            return;
        }
        self.ineq_rows.push((row, rhs, key));
    }
}

/// The assembled wheel QP in scaled variables.
#[derive(Debug, Clone)]
pub struct WheelQp {
    pub problem: QpProblem,
    pub row_keys: Vec<RowKey>,
    layout: Layout,
    scale: DVector<f64>,
    leg: Leg,
    frame: WheelFrame,
    t0: f64,
    sample_times: Vec<f64>,
    defaults_w: Vec<Vector3<f64>>,
    init_w: KinematicState,
    limits: Vector3<f64>,
}

/// Samples of `prev` at `t0 + times[k]`, i.e. shifted by `t0 - prev.t0`,
/// clamped to the end of `prev`. World coordinates.
pub fn shift_previous(prev: &WheelPlan, t0: f64, times: &[f64]) -> Vec<KinematicState> {
    times
        .iter()
        .map(|t| prev.eval_world_clamped(t0 + t))
        .collect()
}

pub fn assemble(task: &WheelTask, cfg: &WheelToConfig) -> Result<WheelQp, WheelToError> {
    cfg.validate()?;
    let n_samples = cfg.samples;
    if task.defaults.len() != n_samples + 1 {
        return Err(WheelToError::Input(format!(
            "expected {} default positions, got {}",
            n_samples + 1,
            task.defaults.len()
        )));
    }
    if !(task.horizon > 0.0) {
        return Err(WheelToError::Input("horizon must be positive".into()));
    }
    let r = &task.reference;
    let dt = task.horizon / n_samples as f64;
    let layout = Layout::from_schedule(task.schedule, task.t0, task.horizon, dt, r.omega_ref)?;
    let n = layout.n;
    let plan_end = layout.end();
    let frame = &task.frame;
    let sample_times: Vec<f64> = (0..=n_samples).map(|k| k as f64 * dt).collect();
    let defaults_w: Vec<Vector3<f64>> = task.defaults.iter().map(|p| frame.to_local(p)).collect();
    let init_w = task.init.to_frame(&frame.origin, &frame.rotation);

    let mut acc = Accumulator::new(n);

    // acceleration
    for slot in &layout.slots {
        let h = if slot.contact {
            accel_hessian_contact(slot.duration, layout.omega, cfg.w_acc[0])?
        } else {
            accel_hessian_air(slot.duration, &Vector3::from(cfg.w_acc))?
        };
        let k = slot.nvars();
        let mut block = acc.q.view_mut((slot.offset, slot.offset), (k, k));
        block += h;
    }

    // previous solution
    if let Some(prev) = task.previous {
        let shifted = shift_previous(prev, task.t0, &sample_times[1..]);
        for (k, st) in shifted.iter().enumerate() {
            let t = sample_times[k + 1];
            let target = st.to_frame(&frame.origin, &frame.rotation);
            for (d, w) in [
                (Derivative::Position, cfg.w_pre_pos),
                (Derivative::Velocity, cfg.w_pre_vel),
                (Derivative::Acceleration, cfg.w_pre_acc),
            ] {
                if w > 0.0 {
                    acc.square_rows(&layout.basis_at(t, d), &target.get(d), &[w * dt; 3]);
                }
            }
        }
    }

    // reference velocity and default position while rolling
    if layout.slots[0].contact {
        let row = layout
            .basis_at(0.0, Derivative::Velocity)
            .row(0)
            .transpose();
        acc.square(&row, r.wheel_velocity().x, cfg.w_ref);
    }
    for (k, &t) in sample_times.iter().enumerate().skip(1) {
        if layout.slots[layout.locate(t)].contact {
            let row = layout.basis_at(t, Derivative::Position).row(0).transpose();
            acc.square(&row, defaults_w[k].x, cfg.w_def * dt);
        }
    }

    // swing terms
    let r_inv = inverted_pendulum_offset(r, cfg.k_inv);
    let def0 = Vector2::new(defaults_w[0].x, defaults_w[0].y);
    let tol = 1e-9;
    for sw in &task.schedule.swings {
        let (lo, sh, td) = (sw.t_lo - task.t0, sw.t_sh - task.t0, sw.t_td - task.t0);
        if td > tol && td <= plan_end + tol {
            let target = foothold_reference(r, &def0, td) + r_inv.xy();
            let m = layout.basis_at(td.min(plan_end), Derivative::Position);
            acc.square_rows(
                &m,
                &Vector3::new(target.x, target.y, 0.0),
                &[cfg.w_fh[0], cfg.w_fh[1], cfg.w_fh[0]],
            );
        }
        if sh > tol && sh < plan_end - tol {
            let m_sh = layout.basis_at(sh, Derivative::Position);
            acc.square(&m_sh.row(2).transpose(), cfg.z_sh, cfg.w_sh);
            if lo >= -tol && td <= plan_end + tol {
                let m_lo = layout.basis_at(lo.max(0.0), Derivative::Position);
                let m_td = layout.basis_at(td.min(plan_end), Derivative::Position);
                let mid = &m_sh - 0.5 * (&m_lo + &m_td);
                for axis in 0..2 {
                    acc.square(&mid.row(axis).transpose(), 0.0, cfg.w_sh);
                }
            }
        }
    }

    // initial state
    let first = layout.slots[0];
    if first.contact {
        let m = layout.basis_in(&first, 0.0, Derivative::Position);
        for axis in 0..2 {
            acc.equality(m.row(axis).transpose(), init_w.position[axis]);
        }
    } else {
        for d in Derivative::ALL {
            let m = layout.basis_in(&first, 0.0, d);
            for axis in 0..3 {
                acc.equality(m.row(axis).transpose(), init_w.get(d)[axis]);
            }
        }
    }

    // continuity
    for pair in layout.slots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let derivs: &[Derivative] = if !a.contact && !b.contact {
            &Derivative::ALL
        } else {
            &Derivative::ALL[..2]
        };
        for &d in derivs {
            let m = layout.basis_in(&b, 0.0, d) - layout.basis_in(&a, a.duration, d);
            for axis in 0..3 {
                acc.equality(m.row(axis).transpose(), 0.0);
            }
        }
    }

    // kinematic box around the default positions
    let limits = Vector3::new(cfg.x_kin, cfg.y_kin, cfg.z_kin);
    for (k, &t) in sample_times.iter().enumerate().skip(1) {
        let m = layout.basis_at(t, Derivative::Position);
        for axis in 0..3 {
            let row = m.row(axis).transpose();
            let def = defaults_w[k][axis];
            acc.upper(
                row.clone(),
                limits[axis] + def,
                RowKey {
                    sample: k,
                    axis,
                    upper: true,
                },
            );
            acc.upper(
                -row,
                limits[axis] - def,
                RowKey {
                    sample: k,
                    axis,
                    upper: false,
                },
            );
        }
    }

    // scale columns, then regularize
    let scale = layout.scaling();
    let s = DMatrix::from_diagonal(&scale);
    let q = &s * &acc.q * &s;
    let q = regularize(&(0.5 * (&q + q.transpose())), cfg.rho);
    let c = acc.c.component_mul(&scale);
    let a = stack(acc.eq_rows.iter().map(|(r, _)| r), n).component_mul_columns(&scale);
    let b = DVector::from_iterator(acc.eq_rows.len(), acc.eq_rows.iter().map(|(_, v)| *v));
    let d = stack(acc.ineq_rows.iter().map(|(r, _, _)| r), n).component_mul_columns(&scale);
    let f = DVector::from_iterator(
        acc.ineq_rows.len(),
        acc.ineq_rows.iter().map(|(_, v, _)| *v),
    );
    let row_keys = acc.ineq_rows.iter().map(|(_, _, k)| *k).collect();
    let problem = QpProblem::new(q, c, a, b, d, f)?;

    Ok(WheelQp {
        problem,
        row_keys,
        layout,
        scale,
        leg: task.leg,
        frame: *frame,
        t0: task.t0,
        sample_times,
        defaults_w,
        init_w,
        limits,
    })
}

trait ScaleColumns {
    fn component_mul_columns(self, s: &DVector<f64>) -> Self;
}

impl ScaleColumns for DMatrix<f64> {
    fn component_mul_columns(mut self, s: &DVector<f64>) -> Self {
        for (j, mut col) in self.column_iter_mut().enumerate() {
            col *= s[j];
        }
        self
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a DVector<f64>>, n: usize) -> DMatrix<f64> {
    let rows: Vec<&DVector<f64>> = rows.collect();
    DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j])
}

impl WheelQp {
    pub fn num_vars(&self) -> usize {
        self.layout.n
    }

    /// Maps a solution of the scaled QP back to spline coefficients.
    pub fn unscale(&self, zeta: &DVector<f64>) -> DVector<f64> {
        zeta.component_mul(&self.scale)
    }

    /// Row indices of the given keys, for warm starting.
    pub fn hint_for(&self, keys: &[RowKey]) -> Vec<usize> {
        keys.iter()
            .filter_map(|k| self.row_keys.iter().position(|r| r == k))
            .collect()
    }

    pub fn solve(
        &self,
        solver: &mut QpSolver,
        hint: &[RowKey],
    ) -> Result<WheelSolution, WheelToError> {
        let sol = solver.solve_warm(&self.problem, &self.hint_for(hint));
        if sol.status != QpStatus::Optimal {
            return Err(WheelToError::Solver(sol.status));
        }
        let xi = self.unscale(&sol.x);
        let sequence = self.layout.build(&xi)?;
        let plan = WheelPlan {
            leg: self.leg,
            frame: self.frame,
            t0: self.t0,
            sequence,
            active_keys: sol.active_set.iter().map(|&i| self.row_keys[i]).collect(),
        };
        let certificate = self.certify(&plan);
        Ok(WheelSolution {
            plan,
            certificate,
            iterations: sol.iterations,
            objective: sol.objective,
        })
    }

    /// Independent re-evaluation of a plan against this problem's constraints.
    pub fn certify(&self, plan: &WheelPlan) -> WheelCertificate {
        let seq = &plan.sequence;
        let mut kin: f64 = 0.0;
        for (k, &t) in self.sample_times.iter().enumerate().skip(1) {
            let p = seq.eval_clamped(t).position;
            for axis in 0..3 {
                let v = (p[axis] - self.defaults_w[k][axis]).abs() - self.limits[axis];
                kin = kin.max(v);
            }
        }
        let mut slip: f64 = 0.0;
        for seg in seq.segments() {
            if let Segment::Contact(c) = seg {
                for j in 0..=10 {
                    let tau = c.duration * j as f64 / 10.0;
                    let st = c.eval_local(tau);
                    let phi = c.heading(tau);
                    let lateral = Vector3::new(-phi.sin(), phi.cos(), 0.0);
                    slip = slip
                        .max(st.velocity.dot(&lateral).abs())
                        .max(st.velocity.z.abs())
                        .max(st.position.z.abs());
                }
            }
        }
        let start = seq.eval_clamped(0.0);
        let init = if seq.segments()[0].is_contact() {
            (start.position.xy() - self.init_w.position.xy()).amax()
        } else {
            [
                (start.position - self.init_w.position).amax(),
                (start.velocity - self.init_w.velocity).amax(),
                (start.acceleration - self.init_w.acceleration).amax(),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        };
        WheelCertificate {
            continuity: seq.max_junction_residual(),
            kinematic_violation: kin.max(0.0),
            lateral_slip: slip,
            initial_state: init,
        }
    }
}

/// Assembles and solves one wheel problem, warm-started from the previous plan's active set.
pub fn plan_wheel(
    task: &WheelTask,
    cfg: &WheelToConfig,
    solver: &mut QpSolver,
) -> Result<WheelSolution, WheelToError> {
    let qp = assemble(task, cfg)?;
    let hint = task
        .previous
        .map(|p| p.active_keys.clone())
        .unwrap_or_default();
    qp.solve(solver, &hint)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn reference() -> WheelReference {
        WheelReference {
            v_ref: Vector3::zeros(),
            omega_ref: 0.0,
            v_bh_ref: Vector3::zeros(),
            v_bh: Vector3::zeros(),
            h: 0.45,
            g: 9.81,
            r_bw_xy: Vector2::new(0.3, 0.2),
        }
    }

    #[test]
    fn inverted_pendulum_examples() {
        let mut r = reference();
        assert_eq!(inverted_pendulum_offset(&r, 0.0), Vector3::zeros());
        r.v_bh_ref = Vector3::new(0.3, 0.1, 0.0);
        r.v_bh = r.v_bh_ref;
        assert_eq!(inverted_pendulum_offset(&r, 1.0), Vector3::zeros());
        r.v_bh = Vector3::new(0.2, 0.1, 0.0);
        let o = inverted_pendulum_offset(&r, 1.0);
        // 0.1 * sqrt(0.45 / 9.81)
        assert_relative_eq!(o.x, 0.021418, epsilon = 1e-6);
        assert_relative_eq!(o.y, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn foothold_reference_examples() {
        let mut r = reference();
        let d = Vector2::new(0.35, 0.25);
        assert_eq!(foothold_reference(&r, &d, 0.4), d);
        r.v_ref = Vector3::new(0.5, 0.0, 0.0);
        assert_relative_eq!(
            foothold_reference(&r, &d, 0.4),
            d + Vector2::new(0.2, 0.0),
            epsilon = 1e-15
        );
        r.v_ref = Vector3::zeros();
        r.omega_ref = 1.0;
        assert_relative_eq!(
            foothold_reference(&r, &d, 0.4),
            d + Vector2::new(-0.08, 0.12),
            epsilon = 1e-15
        );
    }

    #[test]
    fn config_validation() {
        assert!(WheelToConfig::default().validate().is_ok());
        let cfg = WheelToConfig {
            samples: 5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = WheelToConfig {
            x_kin: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
