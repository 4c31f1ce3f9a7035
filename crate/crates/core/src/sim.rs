//! Receding-horizon harness: replans wheels and base at fixed rates and plays
//! the latest plans back as the robot state.
//!
//! The plant is ideal playback. A disturbance moves the state away from the
//! plan until the next plan, which starts from the displaced state.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::base_to::{BaseSolution, BaseTrajectory};
use crate::gait::Leg;
use crate::planner::{PlanError, Planner, RobotState};
use crate::qp::QpSolver;
use crate::wheel_to::{WheelPlan, WheelSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Planners run in lockstep with simulated time; fully deterministic.
    #[default]
    Synchronous,
    /// Planners run on their own threads against wall-clock time.
    FreeRunning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub duration: f64,
    pub sim_rate: u32,
    pub wheel_rate: u32,
    pub base_rate: u32,
    pub mode: Mode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            duration: 10.0,
            sim_rate: 400,
            wheel_rate: 100,
            base_rate: 50,
            mode: Mode::Synchronous,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration > 0.0) {
            return Err("duration must be positive".into());
        }
        if self.wheel_rate == 0 || self.base_rate == 0 || self.sim_rate == 0 {
            return Err("rates must be positive".into());
        }
        if !self.sim_rate.is_multiple_of(self.wheel_rate)
            || !self.sim_rate.is_multiple_of(self.base_rate)
        {
            return Err("sim_rate must be a multiple of wheel_rate and base_rate".into());
        }
        Ok(())
    }

    fn ticks(&self) -> u64 {
        (self.duration * self.sim_rate as f64).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DisturbanceTarget {
    /// Instantaneous COM displacement.
    #[default]
    ComOffset,
    /// Instantaneous change of the COM velocity.
    ComVelocityKick,
    /// Instantaneous displacement of one wheel.
    WheelOffset { leg: Leg },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub time: f64,
    #[serde(default)]
    pub target: DisturbanceTarget,
    pub magnitude: [f64; 3],
}

impl Disturbance {
    pub fn com_offset(time: f64, offset: [f64; 3]) -> Self {
        Self {
            time,
            target: DisturbanceTarget::ComOffset,
            magnitude: offset,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.time.is_finite() || self.magnitude.iter().any(|m| !m.is_finite()) {
            return Err("disturbance time and magnitude must be finite".into());
        }
        Ok(())
    }
}

/// Applies `d` to `state`; only the targeted field changes.
pub fn inject(state: &RobotState, d: &Disturbance) -> RobotState {
    let m = Vector3::from(d.magnitude);
    let mut out = *state;
    match d.target {
        DisturbanceTarget::ComOffset => out.com.position += m,
        DisturbanceTarget::ComVelocityKick => out.com.velocity += m,
        DisturbanceTarget::WheelOffset { leg } => out.wheels[leg.index()].position += m,
    }
    out
}

/// `count` horizontal COM pushes in `[t_min, t_max]`, at most `magnitude` metres each.
pub fn random_pushes(
    seed: u64,
    count: usize,
    t_min: f64,
    t_max: f64,
    magnitude: f64,
) -> Vec<Disturbance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<Disturbance> = (0..count)
        .map(|_| {
            let t = rng.gen_range(t_min..=t_max);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(0.0..=magnitude);
            Disturbance::com_offset(t, [r * angle.cos(), r * angle.sin(), 0.0])
        })
        .collect();
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    out
}

/// A disturbance as applied at simulation time `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Push {
    time: f64,
    target: DisturbanceTarget,
    magnitude: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveKind {
    Wheel(Leg),
    Base,
}

impl SolveKind {
    pub fn name(&self) -> &'static str {
        match self {
            SolveKind::Wheel(l) => l.name(),
            SolveKind::Base => "base",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveRecord {
    pub time: f64,
    pub kind: SolveKind,
    pub ok: bool,
    pub error: Option<String>,
    pub infeasible: bool,
    pub iterations: usize,
    pub wall_ms: f64,
    /// Largest spline junction residual of the returned plan.
    pub continuity: Option<f64>,
    /// Worst nonlinear ZMP margin of a base plan (m).
    pub zmp_margin: Option<f64>,
}

/// Per-solve quantities logged for every planner.
pub trait SolveStats {
    fn iterations(&self) -> usize;
    fn continuity(&self) -> f64;
    fn zmp_margin(&self) -> Option<f64> {
        None
    }
}

impl SolveStats for WheelSolution {
    fn iterations(&self) -> usize {
        self.iterations
    }
    fn continuity(&self) -> f64 {
        self.certificate.continuity
    }
}

impl SolveStats for BaseSolution {
    fn iterations(&self) -> usize {
        self.qp_iterations
    }
    fn continuity(&self) -> f64 {
        self.certificate.continuity
    }
    fn zmp_margin(&self) -> Option<f64> {
        Some(self.certificate.worst_margin)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRow {
    pub state: RobotState,
    pub contact: [bool; 4],
    /// Reference COM position in the world xy plane.
    pub setpoint: [f64; 2],
}

#[derive(Debug, Clone, Default)]
pub struct EpisodeLog {
    pub rows: Vec<EpisodeRow>,
    pub solves: Vec<SolveRecord>,
}

fn percentile(values: &mut [f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let idx = ((p / 100.0) * (values.len() - 1) as f64).round() as usize;
    values[idx]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub wheel_solves: usize,
    pub base_solves: usize,
    pub failed_solves: usize,
    pub infeasible_solves: usize,
    pub wheel: TimingStats,
    pub base: TimingStats,
    /// Worst ZMP margin over all published base plans (m).
    pub worst_zmp_margin: f64,
    pub max_continuity: f64,
    pub final_tracking_error: f64,
    pub max_tracking_error: f64,
    pub first_failure: Option<String>,
}

/// Solve-time statistics in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl TimingStats {
    pub fn from_samples(mut values: Vec<f64>) -> Self {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        Self {
            mean_ms: mean,
            p50_ms: percentile(&mut values, 50.0),
            p95_ms: percentile(&mut values, 95.0),
            max_ms: values.last().copied().unwrap_or(f64::NAN),
        }
    }
}

impl EpisodeLog {
    pub fn wall_times(&self, base: bool) -> Vec<f64> {
        self.solves
            .iter()
            .filter(|s| s.ok && (s.kind == SolveKind::Base) == base)
            .map(|s| s.wall_ms)
            .collect()
    }

    /// COM distance to the set-point in the xy plane at each logged row.
    pub fn tracking_errors(&self) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .map(|r| {
                let p = r.state.com.position;
                (
                    r.state.time,
                    (p.x - r.setpoint[0]).hypot(p.y - r.setpoint[1]),
                )
            })
            .collect()
    }

    pub fn summary(&self) -> Summary {
        let err = self.tracking_errors();
        Summary {
            wheel_solves: self
                .solves
                .iter()
                .filter(|s| s.kind != SolveKind::Base)
                .count(),
            base_solves: self
                .solves
                .iter()
                .filter(|s| s.kind == SolveKind::Base)
                .count(),
            failed_solves: self.solves.iter().filter(|s| !s.ok).count(),
            infeasible_solves: self.solves.iter().filter(|s| s.infeasible).count(),
            wheel: TimingStats::from_samples(self.wall_times(false)),
            base: TimingStats::from_samples(self.wall_times(true)),
            worst_zmp_margin: self
                .solves
                .iter()
                .filter_map(|s| s.zmp_margin)
                .fold(f64::INFINITY, f64::min),
            max_continuity: self
                .solves
                .iter()
                .filter_map(|s| s.continuity)
                .fold(0.0, f64::max),
            final_tracking_error: err.last().map(|e| e.1).unwrap_or(0.0),
            max_tracking_error: err.iter().map(|e| e.1).fold(0.0, f64::max),
            first_failure: self.solves.iter().find(|s| !s.ok).map(|s| {
                format!(
                    "{} at t={:.4}: {}",
                    s.kind.name(),
                    s.time,
                    s.error.as_deref().unwrap_or("")
                )
            }),
        }
    }

    /// Deterministic state log; contains no timings.
    pub fn episode_csv(&self) -> String {
        let mut s = String::from("t,com_x,com_y,com_z,vel_x,vel_y,vel_z,yaw,pitch,roll");
        for leg in Leg::ALL {
            let n = leg.name();
            write!(s, ",{n}_x,{n}_y,{n}_z,{n}_contact").unwrap();
        }
        s.push_str(",setpoint_x,setpoint_y\n");
        for r in &self.rows {
            let st = &r.state;
            let c = st.com.position;
            let v = st.com.velocity;
            let a = st.angles.position;
            write!(
                s,
                "{:.4},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                st.time, c.x, c.y, c.z, v.x, v.y, v.z, a[0], a[1], a[2]
            )
            .unwrap();
            for (w, f) in st.wheels.iter().zip(r.contact) {
                let p = w.position;
                write!(s, ",{:.9},{:.9},{:.9},{}", p.x, p.y, p.z, u8::from(f)).unwrap();
            }
            writeln!(s, ",{:.9},{:.9}", r.setpoint[0], r.setpoint[1]).unwrap();
        }
        s
    }

    pub fn solves_csv(&self) -> String {
        let mut s =
            String::from("t,kind,ok,infeasible,iterations,wall_ms,continuity,zmp_margin,error\n");
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.3e}")).unwrap_or_default();
        for r in &self.solves {
            writeln!(
                s,
                "{:.4},{},{},{},{},{:.4},{},{},{}",
                r.time,
                r.kind.name(),
                u8::from(r.ok),
                u8::from(r.infeasible),
                r.iterations,
                r.wall_ms,
                opt(r.continuity),
                opt(r.zmp_margin),
                r.error.as_deref().unwrap_or("").replace(',', ";")
            )
            .unwrap();
        }
        s
    }
}

/// Latest-value slot shared between threads.
#[derive(Debug)]
pub struct Mailbox<T>(Arc<RwLock<Option<Arc<T>>>>);

impl<T> Clone for Mailbox<T> {
    fn clone(&self) -> Self {
        Self(Arc::clone(&self.0))
    }
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Self(Arc::new(RwLock::new(None)))
    }
}

impl<T> Mailbox<T> {
    pub fn publish(&self, value: T) {
        *self.0.write().expect("mailbox poisoned") = Some(Arc::new(value));
    }

    pub fn latest(&self) -> Option<Arc<T>> {
        self.0.read().expect("mailbox poisoned").clone()
    }
}

/// Latest published plans.
#[derive(Debug, Clone)]
pub struct Plans {
    pub wheels: [WheelPlan; 4],
    pub base: BaseTrajectory,
}

/// Ideal plant: plays back `plans`. A push stays on top of the playback until
/// a plan computed after it takes over.
fn playback(plans: &Plans, pushes: &[Push], t: f64) -> RobotState {
    let mut com = plans.base.com_clamped(t);
    let mut wheels = [0, 1, 2, 3].map(|i| plans.wheels[i].eval_world_clamped(t));
    for p in pushes.iter().filter(|p| p.time <= t + 1e-12) {
        match p.target {
            DisturbanceTarget::ComOffset if p.time > plans.base.t0 => com.position += p.magnitude,
            DisturbanceTarget::ComVelocityKick if p.time > plans.base.t0 => {
                com.position += p.magnitude * (t - p.time);
                com.velocity += p.magnitude;
            }
            DisturbanceTarget::WheelOffset { leg } if p.time > plans.wheels[leg.index()].t0 => {
                wheels[leg.index()].position += p.magnitude;
            }
            _ => {}
        }
    }
    RobotState {
        time: t,
        com,
        angles: plans.base.angles_clamped(t),
        wheels,
    }
}

fn contact_flags(plans: &Plans, t: f64) -> [bool; 4] {
    [0, 1, 2, 3].map(|i| plans.wheels[i].in_contact(t))
}

/// Synchronous closed-loop simulation.
pub struct Simulation {
    pub planner: Planner,
    pub config: SimConfig,
    pub state: RobotState,
    pub plans: Plans,
    pub log: EpisodeLog,
    disturbances: Vec<Disturbance>,
    pushes: Vec<Push>,
    tick: u64,
    solver: QpSolver,
    last_error: Option<PlanError>,
}

impl Simulation {
    pub fn new(
        planner: Planner,
        config: SimConfig,
        disturbances: Vec<Disturbance>,
    ) -> Result<Self, PlanError> {
        let state = RobotState::standing(
            &planner.config.robot,
            &planner.plane,
            &planner.reference,
            0.0,
        );
        let h = planner.horizon();
        let heading = Vector3::new(state.yaw().cos(), state.yaw().sin(), 0.0);
        let wheels = Leg::ALL.map(|leg| {
            let frame = crate::terrain::wheel_frame(
                &planner.plane,
                &state.wheels[leg.index()].position,
                &heading,
            )
            .expect("heading lies in the plane");
            WheelPlan::hold(leg, frame, 0.0, h).expect("positive horizon")
        });
        let base = BaseTrajectory::hold(0.0, h, &state.com.position, &state.angles.position)
            .expect("positive horizon");
        let mut disturbances = disturbances;
        disturbances.sort_by(|a, b| a.time.total_cmp(&b.time));
        Ok(Self {
            planner,
            config,
            state,
            plans: Plans { wheels, base },
            log: EpisodeLog::default(),
            disturbances,
            pushes: Vec::new(),
            tick: 0,
            solver: QpSolver::new(),
            last_error: None,
        })
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.config.sim_rate as f64
    }

    pub fn last_error(&self) -> Option<&PlanError> {
        self.last_error.as_ref()
    }

    fn record<T: SolveStats>(
        &mut self,
        kind: SolveKind,
        start: Instant,
        res: &Result<T, PlanError>,
    ) {
        if let Err(e) = res {
            self.last_error = Some(e.clone());
        }
        self.log
            .solves
            .push(solve_record(self.state.time, kind, start, res));
    }

    pub fn replan_wheels(&mut self) {
        for leg in Leg::ALL {
            let start = Instant::now();
            let prev = self.plans.wheels[leg.index()].clone();
            let res = self
                .planner
                .plan_wheel(&self.state, leg, Some(&prev), &mut self.solver);
            self.record(SolveKind::Wheel(leg), start, &res);
            if let Ok(sol) = res {
                self.plans.wheels[leg.index()] = sol.plan;
            }
        }
    }

    pub fn replan_base(&mut self) {
        let start = Instant::now();
        let w = &self.plans.wheels;
        let res = self.planner.plan_base(
            &self.state,
            [&w[0], &w[1], &w[2], &w[3]],
            Some(&self.plans.base),
            &mut self.solver,
        );
        self.record(SolveKind::Base, start, &res);
        if let Ok(sol) = res {
            self.plans.base = sol.plan;
        }
    }

    fn apply_disturbances(&mut self) {
        let t = self.time();
        while self
            .disturbances
            .first()
            .is_some_and(|d| d.time <= t + 1e-12)
        {
            let d = self.disturbances.remove(0);
            self.state = inject(&self.state, &d);
            self.pushes.push(Push {
                time: t,
                target: d.target,
                magnitude: Vector3::from(d.magnitude),
            });
        }
    }

    fn log_row(&mut self) {
        let sp = self.planner.nominal_at(self.state.time).position;
        self.log.rows.push(EpisodeRow {
            state: self.state,
            contact: contact_flags(&self.plans, self.state.time),
            setpoint: [sp.x, sp.y],
        });
    }

    /// One simulation tick: disturbances, due replans, log, then advance the plant.
    pub fn step(&mut self) {
        self.apply_disturbances();
        let wheel_every = (self.config.sim_rate / self.config.wheel_rate) as u64;
        let base_every = (self.config.sim_rate / self.config.base_rate) as u64;
        if self.tick.is_multiple_of(wheel_every) {
            self.replan_wheels();
        }
        if self.tick.is_multiple_of(base_every) {
            self.replan_base();
        }
        self.log_row();
        self.tick += 1;
        self.state = playback(&self.plans, &self.pushes, self.time());
    }

    /// Runs until `duration`.
    pub fn run(&mut self) {
        let end = self.config.ticks();
        while self.tick < end {
            self.step();
        }
        self.log_row();
    }
}

/// Runs one episode in the configured mode.
pub fn run_episode(
    planner: Planner,
    config: SimConfig,
    disturbances: Vec<Disturbance>,
) -> Result<EpisodeLog, PlanError> {
    match config.mode {
        Mode::Synchronous => {
            let mut sim = Simulation::new(planner, config, disturbances)?;
            sim.run();
            Ok(sim.log)
        }
        Mode::FreeRunning => run_free(planner, config, disturbances),
    }
}

fn run_free(
    planner: Planner,
    config: SimConfig,
    disturbances: Vec<Disturbance>,
) -> Result<EpisodeLog, PlanError> {
    let init = Simulation::new(planner.clone(), config.clone(), Vec::new())?;
    let state_box: Mailbox<RobotState> = Mailbox::default();
    let plan_box: Mailbox<Plans> = Mailbox::default();
    let wheel_box: Mailbox<[WheelPlan; 4]> = Mailbox::default();
    state_box.publish(init.state);
    plan_box.publish(init.plans.clone());
    wheel_box.publish(init.plans.wheels.clone());
    let solves: Arc<RwLock<Vec<SolveRecord>>> = Arc::default();
    let done = Arc::new(AtomicBool::new(false));
    let t_start = Instant::now();
    let sim_time = move || t_start.elapsed().as_secs_f64();

    let rows = std::thread::scope(|s| {
        // wheel thread
        {
            let (state_box, wheel_box, solves, done, planner) = (
                state_box.clone(),
                wheel_box.clone(),
                solves.clone(),
                done.clone(),
                planner.clone(),
            );
            let period = 1.0 / config.wheel_rate as f64;
            s.spawn(move || {
                let mut solver = QpSolver::new();
                let mut next = 0.0;
                while !done.load(Ordering::Relaxed) {
                    let now = sim_time();
                    if now < next {
                        std::thread::sleep(Duration::from_secs_f64((next - now).min(1e-3)));
                        continue;
                    }
                    next += period;
                    let (Some(state), Some(prev)) = (state_box.latest(), wheel_box.latest()) else {
                        continue;
                    };
                    let mut plans = (*prev).clone();
                    for leg in Leg::ALL {
                        let start = Instant::now();
                        let res =
                            planner.plan_wheel(&state, leg, Some(&prev[leg.index()]), &mut solver);
                        let rec = solve_record(state.time, SolveKind::Wheel(leg), start, &res);
                        solves.write().expect("poisoned").push(rec);
                        if let Ok(sol) = res {
                            plans[leg.index()] = sol.plan;
                        }
                    }
                    wheel_box.publish(plans);
                }
            });
        }
        // base thread
        {
            let (state_box, wheel_box, plan_box, solves, done, planner) = (
                state_box.clone(),
                wheel_box.clone(),
                plan_box.clone(),
                solves.clone(),
                done.clone(),
                planner.clone(),
            );
            let period = 1.0 / config.base_rate as f64;
            s.spawn(move || {
                let mut solver = QpSolver::new();
                let mut next = 0.0;
                while !done.load(Ordering::Relaxed) {
                    let now = sim_time();
                    if now < next {
                        std::thread::sleep(Duration::from_secs_f64((next - now).min(1e-3)));
                        continue;
                    }
                    next += period;
                    let (Some(state), Some(wheels), Some(plans)) =
                        (state_box.latest(), wheel_box.latest(), plan_box.latest())
                    else {
                        continue;
                    };
                    let start = Instant::now();
                    let res = planner.plan_base(
                        &state,
                        [&wheels[0], &wheels[1], &wheels[2], &wheels[3]],
                        Some(&plans.base),
                        &mut solver,
                    );
                    let rec = solve_record(state.time, SolveKind::Base, start, &res);
                    solves.write().expect("poisoned").push(rec);
                    if let Ok(sol) = res {
                        plan_box.publish(Plans {
                            wheels: (*wheels).clone(),
                            base: sol.plan,
                        });
                    }
                }
            });
        }
        // plant, paced by wall clock
        let mut rows = Vec::new();
        let mut pushes: Vec<Push> = Vec::new();
        let mut pending = disturbances;
        pending.sort_by(|a, b| a.time.total_cmp(&b.time));
        let dt = 1.0 / config.sim_rate as f64;
        for tick in 0..=config.ticks() {
            let t = tick as f64 * dt;
            let now = sim_time();
            if now < t {
                std::thread::sleep(Duration::from_secs_f64(t - now));
            }
            let wheels = wheel_box.latest().expect("published");
            let mut plans = (*plan_box.latest().expect("published")).clone();
            plans.wheels = (*wheels).clone();
            while pending.first().is_some_and(|d| d.time <= t + 1e-12) {
                let d = pending.remove(0);
                pushes.push(Push {
                    time: t,
                    target: d.target,
                    magnitude: Vector3::from(d.magnitude),
                });
            }
            let state = playback(&plans, &pushes, t);
            state_box.publish(state);
            let sp = planner.nominal_at(t).position;
            rows.push(EpisodeRow {
                state,
                contact: contact_flags(&plans, t),
                setpoint: [sp.x, sp.y],
            });
        }
        done.store(true, Ordering::Relaxed);
        rows
    });
    let solves = Arc::try_unwrap(solves)
        .map(|l| l.into_inner().expect("poisoned"))
        .unwrap_or_else(|a| a.read().expect("poisoned").clone());
    Ok(EpisodeLog { rows, solves })
}

fn solve_record<T: SolveStats>(
    time: f64,
    kind: SolveKind,
    start: Instant,
    res: &Result<T, PlanError>,
) -> SolveRecord {
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    SolveRecord {
        time,
        kind,
        ok: res.is_ok(),
        error: res.as_ref().err().map(|e| e.to_string()),
        infeasible: res.as_ref().err().is_some_and(|e| e.is_infeasible()),
        iterations: res.as_ref().map(|s| s.iterations()).unwrap_or(0),
        wall_ms,
        continuity: res.as_ref().ok().map(|s| s.continuity()),
        zmp_margin: res.as_ref().ok().and_then(|s| s.zmp_margin()),
    }
}
