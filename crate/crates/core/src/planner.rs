//! Builds wheel and base problems from a measured robot state.

use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_to::{
    plan_base, zmp_point, BaseSolution, BaseTask, BaseToConfig, BaseToError, BaseTrajectory,
    WrenchParams,
};
use crate::gait::{build_schedule_with_stance, ContactSchedule, GaitPattern, Leg};
use crate::qp::QpSolver;
use crate::robot::{nominal_with_changes, rotate2, NominalMotion, RobotConfig, TwistChange};
use crate::spline::KinematicState;
use crate::terrain::{wheel_frame, TerrainError, TerrainPlane};
use crate::wheel_to::{
    plan_wheel, WheelPlan, WheelReference, WheelSolution, WheelTask, WheelToConfig, WheelToError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("{leg:?} wheel: {source}")]
    Wheel {
        leg: Leg,
        #[source]
        source: WheelToError,
    },
    #[error("base: {0}")]
    Base(#[from] BaseToError),
    #[error(transparent)]
    Terrain(#[from] TerrainError),
}

impl PlanError {
    /// True when the failure means no feasible plan exists, as opposed to bad input or numerics.
    pub fn is_infeasible(&self) -> bool {
        use crate::qp::QpStatus;
        matches!(
            self,
            PlanError::Wheel {
                source: WheelToError::Solver(QpStatus::Infeasible),
                ..
            } | PlanError::Base(
                BaseToError::Solver(QpStatus::Infeasible) | BaseToError::ZmpViolation { .. }
            )
        )
    }

    /// True when the failure comes from invalid configuration or inputs.
    pub fn is_bad_input(&self) -> bool {
        matches!(
            self,
            PlanError::Wheel {
                source: WheelToError::Config(_) | WheelToError::Input(_),
                ..
            } | PlanError::Base(BaseToError::Config(_) | BaseToError::Input(_))
                | PlanError::Terrain(_)
        )
    }
}

/// Measured state of the robot, world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub time: f64,
    pub com: KinematicState,
    /// Yaw, pitch, roll and their derivatives.
    pub angles: KinematicState,
    pub wheels: [KinematicState; 4],
}

impl RobotState {
    /// At rest on the plane in the default stance of `nominal`.
    pub fn standing(
        robot: &RobotConfig,
        plane: &TerrainPlane,
        nominal: &NominalMotion,
        time: f64,
    ) -> Self {
        let xy = nominal.position;
        let ground = Vector3::new(xy.x, xy.y, plane.height_at(xy.x, xy.y));
        let com = ground + plane.normal * robot.com_height;
        let (pitch, roll) = plane.pitch_roll(nominal.yaw);
        Self {
            time,
            com: KinematicState::at_rest(com),
            angles: KinematicState::at_rest(Vector3::new(nominal.yaw, pitch, roll)),
            wheels: Leg::ALL
                .map(|leg| KinematicState::at_rest(nominal.wheel_default(robot, leg, 0.0, plane))),
        }
    }

    pub fn yaw(&self) -> f64 {
        self.angles.position[0]
    }
}

/// Everything fixed for an episode: robot, gait, terrain, tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct PlannerConfig {
    pub robot: RobotConfig,
    pub wheel: WheelToConfig,
    pub base: BaseToConfig,
}

#[derive(Debug, Clone)]
pub struct Planner {
    pub config: PlannerConfig,
    pub gait: GaitPattern,
    pub plane: TerrainPlane,
    /// Reference motion at `t = 0`.
    pub reference: NominalMotion,
    /// Later reference twists, sorted by time.
    pub twist_changes: Vec<TwistChange>,
    /// Time of the first stride; all wheels stay in contact before it.
    pub gait_start: f64,
}

impl Planner {
    pub fn horizon(&self) -> f64 {
        self.gait.stride_duration
    }

    pub fn nominal_at(&self, t: f64) -> NominalMotion {
        nominal_with_changes(&self.reference, &self.twist_changes, t)
    }

    pub fn schedule_at(&self, t0: f64) -> ContactSchedule {
        build_schedule_with_stance(&self.gait, t0, self.gait_start)
    }

    /// Wheel reference quantities for `leg` at the measured state.
    pub fn wheel_reference(&self, state: &RobotState, leg: Leg) -> WheelReference {
        let robot = &self.config.robot;
        let nominal = self.nominal_at(state.time);
        let yaw = state.yaw();
        let yaw_rate = state.angles.velocity[0];
        let offset = robot.leg_offset(leg);
        let r_bw = rotate2(
            -yaw,
            &(state.wheels[leg.index()].position.xy() - state.com.position.xy()),
        );
        let w = nominal.omega_ref;
        let v = nominal.v_ref;
        let v_com = rotate2(-yaw, &state.com.velocity.xy());
        let v_bh_ref = Vector2::new(v.x - w * offset.y, v.y + w * offset.x);
        let v_bh = Vector2::new(v_com.x - yaw_rate * offset.y, v_com.y + yaw_rate * offset.x);
        WheelReference {
            v_ref: Vector3::new(v.x, v.y, 0.0),
            omega_ref: w,
            v_bh_ref: Vector3::new(v_bh_ref.x, v_bh_ref.y, 0.0),
            v_bh: Vector3::new(v_bh.x, v_bh.y, 0.0),
            h: self.plane.signed_distance(&state.com.position).max(1e-3),
            g: robot.gravity,
            r_bw_xy: r_bw,
        }
    }

    pub fn wheel_task<'a>(
        &self,
        state: &RobotState,
        leg: Leg,
        schedule: &'a ContactSchedule,
        previous: Option<&'a WheelPlan>,
    ) -> Result<WheelTask<'a>, PlanError> {
        let t0 = state.time;
        let h = self.horizon();
        let n = self.config.wheel.samples;
        let nominal = self.nominal_at(t0);
        let yaw = state.yaw();
        let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
        let init = state.wheels[leg.index()];
        let frame = wheel_frame(&self.plane, &init.position, &heading)?;
        let defaults = (0..=n)
            .map(|k| {
                nominal.wheel_default(
                    &self.config.robot,
                    leg,
                    k as f64 * h / n as f64,
                    &self.plane,
                )
            })
            .collect();
        Ok(WheelTask {
            leg,
            t0,
            horizon: h,
            schedule: schedule.leg(leg),
            frame,
            init,
            defaults,
            reference: self.wheel_reference(state, leg),
            previous,
        })
    }

    pub fn plan_wheel(
        &self,
        state: &RobotState,
        leg: Leg,
        previous: Option<&WheelPlan>,
        solver: &mut QpSolver,
    ) -> Result<WheelSolution, PlanError> {
        let schedule = self.schedule_at(state.time);
        let task = self.wheel_task(state, leg, &schedule, previous)?;
        plan_wheel(&task, &self.config.wheel, solver)
            .map_err(|source| PlanError::Wheel { leg, source })
    }

    pub fn plan_base(
        &self,
        state: &RobotState,
        wheels: [&WheelPlan; 4],
        previous: Option<&BaseTrajectory>,
        solver: &mut QpSolver,
    ) -> Result<BaseSolution, PlanError> {
        let schedule = self.schedule_at(state.time);
        let task = BaseTask {
            t0: state.time,
            horizon: self.horizon(),
            plane: self.plane,
            com_init: state.com,
            angles_init: state.angles,
            nominal: self.nominal_at(state.time),
            schedule: &schedule,
            wheels,
            previous,
            robot: &self.config.robot,
        };
        Ok(plan_base(&task, &self.config.base, solver)?)
    }
}

/// Wheel and base plans computed once from a single state.
#[derive(Debug, Clone)]
pub struct FullPlan {
    pub wheels: [WheelSolution; 4],
    pub base: BaseSolution,
}

impl Planner {
    /// Plans all four wheels and then the base, without previous solutions.
    pub fn plan_all(
        &self,
        state: &RobotState,
        solver: &mut QpSolver,
    ) -> Result<FullPlan, PlanError> {
        let mut wheels = Vec::with_capacity(4);
        for leg in Leg::ALL {
            wheels.push(self.plan_wheel(state, leg, None, solver)?);
        }
        let wheels: [WheelSolution; 4] = wheels.try_into().expect("four legs");
        let base = self.plan_base(
            state,
            [
                &wheels[0].plan,
                &wheels[1].plan,
                &wheels[2].plan,
                &wheels[3].plan,
            ],
            None,
            solver,
        )?;
        Ok(FullPlan { wheels, base })
    }
}

/// Most edges a support region can have: a quadrilateral hull or a capped slab.
pub const MAX_EDGES: usize = 4;

impl FullPlan {
    /// One row per base sample: wheel and COM positions, angles, ZMP and edge margins.
    /// Margins and ZMP are empty during flight.
    pub fn csv(&self, robot: &RobotConfig, plane: &TerrainPlane) -> String {
        let mut s = String::from("t");
        for leg in Leg::ALL {
            let n = leg.name();
            write!(s, ",{n}_x,{n}_y,{n}_z").unwrap();
        }
        s.push_str(",com_x,com_y,com_z,yaw,pitch,roll,zmp_x,zmp_y");
        for i in 0..MAX_EDGES {
            write!(s, ",margin_{i}").unwrap();
        }
        s.push('\n');
        let w = WrenchParams::from_robot(robot);
        let t0 = self.base.plan.t0;
        for sample in &self.base.samples {
            let t = t0 + sample.t;
            write!(s, "{t:.6}").unwrap();
            for sol in &self.wheels {
                let p = sol.plan.eval_world_clamped(t).position;
                write!(s, ",{:.9},{:.9},{:.9}", p.x, p.y, p.z).unwrap();
            }
            let com = self.base.plan.com_clamped(t);
            let ang = self.base.plan.angles_clamped(t).position;
            let c = com.position;
            write!(
                s,
                ",{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}",
                c.x, c.y, c.z, ang[0], ang[1], ang[2]
            )
            .unwrap();
            let zmp = zmp_point(&com.position, &com.acceleration, &w, plane).ok();
            match zmp.filter(|_| !sample.support.edges.is_empty()) {
                Some(z) => {
                    write!(s, ",{:.9},{:.9}", z.x, z.y).unwrap();
                    for i in 0..MAX_EDGES {
                        match sample.support.edges.get(i) {
                            Some(e) => write!(s, ",{:.9}", e.eval(&z.xy())).unwrap(),
                            None => s.push(','),
                        }
                    }
                }
                None => s.push_str(&",".repeat(2 + MAX_EDGES)),
            }
            s.push('\n');
        }
        s
    }
}
