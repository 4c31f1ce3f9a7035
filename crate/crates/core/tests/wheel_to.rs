mod common;

use hybrid_locomotion::gait::Leg;
use hybrid_locomotion::planner::{Planner, RobotState};
use hybrid_locomotion::qp::QpSolver;
use hybrid_locomotion::spline::Segment;
use hybrid_locomotion::wheel_to::{
    assemble, plan_wheel, shift_previous, WheelPlan, WheelSolution, WheelToConfig, WheelToError,
};

fn standing(p: &Planner) -> RobotState {
    RobotState::standing(&p.config.robot, &p.plane, &p.reference, 0.0)
}

fn solve(
    p: &Planner,
    state: &RobotState,
    leg: Leg,
    previous: Option<&WheelPlan>,
    cfg: &WheelToConfig,
) -> WheelSolution {
    let schedule = p.schedule_at(state.time);
    let task = p.wheel_task(state, leg, &schedule, previous).unwrap();
    plan_wheel(&task, cfg, &mut QpSolver::new()).unwrap()
}

fn sample_times(plan: &WheelPlan, n: usize) -> impl Iterator<Item = f64> + '_ {
    let h = plan.sequence.horizon();
    (0..=n).map(move |k| plan.t0 + h * k as f64 / n as f64)
}

#[test]
fn stationary_driving_stays_at_rest() {
    let p = common::planner("driving", 0.0, 0.0);
    let state = standing(&p);
    for leg in Leg::ALL {
        let sol = solve(&p, &state, leg, None, &p.config.wheel);
        for t in sample_times(&sol.plan, 40) {
            let s = sol.plan.eval_world(t).unwrap();
            assert!(
                s.velocity.norm() < 1e-6,
                "{leg:?} moving at {t}: {}",
                s.velocity
            );
            assert!((s.position - state.wheels[leg.index()].position).norm() < 1e-6);
        }
        for seg in sol.plan.sequence.segments() {
            let Segment::Contact(c) = seg else {
                panic!("driving plans only contact")
            };
            assert!(c.alpha.iter().all(|a| a.abs() < 1e-6), "{:?}", c.alpha);
        }
    }
}

#[test]
fn reference_velocity_dominates_initial_rolling_speed() {
    let p = common::planner("driving", 1.0, 0.0);
    let cfg = WheelToConfig {
        w_ref: 1e6,
        ..p.config.wheel.clone()
    };
    let sol = solve(&p, &standing(&p), Leg::LF, None, &cfg);
    let v0 = sol.plan.eval_world(0.0).unwrap().velocity;
    assert!((v0.x - 1.0).abs() < 1e-3, "{v0}");
}

#[test]
fn swing_height_reached_when_weight_dominates() {
    let p = common::planner("trot", 0.0, 0.2);
    let cfg = WheelToConfig {
        w_sh: 1e7,
        ..p.config.wheel.clone()
    };
    let state = standing(&p);
    let schedule = p.schedule_at(0.0);
    let sw = schedule.leg(Leg::LF).swings[0];
    let sol = solve(&p, &state, Leg::LF, None, &cfg);
    let z = sol.plan.eval_world(sw.t_sh).unwrap().position.z;
    assert!((z - cfg.z_sh).abs() < 1e-3, "apex {z}");
    // touchdown lands on the plane
    let td = sol.plan.eval_world(sw.t_td).unwrap().position.z;
    assert!(td.abs() < 1e-9);
}

#[test]
fn swing_height_does_not_move_the_foothold() {
    let p = common::planner("trot", 0.5, 0.2);
    let state = standing(&p);
    let sw = p.schedule_at(0.0).leg(Leg::RF).swings[0];
    let low = solve(&p, &state, Leg::RF, None, &p.config.wheel);
    let cfg = WheelToConfig {
        z_sh: 0.18,
        ..p.config.wheel.clone()
    };
    let high = solve(&p, &state, Leg::RF, None, &cfg);
    let a = low.plan.eval_world(sw.t_td).unwrap().position;
    let b = high.plan.eval_world(sw.t_td).unwrap().position;
    assert!((a.xy() - b.xy()).norm() < 1e-8, "{a} vs {b}");
    let apex = |s: &WheelSolution| s.plan.eval_world(sw.t_sh).unwrap().position.z;
    assert!(apex(&high) > apex(&low) + 0.01);
}

#[test]
fn kinematic_limits_hold_under_a_fast_reference() {
    let p = common::planner("trot", 3.0, 0.2);
    let state = standing(&p);
    let n = p.config.wheel.samples;
    let h = p.horizon();
    let mut binding = 0;
    for leg in Leg::ALL {
        let sol = solve(&p, &state, leg, None, &p.config.wheel);
        assert!(sol.certificate.kinematic_violation < 1e-6);
        binding += sol.plan.active_keys.len();
        for k in 0..=n {
            let dt = h * k as f64 / n as f64;
            let def = p
                .nominal_at(0.0)
                .wheel_default(&p.config.robot, leg, dt, &p.plane);
            let r = sol.plan.eval_world(dt).unwrap().position;
            assert!(
                (r.x - def.x).abs() <= p.config.wheel.x_kin + 1e-6,
                "{leg:?} sample {k}"
            );
            assert!((r.y - def.y).abs() <= p.config.wheel.y_kin + 1e-6);
        }
    }
    assert!(binding > 0, "reference too slow to reach the limits");
}

#[test]
fn certificates_for_every_gait() {
    for gait in ["driving", "walk", "pace", "trot", "running_trot"] {
        let p = common::planner(gait, 0.5, 0.1);
        let state = standing(&p);
        for leg in Leg::ALL {
            let c = solve(&p, &state, leg, None, &p.config.wheel).certificate;
            assert!(c.passes(1e-6), "{gait} {leg:?}: {c:?}");
        }
    }
}

#[test]
fn resolving_with_own_solution_is_a_fixed_point() {
    let p = common::planner("trot", 0.5, 0.2);
    let state = standing(&p);
    for leg in Leg::ALL {
        let first = solve(&p, &state, leg, None, &p.config.wheel);
        let second = solve(&p, &state, leg, Some(&first.plan), &p.config.wheel);
        for t in sample_times(&first.plan, 40) {
            let a = first.plan.eval_world(t).unwrap().position;
            let b = second.plan.eval_world(t).unwrap().position;
            assert!((a - b).norm() < 1e-6, "{leg:?} at {t}: {a} vs {b}");
        }
    }
}

#[test]
fn replanning_after_ten_ms_stays_on_the_previous_plan() {
    let p = common::planner("trot", 0.0, 0.2);
    let state = standing(&p);
    for leg in Leg::ALL {
        let first = solve(&p, &state, leg, None, &p.config.wheel);
        let mut next = state;
        next.time = 0.01;
        next.wheels[leg.index()] = first.plan.eval_world(0.01).unwrap();
        let second = solve(&p, &next, leg, Some(&first.plan), &p.config.wheel);
        for t in sample_times(&second.plan, 40).filter(|t| *t <= first.plan.end()) {
            let d = (first.plan.eval_world(t).unwrap().position
                - second.plan.eval_world(t).unwrap().position)
                .norm();
            assert!(d < 1e-3, "{leg:?} at {t}: {d}");
        }
    }
}

#[test]
fn regularized_hessian_is_positive_definite() {
    for gait in ["driving", "trot", "running_trot"] {
        let p = common::planner(gait, 0.5, 0.2);
        let state = standing(&p);
        let schedule = p.schedule_at(0.0);
        let task = p.wheel_task(&state, Leg::LH, &schedule, None).unwrap();
        let qp = assemble(&task, &p.config.wheel).unwrap();
        let min = qp.problem.q.clone().symmetric_eigen().eigenvalues.min();
        assert!(min >= p.config.wheel.rho / 2.0, "{gait}: {min:e}");
    }
}

#[test]
fn shift_previous_samples_and_clamps() {
    let p = common::planner("driving", 0.5, 0.0);
    let plan = solve(&p, &standing(&p), Leg::RF, None, &p.config.wheel).plan;
    let times = [0.0, 0.3, 0.9, 5.0];
    let same = shift_previous(&plan, plan.t0, &times);
    for (s, t) in same.iter().zip(times) {
        let expect = plan.eval_world_clamped(t);
        assert_eq!(s.position, expect.position);
    }
    let dt = p.horizon() / 40.0;
    let shifted = shift_previous(&plan, plan.t0 + dt, &[0.0]);
    assert!((shifted[0].position - plan.eval_world(dt).unwrap().position).norm() < 1e-15);
    let end = plan.eval_world(plan.end()).unwrap();
    assert!((same[3].position - end.position).norm() < 1e-15);
}

#[test]
fn wrong_number_of_defaults_is_rejected() {
    let p = common::planner("trot", 0.0, 0.2);
    let state = standing(&p);
    let schedule = p.schedule_at(0.0);
    let mut task = p.wheel_task(&state, Leg::LF, &schedule, None).unwrap();
    task.defaults.pop();
    assert!(matches!(
        assemble(&task, &p.config.wheel),
        Err(WheelToError::Input(_))
    ));
    let bad = WheelToConfig {
        x_kin: 0.0,
        ..p.config.wheel.clone()
    };
    let task = p.wheel_task(&state, Leg::LF, &schedule, None).unwrap();
    assert!(matches!(
        assemble(&task, &bad),
        Err(WheelToError::Config(_))
    ));
}
