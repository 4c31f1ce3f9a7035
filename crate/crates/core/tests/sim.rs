mod common;

use hybrid_locomotion::gait::Leg;
use hybrid_locomotion::planner::RobotState;
use hybrid_locomotion::sim::{
    inject, random_pushes, run_episode, Disturbance, DisturbanceTarget, Mode, SimConfig, Simulation,
};
use nalgebra::Vector3;

fn config(duration: f64) -> SimConfig {
    SimConfig {
        duration,
        ..SimConfig::default()
    }
}

#[test]
fn stationary_plans_leave_the_state_unchanged() {
    let p = common::planner("driving", 0.0, 0.0);
    let mut sim = Simulation::new(p, config(1.0), vec![]).unwrap();
    let start = sim.state;
    sim.run();
    let end = sim.state;
    assert!(end.time > 0.99);
    assert!((end.com.position - start.com.position).norm() < 1e-9);
    for i in 0..4 {
        assert!((end.wheels[i].position - start.wheels[i].position).norm() < 1e-9);
    }
}

#[test]
fn driving_covers_the_commanded_distance() {
    let p = common::planner("driving", 0.5, 0.0);
    let log = run_episode(p, config(5.0), vec![]).unwrap();
    let last = log.rows.last().unwrap().state;
    assert!(
        (last.com.position.x - 2.5).abs() < 0.05,
        "{}",
        last.com.position.x
    );
    assert_eq!(log.summary().failed_solves, 0);
}

#[test]
fn one_second_at_one_metre_per_second() {
    let p = common::planner("driving", 1.0, 0.0);
    let log = run_episode(p, config(4.0), vec![]).unwrap();
    let at = |t: f64| {
        log.rows
            .iter()
            .find(|r| (r.state.time - t).abs() < 1e-9)
            .unwrap()
            .state
            .com
            .position
            .x
    };
    let dx = at(3.0) - at(2.0);
    assert!((dx - 1.0).abs() < 0.02, "{dx}");
}

#[test]
fn base_replans_start_from_the_executed_state() {
    let p = common::planner("trot", 0.3, 0.5);
    let mut sim = Simulation::new(p, config(3.0), vec![]).unwrap();
    let mut checked = 0;
    while sim.time() < 3.0 {
        let before = sim.state;
        let t0 = sim.plans.base.t0;
        sim.step();
        if sim.plans.base.t0 != t0 {
            let start = sim.plans.base.com_at(sim.plans.base.t0).unwrap();
            assert!((start.position - before.com.position).norm() < 1e-9);
            assert!((start.velocity - before.com.velocity).norm() < 1e-9);
            checked += 1;
        }
    }
    assert!(checked > 100);
}

#[test]
fn wheel_disturbance_reinitializes_the_next_wheel_plan() {
    let p = common::planner("trot", 0.0, 0.5);
    // RH is in stance at 1.3 s for the trot started at 0.5 s
    let d = Disturbance {
        time: 1.3,
        target: DisturbanceTarget::WheelOffset { leg: Leg::RH },
        magnitude: [0.02, -0.01, 0.0],
    };
    let mut sim = Simulation::new(p, config(2.0), vec![d]).unwrap();
    while sim.time() < 1.3 - 1e-9 {
        sim.step();
    }
    assert!(sim.plans.wheels[Leg::RH.index()].in_contact(1.3));
    let before = sim.state.wheels[Leg::RH.index()].position;
    sim.step();
    let plan = &sim.plans.wheels[Leg::RH.index()];
    assert!((plan.t0 - 1.3).abs() < 1e-9);
    let start = plan.eval_world(plan.t0).unwrap().position;
    let expect = before + Vector3::new(0.02, -0.01, 0.0);
    assert!((start - expect).norm() < 1e-9, "{start} vs {expect}");
}

#[test]
fn inject_only_touches_the_target() {
    let p = common::planner("trot", 0.0, 0.5);
    let s = RobotState::standing(&p.config.robot, &p.plane, &p.reference, 0.0);
    let zero = Disturbance::com_offset(0.0, [0.0; 3]);
    assert_eq!(inject(&s, &zero), s);
    let moved = inject(&s, &Disturbance::com_offset(0.0, [0.05, 0.0, 0.0]));
    assert!((moved.com.position - s.com.position - Vector3::new(0.05, 0.0, 0.0)).norm() < 1e-15);
    assert_eq!(moved.wheels, s.wheels);
    let kick = Disturbance {
        time: 0.0,
        target: DisturbanceTarget::ComVelocityKick,
        magnitude: [0.0, 0.3, 0.0],
    };
    let kicked = inject(&s, &kick);
    assert_eq!(kicked.com.position, s.com.position);
    assert_eq!(kicked.com.velocity.y, 0.3);
    let w = Disturbance {
        time: 0.0,
        target: DisturbanceTarget::WheelOffset { leg: Leg::RF },
        magnitude: [0.0, 0.0, 0.04],
    };
    let lifted = inject(&s, &w);
    for leg in Leg::ALL {
        let same = lifted.wheels[leg.index()] == s.wheels[leg.index()];
        assert_eq!(same, leg != Leg::RF);
    }
    assert_eq!(lifted.com, s.com);
}

#[test]
fn velocity_kick_is_absorbed() {
    let p = common::planner("trot", 0.0, 0.5);
    let kick = Disturbance {
        time: 2.0,
        target: DisturbanceTarget::ComVelocityKick,
        magnitude: [0.2, 0.0, 0.0],
    };
    let log = run_episode(p, config(4.0), vec![kick]).unwrap();
    assert_eq!(log.summary().failed_solves, 0);
    let (_, err) = *log.tracking_errors().last().unwrap();
    assert!(err < 0.01, "{err}");
}

#[test]
fn synchronous_runs_are_identical() {
    let p = common::planner("trot", 0.5, 0.5);
    let pushes = random_pushes(7, 3, 1.0, 2.5, 0.03);
    let a = run_episode(p.clone(), config(3.0), pushes.clone()).unwrap();
    let b = run_episode(p, config(3.0), pushes).unwrap();
    assert_eq!(a.episode_csv(), b.episode_csv());
    assert_eq!(a.rows.len(), 3 * 400 + 1);
}

#[test]
fn log_times_increase() {
    let p = common::planner("pace", 0.3, 0.5);
    let log = run_episode(p, config(2.0), vec![]).unwrap();
    assert!(log
        .rows
        .windows(2)
        .all(|w| w[1].state.time > w[0].state.time));
    assert!(log.solves.windows(2).all(|w| w[1].time >= w[0].time));
}

#[test]
fn free_running_mode_produces_a_log() {
    let p = common::planner("driving", 0.3, 0.0);
    let cfg = SimConfig {
        duration: 0.5,
        mode: Mode::FreeRunning,
        ..SimConfig::default()
    };
    let log = run_episode(p, cfg, vec![]).unwrap();
    assert_eq!(log.rows.len(), 201);
    assert!(log.solves.iter().any(|s| s.ok));
    assert!(log
        .rows
        .windows(2)
        .all(|w| w[1].state.time > w[0].state.time));
}

#[test]
fn rates_must_divide_the_sim_rate() {
    let bad = SimConfig {
        wheel_rate: 30,
        ..SimConfig::default()
    };
    assert!(bad.validate().is_err());
    assert!(SimConfig::default().validate().is_ok());
}
