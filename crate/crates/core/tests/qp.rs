mod common;

use common::{brute_force_qp, random_feasible_qp};
use hybrid_locomotion::qp::{kkt_report, solve, QpProblem, QpSolver, QpStatus};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn problem_from_seed(seed: u64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let n = rng.gen_range(1..=6);
    let me = rng.gen_range(0..=2.min(n - 1));
    let mi = rng.gen_range(0..=8);
    random_feasible_qp(&mut rng, n, me, mi)
}

#[test]
fn matches_enumeration_oracle() {
    for seed in 0..200 {
        let p = problem_from_seed(seed);
        let oracle = brute_force_qp(&p).expect("constructed problems are feasible");
        let s = solve(&p);
        assert_eq!(s.status, QpStatus::Optimal, "seed {seed}");
        for i in 0..p.num_vars() {
            assert!(
                (s.x[i] - oracle.x[i]).abs() < 1e-6,
                "seed {seed} coord {i}: {} vs {}",
                s.x[i],
                oracle.x[i]
            );
        }
    }
}

#[test]
fn infeasible_box_is_reported() {
    // x <= -1 and x >= 1 in the first coordinate, plus unrelated rows
    let q = DMatrix::identity(3, 3);
    let c = DVector::zeros(3);
    let d = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let f = DVector::from_vec(vec![-1.0, -1.0, 5.0]);
    let p = QpProblem::new(q, c, DMatrix::zeros(0, 3), DVector::zeros(0), d, f).unwrap();
    assert!(brute_force_qp(&p).is_none());
    assert_eq!(solve(&p).status, QpStatus::Infeasible);
}

#[test]
fn unchanged_problem_with_hint_needs_no_iterations() {
    for seed in 0..50 {
        let p = problem_from_seed(seed);
        let cold = solve(&p);
        let mut solver = QpSolver::new();
        let warm = solver.solve_warm(&p, &cold.active_set);
        assert_eq!(warm.status, QpStatus::Optimal);
        assert!(
            warm.iterations <= 1,
            "seed {seed}: {} iterations",
            warm.iterations
        );
        assert!((&warm.x - &cold.x).amax() < 1e-9);
    }
}

#[test]
fn iteration_cap_is_enforced() {
    let p = (0..200)
        .map(problem_from_seed)
        .find(|p| solve(p).iterations >= 2)
        .expect("some problem needs two steps");
    let mut solver = QpSolver::new();
    solver.max_iterations = Some(1);
    assert_eq!(solver.solve(&p).status, QpStatus::MaxIterations);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kkt_conditions_hold(seed in any::<u64>()) {
        let p = problem_from_seed(seed);
        let s = solve(&p);
        prop_assert_eq!(s.status, QpStatus::Optimal);
        let k = kkt_report(&p, &s);
        prop_assert!(k.stationarity < 1e-8, "stationarity {}", k.stationarity);
        prop_assert!(k.equality < 1e-9);
        prop_assert!(k.inequality < 1e-9);
        prop_assert!(k.min_multiplier >= -1e-10);
        prop_assert!(k.complementarity < 1e-8);
    }

    #[test]
    fn warm_start_does_not_change_solution(seed in any::<u64>(), hint_bits in any::<u8>()) {
        let p = problem_from_seed(seed);
        let cold = solve(&p);
        let hint: Vec<usize> = (0..p.num_ineq()).filter(|i| hint_bits & (1 << i) != 0).collect();
        let warm = QpSolver::new().solve_warm(&p, &hint);
        prop_assert_eq!(warm.status, QpStatus::Optimal);
        prop_assert!((&warm.x - &cold.x).amax() < 1e-7);
    }

    #[test]
    fn dual_objective_is_nondecreasing(seed in any::<u64>()) {
        let p = problem_from_seed(seed);
        let mut solver = QpSolver::new();
        solver.enable_trace();
        let s = solver.solve(&p);
        prop_assert_eq!(s.status, QpStatus::Optimal);
        let trace = solver.trace();
        for w in trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
        }
    }
}
