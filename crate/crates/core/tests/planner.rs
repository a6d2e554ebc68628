mod common;

use approx::assert_abs_diff_eq;
use common::{grid_minimum, richardson_gradient, rng};
use rand::Rng;
use swerve::mpc::{
    cost_gradient, plan, safety_barrier, tied_two_step_problem, total_cost, BarrierMode, HorizonInputs, MpcPlanner,
    PlanOptions,
};
use swerve::solver::Budget;
use swerve::{CostWeights, KinematicState, Obstacle, Scenario};

fn random_case(r: &mut impl Rng) -> (KinematicState, Scenario, HorizonInputs) {
    let weights = CostWeights::normalized(r.gen(), r.gen(), r.gen(), r.gen()).unwrap().0;
    let scenario = Scenario {
        obstacle: Obstacle::new(r.gen_range(15.0..40.0), r.gen_range(0.5..3.0)).unwrap(),
        v_des: r.gen_range(3.0..8.0),
        weights,
        horizon: 4,
        ..Scenario::default()
    };
    let s0 = KinematicState {
        x: r.gen_range(0.0..10.0),
        y: r.gen_range(0.0..1.0),
        v_x: r.gen_range(3.0..8.0),
        v_y: r.gen_range(-0.5..0.5),
    };
    let values = (0..2 * scenario.horizon).map(|_| r.gen_range(-0.9..0.9)).collect();
    (s0, scenario, HorizonInputs::from_flat(values).unwrap())
}

#[test]
fn gradient_matches_richardson_oracle() {
    let mut r = rng(7);
    for _ in 0..100 {
        let (s0, scenario, inputs) = random_case(&mut r);
        let mode = BarrierMode::Repaired;
        let f = |x: &[f64]| total_cost(&s0, &HorizonInputs::from_flat(x.to_vec()).unwrap(), &scenario, mode);
        let oracle = richardson_gradient(&f, inputs.as_slice(), 1e-4);
        let got = cost_gradient(&s0, &inputs, &scenario, mode);
        let scale = oracle.iter().map(|g| g.abs()).fold(0.0, f64::max).max(1e-8);
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() <= 1e-4 * scale, "{got:?} vs {oracle:?}");
        }
    }
}

#[test]
fn two_step_plan_matches_grid_search() {
    for weights in [
        CostWeights::uniform(),
        CostWeights::new(0.5, 0.25, 0.05, 0.2).unwrap(),
        CostWeights::new(0.1, 0.3, 0.5, 0.1).unwrap(),
    ] {
        let (s0, scenario, options) = tied_two_step_problem(weights).unwrap();
        let cost = |a: f64, b: f64| {
            let inputs = HorizonInputs::from_pairs(&[(a, b), (a, b)]).unwrap();
            total_cost(&s0, &inputs, &scenario, options.mode)
        };
        let (best, _, _) = grid_minimum(&cost, 401);
        let sol = plan(&s0, &scenario, None, &options).unwrap();
        assert!(sol.cost <= best + 0.01 * best.abs(), "plan {} vs grid {best}", sol.cost);
    }
}

#[test]
fn plan_never_worse_than_guess_and_within_budget() {
    let mut r = rng(11);
    for _ in 0..40 {
        let (s0, scenario, guess) = random_case(&mut r);
        let options = PlanOptions::default();
        let start = total_cost(&s0, &guess, &scenario, options.mode);
        let sol = plan(&s0, &scenario, Some(&guess), &options).unwrap();
        assert!(sol.cost <= start);
        assert_abs_diff_eq!(sol.initial_cost, start, epsilon = 1e-12);
        assert!(sol.evaluations <= options.budget.max_evaluations);
        assert!(sol.iterations <= options.budget.max_iterations);
        assert!(sol.inputs.as_slice().iter().all(|u| u.abs() <= 1.0));
    }
}

#[test]
fn scaling_the_weights_keeps_the_argmin() {
    let mut r = rng(3);
    for _ in 0..10 {
        let (s0, scenario, _) = random_case(&mut r);
        let scaled = Scenario {
            weights: scenario.weights.scaled(3.5),
            ..scenario.clone()
        };
        let options = PlanOptions::default();
        let a = plan(&s0, &scenario, None, &options).unwrap();
        let b = plan(&s0, &scaled, None, &options).unwrap();
        for (x, y) in a.inputs.as_slice().iter().zip(b.inputs.as_slice()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-6);
        }
    }
}

#[test]
fn receding_horizon_does_not_lose_ground() {
    let mut r = rng(5);
    for _ in 0..20 {
        let (s0, scenario, _) = random_case(&mut r);
        let options = PlanOptions::default();
        let mut planner = MpcPlanner::new(scenario.clone(), options);
        let first = planner.solve(&s0).unwrap();
        let next = first.predicted_states[0];
        let shifted = first.inputs.shifted();
        let guess_cost = total_cost(&next, &shifted, &scenario, options.mode);
        let second = planner.solve(&next).unwrap();
        assert!(second.cost <= guess_cost);
    }
}

#[test]
fn no_obstacle_in_reach_keeps_cruising() {
    let scenario = Scenario {
        obstacle: Obstacle::new(1e6, 1.0).unwrap(),
        weights: CostWeights::normalized(0.0, 1.0, 1.0, 1.0).unwrap().0,
        v_des: 5.0,
        ..Scenario::default()
    };
    let s0 = KinematicState {
        v_x: 5.0,
        ..KinematicState::default()
    };
    let sol = plan(&s0, &scenario, None, &PlanOptions::default()).unwrap();
    for u in sol.inputs.as_slice() {
        assert!(u.abs() < 1e-2);
    }
}

#[test]
fn barrier_is_bounded_and_increasing() {
    let p = swerve::VehicleParams::default();
    let obstacle = Obstacle::new(30.0, 2.0).unwrap();
    for v in [1.0, 5.0, 9.0] {
        let mut prev = 0.0;
        for k in 0..400 {
            let x = -20.0 + 0.125 * k as f64;
            let y = safety_barrier(x, v, &obstacle, &p);
            assert!(y > 0.0 && y < obstacle.width);
            assert!(y >= prev);
            prev = y;
        }
    }
}

#[test]
fn tight_budget_is_respected() {
    let (s0, scenario, mut options) = tied_two_step_problem(CostWeights::uniform()).unwrap();
    options.budget = Budget {
        max_iterations: 2,
        max_evaluations: 9,
        ..Budget::default()
    };
    let sol = plan(&s0, &scenario, None, &options).unwrap();
    assert!(sol.iterations <= 2);
    assert!(sol.evaluations <= 9);
}
