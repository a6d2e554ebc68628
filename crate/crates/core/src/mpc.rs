//! Receding-horizon planner on the kinematic point-mass model.
//!
//! Decision variables are normalized accelerations in `[-1, 1]`, scaled by
//! the friction limit `mu * g`. The state trajectory lives inside the cost,
//! so the problem is unconstrained apart from the input box.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::solver::{self, Budget, SolveStatus};
use crate::types::{CostWeights, KinematicInput, KinematicState, Obstacle, Scenario, VehicleParams, LOW_SPEED_FLOOR};

/// Objective value substituted for states outside the log-barrier domain.
pub const BARRIER_PENALTY: f64 = 1e6;

/// Width of the rounded corner in the absolute-value cost terms.
pub const ABS_SMOOTHING: f64 = 1e-2;

/// `sqrt(z^2 + e^2) - e`: within `e` of `|z|`, differentiable at zero.
pub fn smooth_abs(z: f64) -> f64 {
    z.hypot(ABS_SMOOTHING) - ABS_SMOOTHING
}

/// Exponent magnitude fed to `exp` in the sigmoid.
const SIGMOID_CLAMP: f64 = 50.0;

/// Which reading of the log barrier to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BarrierMode {
    /// `-ln(y_safe - y)`: finite only below the sigmoid.
    Literal,
    /// `-ln(min(y - y_safe + w, w))`: finite above `y_safe - w`, rewards
    /// moving toward the dodge side until `y` reaches `y_safe`.
    #[default]
    Repaired,
}

impl fmt::Display for BarrierMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BarrierMode::Literal => "literal",
            BarrierMode::Repaired => "repaired",
        })
    }
}

impl FromStr for BarrierMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "literal" => Ok(BarrierMode::Literal),
            "repaired" => Ok(BarrierMode::Repaired),
            other => Err(Error::invalid("barrier", format!("expected literal|repaired, got `{other}`"))),
        }
    }
}

/// Sigmoid width factor `1 / sqrt(8.8 mu g)`.
pub fn barrier_epsilon(params: &VehicleParams) -> f64 {
    1.0 / (8.8 * params.friction * params.gravity).sqrt()
}

/// Lateral clearance target: rises from 0 to `w` and crosses `w / 2` at
/// `4 v_X` metres before the obstacle.
pub fn safety_barrier(x_ego: f64, v_big_x: f64, obstacle: &Obstacle, params: &VehicleParams) -> f64 {
    let w = obstacle.width;
    let width = barrier_epsilon(params) * (w * v_big_x * v_big_x).sqrt();
    let exponent = ((obstacle.x - x_ego - 4.0 * v_big_x) / width).clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    w / (1.0 + exponent.exp())
}

/// Normalized input sequence `[u_x(0), u_y(0), u_x(1), u_y(1), ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonInputs {
    values: Vec<f64>,
}

impl HorizonInputs {
    pub fn zeros(steps: usize) -> Self {
        Self {
            values: vec![0.0; 2 * steps],
        }
    }

    /// Constant normalized input repeated over `steps`.
    pub fn constant(steps: usize, u_x: f64, u_y: f64) -> Result<Self> {
        Self::from_pairs(&vec![(u_x, u_y); steps])
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::from_flat(pairs.iter().flat_map(|&(a, b)| [a, b]).collect())
    }

    pub fn from_flat(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() % 2 != 0 {
            return Err(Error::Dimension(format!(
                "horizon inputs need a positive even length, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::invalid("inputs", format!("normalized input {v} outside [-1, 1]")));
        }
        Ok(Self { values })
    }

    pub fn steps(&self) -> usize {
        self.values.len() / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Normalized `(u_x, u_y)` at step `i`.
    pub fn get(&self, i: usize) -> (f64, f64) {
        (self.values[2 * i], self.values[2 * i + 1])
    }

    /// Physical acceleration at step `i`.
    pub fn physical(&self, i: usize, params: &VehicleParams) -> KinematicInput {
        let (u_x, u_y) = self.get(i);
        let scale = params.max_acceleration();
        KinematicInput::new(u_x * scale, u_y * scale)
    }

    /// Drops the first step and pads with a zero input.
    pub fn shifted(&self) -> Self {
        let mut values = self.values[2..].to_vec();
        values.extend_from_slice(&[0.0, 0.0]);
        Self { values }
    }

    /// `(1 - lambda) * self + lambda * (u_x, u_y)` at every step, clamped to
    /// the box.
    pub fn blended_toward(&self, u_x: f64, u_y: f64, lambda: f64) -> Self {
        let target = [u_x.clamp(-1.0, 1.0), u_y.clamp(-1.0, 1.0)];
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| (1.0 - lambda) * v + lambda * target[i % 2])
            .collect();
        Self { values }
    }

    /// Same sequence resized to `steps`, truncating or zero padding.
    pub fn resized(&self, steps: usize) -> Self {
        let mut values = self.values.clone();
        values.resize(2 * steps, 0.0);
        Self { values }
    }
}

/// Predicted states `s(k+1) .. s(k+N)` under `inputs` with step `t_s`.
pub fn rollout(s0: &KinematicState, inputs: &HorizonInputs, params: &VehicleParams) -> Vec<KinematicState> {
    let mut s = *s0;
    (0..inputs.steps())
        .map(|i| {
            s = s.step(inputs.physical(i, params), params.sample_time);
            s
        })
        .collect()
}

/// The four stage costs at one predicted step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageCosts {
    pub safety: f64,
    pub stability: f64,
    pub speed: f64,
    pub steering: f64,
    /// The barrier argument was nonpositive and `safety` holds the penalty.
    pub barrier_violated: bool,
}

impl StageCosts {
    pub fn weighted(&self, scenario: &Scenario) -> f64 {
        let w = &scenario.weights;
        w.safety * self.safety + w.stability * self.stability + w.speed * self.speed + w.steering * self.steering
    }

    fn accumulate(&mut self, other: &StageCosts) {
        self.safety += other.safety;
        self.stability += other.stability;
        self.speed += other.speed;
        self.steering += other.steering;
        self.barrier_violated |= other.barrier_violated;
    }
}

/// Stage costs for predicted state `s` reached under physical input `u`.
///
/// The steering term is measured in units of the friction limit, the same
/// scale as the decision variables. Absolute values are rounded by
/// [`smooth_abs`] so the finite-difference gradient stays meaningful.
pub fn stage_cost(s: &KinematicState, u: KinematicInput, scenario: &Scenario, mode: BarrierMode) -> StageCosts {
    let params = &scenario.vehicle;
    let v_big_x = s.v_x.max(LOW_SPEED_FLOOR);
    let obstacle = &scenario.obstacle;
    let y_safe = safety_barrier(s.x, v_big_x, obstacle, params);
    let lateral = scenario.dodge.sign() * s.y;
    let argument = match mode {
        BarrierMode::Literal => y_safe - lateral,
        // Clearance beyond the sigmoid earns nothing.
        BarrierMode::Repaired => (lateral - y_safe + obstacle.width).min(obstacle.width),
    };
    let (safety, barrier_violated) = if argument > 0.0 {
        (-argument.ln(), false)
    } else {
        (BARRIER_PENALTY + argument * argument, true)
    };
    StageCosts {
        safety,
        stability: smooth_abs(s.v_y / v_big_x),
        speed: smooth_abs(s.v_x - scenario.v_des),
        steering: smooth_abs(u.a_y / params.max_acceleration()),
        barrier_violated,
    }
}

/// Per-step stage costs along the rollout.
pub fn stage_costs(s0: &KinematicState, inputs: &HorizonInputs, scenario: &Scenario, mode: BarrierMode) -> Vec<StageCosts> {
    let params = &scenario.vehicle;
    rollout(s0, inputs, params)
        .iter()
        .enumerate()
        .map(|(i, s)| stage_cost(s, inputs.physical(i, params), scenario, mode))
        .collect()
}

/// Weighted sum of the stage costs over the horizon. Always finite.
pub fn total_cost(s0: &KinematicState, inputs: &HorizonInputs, scenario: &Scenario, mode: BarrierMode) -> f64 {
    let params = &scenario.vehicle;
    let dt = params.sample_time;
    let mut s = *s0;
    let mut total = 0.0;
    for i in 0..inputs.steps() {
        let u = inputs.physical(i, params);
        s = s.step(u, dt);
        total += stage_cost(&s, u, scenario, mode).weighted(scenario);
    }
    total
}

/// Central finite-difference gradient of [`total_cost`] with respect to the
/// normalized inputs.
pub fn cost_gradient(s0: &KinematicState, inputs: &HorizonInputs, scenario: &Scenario, mode: BarrierMode) -> Vec<f64> {
    let mut f = |x: &[f64]| total_cost(s0, &HorizonInputs { values: x.to_vec() }, scenario, mode);
    let mut grad = vec![0.0; inputs.values.len()];
    solver::central_gradient(&mut f, &inputs.values, &mut grad);
    grad
}

/// How the decision vector maps onto the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputShape {
    /// One input pair per step.
    #[default]
    Free,
    /// A single pair repeated over the whole horizon.
    Tied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerSolution {
    pub inputs: HorizonInputs,
    pub predicted_states: Vec<KinematicState>,
    pub cost: f64,
    pub initial_cost: f64,
    /// Per-step costs, unweighted.
    pub stage_costs: Vec<StageCosts>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub evaluations: usize,
    /// Wall-clock duration of the solve (s). Diagnostics only.
    pub solve_walltime: f64,
}

impl PlannerSolution {
    /// Normalized first-step input.
    pub fn first(&self) -> (f64, f64) {
        self.inputs.get(0)
    }

    /// Physical first-step acceleration.
    pub fn first_accel(&self, params: &VehicleParams) -> KinematicInput {
        self.inputs.physical(0, params)
    }

    /// Sum of the unweighted stage costs over the horizon.
    pub fn summed_costs(&self) -> StageCosts {
        let mut sum = StageCosts::default();
        for c in &self.stage_costs {
            sum.accumulate(c);
        }
        sum
    }
}

/// Options for one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanOptions {
    pub budget: Budget,
    pub mode: BarrierMode,
    pub shape: InputShape,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            budget: Budget::default(),
            mode: BarrierMode::default(),
            shape: InputShape::Free,
        }
    }
}

fn expand(decision: &[f64], steps: usize, shape: InputShape) -> HorizonInputs {
    match shape {
        InputShape::Free => HorizonInputs {
            values: decision.to_vec(),
        },
        InputShape::Tied => HorizonInputs {
            values: (0..steps).flat_map(|_| [decision[0], decision[1]]).collect(),
        },
    }
}

/// Budgeted solve over the horizon of `scenario.horizon` steps.
///
/// Without a guess the solver starts from zero inputs. For the tied shape
/// the first pair of the guess seeds the single decision pair.
pub fn plan(
    s0: &KinematicState,
    scenario: &Scenario,
    initial_guess: Option<&HorizonInputs>,
    options: &PlanOptions,
) -> Result<PlannerSolution> {
    let steps = scenario.horizon;
    let guess = initial_guess
        .map(|g| g.resized(steps))
        .unwrap_or_else(|| HorizonInputs::zeros(steps));
    let x0: Vec<f64> = match options.shape {
        InputShape::Free => guess.values.clone(),
        InputShape::Tied => guess.values[..2].to_vec(),
    };
    let n = x0.len();
    let lower = vec![-1.0; n];
    let upper = vec![1.0; n];
    let mode = options.mode;
    let shape = options.shape;

    let started = Instant::now();
    let mut objective = |x: &[f64]| total_cost(s0, &expand(x, steps, shape), scenario, mode);
    let result = solver::minimize_box(&mut objective, None, &x0, &lower, &upper, &options.budget)?;
    let solve_walltime = started.elapsed().as_secs_f64();

    let inputs = expand(&result.x, steps, shape);
    Ok(PlannerSolution {
        predicted_states: rollout(s0, &inputs, &scenario.vehicle),
        stage_costs: stage_costs(s0, &inputs, scenario, mode),
        cost: result.f,
        initial_cost: result.f_initial,
        inputs,
        status: result.status,
        iterations: result.iterations,
        evaluations: result.evaluations,
        solve_walltime,
    })
}

/// Small benchmark problem: two tied steps from the origin at 5 m/s, cruise
/// speed 5 m/s, an obstacle 1 m ahead needing 1 m of lateral clearance.
pub fn tied_two_step_problem(weights: CostWeights) -> Result<(KinematicState, Scenario, PlanOptions)> {
    let scenario = Scenario {
        obstacle: Obstacle::new(1.0, 1.0)?,
        weights,
        v_des: 5.0,
        horizon: 2,
        ..Scenario::default()
    };
    let s0 = KinematicState {
        v_x: 5.0,
        ..KinematicState::default()
    };
    let options = PlanOptions {
        shape: InputShape::Tied,
        ..PlanOptions::default()
    };
    Ok((s0, scenario, options))
}

/// Planner with warm-start memory for one episode.
#[derive(Debug, Clone)]
pub struct MpcPlanner {
    scenario: Scenario,
    options: PlanOptions,
    previous: Option<HorizonInputs>,
}

impl MpcPlanner {
    pub fn new(scenario: Scenario, options: PlanOptions) -> Self {
        Self {
            scenario,
            options,
            previous: None,
        }
    }

    /// Replaces the warm-start memory. The next solve starts from the
    /// shifted `guess`.
    pub fn remember(&mut self, guess: HorizonInputs) {
        self.previous = Some(guess);
    }

    /// Warm-start memory, if any.
    pub fn memory(&self) -> Option<&HorizonInputs> {
        self.previous.as_ref()
    }

    /// Solves from `s0`, warm-started with the shifted previous solution.
    pub fn solve(&mut self, s0: &KinematicState) -> Result<PlannerSolution> {
        let guess = self.previous.as_ref().map(HorizonInputs::shifted);
        let solution = plan(s0, &self.scenario, guess.as_ref(), &self.options)?;
        self.previous = Some(solution.inputs.clone());
        Ok(solution)
    }
}
