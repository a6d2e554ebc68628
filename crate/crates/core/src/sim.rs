//! Closed-loop episode runner: detection, the multi-rate planner and control
//! loops, sensor latency, clearance metrics and CSV traces.

use std::io::Write;
use std::path::Path;

use crate::arbitration::{blend_refs, blend_weight, fbl_extract, BlendConfig, BlendDecision, BlendReason};
use crate::control::{eps_step, torque_distribution, SpeedController, EPS_GAIN};
use crate::error::{Error, Result};
use crate::mpc::{BarrierMode, HorizonInputs, InputShape, MpcPlanner, PlanOptions, StageCosts};
use crate::msf::{lateral_steering_index, MsfPhase, MsfPlanner, YMaxTable};
use crate::solver::Budget;
use crate::types::{DynamicState, Obstacle, Scenario, LOW_SPEED_FLOOR};
use crate::vehicle::dynamic_step;

/// Column names of [`write_trace`], in order.
pub const TRACE_HEADER: [&str; 19] = [
    "t", "x", "y", "theta", "vx", "vy", "gamma", "delta", "delta_mpc", "delta_ref", "vx_ref", "T_rl", "T_rr",
    "lambda", "J_safe", "J_stable", "J_brake", "J_steer", "status",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub active: bool,
    /// Time to collision (s).
    pub tau: f64,
    /// Lateral steering index.
    pub nu: f64,
    pub t_detect: f64,
}

impl Detection {
    const INACTIVE: Detection = Detection {
        active: false,
        tau: 0.0,
        nu: 0.0,
        t_detect: 0.0,
    };
}

/// Obstacle detector on the observed state. Active once the gap is within
/// `detection_distance` and until the ego passes the obstacle.
pub fn detect(state: &DynamicState, scenario: &Scenario, t: f64, table: &YMaxTable) -> Result<Detection> {
    if !(t >= 0.0) {
        return Err(Error::invalid("t", format!("must be nonnegative, got {t}")));
    }
    let obstacle = &scenario.obstacle;
    let gap = obstacle.x - state.x;
    if gap > scenario.detection_distance || state.x > obstacle.x + obstacle.width {
        return Ok(Detection::INACTIVE);
    }
    let closing = (state.v_x * state.heading.cos()).max(LOW_SPEED_FLOOR);
    let tau = gap.max(0.0) / closing;
    // Past the end of the table the reach has long flattened out.
    let horizon = table.times().last().copied().unwrap_or(tau);
    let nu = if tau > 0.0 {
        lateral_steering_index(obstacle.width, tau.min(horizon), state.v_x, table)?
    } else {
        f64::INFINITY
    };
    Ok(Detection {
        active: true,
        tau,
        nu,
        t_detect: t,
    })
}

/// Switches for one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOptions {
    pub barrier: BarrierMode,
    /// Treat every solve as a timeout, leaving the maximum-steering planner
    /// in charge.
    pub force_plan_failure: bool,
    /// Skip the receding-horizon planner entirely.
    pub mpc_disabled: bool,
    /// Overrides the scenario's sensor latency (s).
    pub latency: Option<f64>,
    pub budget: Budget,
    pub blend: BlendConfig,
    /// Feed the blended reference back as the next initial guess.
    pub seed_with_msf: bool,
}

impl Default for EpisodeOptions {
    fn default() -> Self {
        Self {
            barrier: BarrierMode::Repaired,
            force_plan_failure: false,
            mpc_disabled: false,
            latency: None,
            budget: Budget::default(),
            blend: BlendConfig::default(),
            seed_with_msf: true,
        }
    }
}

/// One control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub state: DynamicState,
    /// Steering the MPC acceleration alone would have asked for.
    pub delta_mpc: f64,
    pub delta_ref: f64,
    pub vx_ref: f64,
    pub torque_rl: f64,
    pub torque_rr: f64,
    pub lambda: f64,
    /// First-step costs of the latest plan.
    pub costs: StageCosts,
    pub status: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub scenario: Scenario,
    pub rows: Vec<TraceRow>,
    /// Detection latched at first activation.
    pub detection: Option<Detection>,
    /// First time the CoG passed the end of the danger zone.
    pub passed_time: Option<f64>,
    pub plan_calls: usize,
    /// Planner ticks that ended with the maximum-steering reference alone.
    pub fallback_ticks: usize,
    /// Reason the episode stopped before `sim_duration`.
    pub aborted: Option<String>,
}

impl EpisodeTrace {
    pub fn peak_steer(&self) -> f64 {
        self.rows.iter().map(|r| r.state.steer.abs()).fold(0.0, f64::max)
    }

    /// Largest excursion past `y = 0` to the side opposite the dodge after
    /// the obstacle is passed.
    pub fn return_overshoot(&self) -> f64 {
        let Some(t_pass) = self.passed_time else {
            return 0.0;
        };
        let sign = self.scenario.dodge.sign();
        self.rows
            .iter()
            .filter(|r| r.t >= t_pass)
            .map(|r| -sign * r.state.y)
            .fold(0.0, f64::max)
    }

    /// Largest `|v_x - v_des|` before detection and after the danger zone is
    /// passed.
    pub fn speed_error_outside_maneuver(&self) -> f64 {
        let start = self.detection.map_or(f64::INFINITY, |d| d.t_detect);
        let end = self.passed_time.unwrap_or(f64::INFINITY);
        self.rows
            .iter()
            .filter(|r| r.t < start || r.t > end)
            .map(|r| (r.state.v_x - self.scenario.v_des).abs())
            .fold(0.0, f64::max)
    }
}

/// The drawn obstacle: `|y| < half_height` over `[x_start, x_end]` for the
/// CoG.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DangerZone {
    pub x_start: f64,
    pub x_end: f64,
    pub half_height: f64,
}

impl DangerZone {
    /// Rectangle of half-height `w` and depth `zone_depth`, widened toward
    /// the ego by half the wheelbase.
    pub fn of(scenario: &Scenario) -> Self {
        let o = scenario.obstacle;
        Self {
            x_start: o.x - 0.5 * scenario.vehicle.wheelbase(),
            x_end: o.x + scenario.zone_depth,
            half_height: o.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearanceReport {
    /// `|y| - half_height` minimized over samples inside the zone's
    /// longitudinal window. Infinite if the window was never reached.
    pub min_lateral_clearance: f64,
    pub collided: bool,
    pub max_speed: f64,
    /// The ego ended within 0.2 m of the original lane centre.
    pub return_settled: bool,
}

pub fn min_clearance(trace: &EpisodeTrace, zone: &DangerZone) -> ClearanceReport {
    let mut min = f64::INFINITY;
    let mut max_speed = 0.0f64;
    for r in &trace.rows {
        let s = &r.state;
        max_speed = max_speed.max(s.v_x.hypot(s.v_y));
        if (zone.x_start..=zone.x_end).contains(&s.x) {
            min = min.min(s.y.abs() - zone.half_height);
        }
    }
    let return_settled = trace.rows.last().is_some_and(|r| r.state.y.abs() < 0.2);
    ClearanceReport {
        min_lateral_clearance: min,
        collided: min < 0.0,
        max_speed,
        return_settled,
    }
}

/// Position history with transport delay and optional fix-rate hold.
struct PositionSensor {
    history: Vec<(f64, f64)>,
    delay_ticks: usize,
    /// Control ticks between position fixes; 1 means every tick.
    fix_ticks: usize,
}

impl PositionSensor {
    fn new(latency: f64, gps_rate: f64, dt: f64) -> Self {
        let fix_ticks = if gps_rate > 0.0 {
            ((1.0 / gps_rate) / dt).round().max(1.0) as usize
        } else {
            1
        };
        Self {
            history: Vec::new(),
            delay_ticks: (latency / dt).round() as usize,
            fix_ticks,
        }
    }

    /// Records the true position at tick `k` (pushed in order) and returns
    /// what the planner sees.
    fn observe(&mut self, state: &DynamicState) -> DynamicState {
        self.history.push((state.x, state.y));
        let k = self.history.len() - 1;
        let delayed = k.saturating_sub(self.delay_ticks);
        let fix = delayed - delayed % self.fix_ticks;
        let (x, y) = self.history[fix];
        DynamicState { x, y, ..*state }
    }
}

struct Pipeline {
    msf: MsfPlanner,
    mpc: MpcPlanner,
}

/// Held outputs of the latest planner tick.
#[derive(Clone, Copy)]
struct PlannerOutput {
    delta_ref: f64,
    vx_ref: f64,
    delta_mpc: f64,
    lambda: f64,
    costs: StageCosts,
    status: &'static str,
}

pub fn run_episode(scenario: &Scenario, options: &EpisodeOptions) -> Result<EpisodeTrace> {
    let table = YMaxTable::default_grid(&scenario.vehicle)?;
    run_episode_with_table(scenario, options, &table)
}

/// As [`run_episode`] with a prebuilt `y_max` table.
pub fn run_episode_with_table(scenario: &Scenario, options: &EpisodeOptions, table: &YMaxTable) -> Result<EpisodeTrace> {
    scenario.validate()?;
    options.budget.validate()?;
    let params = scenario.vehicle;
    let dt = scenario.control_dt;
    let steps = scenario.control_steps();
    let per_plan = scenario.ticks_per_plan();
    let latency = options.latency.unwrap_or(scenario.sensor_latency);
    if !(latency.is_finite() && latency >= 0.0) {
        return Err(Error::invalid("sensor_latency", format!("must be nonnegative, got {latency}")));
    }
    let zone = DangerZone::of(scenario);
    let plan_options = PlanOptions {
        budget: options.budget,
        mode: options.barrier,
        shape: InputShape::Free,
    };

    let mut sensor = PositionSensor::new(latency, scenario.gps_rate, dt);
    let mut speed = SpeedController::design(&params);
    let mut state = DynamicState::cruising(0.0, 0.0, scenario.v0);
    let mut out = PlannerOutput {
        delta_ref: 0.0,
        vx_ref: scenario.v0,
        delta_mpc: 0.0,
        lambda: 0.0,
        costs: StageCosts::default(),
        status: "cruise",
    };
    let mut trace = EpisodeTrace {
        scenario: scenario.clone(),
        rows: Vec::with_capacity(steps + 1),
        detection: None,
        passed_time: None,
        plan_calls: 0,
        fallback_ticks: 0,
        aborted: None,
    };
    let mut pipeline: Option<Pipeline> = None;
    let mut detect_tick = 0;

    for k in 0..=steps {
        let t = k as f64 * dt;
        let observed = sensor.observe(&state);
        if trace.passed_time.is_none() && state.x > zone.x_end {
            trace.passed_time = Some(t);
        }

        if trace.detection.is_none() {
            let d = detect(&observed, scenario, t, table)?;
            if d.active {
                trace.detection = Some(d);
                detect_tick = k;
                pipeline = Some(Pipeline {
                    msf: MsfPlanner::new(
                        params,
                        scenario.obstacle,
                        scenario.zone_depth,
                        scenario.dodge,
                        scenario.v_des,
                        t,
                    ),
                    mpc: MpcPlanner::new(scenario.clone(), plan_options),
                });
            }
        }

        if let (Some(p), Some(d)) = (pipeline.as_mut(), trace.detection) {
            if (k - detect_tick) % per_plan == 0 {
                match planner_tick(p, &observed, t, d, scenario, options) {
                    Ok((next, fallback, planned)) => {
                        out = next;
                        trace.fallback_ticks += usize::from(fallback);
                        trace.plan_calls += usize::from(planned);
                    }
                    Err(e @ Error::LowSpeedDomain { .. }) => {
                        trace.aborted = Some(format!("t = {t:.3} s: {e}"));
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        }

        let r = params.wheel_radius;
        let wheel_torque = speed.step(out.vx_ref / r, state.v_x / r, dt)?;
        let (torque_rl, torque_rr) = torque_distribution(2.0 * wheel_torque, &params);
        let steer = eps_step(out.delta_ref, state.steer, dt, EPS_GAIN, &params);

        trace.rows.push(TraceRow {
            t,
            state,
            delta_mpc: out.delta_mpc,
            delta_ref: out.delta_ref,
            vx_ref: out.vx_ref,
            torque_rl,
            torque_rr,
            lambda: out.lambda,
            costs: out.costs,
            status: out.status,
        });
        if k == steps {
            break;
        }
        // The actuator moves continuously over the tick; its mean angle
        // drives the chassis.
        let mean_steer = 0.5 * (state.steer + steer);
        match dynamic_step(&state, mean_steer, 0.0, (torque_rl + torque_rr) / r, &params, dt) {
            Ok(mut next) => {
                next.steer = steer;
                state = next;
            }
            Err(e) => {
                trace.aborted = Some(format!("t = {t:.3} s: {e}"));
                break;
            }
        }
    }
    Ok(trace)
}

/// One planner tick. Returns the new held outputs, whether the MSF
/// reference was used alone, and whether the MPC was solved.
fn planner_tick(
    p: &mut Pipeline,
    observed: &DynamicState,
    t: f64,
    detection: Detection,
    scenario: &Scenario,
    options: &EpisodeOptions,
) -> Result<(PlannerOutput, bool, bool)> {
    let params = &scenario.vehicle;
    let msf = p.msf.reference(observed, t)?;
    let mut costs = StageCosts::default();
    let mut delta_mpc = observed.steer;
    let mut planned = false;

    let decision = if options.mpc_disabled || msf.phase >= MsfPhase::Return {
        BlendDecision::MSF_ONLY
    } else if options.force_plan_failure {
        BlendDecision {
            lambda: 1.0,
            reason: BlendReason::MpcTimeout,
        }
    } else {
        let scale = params.max_acceleration();
        let (msf_x, msf_y) = (msf.accel.a_x / scale, msf.accel.a_y / scale);
        if p.mpc.memory().is_none() && options.seed_with_msf {
            // First solve after detection: start from the maneuver itself.
            // The memory is shifted before use, so pad one extra step.
            let seed = HorizonInputs::zeros(scenario.horizon + 1).blended_toward(msf_x, msf_y, 1.0);
            p.mpc.remember(seed);
        }
        let solution = p.mpc.solve(&observed.kinematic())?;
        planned = true;
        costs = solution.stage_costs[0];
        delta_mpc = fbl_extract(solution.first_accel(params), observed, params)?.reference.steer;
        let decision = blend_weight(&solution, detection.nu.max(0.0), detection.tau, &options.blend)?;
        let accel = blend_refs(solution.first_accel(params), &msf, decision.lambda);
        if options.seed_with_msf {
            p.mpc
                .remember(solution.inputs.blended_toward(msf_x, msf_y, decision.lambda));
        }
        let fbl = fbl_extract(accel, observed, params)?;
        let status = decision.reason.as_str();
        return Ok((
            PlannerOutput {
                delta_ref: fbl.reference.steer,
                vx_ref: fbl.reference.speed,
                delta_mpc,
                lambda: decision.lambda,
                costs,
                status,
            },
            decision.lambda >= 1.0,
            planned,
        ));
    };

    let fbl = fbl_extract(msf.accel, observed, params)?;
    let status = match decision.reason {
        BlendReason::MsfOnly => msf.phase.as_str(),
        other => other.as_str(),
    };
    Ok((
        PlannerOutput {
            delta_ref: fbl.reference.steer,
            vx_ref: fbl.reference.speed,
            delta_mpc,
            lambda: decision.lambda,
            costs,
            status,
        },
        true,
        planned,
    ))
}

/// Writes one CSV row per control tick. Output is byte-stable for a given
/// trace.
pub fn write_trace_to<W: Write>(trace: &EpisodeTrace, writer: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for r in &trace.rows {
        let s = &r.state;
        let numbers = [
            r.t,
            s.x,
            s.y,
            s.heading,
            s.v_x,
            s.v_y,
            s.yaw_rate,
            s.steer,
            r.delta_mpc,
            r.delta_ref,
            r.vx_ref,
            r.torque_rl,
            r.torque_rr,
            r.lambda,
            r.costs.safety,
            r.costs.stability,
            r.costs.speed,
            r.costs.steering,
        ];
        let mut record: Vec<String> = numbers.iter().map(|v| v.to_string()).collect();
        record.push(r.status.to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace(trace: &EpisodeTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_trace_to(trace, std::io::BufWriter::new(file)).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}

/// Scenario whose obstacle sits `tau * v` ahead at detection and whose
/// width gives lateral steering index `nu` at that moment.
pub fn scenario_for(v: f64, tau: f64, nu: f64, table: &YMaxTable) -> Result<Scenario> {
    let base = Scenario::default();
    let reach = table.query(tau, v)?;
    let gap = tau * v;
    let obstacle = Obstacle::new(base.detection_distance.max(gap) + 5.0, nu * reach)?;
    let scenario = Scenario {
        v_des: v,
        v0: v,
        detection_distance: gap,
        obstacle,
        ..base
    };
    scenario.validate()?;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(x: f64, y: f64) -> TraceRow {
        TraceRow {
            t: 0.0,
            state: DynamicState {
                x,
                y,
                ..DynamicState::cruising(0.0, 0.0, 5.0)
            },
            delta_mpc: 0.0,
            delta_ref: 0.0,
            vx_ref: 5.0,
            torque_rl: 0.0,
            torque_rr: 0.0,
            lambda: 0.0,
            costs: StageCosts::default(),
            status: "cruise",
        }
    }

    fn trace_of(rows: Vec<TraceRow>) -> EpisodeTrace {
        EpisodeTrace {
            scenario: Scenario::default(),
            rows,
            detection: None,
            passed_time: None,
            plan_calls: 0,
            fallback_ticks: 0,
            aborted: None,
        }
    }

    #[test]
    fn clearance_cases() {
        let zone = DangerZone::of(&Scenario::default());
        let above = trace_of((0..400).map(|i| row(i as f64 * 0.1, 3.0)).collect());
        let report = min_clearance(&above, &zone);
        assert_abs_diff_eq!(report.min_lateral_clearance, 1.0, epsilon = 1e-12);
        assert!(!report.collided);

        let straight = trace_of((0..400).map(|i| row(i as f64 * 0.1, 0.0)).collect());
        let report = min_clearance(&straight, &zone);
        assert!(report.collided);
        assert_abs_diff_eq!(report.min_lateral_clearance, -2.0, epsilon = 1e-12);

        let far = trace_of(vec![row(0.0, 0.0)]);
        assert!(!min_clearance(&far, &zone).collided);
    }

    #[test]
    fn detector_cases() {
        let sc = Scenario::default();
        let table = YMaxTable::default_grid(&sc.vehicle).unwrap();
        let at = |x: f64| detect(&DynamicState::cruising(x, 0.0, 5.0), &sc, 0.0, &table).unwrap();
        assert!(!at(0.0).active);
        let d = at(5.0);
        assert!(d.active);
        assert_abs_diff_eq!(d.tau, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(at(15.0).tau, 3.0, epsilon = 1e-12);
        assert!(!at(32.5).active);
        assert!(detect(&DynamicState::cruising(5.0, 0.0, 5.0), &sc, -1.0, &table).is_err());
    }

    #[test]
    fn sensor_delay_and_hold() {
        let mut s = PositionSensor::new(0.03, 0.0, 0.01);
        let seen: Vec<f64> = (0..6)
            .map(|i| s.observe(&DynamicState::cruising(i as f64, 0.0, 5.0)).x)
            .collect();
        assert_eq!(seen, [0.0, 0.0, 0.0, 0.0, 1.0, 2.0]);

        let mut s = PositionSensor::new(0.0, 50.0, 0.01);
        let seen: Vec<f64> = (0..5)
            .map(|i| s.observe(&DynamicState::cruising(i as f64, 0.0, 5.0)).x)
            .collect();
        assert_eq!(seen, [0.0, 0.0, 2.0, 2.0, 4.0]);
    }

    #[test]
    fn empty_trace_is_header_only() {
        let mut buf = Vec::new();
        write_trace_to(&trace_of(Vec::new()), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", TRACE_HEADER.join(",")));
    }
}
