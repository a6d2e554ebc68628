//! Maximum-steering feed-forward (MSF) planner.
//!
//! The maximum steering maneuver ramps the road wheel to its limit as fast
//! as the actuator allows while the longitudinal speed is held. Its lateral
//! reach `y_max(t, v)` is tabulated once and used to grade how hard an
//! obstacle is to clear (`nu = w / y_max(tau, v)`); the same dynamics, run
//! from the live state, drive the human-like evasive reference.
//!
//! With a fixed steering angle the single-track model ends up on a circle,
//! so the raw lateral offset eventually turns back toward the start. `y_max`
//! is therefore the largest offset reached up to time `t`, which keeps it
//! nondecreasing and equal to the raw offset until the apex.

use crate::control::EPS_GAIN;
use crate::error::{Error, Result};
use crate::types::{DodgeSide, DynamicState, KinematicInput, Obstacle, VehicleParams, LOW_SPEED_FLOOR};
use crate::vehicle::{self, Derivative};

/// Largest internal RK4 step used for the maneuver (s).
pub const MANEUVER_STEP: f64 = 0.005;

/// State of the maneuver ODE: pose plus lateral body velocity and yaw rate.
#[derive(Debug, Clone, Copy, Default)]
struct ManeuverState {
    x: f64,
    y: f64,
    heading: f64,
    v_y: f64,
    yaw_rate: f64,
}

impl ManeuverState {
    fn from_dynamic(state: &DynamicState) -> Self {
        Self {
            x: state.x,
            y: state.y,
            heading: state.heading,
            v_y: state.v_y,
            yaw_rate: state.yaw_rate,
        }
    }

    fn as_dynamic(&self, speed: f64) -> DynamicState {
        DynamicState {
            x: self.x,
            y: self.y,
            heading: self.heading,
            v_x: speed,
            v_y: self.v_y,
            yaw_rate: self.yaw_rate,
            steer: 0.0,
        }
    }

    fn offset(&self, d: &Derivative, h: f64) -> Self {
        Self {
            x: self.x + h * d.x,
            y: self.y + h * d.y,
            heading: self.heading + h * d.heading,
            v_y: self.v_y + h * d.v_y,
            yaw_rate: self.yaw_rate + h * d.yaw_rate,
        }
    }
}

/// Integrates the maneuver at constant body speed, steering
/// `sign * min(rate * phi, max)` where `phi` is time since the maneuver
/// started.
struct Maneuver<'a> {
    params: &'a VehicleParams,
    speed: f64,
    sign: f64,
}

impl Maneuver<'_> {
    fn steer(&self, phi: f64) -> f64 {
        self.sign * (self.params.max_steer_rate * phi).min(self.params.max_steer)
    }

    fn derivative(&self, s: &ManeuverState, phi: f64) -> Derivative {
        let mut d = vehicle::derivative(&s.as_dynamic(self.speed), self.steer(phi), 0.0, self.params);
        d.v_x = 0.0;
        d
    }

    fn step(&self, s: &ManeuverState, phi: f64, h: f64) -> ManeuverState {
        let k1 = self.derivative(s, phi);
        let k2 = self.derivative(&s.offset(&k1, 0.5 * h), phi + 0.5 * h);
        let k3 = self.derivative(&s.offset(&k2, 0.5 * h), phi + 0.5 * h);
        let k4 = self.derivative(&s.offset(&k3, h), phi + h);
        let mix = |f: fn(&Derivative) -> f64| f(&k1) + 2.0 * f(&k2) + 2.0 * f(&k3) + f(&k4);
        let w = h / 6.0;
        ManeuverState {
            x: s.x + w * mix(|d| d.x),
            y: s.y + w * mix(|d| d.y),
            heading: s.heading + w * mix(|d| d.heading),
            v_y: s.v_y + w * mix(|d| d.v_y),
            yaw_rate: s.yaw_rate + w * mix(|d| d.yaw_rate),
        }
    }

    /// Advances from `phi` to `phi_end` in equal substeps no longer than
    /// [`MANEUVER_STEP`], calling `visit` after each substep.
    fn advance(
        &self,
        mut s: ManeuverState,
        phi: f64,
        phi_end: f64,
        mut visit: impl FnMut(&ManeuverState),
    ) -> ManeuverState {
        let span = phi_end - phi;
        if span <= 0.0 {
            return s;
        }
        let n = (span / MANEUVER_STEP).ceil().max(1.0) as usize;
        let h = span / n as f64;
        for i in 0..n {
            s = self.step(&s, phi + i as f64 * h, h);
            visit(&s);
        }
        s
    }
}

/// Sampled maximum steering maneuver from straight-line initial conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxSteerTrajectory {
    pub speed: f64,
    pub times: Vec<f64>,
    /// Lateral offset at each sample time.
    pub lateral: Vec<f64>,
    /// Largest lateral offset reached up to each sample time (`y_max`).
    pub reach: Vec<f64>,
}

fn check_speed(v_x: f64) -> Result<()> {
    if v_x >= LOW_SPEED_FLOOR {
        Ok(())
    } else {
        Err(Error::LowSpeedDomain {
            v_x,
            floor: LOW_SPEED_FLOOR,
        })
    }
}

/// Maneuver sampled every 0.05 s up to `t_end` (inclusive).
pub fn max_steer_trajectory(v_x: f64, t_end: f64, params: &VehicleParams) -> Result<MaxSteerTrajectory> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("t_end", "must be positive"));
    }
    let step = 0.05;
    let n = (t_end / step).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|i| i as f64 * step).collect();
    if t_end - times[n] > 1e-12 {
        times.push(t_end);
    }
    max_steer_samples(v_x, &times, params)
}

/// Maneuver evaluated at arbitrary ascending, nonnegative sample times.
pub fn max_steer_samples(v_x: f64, times: &[f64], params: &VehicleParams) -> Result<MaxSteerTrajectory> {
    check_speed(v_x)?;
    check_ascending("t", times)?;
    if times.first().is_some_and(|&t| t < 0.0) {
        return Err(Error::Grid("sample times must be nonnegative".into()));
    }
    let maneuver = Maneuver {
        params,
        speed: v_x,
        sign: 1.0,
    };
    let mut s = ManeuverState::default();
    let mut phi = 0.0;
    let mut best = 0.0f64;
    let mut lateral = Vec::with_capacity(times.len());
    let mut reach = Vec::with_capacity(times.len());
    for &t in times {
        s = maneuver.advance(s, phi, t, |state| best = best.max(state.y));
        phi = t;
        lateral.push(s.y);
        reach.push(best);
    }
    Ok(MaxSteerTrajectory {
        speed: v_x,
        times: times.to_vec(),
        lateral,
        reach,
    })
}

fn check_ascending(name: &str, grid: &[f64]) -> Result<()> {
    if grid.len() < 2 {
        return Err(Error::Grid(format!("{name} grid needs at least two nodes")));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Grid(format!("{name} grid has non-finite nodes")));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Grid(format!("{name} grid must be strictly ascending")));
    }
    Ok(())
}

/// `y_max` tabulated over speed and time with bilinear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct YMaxTable {
    speeds: Vec<f64>,
    times: Vec<f64>,
    /// Row-major by time: `values[ti * speeds.len() + vi]`.
    values: Vec<f64>,
}

fn linspace_step(start: f64, end: f64, step: f64) -> Vec<f64> {
    let n = ((end - start) / step).round() as usize;
    (0..=n).map(|i| start + i as f64 * step).collect()
}

impl YMaxTable {
    /// Speeds 1..=9 m/s every 0.5 m/s, times 0..=6 s every 0.05 s.
    pub fn default_grid(params: &VehicleParams) -> Result<Self> {
        Self::build(&linspace_step(1.0, 9.0, 0.5), &linspace_step(0.0, 6.0, 0.05), params)
    }

    pub fn build(speeds: &[f64], times: &[f64], params: &VehicleParams) -> Result<Self> {
        check_ascending("v", speeds)?;
        check_ascending("t", times)?;
        if speeds[0] < LOW_SPEED_FLOOR {
            return Err(Error::Grid(format!("speeds must be at least {LOW_SPEED_FLOOR} m/s")));
        }
        if times[0] != 0.0 {
            return Err(Error::Grid("time grid must start at 0".into()));
        }
        let columns = speeds
            .iter()
            .map(|&v| max_steer_samples(v, times, params))
            .collect::<Result<Vec<_>>>()?;
        let mut values = vec![0.0; speeds.len() * times.len()];
        for (vi, column) in columns.iter().enumerate() {
            for (ti, &y) in column.reach.iter().enumerate() {
                values[ti * speeds.len() + vi] = y;
            }
        }
        Ok(Self {
            speeds: speeds.to_vec(),
            times: times.to_vec(),
            values,
        })
    }

    pub fn speeds(&self) -> &[f64] {
        &self.speeds
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Tabulated value at grid node `(time index, speed index)`.
    pub fn node(&self, ti: usize, vi: usize) -> f64 {
        self.values[ti * self.speeds.len() + vi]
    }

    /// Bilinear interpolation; refuses to extrapolate.
    pub fn query(&self, t: f64, v: f64) -> Result<f64> {
        let (ti, a) = locate(&self.times, t).ok_or(Error::OutOfTable { t, v })?;
        let (vi, b) = locate(&self.speeds, v).ok_or(Error::OutOfTable { t, v })?;
        let y00 = self.node(ti, vi);
        let y01 = self.node(ti, vi + 1);
        let y10 = self.node(ti + 1, vi);
        let y11 = self.node(ti + 1, vi + 1);
        Ok((1.0 - a) * ((1.0 - b) * y00 + b * y01) + a * ((1.0 - b) * y10 + b * y11))
    }

    /// Rows of `(t, v, y_max)` in time-major order.
    pub fn rows(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.times.iter().enumerate().flat_map(move |(ti, &t)| {
            self.speeds
                .iter()
                .enumerate()
                .map(move |(vi, &v)| (t, v, self.node(ti, vi)))
        })
    }
}

/// Cell index and fractional position of `x` in `grid`.
fn locate(grid: &[f64], x: f64) -> Option<(usize, f64)> {
    let last = *grid.last()?;
    if !(x >= grid[0] && x <= last) {
        return None;
    }
    let upper = grid.partition_point(|&g| g <= x);
    let i = upper.saturating_sub(1).min(grid.len() - 2);
    let frac = (x - grid[i]) / (grid[i + 1] - grid[i]);
    Some((i, frac))
}

/// `nu = w / y_max(tau, v_x)`. Values above one mean steering alone cannot
/// clear the obstacle in the available time.
pub fn lateral_steering_index(width: f64, tau: f64, v_x: f64, table: &YMaxTable) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid("tau", format!("must be positive, got {tau}")));
    }
    let reach = table.query(tau, v_x)?;
    Ok(width / reach)
}

/// How far ahead of the maneuver clock the dodge reference is taken: one
/// planner period, over which it is held, plus the steering actuator's time
/// constant.
pub fn dodge_lead(params: &VehicleParams) -> f64 {
    params.sample_time + 1.0 / EPS_GAIN
}

/// Global acceleration the maximum steering maneuver demands from the live
/// `state`, `elapsed` seconds into it, with the steering angle taken
/// [`dodge_lead`] ahead on the ramp. The body speed is pulled back to
/// `speed`, the speed the maneuver started at, within one planner period.
///
/// Inverting this acceleration at the same state recovers the leading ramp
/// angle, so the rate-limited actuator runs along the ramp itself.
pub fn dodge_acceleration(
    state: &DynamicState,
    elapsed: f64,
    speed: f64,
    side: DodgeSide,
    params: &VehicleParams,
) -> Result<KinematicInput> {
    check_speed(state.v_x)?;
    let maneuver = Maneuver {
        params,
        speed: state.v_x,
        sign: side.sign(),
    };
    let s = ManeuverState::from_dynamic(state);
    let d = maneuver.derivative(&s, elapsed + dodge_lead(params));
    // Speed is held, so along the body axis only the centripetal term and
    // the drift correction are left.
    let a_long = -s.v_y * s.yaw_rate + (speed - state.v_x) / params.sample_time;
    let a_lat = d.v_y + state.v_x * s.yaw_rate;
    let (a_x, a_y) = vehicle::rotate_local_to_global(a_long, a_lat, s.heading);
    Ok(KinematicInput::new(a_x, a_y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum MsfPhase {
    Dodge,
    Hold,
    Return,
    Inactive,
}

impl MsfPhase {
    pub fn as_str(self) -> &'static str {
        match self {
            MsfPhase::Dodge => "dodge",
            MsfPhase::Hold => "hold",
            MsfPhase::Return => "return",
            MsfPhase::Inactive => "inactive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsfReference {
    pub accel: KinematicInput,
    pub phase: MsfPhase,
}

/// Tuning of the non-dodge phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsfTuning {
    /// Time constant for killing lateral velocity once clear (s).
    pub hold_time: f64,
    /// Natural frequency of the critically damped return to `y = 0` (rad/s).
    pub return_frequency: f64,
    /// Time constant of the speed recovery toward `v_des` (s).
    pub speed_time: f64,
    /// Return is complete once `|y|` and `|v_Y|` fall below these.
    pub settle_offset: f64,
    pub settle_speed: f64,
}

impl Default for MsfTuning {
    fn default() -> Self {
        Self {
            hold_time: 0.5,
            return_frequency: 0.8,
            speed_time: 2.0,
            settle_offset: 0.1,
            settle_speed: 0.1,
        }
    }
}

/// Phase machine of the evasive maneuver for one episode. Created at
/// detection; phases only move forward.
#[derive(Debug, Clone)]
pub struct MsfPlanner {
    params: VehicleParams,
    obstacle: Obstacle,
    zone_depth: f64,
    side: DodgeSide,
    v_des: f64,
    tuning: MsfTuning,
    start: f64,
    phase: MsfPhase,
    /// Largest lateral acceleration magnitude commanded while dodging.
    accel_cap: f64,
    /// Body speed at the first dodge tick.
    dodge_speed: Option<f64>,
}

impl MsfPlanner {
    pub fn new(
        params: VehicleParams,
        obstacle: Obstacle,
        zone_depth: f64,
        side: DodgeSide,
        v_des: f64,
        start: f64,
    ) -> Self {
        Self {
            params,
            obstacle,
            zone_depth,
            side,
            v_des,
            tuning: MsfTuning::default(),
            start,
            phase: MsfPhase::Dodge,
            accel_cap: 0.0,
            dodge_speed: None,
        }
    }

    pub fn with_tuning(mut self, tuning: MsfTuning) -> Self {
        self.tuning = tuning;
        self
    }

    pub fn phase(&self) -> MsfPhase {
        self.phase
    }

    /// Longitudinal position past which the obstacle no longer needs clearing.
    pub fn passed_at(&self) -> f64 {
        self.obstacle.x + self.obstacle.width.max(self.zone_depth)
    }

    fn update_phase(&mut self, state: &DynamicState, v_big_y: f64) {
        let lateral = self.side.sign() * state.y;
        if self.phase == MsfPhase::Dodge && lateral >= self.obstacle.width {
            self.phase = MsfPhase::Hold;
        }
        if self.phase <= MsfPhase::Hold && state.x > self.passed_at() {
            self.phase = MsfPhase::Return;
        }
        if self.phase == MsfPhase::Return
            && state.y.abs() < self.tuning.settle_offset
            && v_big_y.abs() < self.tuning.settle_speed
        {
            self.phase = MsfPhase::Inactive;
        }
    }

    /// Reference for the planner tick at time `t` given the observed state.
    pub fn reference(&mut self, state: &DynamicState, t: f64) -> Result<MsfReference> {
        check_speed(state.v_x)?;
        let (v_big_x, v_big_y) = state.global_velocity();
        self.update_phase(state, v_big_y);
        let recover = ((self.v_des - v_big_x) / self.tuning.speed_time)
            .clamp(-0.3 * self.params.max_acceleration(), 0.3 * self.params.max_acceleration());
        let cap = if self.accel_cap > 0.0 {
            self.accel_cap
        } else {
            self.params.max_acceleration()
        };
        let accel = match self.phase {
            MsfPhase::Dodge => {
                let speed = *self.dodge_speed.get_or_insert(state.v_x);
                let a = dodge_acceleration(state, t - self.start, speed, self.side, &self.params)?;
                self.accel_cap = self.accel_cap.max(a.a_y.abs());
                a
            }
            MsfPhase::Hold => {
                KinematicInput::new(recover, (-v_big_y / self.tuning.hold_time).clamp(-cap, cap))
            }
            MsfPhase::Return | MsfPhase::Inactive => {
                let w = self.tuning.return_frequency;
                let a_y = -w * w * state.y - 2.0 * w * v_big_y;
                KinematicInput::new(recover, a_y.clamp(-cap, cap))
            }
        };
        Ok(MsfReference {
            accel,
            phase: self.phase,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn starts_at_zero_and_rises() {
        let p = params();
        for v in [1.0, 3.0, 5.0, 7.0] {
            let traj = max_steer_trajectory(v, 2.0, &p).unwrap();
            assert_eq!(traj.lateral[0], 0.0);
            assert_eq!(traj.reach[0], 0.0);
        }
        let traj = max_steer_trajectory(5.0, 3.0, &p).unwrap();
        for w in traj.lateral.windows(2) {
            assert!(w[1] > w[0], "lateral offset must rise before the apex");
        }
        let long = max_steer_trajectory(5.0, 6.0, &p).unwrap();
        for w in long.reach.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn trajectory_refuses_low_speed() {
        assert!(matches!(
            max_steer_trajectory(0.2, 1.0, &params()),
            Err(Error::LowSpeedDomain { .. })
        ));
    }

    #[test]
    fn table_nodes_and_cells() {
        let p = params();
        let speeds = [3.0, 4.0, 5.0];
        let times = [0.0, 0.5, 1.0, 1.5];
        let table = YMaxTable::build(&speeds, &times, &p).unwrap();
        let direct = max_steer_samples(4.0, &times, &p).unwrap();
        for (ti, &t) in times.iter().enumerate() {
            assert_eq!(table.query(t, 4.0).unwrap(), direct.reach[ti]);
        }
        let mid = table.query(0.75, 4.5).unwrap();
        let corners = [
            table.node(1, 1),
            table.node(1, 2),
            table.node(2, 1),
            table.node(2, 2),
        ];
        let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo <= mid && mid <= hi);
        assert!(matches!(table.query(2.0, 4.0), Err(Error::OutOfTable { .. })));
        assert!(matches!(table.query(1.0, 5.5), Err(Error::OutOfTable { .. })));
    }

    #[test]
    fn bad_grids_rejected() {
        let p = params();
        assert!(YMaxTable::build(&[3.0, 2.0], &[0.0, 1.0], &p).is_err());
        assert!(YMaxTable::build(&[3.0, 4.0], &[0.1, 1.0], &p).is_err());
        assert!(YMaxTable::build(&[0.1, 4.0], &[0.0, 1.0], &p).is_err());
        assert!(YMaxTable::build(&[3.0], &[0.0, 1.0], &p).is_err());
    }

    #[test]
    fn steering_index_definition() {
        let p = params();
        let table = YMaxTable::build(&[4.0, 5.0, 6.0], &[0.0, 1.0, 2.0, 3.0], &p).unwrap();
        let reach = table.query(2.0, 5.0).unwrap();
        assert_abs_diff_eq!(lateral_steering_index(reach, 2.0, 5.0, &table).unwrap(), 1.0, epsilon = 1e-15);
        let nu = lateral_steering_index(1.3, 2.5, 5.2, &table).unwrap();
        let nu2 = lateral_steering_index(2.6, 2.5, 5.2, &table).unwrap();
        assert_eq!(nu2, 2.0 * nu);
        assert!(lateral_steering_index(1.0, 0.0, 5.0, &table).is_err());
        assert!(matches!(
            lateral_steering_index(1.0, 4.0, 5.0, &table),
            Err(Error::OutOfTable { .. })
        ));
    }

    #[test]
    fn dodge_at_detection_steers_without_braking() {
        let p = params();
        let s = DynamicState::cruising(0.0, 0.0, 5.0);
        let a = dodge_acceleration(&s, 0.0, s.v_x, DodgeSide::Left, &p).unwrap();
        assert!(a.a_y > 0.0);
        // Speed is held, so the velocity only rotates: a_x is second order.
        assert!(a.a_x <= 0.0 && a.a_x.abs() < 0.1 * a.a_y, "a_x = {}", a.a_x);
        let right = dodge_acceleration(&s, 0.0, s.v_x, DodgeSide::Right, &p).unwrap();
        assert_abs_diff_eq!(right.a_y, -a.a_y, epsilon = 1e-12);
    }

    #[test]
    fn phases_advance_monotonically() {
        let p = params();
        let obstacle = Obstacle::new(20.0, 2.0).unwrap();
        let mut msf = MsfPlanner::new(p, obstacle, 2.0, DodgeSide::Left, 5.0, 0.0);
        let mut s = DynamicState::cruising(0.0, 0.0, 5.0);
        let r = msf.reference(&s, 0.0).unwrap();
        assert_eq!(r.phase, MsfPhase::Dodge);
        s.y = 2.1;
        s.x = 15.0;
        assert_eq!(msf.reference(&s, 1.0).unwrap().phase, MsfPhase::Hold);
        // Dropping below the width again does not go back to dodging.
        s.y = 1.5;
        assert_eq!(msf.reference(&s, 1.2).unwrap().phase, MsfPhase::Hold);
        s.y = 2.5;
        s.x = 23.0;
        let r = msf.reference(&s, 2.0).unwrap();
        assert_eq!(r.phase, MsfPhase::Return);
        assert!(r.accel.a_y < 0.0);
        s.y = 0.01;
        let r = msf.reference(&s, 5.0).unwrap();
        assert_eq!(r.phase, MsfPhase::Inactive);
    }
}
