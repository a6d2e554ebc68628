//! Shared domain types: vehicle constants, planar states, obstacle and
//! scenario descriptions.
//!
//! Everything here is a plain value record. Validation happens once, at
//! construction or load time, so downstream code can rely on the invariants.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};

/// Below this longitudinal speed the single-track model is not evaluated.
pub const LOW_SPEED_FLOOR: f64 = 0.5;

/// Physical constants of the rear-driven test vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleParams {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Yaw moment of inertia (kg m^2).
    pub yaw_inertia: f64,
    /// Rotational inertia of one rear wheel (kg m^2).
    pub rear_wheel_inertia: f64,
    /// Wheel radius (m).
    pub wheel_radius: f64,
    /// CoG to front axle (m).
    pub l_front: f64,
    /// CoG to rear axle (m).
    pub l_rear: f64,
    /// Motor torque limit (N m).
    pub max_torque: f64,
    /// Road-wheel steering limit (rad).
    pub max_steer: f64,
    /// Road-wheel steering rate limit (rad/s).
    pub max_steer_rate: f64,
    /// Lateral Pacejka shape factor.
    pub lateral_shape: f64,
    /// Lateral Pacejka stiffness factor.
    pub lateral_stiffness: f64,
    /// Longitudinal Pacejka shape factor. Carried for completeness, the
    /// drive model maps torque to force through the wheel radius.
    pub longitudinal_shape: f64,
    /// Longitudinal Pacejka stiffness factor (unused, see above).
    pub longitudinal_stiffness: f64,
    /// Road friction coefficient.
    pub friction: f64,
    /// Gravitational acceleration (m/s^2).
    pub gravity: f64,
    /// Nominal slip ratio used in the speed-controller design.
    pub nominal_slip: f64,
    /// Planner sample time (s).
    pub sample_time: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 925.0,
            yaw_inertia: 617.0,
            rear_wheel_inertia: 1.24,
            wheel_radius: 0.301,
            l_front: 0.99,
            l_rear: 0.71,
            max_torque: 200.0,
            max_steer: 0.3,
            max_steer_rate: 0.6,
            lateral_shape: 1.4057,
            lateral_stiffness: 7.1138,
            longitudinal_shape: 1.5,
            longitudinal_stiffness: 8.0,
            friction: 0.9,
            gravity: 9.81,
            nominal_slip: 0.05,
            sample_time: 0.2,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("m", self.mass),
            ("I_zz", self.yaw_inertia),
            ("J_wr", self.rear_wheel_inertia),
            ("r", self.wheel_radius),
            ("l_f", self.l_front),
            ("l_r", self.l_rear),
            ("T_max", self.max_torque),
            ("delta_max", self.max_steer),
            ("delta_rate_max", self.max_steer_rate),
            ("C_y", self.lateral_shape),
            ("B_y", self.lateral_stiffness),
            ("C_x", self.longitudinal_shape),
            ("B_x", self.longitudinal_stiffness),
            ("g", self.gravity),
            ("t_s", self.sample_time),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(key, format!("must be positive, got {value}")));
            }
        }
        if !(self.friction > 0.0 && self.friction <= 1.5) {
            return Err(Error::invalid("mu", format!("must lie in (0, 1.5], got {}", self.friction)));
        }
        if !(0.0..1.0).contains(&self.nominal_slip) {
            return Err(Error::invalid(
                "lambda_n",
                format!("must lie in [0, 1), got {}", self.nominal_slip),
            ));
        }
        if self.max_steer >= FRAC_PI_2 {
            return Err(Error::invalid("delta_max", "must be below pi/2"));
        }
        if self.lateral_shape <= 1.0 {
            return Err(Error::invalid("C_y", "must exceed 1 for the force curve to peak"));
        }
        Ok(())
    }

    pub fn wheelbase(&self) -> f64 {
        self.l_front + self.l_rear
    }

    /// Friction-circle acceleration `mu * g`; also the scale of normalized
    /// planner inputs.
    pub fn max_acceleration(&self) -> f64 {
        self.friction * self.gravity
    }

    /// Static axle loads `(front, rear)` from the longitudinal weight split.
    pub fn static_normal_loads(&self) -> (f64, f64) {
        let weight = self.mass * self.gravity;
        let base = self.wheelbase();
        (weight * self.l_rear / base, weight * self.l_front / base)
    }
}

/// Global-frame point-mass state used by the planner.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KinematicState {
    pub x: f64,
    pub y: f64,
    pub v_x: f64,
    pub v_y: f64,
}

/// Global-frame acceleration `(a_X, a_Y)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KinematicInput {
    pub a_x: f64,
    pub a_y: f64,
}

impl KinematicInput {
    pub const ZERO: Self = Self { a_x: 0.0, a_y: 0.0 };

    pub fn new(a_x: f64, a_y: f64) -> Self {
        Self { a_x, a_y }
    }
}

/// Full single-track state. Velocities and yaw rate are body-frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DynamicState {
    pub x: f64,
    pub y: f64,
    /// Yaw angle (rad).
    pub heading: f64,
    /// Longitudinal body velocity (m/s).
    pub v_x: f64,
    /// Lateral body velocity (m/s).
    pub v_y: f64,
    /// Yaw rate (rad/s).
    pub yaw_rate: f64,
    /// Road-wheel steering angle (rad).
    pub steer: f64,
}

impl DynamicState {
    /// Straight-line state at `speed` located at `(x, y)`.
    pub fn cruising(x: f64, y: f64, speed: f64) -> Self {
        Self {
            x,
            y,
            v_x: speed,
            ..Self::default()
        }
    }

    /// Body sideslip angle.
    pub fn sideslip(&self) -> f64 {
        self.v_y.atan2(self.v_x)
    }

    /// Global velocity `(v_X, v_Y)`.
    pub fn global_velocity(&self) -> (f64, f64) {
        crate::vehicle::rotate_local_to_global(self.v_x, self.v_y, self.heading)
    }

    pub fn kinematic(&self) -> KinematicState {
        let (v_x, v_y) = self.global_velocity();
        KinematicState {
            x: self.x,
            y: self.y,
            v_x,
            v_y,
        }
    }
}

/// Static obstacle. `x` is the leading edge of the danger zone; `width` is
/// the lateral displacement needed to clear it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub x: f64,
    pub width: f64,
}

impl Obstacle {
    pub fn new(x: f64, width: f64) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::invalid("w", format!("must be positive, got {width}")));
        }
        if x.is_nan() {
            return Err(Error::invalid("x_obs", "must not be NaN"));
        }
        Ok(Self { x, width })
    }
}

/// Convex combination of the four planner cost terms
/// (safety, stability, speed keeping, steering effort).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub safety: f64,
    pub stability: f64,
    pub speed: f64,
    pub steering: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self::uniform()
    }
}

impl CostWeights {
    pub fn uniform() -> Self {
        Self {
            safety: 0.25,
            stability: 0.25,
            speed: 0.25,
            steering: 0.25,
        }
    }

    /// Exact weights; fails unless each lies in `[0, 1]` and they sum to one.
    pub fn new(safety: f64, stability: f64, speed: f64, steering: f64) -> Result<Self> {
        let weights = Self {
            safety,
            stability,
            speed,
            steering,
        };
        weights.check_range()?;
        let sum = weights.sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("weights", format!("must sum to 1, got {sum}")));
        }
        Ok(weights)
    }

    /// Scales nonnegative weights so they sum to one. Returns the weights and
    /// whether a rescale was needed.
    pub fn normalized(safety: f64, stability: f64, speed: f64, steering: f64) -> Result<(Self, bool)> {
        let raw = Self {
            safety,
            stability,
            speed,
            steering,
        };
        for (key, value) in raw.named() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::invalid(key, format!("must be nonnegative, got {value}")));
            }
        }
        let sum = raw.sum();
        if sum <= 0.0 {
            return Err(Error::invalid("weights", "at least one weight must be positive"));
        }
        if (sum - 1.0).abs() <= 1e-9 {
            return Ok((raw, false));
        }
        Ok((raw.scaled(1.0 / sum), true))
    }

    /// Multiplies every weight by `factor` without renormalizing.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            safety: self.safety * factor,
            stability: self.stability * factor,
            speed: self.speed * factor,
            steering: self.steering * factor,
        }
    }

    pub fn sum(&self) -> f64 {
        self.safety + self.stability + self.speed + self.steering
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.safety, self.stability, self.speed, self.steering]
    }

    fn named(&self) -> [(&'static str, f64); 4] {
        [
            ("eta_1", self.safety),
            ("eta_2", self.stability),
            ("eta_3", self.speed),
            ("eta_4", self.steering),
        ]
    }

    fn check_range(&self) -> Result<()> {
        for (key, value) in self.named() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::invalid(key, format!("must lie in [0, 1], got {value}")));
            }
        }
        Ok(())
    }
}

/// Lateral side the evasive maneuver goes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DodgeSide {
    #[default]
    Left,
    Right,
}

impl DodgeSide {
    /// +1 for a dodge toward positive `y`.
    pub fn sign(self) -> f64 {
        match self {
            DodgeSide::Left => 1.0,
            DodgeSide::Right => -1.0,
        }
    }
}

/// One collision-avoidance experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub vehicle: VehicleParams,
    /// Desired longitudinal speed after detection (m/s).
    pub v_des: f64,
    /// Speed at the start of the run (m/s).
    pub v0: f64,
    pub obstacle: Obstacle,
    /// Longitudinal depth of the drawn danger zone (m).
    pub zone_depth: f64,
    /// Gap at which the obstacle becomes visible (m).
    pub detection_distance: f64,
    pub dodge: DodgeSide,
    pub weights: CostWeights,
    /// Prediction horizon in planner steps.
    pub horizon: usize,
    pub sim_duration: f64,
    pub control_dt: f64,
    pub planner_dt: f64,
    /// Transport delay on the position seen by detector and planner (s).
    pub sensor_latency: f64,
    /// Position-fix rate in Hz; zero means every control tick.
    pub gps_rate: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        let vehicle = VehicleParams::default();
        Self {
            vehicle,
            v_des: 5.0,
            v0: 5.0,
            obstacle: Obstacle {
                x: 30.0,
                width: 2.0,
            },
            zone_depth: 2.0,
            detection_distance: 25.0,
            dodge: DodgeSide::Left,
            weights: CostWeights::uniform(),
            horizon: 4,
            sim_duration: 12.0,
            control_dt: 0.01,
            planner_dt: vehicle.sample_time,
            sensor_latency: 0.0,
            gps_rate: 0.0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        let positive = [
            ("v_des", self.v_des),
            ("v0", self.v0),
            ("w", self.obstacle.width),
            ("zone_depth", self.zone_depth),
            ("detection_distance", self.detection_distance),
            ("sim_duration", self.sim_duration),
            ("control_dt", self.control_dt),
            ("planner_dt", self.planner_dt),
        ];
        for (key, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(key, format!("must be positive, got {value}")));
            }
        }
        if self.v0 < LOW_SPEED_FLOOR {
            return Err(Error::invalid(
                "v0",
                format!("must be at least {LOW_SPEED_FLOOR} m/s for the dynamic model"),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("N_p", "must be at least 1"));
        }
        if self.control_dt > self.planner_dt {
            return Err(Error::invalid("control_dt", "must not exceed planner_dt"));
        }
        let ratio = self.planner_dt / self.control_dt;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::invalid(
                "planner_dt",
                "must be an integer multiple of control_dt",
            ));
        }
        if !(self.sensor_latency.is_finite() && self.sensor_latency >= 0.0) {
            return Err(Error::invalid("sensor_latency", "must be nonnegative"));
        }
        if !(self.gps_rate.is_finite() && self.gps_rate >= 0.0) {
            return Err(Error::invalid("gps_rate", "must be nonnegative"));
        }
        CostWeights::new(
            self.weights.safety,
            self.weights.stability,
            self.weights.speed,
            self.weights.steering,
        )?;
        Ok(())
    }

    /// Number of planner ticks per control tick ratio, rounded.
    pub fn ticks_per_plan(&self) -> usize {
        (self.planner_dt / self.control_dt).round() as usize
    }

    /// Number of control ticks in the episode.
    pub fn control_steps(&self) -> usize {
        (self.sim_duration / self.control_dt).round() as usize
    }
}
