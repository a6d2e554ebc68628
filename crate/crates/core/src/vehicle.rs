//! Kinematic point-mass and dynamic single-track vehicle models.

use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::types::{DynamicState, KinematicInput, KinematicState, VehicleParams, LOW_SPEED_FLOOR};

/// Global velocity to body frame.
pub fn rotate_global_to_local(v_big_x: f64, v_big_y: f64, heading: f64) -> (f64, f64) {
    let (s, c) = heading.sin_cos();
    (v_big_x * c + v_big_y * s, -v_big_x * s + v_big_y * c)
}

/// Body velocity to global frame.
pub fn rotate_local_to_global(v_x: f64, v_y: f64, heading: f64) -> (f64, f64) {
    let (s, c) = heading.sin_cos();
    (v_x * c - v_y * s, v_x * s + v_y * c)
}

impl KinematicState {
    /// Exact double-integrator update under constant acceleration.
    pub fn step(&self, u: KinematicInput, dt: f64) -> KinematicState {
        let half_dt2 = 0.5 * dt * dt;
        KinematicState {
            x: self.x + self.v_x * dt + u.a_x * half_dt2,
            y: self.y + self.v_y * dt + u.a_y * half_dt2,
            v_x: self.v_x + u.a_x * dt,
            v_y: self.v_y + u.a_y * dt,
        }
    }
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

/// Front and rear slip angles.
pub fn slip_angles(state: &DynamicState, params: &VehicleParams) -> Result<(f64, f64)> {
    check_speed(state.v_x)?;
    Ok(slip_angles_unchecked(state, state.steer, params))
}

fn slip_angles_unchecked(state: &DynamicState, steer: f64, params: &VehicleParams) -> (f64, f64) {
    let beta = state.sideslip();
    let yaw_term = state.yaw_rate / state.v_x;
    (
        steer - beta - params.l_front * yaw_term,
        params.l_rear * yaw_term - beta,
    )
}

/// Lateral Pacejka curve `mu * Fz * sin(C * atan(B * alpha))` for one axle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireCurve {
    pub shape: f64,
    pub stiffness: f64,
    pub friction: f64,
    pub normal_load: f64,
}

/// Result of inverting the tire curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TireInverse {
    pub slip: f64,
    /// The requested force exceeded the curve peak; `slip` is the peak slip.
    pub saturated: bool,
}

impl TireCurve {
    pub fn front(params: &VehicleParams) -> Self {
        let (front, _) = params.static_normal_loads();
        Self::with_load(params, front)
    }

    pub fn rear(params: &VehicleParams) -> Self {
        let (_, rear) = params.static_normal_loads();
        Self::with_load(params, rear)
    }

    fn with_load(params: &VehicleParams, normal_load: f64) -> Self {
        Self {
            shape: params.lateral_shape,
            stiffness: params.lateral_stiffness,
            friction: params.friction,
            normal_load,
        }
    }

    /// `mu * Fz`, the largest force the curve reaches.
    pub fn peak_force(&self) -> f64 {
        self.friction * self.normal_load
    }

    /// Slip angle where `C * atan(B * alpha) = pi / 2`.
    pub fn peak_slip(&self) -> f64 {
        (FRAC_PI_2 / self.shape).tan() / self.stiffness
    }

    pub fn force(&self, slip: f64) -> f64 {
        self.peak_force() * (self.shape * (self.stiffness * slip).atan()).sin()
    }

    /// Inverse on the monotone branch `|alpha| <= peak_slip`.
    pub fn inverse(&self, force: f64) -> TireInverse {
        let ratio = force / self.peak_force();
        let saturated = ratio.abs() > 1.0;
        let ratio = ratio.clamp(-1.0, 1.0);
        TireInverse {
            slip: (ratio.asin() / self.shape).tan() / self.stiffness,
            saturated,
        }
    }
}

/// Lateral tire force for `alpha` on `tire`.
pub fn lateral_tire_force(alpha: f64, tire: &TireCurve) -> f64 {
    tire.force(alpha)
}

/// Slip angle that produces `force` on the pre-peak branch.
pub fn inverse_lateral_tire_force(force: f64, tire: &TireCurve) -> TireInverse {
    tire.inverse(force)
}

/// Time derivative of the single-track state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub(crate) struct Derivative {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v_x: f64,
    pub v_y: f64,
    pub yaw_rate: f64,
}

/// Lateral axle forces `(front, rear)` at `state` with the wheel at `steer`.
pub(crate) fn axle_forces(state: &DynamicState, steer: f64, params: &VehicleParams) -> (f64, f64) {
    let (alpha_f, alpha_r) = slip_angles_unchecked(state, steer, params);
    (
        TireCurve::front(params).force(alpha_f),
        TireCurve::rear(params).force(alpha_r),
    )
}

/// Equations of motion. `drive_force` is the total longitudinal tire force.
pub(crate) fn derivative(
    state: &DynamicState,
    steer: f64,
    drive_force: f64,
    params: &VehicleParams,
) -> Derivative {
    let (f_yf, f_yr) = axle_forces(state, steer, params);
    let (v_big_x, v_big_y) = rotate_local_to_global(state.v_x, state.v_y, state.heading);
    Derivative {
        x: v_big_x,
        y: v_big_y,
        heading: state.yaw_rate,
        v_x: drive_force / params.mass + state.v_y * state.yaw_rate,
        v_y: (f_yf + f_yr) / params.mass - state.v_x * state.yaw_rate,
        yaw_rate: (f_yf * params.l_front - f_yr * params.l_rear) / params.yaw_inertia,
    }
}

pub(crate) fn advance(state: &DynamicState, d: &Derivative, h: f64) -> DynamicState {
    DynamicState {
        x: state.x + h * d.x,
        y: state.y + h * d.y,
        heading: state.heading + h * d.heading,
        v_x: state.v_x + h * d.v_x,
        v_y: state.v_y + h * d.v_y,
        yaw_rate: state.yaw_rate + h * d.yaw_rate,
        steer: state.steer,
    }
}

/// Classic RK4 combination of four stage derivatives.
pub(crate) fn rk4_combine(state: &DynamicState, k: [Derivative; 4], dt: f64) -> DynamicState {
    let w = dt / 6.0;
    let mix = |f: fn(&Derivative) -> f64| f(&k[0]) + 2.0 * f(&k[1]) + 2.0 * f(&k[2]) + f(&k[3]);
    DynamicState {
        x: state.x + w * mix(|d| d.x),
        y: state.y + w * mix(|d| d.y),
        heading: state.heading + w * mix(|d| d.heading),
        v_x: state.v_x + w * mix(|d| d.v_x),
        v_y: state.v_y + w * mix(|d| d.v_y),
        yaw_rate: state.yaw_rate + w * mix(|d| d.yaw_rate),
        steer: state.steer,
    }
}

/// One RK4 step of the single-track model with the wheel held at
/// `steer_cmd`. Longitudinal forces are per axle.
pub fn dynamic_step(
    state: &DynamicState,
    steer_cmd: f64,
    force_front: f64,
    force_rear: f64,
    params: &VehicleParams,
    dt: f64,
) -> Result<DynamicState> {
    check_speed(state.v_x)?;
    let drive = force_front + force_rear;
    let f = |s: &DynamicState| derivative(s, steer_cmd, drive, params);
    let k1 = f(state);
    let k2 = f(&advance(state, &k1, 0.5 * dt));
    let k3 = f(&advance(state, &k2, 0.5 * dt));
    let k4 = f(&advance(state, &k3, dt));
    let mut next = rk4_combine(state, [k1, k2, k3, k4], dt);
    next.steer = steer_cmd;
    Ok(next)
}
