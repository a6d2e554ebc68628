//! Blending of the two planners and conversion of a global acceleration
//! reference into steering and speed commands.

use crate::error::{Error, Result};
use crate::mpc::PlannerSolution;
use crate::msf::MsfReference;
use crate::solver::SolveStatus;
use crate::types::{DynamicState, KinematicInput, VehicleParams, LOW_SPEED_FLOOR};
use crate::vehicle::{rotate_global_to_local, slip_angles, TireCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlendReason {
    MpcOk,
    /// The first MPC input is close to the friction limit.
    MpcNearLimit,
    /// The solver made no progress within its budget.
    MpcTimeout,
    /// Budget ran out after some progress.
    MpcDegraded,
    /// The receding-horizon planner is switched off or not active.
    MsfOnly,
}

impl BlendReason {
    pub fn as_str(self) -> &'static str {
        match self {
            BlendReason::MpcOk => "mpc_ok",
            BlendReason::MpcNearLimit => "mpc_near_limit",
            BlendReason::MpcTimeout => "mpc_timeout",
            BlendReason::MpcDegraded => "mpc_degraded",
            BlendReason::MsfOnly => "msf_only",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendDecision {
    /// Weight on the maximum-steering reference, in `[0, 1]`.
    pub lambda: f64,
    pub reason: BlendReason,
}

impl BlendDecision {
    pub const MSF_ONLY: BlendDecision = BlendDecision {
        lambda: 1.0,
        reason: BlendReason::MsfOnly,
    };
}

/// Where the hand-over to the maximum-steering planner starts and how wide
/// the ramp is, both in units of normalized lateral input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendConfig {
    pub threshold: f64,
    pub ramp: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            threshold: 0.8,
            ramp: 0.2,
        }
    }
}

/// Blend weight from the solve status and the first lateral input.
///
/// `nu` and `tau` are the latched maneuver indices; they are validated but
/// the weight follows from the MPC output alone.
pub fn blend_weight(mpc: &PlannerSolution, nu: f64, tau: f64, config: &BlendConfig) -> Result<BlendDecision> {
    if !(nu >= 0.0) {
        return Err(Error::invalid("nu", format!("must be nonnegative, got {nu}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::invalid("tau", format!("must be nonnegative, got {tau}")));
    }
    if mpc.status == SolveStatus::NoImprovement {
        return Ok(BlendDecision {
            lambda: 1.0,
            reason: BlendReason::MpcTimeout,
        });
    }
    let (_, u_y) = mpc.first();
    let lambda = ((u_y.abs() - config.threshold) / config.ramp).clamp(0.0, 1.0);
    let reason = if lambda > 0.0 {
        BlendReason::MpcNearLimit
    } else if mpc.status == SolveStatus::BudgetExhausted {
        BlendReason::MpcDegraded
    } else {
        BlendReason::MpcOk
    };
    Ok(BlendDecision { lambda, reason })
}

/// `(1 - lambda) * mpc + lambda * msf`.
pub fn blend_refs(mpc: KinematicInput, msf: &MsfReference, lambda: f64) -> KinematicInput {
    let l = lambda.clamp(0.0, 1.0);
    KinematicInput::new(
        (1.0 - l) * mpc.a_x + l * msf.accel.a_x,
        (1.0 - l) * mpc.a_y + l * msf.accel.a_y,
    )
}

/// Steering angle and longitudinal speed the low-level loops track.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlReference {
    pub steer: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FblOutput {
    pub reference: ControlReference,
    /// The request exceeded the front tire or the steering range.
    pub saturated: bool,
}

/// Inverts the single-track lateral dynamics for a global acceleration
/// reference.
pub fn fbl_extract(a_ref: KinematicInput, state: &DynamicState, params: &VehicleParams) -> Result<FblOutput> {
    if state.v_x < LOW_SPEED_FLOOR {
        return Err(Error::LowSpeedDomain {
            v_x: state.v_x,
            floor: LOW_SPEED_FLOOR,
        });
    }
    let (a_long, a_lat) = rotate_global_to_local(a_ref.a_x, a_ref.a_y, state.heading);
    let (_, alpha_r) = slip_angles(state, params)?;
    let rear_force = TireCurve::rear(params).force(alpha_r);
    let front_force = params.mass * a_lat - rear_force;
    let inverse = TireCurve::front(params).inverse(front_force);

    let raw = inverse.slip + state.sideslip() + params.l_front * state.yaw_rate / state.v_x;
    let steer = raw.clamp(-params.max_steer, params.max_steer);

    let v_x_dot = a_long + state.v_y * state.yaw_rate;
    let speed = (state.v_x + v_x_dot * params.sample_time).max(0.0);

    Ok(FblOutput {
        reference: ControlReference { steer, speed },
        saturated: inverse.saturated || steer != raw,
    })
}
