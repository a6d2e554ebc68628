//! Low-level loops: rear-wheel speed control and the steering actuator.

use crate::error::{Error, Result};
use crate::types::VehicleParams;

/// Default proportional gain of the steering actuator (1/s).
pub const EPS_GAIN: f64 = 10.0;

/// Inertia seen by the rear wheels: wheel inertia plus half the vehicle mass
/// reflected through the wheel radius, reduced by the nominal slip.
pub fn equivalent_inertia(params: &VehicleParams) -> f64 {
    let r = params.wheel_radius;
    params.rear_wheel_inertia + r * r * 0.5 * params.mass * (1.0 - params.nominal_slip)
}

/// PI speed controller with conditional integration and a first-order
/// reference prefilter.
///
/// The prefilter time constant equals `kp / ki`, which cancels the PI zero:
/// on the nominal plant `J v' = T` the reference-to-speed response is a
/// double pole at `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedController {
    pub kp: f64,
    pub ki: f64,
    pub torque_limit: f64,
    integrator: f64,
    filtered_ref: Option<f64>,
}

impl SpeedController {
    /// Gains from pole placement at `-1` on the nominal plant.
    pub fn design(params: &VehicleParams) -> Self {
        let j = equivalent_inertia(params);
        Self::with_gains(2.0 * j, j, params.max_torque)
    }

    pub fn with_gains(kp: f64, ki: f64, torque_limit: f64) -> Self {
        Self {
            kp,
            ki,
            torque_limit,
            integrator: 0.0,
            filtered_ref: None,
        }
    }

    pub fn integrator(&self) -> f64 {
        self.integrator
    }

    pub fn reset(&mut self) {
        self.integrator = 0.0;
        self.filtered_ref = None;
    }

    /// Total rear torque for one control period.
    pub fn step(&mut self, v_ref: f64, v_meas: f64, dt: f64) -> Result<f64> {
        if !(dt > 0.0) {
            return Err(Error::invalid("control_dt", format!("must be positive, got {dt}")));
        }
        let r = match self.filtered_ref {
            None => v_ref,
            Some(prev) => {
                let tau = self.kp / self.ki;
                prev + (1.0 - (-dt / tau).exp()) * (v_ref - prev)
            }
        };
        self.filtered_ref = Some(r);

        let e = r - v_meas;
        let candidate = self.integrator + e * dt;
        let unclamped = self.kp * e + self.ki * candidate;
        let winding = unclamped.abs() > self.torque_limit && unclamped.signum() == e.signum();
        if !winding {
            self.integrator = candidate;
        }
        let torque = self.kp * e + self.ki * self.integrator;
        Ok(torque.clamp(-self.torque_limit, self.torque_limit))
    }
}

/// Equal split of the total torque over the two rear wheels, each within
/// `[-T_max, T_max]`.
pub fn torque_distribution(total: f64, params: &VehicleParams) -> (f64, f64) {
    let limit = params.max_torque;
    let half = total.clamp(-2.0 * limit, 2.0 * limit) / 2.0;
    (half, half)
}

/// One step of the rate-limited proportional steering actuator.
pub fn eps_step(steer_ref: f64, steer: f64, dt: f64, gain: f64, params: &VehicleParams) -> f64 {
    let rate = (gain * (steer_ref - steer)).clamp(-params.max_steer_rate, params.max_steer_rate);
    (steer + rate * dt).clamp(-params.max_steer, params.max_steer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn equivalent_inertia_value() {
        let j = 1.24 + 0.301 * 0.301 * 925.0 / 2.0 * 0.95;
        assert_abs_diff_eq!(equivalent_inertia(&VehicleParams::default()), j, epsilon = 1e-12);
        assert_abs_diff_eq!(j, 41.048, epsilon = 1e-3);
    }

    #[test]
    fn equilibrium_gives_zero_torque() {
        let mut c = SpeedController::design(&VehicleParams::default());
        assert_eq!(c.step(5.0, 5.0, 0.01).unwrap(), 0.0);
        assert_eq!(c.integrator(), 0.0);
    }

    #[test]
    fn large_error_saturates_without_windup() {
        let p = VehicleParams::default();
        let mut c = SpeedController::design(&p);
        for _ in 0..1000 {
            let t = c.step(20.0, 0.0, 0.01).unwrap();
            assert_eq!(t, p.max_torque);
        }
        assert!(c.ki * c.integrator() <= p.max_torque);
    }

    #[test]
    fn rejects_bad_period() {
        let mut c = SpeedController::design(&VehicleParams::default());
        assert!(c.step(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn torque_split() {
        let p = VehicleParams::default();
        assert_eq!(torque_distribution(100.0, &p), (50.0, 50.0));
        assert_eq!(torque_distribution(1000.0, &p), (200.0, 200.0));
        assert_eq!(torque_distribution(-1000.0, &p), (-200.0, -200.0));
    }

    #[test]
    fn eps_rate_limit() {
        let p = VehicleParams::default();
        assert_abs_diff_eq!(eps_step(0.3, 0.0, 0.01, EPS_GAIN, &p), 0.006, epsilon = 1e-15);
        assert_abs_diff_eq!(eps_step(0.01, 0.0, 0.01, EPS_GAIN, &p), 0.001, epsilon = 1e-15);
        assert_eq!(eps_step(1.0, 0.299, 0.1, EPS_GAIN, &p), 0.3);
    }

    proptest! {
        #[test]
        fn torque_always_bounded(v_ref in -30.0..30.0f64, v0 in -30.0..30.0f64, steps in 1usize..300) {
            let p = VehicleParams::default();
            let mut c = SpeedController::design(&p);
            let mut v = v0;
            let j = equivalent_inertia(&p);
            for _ in 0..steps {
                let t = c.step(v_ref, v, 0.01).unwrap();
                prop_assert!(t.abs() <= p.max_torque);
                prop_assert!((c.ki * c.integrator()).abs() <= p.max_torque + 1e-9);
                v += t / j * 0.01;
            }
        }

        #[test]
        fn eps_within_limits(r in -2.0..2.0f64, d in -0.3..0.3f64, dt in 1e-4..0.5f64) {
            let p = VehicleParams::default();
            let next = eps_step(r, d, dt, EPS_GAIN, &p);
            prop_assert!(next.abs() <= p.max_steer);
            prop_assert!((next - d).abs() <= p.max_steer_rate * dt + 1e-12);
        }
    }
}
