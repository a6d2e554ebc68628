//! Test-side reference models, written from the equations of motion and
//! kept independent of the library internals.

#![allow(dead_code)]

use swerve::{DynamicState, VehicleParams};

/// State vector `[x, y, heading, v_x, v_y, yaw_rate]`.
pub type Vec6 = [f64; 6];

pub fn to_vec(s: &DynamicState) -> Vec6 {
    [s.x, s.y, s.heading, s.v_x, s.v_y, s.yaw_rate]
}

pub fn axle_loads(p: &VehicleParams) -> (f64, f64) {
    let l = p.l_front + p.l_rear;
    (p.mass * p.gravity * p.l_rear / l, p.mass * p.gravity * p.l_front / l)
}

pub fn pacejka(alpha: f64, load: f64, p: &VehicleParams) -> f64 {
    p.friction * load * (p.lateral_shape * (p.lateral_stiffness * alpha).atan()).sin()
}

/// Lateral axle forces `(front, rear)`.
pub fn tire_forces(s: &Vec6, steer: f64, p: &VehicleParams) -> (f64, f64) {
    let [_, _, _, vx, vy, r] = *s;
    let beta = (vy / vx).atan();
    let alpha_f = steer - beta - p.l_front * r / vx;
    let alpha_r = p.l_rear * r / vx - beta;
    let (fzf, fzr) = axle_loads(p);
    (pacejka(alpha_f, fzf, p), pacejka(alpha_r, fzr, p))
}

pub fn rhs(s: &Vec6, steer: f64, drive: f64, p: &VehicleParams) -> Vec6 {
    let [_, _, th, vx, vy, r] = *s;
    let (ff, fr) = tire_forces(s, steer, p);
    [
        vx * th.cos() - vy * th.sin(),
        vx * th.sin() + vy * th.cos(),
        r,
        drive / p.mass + vy * r,
        (ff + fr) / p.mass - vx * r,
        (ff * p.l_front - fr * p.l_rear) / p.yaw_inertia,
    ]
}

fn axpy(a: &Vec6, h: f64, d: &Vec6) -> Vec6 {
    std::array::from_fn(|i| a[i] + h * d[i])
}

/// Explicit Euler with `n` substeps over `dt`.
pub fn euler(s: &Vec6, steer: f64, drive: f64, p: &VehicleParams, dt: f64, n: usize) -> Vec6 {
    let h = dt / n as f64;
    let mut x = *s;
    for _ in 0..n {
        x = axpy(&x, h, &rhs(&x, steer, drive, p));
    }
    x
}

/// Maximum steering maneuver from a straight run at `v`, holding `v_x`,
/// integrated with RK4 at step `h`. Returns `y` at each requested time.
pub fn max_steer_lateral(v: f64, times: &[f64], p: &VehicleParams, h: f64) -> Vec<f64> {
    let f = |s: &Vec6, phi: f64| {
        let steer = (p.max_steer_rate * phi).min(p.max_steer);
        let mut d = rhs(s, steer, 0.0, p);
        d[3] = 0.0;
        d
    };
    let mut s: Vec6 = [0.0, 0.0, 0.0, v, 0.0, 0.0];
    let mut phi = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        while phi < t - 1e-12 {
            let step = h.min(t - phi);
            let k1 = f(&s, phi);
            let k2 = f(&axpy(&s, 0.5 * step, &k1), phi + 0.5 * step);
            let k3 = f(&axpy(&s, 0.5 * step, &k2), phi + 0.5 * step);
            let k4 = f(&axpy(&s, step, &k3), phi + step);
            s = std::array::from_fn(|i| s[i] + step / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
            phi += step;
        }
        out.push(s[1]);
    }
    out
}

/// Running maximum of a sequence.
pub fn running_max(values: &[f64]) -> Vec<f64> {
    let mut best = 0.0f64;
    values
        .iter()
        .map(|&v| {
            best = best.max(v);
            best
        })
        .collect()
}

/// Nominal step response of the speed loop with both poles at `-1`.
pub fn double_pole_step(t: f64) -> f64 {
    1.0 - (1.0 + t) * (-t).exp()
}

/// Seeded generator for sampling test points.
pub fn rng(seed: u64) -> rand::rngs::StdRng {
    rand::SeedableRng::seed_from_u64(seed)
}

/// Richardson-extrapolated central differences.
pub fn richardson_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let central = |i: usize, h: f64| {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[i] += h;
        down[i] -= h;
        (f(&up) - f(&down)) / (2.0 * h)
    };
    (0..x.len())
        .map(|i| (4.0 * central(i, 0.5 * h) - central(i, h)) / 3.0)
        .collect()
}

/// Smallest value of `f` on an `n` by `n` grid over `[-1, 1]^2`, with its
/// location.
pub fn grid_minimum(f: &dyn Fn(f64, f64) -> f64, n: usize) -> (f64, f64, f64) {
    let node = |k: usize| -1.0 + 2.0 * k as f64 / (n - 1) as f64;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (node(i), node(j));
            let v = f(a, b);
            if v < best.0 {
                best = (v, a, b);
            }
        }
    }
    best
}
