//! Budgeted box-constrained minimizer.
//!
//! Projected BFGS with an Armijo backtracking search along the projection
//! arc. Variables sitting on a bound with the gradient pointing outward are
//! frozen for the iteration. The best point seen is always returned, so the
//! result is never worse than the start.

use crate::error::{Error, Result};

/// Hard limits on one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_iterations: usize,
    pub max_evaluations: usize,
    pub step_tolerance: f64,
    pub optimality_tolerance: f64,
}

impl Default for Budget {
    /// Embedded-target limits: 10 iterations, 100 evaluations, 1e-3 tolerances.
    fn default() -> Self {
        Self {
            max_iterations: 10,
            max_evaluations: 100,
            step_tolerance: 1e-3,
            optimality_tolerance: 1e-3,
        }
    }
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || self.max_evaluations == 0 {
            return Err(Error::invalid("budget", "iteration and evaluation limits must be positive"));
        }
        if !(self.step_tolerance > 0.0 && self.optimality_tolerance > 0.0) {
            return Err(Error::invalid("budget", "tolerances must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    /// A tolerance test passed.
    Converged,
    /// Stopped by the iteration or evaluation cap.
    BudgetExhausted,
    /// Stopped without finding any point better than the start.
    NoImprovement,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::BudgetExhausted => "budget_exhausted",
            SolveStatus::NoImprovement => "no_improvement",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub f_initial: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub evaluations: usize,
}

impl SolveResult {
    pub fn improved(&self) -> bool {
        self.f < self.f_initial
    }
}

const ARMIJO: f64 = 1e-4;
const BACKTRACK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 30;

/// Relative central-difference step.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Central finite-difference gradient of `f` at `x`. Costs `2 n` calls.
pub fn central_gradient(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], grad: &mut [f64]) {
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        let h = fd_step(x[i]);
        probe[i] = x[i] + h;
        let up = f(&probe);
        probe[i] = x[i] - h;
        let down = f(&probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * h);
    }
}

struct Counted<'a> {
    f: &'a mut dyn FnMut(&[f64]) -> f64,
    calls: usize,
    limit: usize,
}

impl Counted<'_> {
    fn remaining(&self) -> usize {
        self.limit - self.calls
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        debug_assert!(self.calls < self.limit);
        self.calls += 1;
        (self.f)(x)
    }
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lower[i], upper[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Dense inverse-Hessian approximation.
struct InverseHessian {
    n: usize,
    h: Vec<f64>,
    fresh: bool,
}

impl InverseHessian {
    fn new(n: usize) -> Self {
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            h[i * n + i] = 1.0;
        }
        Self { n, h, fresh: true }
    }

    fn reset(&mut self) {
        *self = Self::new(self.n);
    }

    fn apply(&self, g: &[f64], free: &[bool], out: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            out[i] = if free[i] {
                -(0..n).filter(|&j| free[j]).map(|j| self.h[i * n + j] * g[j]).sum::<f64>()
            } else {
                0.0
            };
        }
    }

    fn update(&mut self, s: &[f64], y: &[f64]) {
        let sy = dot(s, y);
        if !(sy > 1e-12 * dot(s, s).sqrt() * dot(y, y).sqrt()) {
            return;
        }
        let n = self.n;
        if self.fresh {
            let scale = sy / dot(y, y);
            for v in self.h.iter_mut() {
                *v *= scale;
            }
            self.fresh = false;
        }
        let rho = 1.0 / sy;
        let mut hy = vec![0.0; n];
        for i in 0..n {
            hy[i] = (0..n).map(|j| self.h[i * n + j] * y[j]).sum();
        }
        let yhy = dot(y, &hy);
        for i in 0..n {
            for j in 0..n {
                self.h[i * n + j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
            }
        }
    }
}

/// Minimizes `objective` over the box `[lower, upper]` from `x0`.
///
/// Without an analytic `gradient`, central differences with step
/// [`fd_step`] are used and charged against the evaluation budget.
pub fn minimize_box(
    objective: &mut dyn FnMut(&[f64]) -> f64,
    mut gradient: Option<&mut dyn FnMut(&[f64], &mut [f64])>,
    x0: &[f64],
    lower: &[f64],
    upper: &[f64],
    budget: &Budget,
) -> Result<SolveResult> {
    budget.validate()?;
    let n = x0.len();
    if lower.len() != n || upper.len() != n {
        return Err(Error::Dimension(format!(
            "x0 has {n} entries, bounds have {} and {}",
            lower.len(),
            upper.len()
        )));
    }
    for i in 0..n {
        if !(lower[i] <= x0[i] && x0[i] <= upper[i]) {
            return Err(Error::invalid("x0", format!("entry {i} lies outside its bounds")));
        }
    }

    let mut f = Counted {
        f: objective,
        calls: 0,
        limit: budget.max_evaluations,
    };
    let f0 = f.eval(x0);
    if !f0.is_finite() {
        return Err(Error::NonFiniteObjective);
    }

    let mut x = x0.to_vec();
    let mut fx = f0;
    let mut g = vec![0.0; n];
    let mut g_prev = vec![0.0; n];
    let mut x_prev = vec![0.0; n];
    let mut have_prev = false;
    let mut hess = InverseHessian::new(n);
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut free = vec![true; n];
    let mut iterations = 0;

    let status = loop {
        if iterations >= budget.max_iterations {
            break SolveStatus::BudgetExhausted;
        }
        match gradient.as_mut() {
            Some(grad) => grad(&x, &mut g),
            None => {
                if f.remaining() < 2 * n {
                    break SolveStatus::BudgetExhausted;
                }
                let mut eval = |p: &[f64]| f.eval(p);
                central_gradient(&mut eval, &x, &mut g);
            }
        }
        if g.iter().any(|v| !v.is_finite()) {
            break SolveStatus::NoImprovement;
        }

        if have_prev {
            let s: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(&g_prev).map(|(a, b)| a - b).collect();
            hess.update(&s, &y);
        }

        // Projected-gradient stationarity.
        let mut pg = 0.0f64;
        for i in 0..n {
            let moved = (x[i] - g[i]).clamp(lower[i], upper[i]) - x[i];
            pg = pg.max(moved.abs());
            free[i] = !((x[i] <= lower[i] && g[i] > 0.0) || (x[i] >= upper[i] && g[i] < 0.0));
        }
        if pg < budget.optimality_tolerance {
            break SolveStatus::Converged;
        }

        hess.apply(&g, &free, &mut dir);
        if dot(&dir, &g) >= 0.0 {
            hess.reset();
            hess.apply(&g, &free, &mut dir);
        }
        if hess.fresh {
            // First step: unit move in the infinity norm.
            let scale = inf_norm(&dir);
            if scale > 0.0 {
                for d in dir.iter_mut() {
                    *d /= scale;
                }
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            if f.remaining() == 0 {
                break;
            }
            for i in 0..n {
                trial[i] = x[i] + alpha * dir[i];
            }
            project(&mut trial, lower, upper);
            let decrease: f64 = (0..n).map(|i| g[i] * (trial[i] - x[i])).sum();
            let ft = f.eval(&trial);
            if ft.is_finite() && ft < fx && ft <= fx + ARMIJO * decrease {
                accepted = Some(ft);
                break;
            }
            alpha *= BACKTRACK;
        }
        iterations += 1;

        let Some(ft) = accepted else {
            if f.remaining() > 0 && !hess.fresh {
                hess.reset();
                have_prev = false;
                continue;
            }
            break if f.remaining() == 0 {
                SolveStatus::BudgetExhausted
            } else if fx < f0 {
                SolveStatus::Converged
            } else {
                SolveStatus::NoImprovement
            };
        };

        let step = (0..n).fold(0.0f64, |m, i| m.max((trial[i] - x[i]).abs()));
        x_prev.copy_from_slice(&x);
        g_prev.copy_from_slice(&g);
        have_prev = true;
        x.copy_from_slice(&trial);
        fx = ft;
        if step < budget.step_tolerance {
            if hess.fresh {
                // A short gradient step only means convergence if it was
                // not cut back by the line search; otherwise the curvature
                // update from this step is what the next one needs.
                if alpha == 1.0 {
                    break SolveStatus::Converged;
                }
            } else {
                // Curvature picked up across a steep region can stall the
                // quasi-Newton step; retry from the scaled gradient first.
                hess.reset();
                have_prev = false;
            }
        }
    };

    let status = if status == SolveStatus::BudgetExhausted && fx >= f0 {
        SolveStatus::NoImprovement
    } else {
        status
    };
    Ok(SolveResult {
        x,
        f: fx,
        f_initial: f0,
        status,
        iterations,
        evaluations: f.calls,
    })
}
