//! The principal's value coefficients.
//!
//! The principal's value along the equilibrium law flow is
//! `V(t) = h₀(t) + h₁(t)·mean + h₂(t)·Var − mean(Y)`, where
//!
//! ```text
//! h₂' + (1/k₂) C e^{−k₂h₁ + k₂h₂} = 0,      h₂(T) = −θ/2
//! h₁' + k₁h₁ + δ = 0,                      h₁(T) = β
//! h₀' + h₁²/(2(1+γσ²)) + σ²h₂ = 0,         h₀(T) = 0
//! C = ((γ+k₂)/k₂)^{−k₂/γ} e^{−γ/(γ+k₂)}
//! ```
//!
//! `h₁` is explicit. `e^{−k₂h₂}` is linear in `Q(t) = ∫_t^T e^{−k₂h₁(r)} dr`:
//!
//! ```text
//! e^{−k₂h₂(t)} = e^{k₂θ/2} − C·Q(t)
//! ```
//!
//! which only stays positive on a bounded horizon; past that the coefficients
//! do not exist and [`Error::HorizonTooLong`] is reported. `h₀` is a plain
//! integral of the other two. `Q` and `h₀` are accumulated node by node with
//! adaptive Simpson, so off-grid evaluations only integrate from the nearest
//! node above.
//!
//! `h(t) = C e^{−k₂h₁(t) + k₂h₂(t)}` is the jump-rate factor: the equilibrium
//! accident intensity is `h(t)·Var(X_t)`.

use crate::error::{Error, Result};
use crate::hamiltonian::tilt_constant;
use crate::model::{LawMoments, MarketParams};
use crate::quadrature::{adaptive_simpson, rk4_step3, ABS_FLOOR, REL_TOL};

/// Below this `|k₁|` the `h₁` closed form switches to its `k₁ → 0` limit.
pub const K1_ZERO: f64 = 1e-12;

/// Closed-form `h₁(t) = (β + δ/k₁) e^{k₁(T−t)} − δ/k₁`.
pub fn h1_closed(t: f64, p: &MarketParams) -> f64 {
    let s = p.horizon - t;
    if p.k1.abs() < K1_ZERO {
        return p.beta + p.delta * s;
    }
    // β e^{k₁s} + δ (e^{k₁s} − 1)/k₁, free of cancellation for small k₁s
    let e = (p.k1 * s).exp_m1();
    p.beta * (1.0 + e) + p.delta * e / p.k1
}

/// `C = ((γ+k₂)/k₂)^{−k₂/γ} e^{−γ/(γ+k₂)}`.
pub fn rate_constant(p: &MarketParams) -> f64 {
    tilt_constant(p) * (-p.gamma / (p.gamma + p.k2)).exp()
}

/// Jump-rate factor `h = C e^{−k₂h₁ + k₂h₂}`.
#[inline]
pub fn rate_from(h1: f64, h2: f64, p: &MarketParams) -> f64 {
    rate_constant(p) * (p.k2 * (h2 - h1)).exp()
}

fn accident_integrand(r: f64, p: &MarketParams) -> f64 {
    (-p.k2 * h1_closed(r, p)).exp()
}

/// `∫_a^b e^{−k₂h₁(r)} dr`.
pub fn accident_integral(a: f64, b: f64, p: &MarketParams) -> f64 {
    adaptive_simpson(|r| accident_integrand(r, p), a, b, REL_TOL, ABS_FLOOR)
}

/// `h₂` from `Q(t)`; `t` is only used for the error report.
///
/// Written as `−θ/2 − ln(1 − C Q e^{−k₂θ/2})/k₂` so large θ cannot overflow.
fn h2_from_q(q: f64, t: f64, p: &MarketParams) -> Result<f64> {
    let x = rate_constant(p) * q * (-0.5 * p.k2 * p.theta).exp();
    if !(x < 1.0) || !x.is_finite() {
        return Err(Error::HorizonTooLong { t });
    }
    Ok(-0.5 * p.theta - (-x).ln_1p() / p.k2)
}

/// Closed-form `h₂(t)` with the accident integral from `t` to `T` computed
/// by adaptive quadrature.
pub fn h2_closed(t: f64, p: &MarketParams) -> Result<f64> {
    h2_from_q(accident_integral(t, p.horizon, p), t, p)
}

fn h0_integrand(h1: f64, h2: f64, p: &MarketParams) -> f64 {
    h1 * h1 / (2.0 * (1.0 + p.gamma_sigma2())) + h2 * p.sigma * p.sigma
}

/// `h₀(t) = ∫_t^T (h₁²/(2(1+γσ²)) + σ²h₂) ds`, evaluated from scratch with
/// nested adaptive quadrature.
pub fn h0_quadrature(t: f64, p: &MarketParams) -> Result<f64> {
    // The breakdown set is an initial segment [0, t*), so validity at t covers [t, T].
    h2_closed(t, p)?;
    Ok(adaptive_simpson(
        |s| h0_integrand(h1_closed(s, p), h2_closed(s, p).unwrap_or(f64::NAN), p),
        t,
        p.horizon,
        REL_TOL,
        ABS_FLOOR,
    ))
}

/// Value coefficients on a uniform grid over `[0, T]`, with closed-form
/// evaluators for off-grid times.
#[derive(Debug, Clone)]
pub struct ValueCoefficients {
    pub params: MarketParams,
    pub grid: Vec<f64>,
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub h_rate: Vec<f64>,
    /// `Q(t_i) = ∫_{t_i}^T e^{−k₂h₁}`.
    accident: Vec<f64>,
}

/// Fills the value coefficients on `n_grid` uniform nodes.
pub fn solve_coefficients(p: &MarketParams, n_grid: usize) -> Result<ValueCoefficients> {
    let p = p.validated()?;
    if n_grid < 2 {
        return Err(Error::invalid("n_grid", "must be >= 2"));
    }
    let n = n_grid;
    let grid: Vec<f64> = (0..n)
        .map(|i| {
            if i == n - 1 {
                p.horizon
            } else {
                p.horizon * i as f64 / (n - 1) as f64
            }
        })
        .collect();
    let h1: Vec<f64> = grid.iter().map(|&t| h1_closed(t, &p)).collect();
    let mut accident = vec![0.0; n];
    let mut h2 = vec![0.0; n];
    let mut h0 = vec![0.0; n];
    h2[n - 1] = -0.5 * p.theta;
    for i in (0..n - 1).rev() {
        let (a, b) = (grid[i], grid[i + 1]);
        accident[i] = accident[i + 1] + accident_integral(a, b, &p);
        h2[i] = h2_from_q(accident[i], a, &p)?;
        let q_next = accident[i + 1];
        let piece = adaptive_simpson(
            |s| {
                let q = q_next + accident_integral(s, b, &p);
                let h2s = h2_from_q(q, s, &p).unwrap_or(f64::NAN);
                h0_integrand(h1_closed(s, &p), h2s, &p)
            },
            a,
            b,
            REL_TOL,
            ABS_FLOOR,
        );
        h0[i] = h0[i + 1] + piece;
    }
    let h_rate = h1.iter().zip(&h2).map(|(&a, &b)| rate_from(a, b, &p)).collect();
    let coeffs = ValueCoefficients {
        params: p,
        grid,
        h0,
        h1,
        h2,
        h_rate,
        accident,
    };
    coeffs.check_invariants()?;
    Ok(coeffs)
}

impl ValueCoefficients {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.params.horizon / (self.len() - 1) as f64
    }

    /// Index of the first node at or after `t`.
    fn node_above(&self, t: f64) -> usize {
        let j = (t / self.step()).ceil();
        (j.max(0.0) as usize).min(self.len() - 1)
    }

    pub fn h1_at(&self, t: f64) -> f64 {
        h1_closed(t, &self.params)
    }

    fn accident_at(&self, t: f64) -> f64 {
        let j = self.node_above(t);
        self.accident[j] + accident_integral(t, self.grid[j], &self.params)
    }

    pub fn h2_at(&self, t: f64) -> f64 {
        // Every t ≥ 0 was validated at construction.
        h2_from_q(self.accident_at(t), t, &self.params).unwrap_or(f64::NAN)
    }

    pub fn h0_at(&self, t: f64) -> f64 {
        let j = self.node_above(t);
        let p = &self.params;
        self.h0[j]
            + adaptive_simpson(
                |s| h0_integrand(self.h1_at(s), self.h2_at(s), p),
                t,
                self.grid[j],
                REL_TOL,
                ABS_FLOOR,
            )
    }

    /// Jump-rate factor `h(t)`.
    pub fn rate_at(&self, t: f64) -> f64 {
        rate_from(self.h1_at(t), self.h2_at(t), &self.params)
    }

    /// Principal's value `h₀(0) + h₁(0) m₀ + h₂(0) v₀ − y0`.
    pub fn principal_value(&self, y0: f64) -> f64 {
        let p = &self.params;
        self.h0[0] + self.h1[0] * p.m0 + self.h2[0] * p.v0 - y0
    }

    pub fn check_invariants(&self) -> Result<()> {
        let p = &self.params;
        let n = self.len();
        let fail = |what: &str| Err(Error::InvalidConfig(format!("value coefficients: {what}")));
        if self.h1[n - 1] != p.beta || self.h2[n - 1] != -0.5 * p.theta || self.h0[n - 1] != 0.0 {
            return fail("terminal conditions not exact");
        }
        if self.grid.windows(2).any(|w| !(w[1] > w[0])) {
            return fail("grid not strictly increasing");
        }
        if self.h2.iter().any(|&v| v < -0.5 * p.theta) {
            return fail("h2 below its terminal value");
        }
        // Zero only through underflow when h₁ is very large.
        if self.h_rate.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return fail("jump-rate factor negative or non-finite");
        }
        for i in 0..n {
            let expected = rate_from(self.h1[i], self.h2[i], p);
            if (self.h_rate[i] - expected).abs() > 1e-14 * expected {
                return fail("jump-rate factor inconsistent with h1, h2");
            }
        }
        Ok(())
    }

    /// CSV rows `(t, h0, h1, h2, h_rate)`.
    pub fn rows(&self) -> impl Iterator<Item = [f64; 5]> + '_ {
        (0..self.len()).map(|i| [self.grid[i], self.h0[i], self.h1[i], self.h2[i], self.h_rate[i]])
    }
}

/// Backward RK4 on the full coefficient system with a fixed step, returning
/// `(t, h0, h1, h2)` from `t = T` down to `t = 0`. Independent of the closed
/// forms; used to cross-check them.
pub fn backward_rk4(p: &MarketParams, n_steps: usize) -> Vec<[f64; 4]> {
    let c = rate_constant(p);
    let a = 1.0 + p.gamma_sigma2();
    let rhs = |_t: f64, y: [f64; 3]| {
        let [_, h1, h2] = y;
        [
            -(h1 * h1 / (2.0 * a) + h2 * p.sigma * p.sigma),
            -(p.k1 * h1 + p.delta),
            -c / p.k2 * (p.k2 * (h2 - h1)).exp(),
        ]
    };
    let dt = -p.horizon / n_steps as f64;
    let mut y = [0.0, p.beta, -0.5 * p.theta];
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push([p.horizon, y[0], y[1], y[2]]);
    for i in 0..n_steps {
        let t = p.horizon + dt * i as f64;
        y = rk4_step3(&rhs, t, y, dt);
        let t_next = if i + 1 == n_steps {
            0.0
        } else {
            p.horizon + dt * (i + 1) as f64
        };
        out.push([t_next, y[0], y[1], y[2]]);
    }
    out
}

/// Fourth-order finite-difference derivative on a uniform grid.
fn fd_derivative(f: &[f64], dt: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "fourth-order stencils need at least five nodes");
    let mut d = vec![0.0; n];
    let c = 12.0 * dt;
    d[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / c;
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / c;
    for i in 2..n - 2 {
        d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / c;
    }
    d[n - 2] = (3.0 * f[n - 1] + 10.0 * f[n - 2] - 18.0 * f[n - 3] + 6.0 * f[n - 4] - f[n - 5]) / c;
    d[n - 1] = (25.0 * f[n - 1] - 48.0 * f[n - 2] + 36.0 * f[n - 3] - 16.0 * f[n - 4] + 3.0 * f[n - 5]) / c;
    d
}

/// Max over grid nodes and `samples` of the HJB residual of the quadratic
/// value ansatz,
///
/// ```text
/// ∂ₜV + h₁²/(2(1+γσ²)) + σ²h₂ + (k₁h₁ + δ) m + (1/k₂) h(t) Var,
/// ∂ₜV = h₀' + h₁' m + h₂' Var,
/// ```
///
/// with time derivatives taken by fourth-order finite differences of the
/// stored arrays.
pub fn hjb_residual(coeffs: &ValueCoefficients, samples: &[LawMoments]) -> f64 {
    let p = &coeffs.params;
    let dt = coeffs.step();
    let d0 = fd_derivative(&coeffs.h0, dt);
    let d1 = fd_derivative(&coeffs.h1, dt);
    let d2 = fd_derivative(&coeffs.h2, dt);
    let mut worst: f64 = 0.0;
    for i in 0..coeffs.len() {
        let (h1, h2) = (coeffs.h1[i], coeffs.h2[i]);
        let rate = rate_from(h1, h2, p);
        for law in samples {
            let (m, var) = (law.mean, law.variance);
            let dv = d0[i] + d1[i] * m + d2[i] * var;
            let sup = h0_integrand(h1, h2, p) + (h1 * p.k1 + p.delta) * m + rate * var / p.k2;
            worst = worst.max((dv + sup).abs());
        }
    }
    worst
}
