//! Mean and variance of the equilibrium law.
//!
//! With the law-level accident intensity `h(t)·v(t)` and unit down-jumps,
//!
//! ```text
//! m' = k₁m − h(t)v + Z*(t)
//! v' = h(t)v + σ²
//! ```
//!
//! a linear system with time-dependent coefficients, integrated by RK4 with
//! `h` evaluated exactly at the half-steps.
//!
//! The second moment `q = v + m²` then satisfies
//! `q' = 2k₁m² + σ² + 2mZ* + h(1 − 2m)v`. [`q_prime_variants`] also returns
//! the right-hand side with the jump term `−h(2m + 1)v`; the two agree only
//! when `v = 0`, and [`integrate_second_moment`] integrates either one so
//! simulations can tell them apart.

use crate::model::{LawMoments, MarketParams};
use crate::quadrature::rk4_step2;
use crate::value_ode::ValueCoefficients;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentFlow {
    pub grid: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub q: Vec<f64>,
    /// Jump-rate factor `h` at the nodes; the accident intensity is `h·v`.
    pub rate: Vec<f64>,
}

impl MomentFlow {
    /// Flow from mean and variance curves; `q` is derived.
    pub fn from_moments(grid: Vec<f64>, m: Vec<f64>, v: Vec<f64>, rate: Vec<f64>) -> Self {
        let q = m.iter().zip(&v).map(|(m, v)| v + m * m).collect();
        Self { grid, m, v, q, rate }
    }

    /// Constant flow at `(m0, v0)`.
    pub fn flat(grid: Vec<f64>, m0: f64, v0: f64, rate: Vec<f64>) -> Self {
        let n = grid.len();
        Self::from_moments(grid, vec![m0; n], vec![v0; n], rate)
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Law moments at `t` by linear interpolation between nodes.
    pub fn at(&self, t: f64) -> LawMoments {
        let g = &self.grid;
        let n = g.len();
        if n == 1 || t <= g[0] {
            return LawMoments::new(self.m[0], self.v[0]);
        }
        if t >= g[n - 1] {
            return LawMoments::new(self.m[n - 1], self.v[n - 1]);
        }
        let j = g.partition_point(|&x| x <= t);
        let w = (t - g[j - 1]) / (g[j] - g[j - 1]);
        let lerp = |a: &[f64]| a[j - 1] + w * (a[j] - a[j - 1]);
        LawMoments::new(lerp(&self.m), lerp(&self.v))
    }

    /// `∫ h v dt` over the grid: composite Simpson on uniform grids with an
    /// even number of intervals, trapezoid otherwise.
    pub fn expected_jumps(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let f = |i: usize| self.rate[i] * self.v[i];
        let span = self.grid[n - 1] - self.grid[0];
        let dt = span / (n - 1) as f64;
        let uniform = self.grid.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-9 * span);
        if uniform && (n - 1).is_multiple_of(2) {
            let inner: f64 = (1..n - 1).map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * f(i)).sum();
            (f(0) + f(n - 1) + inner) * dt / 3.0
        } else {
            self.grid
                .windows(2)
                .enumerate()
                .map(|(i, w)| 0.5 * (w[1] - w[0]) * (f(i) + f(i + 1)))
                .sum()
        }
    }

    /// Rows `(t, m, v, q, intensity)`.
    pub fn rows(&self) -> impl Iterator<Item = [f64; 5]> + '_ {
        (0..self.len()).map(|i| [self.grid[i], self.m[i], self.v[i], self.q[i], self.rate[i] * self.v[i]])
    }
}

fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            if i == n - 1 {
                horizon
            } else {
                horizon * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Equilibrium mean and variance on `n_grid` uniform nodes.
pub fn solve_moments(coeffs: &ValueCoefficients, p: &MarketParams, n_grid: usize) -> MomentFlow {
    assert!(n_grid >= 2, "n_grid must be >= 2");
    let a = 1.0 + p.gamma_sigma2();
    let s2 = p.sigma * p.sigma;
    let rhs = |t: f64, y: [f64; 2]| {
        let h = coeffs.rate_at(t);
        [p.k1 * y[0] - h * y[1] + coeffs.h1_at(t) / a, h * y[1] + s2]
    };
    let grid = uniform_grid(p.horizon, n_grid);
    let mut m = Vec::with_capacity(n_grid);
    let mut v = Vec::with_capacity(n_grid);
    let mut y = [p.m0, p.v0];
    m.push(y[0]);
    v.push(y[1]);
    for w in grid.windows(2) {
        y = rk4_step2(&rhs, w[0], y, w[1] - w[0]);
        m.push(y[0]);
        v.push(y[1].max(0.0));
    }
    let rate = grid.iter().map(|&t| coeffs.rate_at(t)).collect();
    MomentFlow::from_moments(grid, m, v, rate)
}

/// The two candidate right-hand sides for `q'`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QPrime {
    /// Jump term `−h(2m + 1)v`.
    pub alternative: f64,
    /// Jump term `h(1 − 2m)v`, consistent with `v' = hv + σ²`.
    pub derived: f64,
}

pub fn q_prime_variants(t: f64, law: &LawMoments, coeffs: &ValueCoefficients, p: &MarketParams) -> QPrime {
    let (m, v) = (law.mean, law.variance);
    let h = coeffs.rate_at(t);
    let z = coeffs.h1_at(t) / (1.0 + p.gamma_sigma2());
    let base = 2.0 * p.k1 * m * m + p.sigma * p.sigma + 2.0 * m * z;
    QPrime {
        alternative: base - h * (2.0 * m + 1.0) * v,
        derived: base + h * (1.0 - 2.0 * m) * v,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QVariant {
    Alternative,
    Derived,
}

/// Integrates `(m, q)` with the chosen `q'` variant, `v = q − m²`.
pub fn integrate_second_moment(
    coeffs: &ValueCoefficients,
    p: &MarketParams,
    n_grid: usize,
    variant: QVariant,
) -> MomentFlow {
    assert!(n_grid >= 2, "n_grid must be >= 2");
    let a = 1.0 + p.gamma_sigma2();
    let rhs = |t: f64, y: [f64; 2]| {
        let v = y[1] - y[0] * y[0];
        let law = LawMoments::new(y[0], v);
        let qp = q_prime_variants(t, &law, coeffs, p);
        let h = coeffs.rate_at(t);
        let dq = match variant {
            QVariant::Alternative => qp.alternative,
            QVariant::Derived => qp.derived,
        };
        [p.k1 * y[0] - h * v + coeffs.h1_at(t) / a, dq]
    };
    let grid = uniform_grid(p.horizon, n_grid);
    let mut m = vec![p.m0];
    let mut q = vec![p.v0 + p.m0 * p.m0];
    let mut y = [m[0], q[0]];
    for w in grid.windows(2) {
        y = rk4_step2(&rhs, w[0], y, w[1] - w[0]);
        m.push(y[0]);
        q.push(y[1]);
    }
    let v = m.iter().zip(&q).map(|(m, q)| q - m * m).collect();
    let rate = grid.iter().map(|&t| coeffs.rate_at(t)).collect();
    MomentFlow { grid, m, v, q, rate }
}
