//! Optimal incentive exposures and the efforts they induce.
//!
//! ```text
//! Z*(t)     = h₁(t) / (1 + γσ²)
//! U*(t, −1) = 1/(γ+k₂) − h₁(t) + h₂(t) − 1/k₂
//! Y₀        = −log(−R₀)/γ
//! ```
//!
//! The agent's best response is `α⁰ = Z*`, `α¹ = (1/γ) log(1+γ/k₂) − U*`.
//! All curves are deterministic functions of time.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hamiltonian::{best_response_closed, optimal_jump_margin, ControlPoint, IncentiveSlice};
use crate::model::MarketParams;
use crate::value_ode::ValueCoefficients;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type MarkTimeFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Mark of the accident jump.
pub const ACCIDENT_MARK: f64 = -1.0;

/// The contract `ξ = Y_T` is pinned down by `y0` and the exposures.
#[derive(Clone)]
pub struct IncentivePolicy {
    pub y0: f64,
    pub z_of_t: TimeFn,
    /// `(t, mark) → U`.
    pub u_of_t: MarkTimeFn,
}

impl std::fmt::Debug for IncentivePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("IncentivePolicy")
            .field("y0", &self.y0)
            .finish_non_exhaustive()
    }
}

impl IncentivePolicy {
    pub fn z(&self, t: f64) -> f64 {
        (self.z_of_t)(t)
    }

    pub fn u_minus1(&self, t: f64) -> f64 {
        (self.u_of_t)(t, ACCIDENT_MARK)
    }

    pub fn slice(&self, t: f64) -> IncentiveSlice {
        IncentiveSlice::single(self.z(t), self.u_minus1(t))
    }

    pub fn with_y0(mut self, y0: f64) -> Self {
        self.y0 = y0;
        self
    }

    /// Same policy with `Z` shifted by a constant.
    pub fn shifted_z(&self, dz: f64) -> Self {
        let z = self.z_of_t.clone();
        Self {
            y0: self.y0,
            z_of_t: Arc::new(move |t| z(t) + dz),
            u_of_t: self.u_of_t.clone(),
        }
    }

    /// Piecewise-linear policy through the given nodes; `u` is used for every mark.
    pub fn tabulated(y0: f64, t: Vec<f64>, z: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let zt = Table::new(t.clone(), z)?;
        let ut = Table::new(t, u)?;
        Ok(Self {
            y0,
            z_of_t: Arc::new(move |s| zt.eval(s)),
            u_of_t: Arc::new(move |s, _mark| ut.eval(s)),
        })
    }
}

/// Time-deterministic efforts `(α⁰, α¹)`.
#[derive(Clone)]
pub struct AgentPolicy {
    pub a0_of_t: TimeFn,
    pub a1_of_t: TimeFn,
}

impl std::fmt::Debug for AgentPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AgentPolicy").finish_non_exhaustive()
    }
}

impl AgentPolicy {
    pub fn at(&self, t: f64) -> ControlPoint {
        ControlPoint::new((self.a0_of_t)(t), (self.a1_of_t)(t))
    }

    /// Constant-shift deviation `(α⁰ + e0, α¹ + e1)`.
    pub fn shifted(&self, e0: f64, e1: f64) -> Self {
        let (a0, a1) = (self.a0_of_t.clone(), self.a1_of_t.clone());
        Self {
            a0_of_t: Arc::new(move |t| a0(t) + e0),
            a1_of_t: Arc::new(move |t| a1(t) + e1),
        }
    }

    /// Best response to an arbitrary incentive policy.
    pub fn best_response(pol: &IncentivePolicy, p: &MarketParams) -> Self {
        let (z, u) = (pol.z_of_t.clone(), pol.u_of_t.clone());
        let margin = optimal_jump_margin(p);
        Self {
            a0_of_t: Arc::new(move |t| z(t)),
            a1_of_t: Arc::new(move |t| margin - u(t, ACCIDENT_MARK)),
        }
    }

    pub fn tabulated(t: Vec<f64>, a0: Vec<f64>, a1: Vec<f64>) -> Result<Self> {
        let a0t = Table::new(t.clone(), a0)?;
        let a1t = Table::new(t, a1)?;
        Ok(Self {
            a0_of_t: Arc::new(move |s| a0t.eval(s)),
            a1_of_t: Arc::new(move |s| a1t.eval(s)),
        })
    }
}

/// `R̂₀ = −log(−R₀)/γ`.
pub fn reservation_level(p: &MarketParams) -> f64 {
    // `+ 0.0` turns the −0 at R₀ = −1 into +0.
    -(-p.reservation).ln() / p.gamma + 0.0
}

/// `U*(t, −1)` from the coefficient values at `t`.
#[inline]
pub fn optimal_u(h1: f64, h2: f64, p: &MarketParams) -> f64 {
    1.0 / (p.gamma + p.k2) - h1 + h2 - 1.0 / p.k2
}

/// The principal's optimal contract with `Y₀ = R̂₀`.
pub fn optimal_policy(coeffs: &ValueCoefficients, p: &MarketParams) -> IncentivePolicy {
    let p = *p;
    let a = 1.0 + p.gamma_sigma2();
    let cz = Arc::new(coeffs.clone());
    let cu = cz.clone();
    IncentivePolicy {
        y0: reservation_level(&p),
        z_of_t: Arc::new(move |t| cz.h1_at(t) / a),
        u_of_t: Arc::new(move |t, _mark| optimal_u(cu.h1_at(t), cu.h2_at(t), &p)),
    }
}

/// The agent's best response to `pol`.
pub fn equilibrium_agent_policy(pol: &IncentivePolicy, p: &MarketParams) -> AgentPolicy {
    AgentPolicy::best_response(pol, p)
}

/// Checks that every curve is finite on `grid`; returns the largest absolute
/// value seen.
pub fn check_bounded(pol: &IncentivePolicy, agent: &AgentPolicy, grid: &[f64]) -> Result<f64> {
    let mut sup: f64 = 0.0;
    for &t in grid {
        let a = agent.at(t);
        for (v, what) in [
            (pol.z(t), "z_of_t"),
            (pol.u_minus1(t), "u_of_t"),
            (a.alpha0, "a0_of_t"),
            (a.alpha1, "a1_of_t"),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(what));
            }
            sup = sup.max(v.abs());
        }
    }
    Ok(sup)
}

/// Rows `(t, z, u_minus1, alpha0, alpha1)`.
pub fn policy_rows(pol: &IncentivePolicy, agent: &AgentPolicy, grid: &[f64]) -> Vec<[f64; 5]> {
    grid.iter()
        .map(|&t| {
            let a = agent.at(t);
            [t, pol.z(t), pol.u_minus1(t), a.alpha0, a.alpha1]
        })
        .collect()
}

/// Closed-form best response at one instant, for comparisons.
pub fn best_response_at(pol: &IncentivePolicy, p: &MarketParams, t: f64) -> ControlPoint {
    best_response_closed(&pol.slice(t), p)
}

/// Piecewise-linear interpolant, constant outside the node range.
#[derive(Debug, Clone)]
struct Table {
    t: Vec<f64>,
    v: Vec<f64>,
}

impl Table {
    fn new(t: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if t.is_empty() || t.len() != v.len() {
            return Err(Error::InvalidConfig(
                "policy table needs matching nonempty columns".into(),
            ));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidConfig("policy table times must increase".into()));
        }
        if t.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(Error::InvalidConfig("policy table entries must be finite".into()));
        }
        Ok(Self { t, v })
    }

    fn eval(&self, s: f64) -> f64 {
        let n = self.t.len();
        if s <= self.t[0] {
            return self.v[0];
        }
        if s >= self.t[n - 1] {
            return self.v[n - 1];
        }
        let j = self.t.partition_point(|&x| x <= s);
        let (t0, t1) = (self.t[j - 1], self.t[j]);
        let w = (s - t0) / (t1 - t0);
        self.v[j - 1] + w * (self.v[j] - self.v[j - 1])
    }
}
