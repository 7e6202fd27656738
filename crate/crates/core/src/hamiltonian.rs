//! The agent's pointwise payoff rate and its maximisation.
//!
//! For incentive exposures `(z, u)` the agent's payoff rate at control `a` is
//!
//! ```text
//! h = Σ_ζ (1/γ)(1 − e^{−γ(u(ζ) + c₁)}) K λ⁰(ζ) + b z − (γ/2) σ² z² − c₀
//! ```
//!
//! and `H = sup_a h`. For the demand-response instance the supremum is
//! attained at `α⁰ = z`, `α¹ = (1/γ) log(1 + γ/k₂) − u(−1)`, which gives a
//! closed-form `H`. Generic models fall back to an exhaustive grid search.

use crate::error::{Error, Result};
use crate::model::{GenericModel, LawMoments, MarketParams};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlPoint {
    /// Drift effort α⁰.
    pub alpha0: f64,
    /// Accident-mitigation effort α¹.
    pub alpha1: f64,
}

impl ControlPoint {
    pub fn new(alpha0: f64, alpha1: f64) -> Self {
        Self { alpha0, alpha1 }
    }

    fn lex_lt(&self, other: &Self) -> bool {
        (self.alpha0, self.alpha1) < (other.alpha0, other.alpha1)
    }
}

/// Incentive exposures at one instant: `z` on the Brownian part and one `u`
/// per mark of the model, in the model's mark order.
#[derive(Debug, Clone, PartialEq)]
pub struct IncentiveSlice {
    pub z: f64,
    pub u: Vec<f64>,
}

impl IncentiveSlice {
    /// Slice for the single-mark (−1) demand-response model.
    pub fn single(z: f64, u_minus1: f64) -> Self {
        Self { z, u: vec![u_minus1] }
    }

    /// Jump exposure at the mark −1.
    pub fn u_minus1(&self) -> f64 {
        self.u[0]
    }
}

/// Evaluates the payoff rate `h` for a generic model.
pub fn h_integrand(
    t: f64,
    x: f64,
    s: &IncentiveSlice,
    law: &LawMoments,
    a: &ControlPoint,
    model: &GenericModel,
    gamma: f64,
) -> Result<f64> {
    debug_assert_eq!(s.u.len(), model.marks.len());
    let mut jump = 0.0;
    for ((&mark, &rate), &u) in model.marks.iter().zip(&model.base_rates).zip(&s.u) {
        if rate == 0.0 {
            continue;
        }
        let reward = finite((model.jump_reward)(t, x, mark, law, a), "jump_reward")?;
        let tilt = finite((model.intensity_tilt)(t, x, mark, law, a), "intensity_tilt")?;
        jump += (1.0 - (-gamma * (u + reward)).exp()) / gamma * tilt * rate;
    }
    let b = finite((model.drift)(t, x, law, a), "drift")?;
    let vol = finite((model.vol)(t, x), "vol")?;
    let c0 = finite((model.run_cost)(t, x, law, a), "run_cost")?;
    finite(jump + b * s.z - 0.5 * gamma * vol * vol * s.z * s.z - c0, "h_integrand")
}

fn finite(v: f64, what: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteValue(what))
    }
}

/// `(1/γ) log(1 + γ/k₂)`: the value of `u(−1) + α¹` at the optimum.
#[inline]
pub fn optimal_jump_margin(p: &MarketParams) -> f64 {
    (p.gamma / p.k2).ln_1p() / p.gamma
}

/// `((γ+k₂)/k₂)^{−k₂/γ}`, the tilt factor at the optimal mitigation effort.
#[inline]
pub fn tilt_constant(p: &MarketParams) -> f64 {
    ((p.gamma + p.k2) / p.k2).powf(-p.k2 / p.gamma)
}

/// Closed-form best response of the demand-response instance.
pub fn best_response_closed(s: &IncentiveSlice, p: &MarketParams) -> ControlPoint {
    ControlPoint::new(s.z, optimal_jump_margin(p) - s.u_minus1())
}

/// Part of `H` that does not depend on the state:
/// `(1 − γσ²) z²/2 + z k₁ m + (1/(γ+k₂)) ((γ+k₂)/k₂)^{−k₂/γ} e^{k₂u} Var`.
#[inline]
pub fn hamiltonian_state_free(s: &IncentiveSlice, law: &LawMoments, p: &MarketParams) -> f64 {
    let z = s.z;
    0.5 * (1.0 - p.gamma_sigma2()) * z * z
        + z * p.k1 * law.mean
        + tilt_constant(p) * (p.k2 * s.u_minus1()).exp() * law.variance / (p.gamma + p.k2)
}

/// The principal-shifted supremum `Ĥ = H − g`.
pub fn hamiltonian_hat(x: f64, s: &IncentiveSlice, law: &LawMoments, p: &MarketParams) -> f64 {
    p.delta * x + hamiltonian_state_free(s, law, p)
}

/// The supremum `H = sup_a h` of the demand-response instance.
pub fn hamiltonian_sup(t: f64, x: f64, s: &IncentiveSlice, law: &LawMoments, p: &MarketParams) -> f64 {
    p.f(t, x) + hamiltonian_state_free(s, law, p)
}

/// One axis of a product control grid: `n` equispaced points on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        Self { lo, hi, n }
    }

    /// Axis of spacing `step` covering `[lo, hi]` (the last point may exceed `hi`
    /// by less than one step).
    pub fn with_step(lo: f64, hi: f64, step: f64) -> Self {
        let n = ((hi - lo) / step).ceil() as usize + 1;
        Self::new(lo, lo + step * (n - 1) as f64, n)
    }

    pub fn step(&self) -> f64 {
        if self.n > 1 {
            (self.hi - self.lo) / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        if self.n == 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.n - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlGrid {
    Product { alpha0: GridAxis, alpha1: GridAxis },
    Points(Vec<ControlPoint>),
}

impl ControlGrid {
    pub fn product(alpha0: GridAxis, alpha1: GridAxis) -> Self {
        ControlGrid::Product { alpha0, alpha1 }
    }

    /// Default search box: the closed-form value ± 5 with 2001 points per axis.
    pub fn around(center: ControlPoint) -> Self {
        Self::product(
            GridAxis::new(center.alpha0 - 5.0, center.alpha0 + 5.0, 2001),
            GridAxis::new(center.alpha1 - 5.0, center.alpha1 + 5.0, 2001),
        )
    }

    pub fn len(&self) -> usize {
        match self {
            ControlGrid::Product { alpha0, alpha1 } => alpha0.n * alpha1.n,
            ControlGrid::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let ok = match self {
            ControlGrid::Product { alpha0, alpha1 } => [alpha0, alpha1]
                .iter()
                .all(|a| a.lo.is_finite() && a.hi.is_finite() && a.lo <= a.hi),
            ControlGrid::Points(p) => p.iter().all(|c| c.alpha0.is_finite() && c.alpha1.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("control grid must be finite and ordered".into()))
        }
    }
}

/// Grid argmax of [`h_integrand`]. Ties go to the lexicographically smallest
/// `(alpha0, alpha1)`. Returns the maximiser and the maximum.
#[allow(clippy::too_many_arguments)]
pub fn best_response_grid(
    t: f64,
    x: f64,
    s: &IncentiveSlice,
    law: &LawMoments,
    model: &GenericModel,
    gamma: f64,
    grid: &ControlGrid,
) -> Result<(ControlPoint, f64)> {
    grid.validate()?;
    let mut best: Option<(ControlPoint, f64)> = None;
    let mut consider = |a: ControlPoint| -> Result<()> {
        let v = h_integrand(t, x, s, law, &a, model, gamma)?;
        match best {
            Some((b, bv)) if v < bv || (v == bv && !a.lex_lt(&b)) => {}
            _ => best = Some((a, v)),
        }
        Ok(())
    };
    match grid {
        ControlGrid::Product { alpha0, alpha1 } => {
            for i in 0..alpha0.n {
                let a0 = alpha0.point(i);
                for j in 0..alpha1.n {
                    consider(ControlPoint::new(a0, alpha1.point(j)))?;
                }
            }
        }
        ControlGrid::Points(points) => {
            for &a in points {
                consider(a)?;
            }
        }
    }
    best.ok_or(Error::EmptyGrid)
}
