//! Model parameters and coefficient records.
//!
//! [`MarketParams`] carries every scalar of the demand-response model. The
//! agent's running gain `f` and the principal's running cost `g` are affine,
//! `f(t,x) = f₀ + f₁x` and `g(t,x) = f₀ + (f₁ − δ)x`, so that `f − g = δx`
//! holds exactly.
//!
//! [`GenericModel`] is the coefficient-level description consumed by the
//! generic engine: drift, volatility, costs, intensity tilt and a finite mark
//! set. [`example_model`] builds the demand-response instance.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, InvalidParameter, Result};
use crate::hamiltonian::ControlPoint;

/// First two moments of a one-dimensional law.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LawMoments {
    pub mean: f64,
    pub variance: f64,
}

impl LawMoments {
    pub fn new(mean: f64, variance: f64) -> Self {
        Self { mean, variance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketParams {
    /// Agent risk aversion γ.
    pub gamma: f64,
    /// Diffusion volatility σ.
    pub sigma: f64,
    /// Synergy coefficient k₁ on the crowd mean.
    pub k1: f64,
    /// Accident-mitigation coefficient k₂.
    pub k2: f64,
    /// Slope δ of `f − g`.
    pub delta: f64,
    /// Principal's terminal reward slope β.
    pub beta: f64,
    /// Principal's variance penalty θ.
    pub theta: f64,
    /// Terminal time T.
    pub horizon: f64,
    /// Reservation utility R₀ (negative).
    pub reservation: f64,
    /// Initial mean of the state law.
    pub m0: f64,
    /// Initial variance of the state law.
    pub v0: f64,
    /// Slope f₁ of the agent's running gain.
    pub f_slope: f64,
    /// Intercept f₀ of the agent's running gain.
    pub f_intercept: f64,
}

impl MarketParams {
    /// The reference configuration used throughout the test-suite and as the
    /// CLI default.
    pub fn reference() -> Self {
        Self {
            gamma: 1.0,
            sigma: 0.5,
            k1: 0.5,
            k2: 1.0,
            delta: 0.2,
            beta: 1.0,
            theta: 0.5,
            horizon: 1.0,
            reservation: -1.0,
            m0: 0.0,
            v0: 0.0,
            f_slope: 0.2,
            f_intercept: 0.0,
        }
    }

    /// Returns every violated invariant, or the parameters unchanged.
    pub fn validate(self) -> std::result::Result<Self, Vec<InvalidParameter>> {
        let mut bad: Vec<InvalidParameter> = Vec::new();
        let mut check = |name: &'static str, ok: bool, reason: &str| {
            // One message per field; a NaN fails every later check too.
            if !ok && !bad.iter().any(|b| b.name == name) {
                bad.push(InvalidParameter {
                    name,
                    reason: reason.to_string(),
                });
            }
        };
        let p = &self;
        for (name, value) in p.named_fields() {
            check(name, value.is_finite(), "must be finite");
        }
        check("gamma", p.gamma > 0.0, "must be > 0");
        check("sigma", p.sigma > 0.0, "must be > 0");
        check("k2", p.k2 > 0.0, "must be > 0");
        check("theta", p.theta >= 0.0, "must be >= 0");
        check("horizon", p.horizon > 0.0, "must be > 0");
        check("v0", p.v0 >= 0.0, "must be >= 0");
        check(
            "reservation",
            p.reservation < 0.0,
            "must be < 0 so that log(-R0) is defined",
        );
        if bad.is_empty() {
            Ok(self)
        } else {
            Err(bad)
        }
    }

    /// [`validate`](Self::validate) lifted into the crate error type.
    pub fn validated(self) -> Result<Self> {
        self.validate().map_err(Error::InvalidParameters)
    }

    pub fn named_fields(&self) -> [(&'static str, f64); 13] {
        [
            ("gamma", self.gamma),
            ("sigma", self.sigma),
            ("k1", self.k1),
            ("k2", self.k2),
            ("delta", self.delta),
            ("beta", self.beta),
            ("theta", self.theta),
            ("horizon", self.horizon),
            ("reservation", self.reservation),
            ("m0", self.m0),
            ("v0", self.v0),
            ("f_slope", self.f_slope),
            ("f_intercept", self.f_intercept),
        ]
    }

    /// Overwrite one field by name. Returns `false` for an unknown name.
    pub fn set_field(&mut self, name: &str, value: f64) -> bool {
        let slot = match name {
            "gamma" => &mut self.gamma,
            "sigma" => &mut self.sigma,
            "k1" => &mut self.k1,
            "k2" => &mut self.k2,
            "delta" => &mut self.delta,
            "beta" => &mut self.beta,
            "theta" => &mut self.theta,
            "horizon" => &mut self.horizon,
            "reservation" => &mut self.reservation,
            "m0" => &mut self.m0,
            "v0" => &mut self.v0,
            "f_slope" => &mut self.f_slope,
            "f_intercept" => &mut self.f_intercept,
            _ => return false,
        };
        *slot = value;
        true
    }

    /// Agent's running gain `f(t, x)`.
    #[inline]
    pub fn f(&self, _t: f64, x: f64) -> f64 {
        self.f_intercept + self.f_slope * x
    }

    /// Slope of the principal's running cost, `g₁ = f₁ − δ`.
    #[inline]
    pub fn g_slope(&self) -> f64 {
        self.f_slope - self.delta
    }

    /// Principal's running cost `g(t, x)`.
    #[inline]
    pub fn g(&self, _t: f64, x: f64) -> f64 {
        self.f_intercept + self.g_slope() * x
    }

    /// `γσ²`, which appears in every incentive formula.
    #[inline]
    pub fn gamma_sigma2(&self) -> f64 {
        self.gamma * self.sigma * self.sigma
    }
}

type DriftFn = dyn Fn(f64, f64, &LawMoments, &ControlPoint) -> f64 + Send + Sync;
type VolFn = dyn Fn(f64, f64) -> f64 + Send + Sync;
type RunCostFn = dyn Fn(f64, f64, &LawMoments, &ControlPoint) -> f64 + Send + Sync;
type MarkFn = dyn Fn(f64, f64, f64, &LawMoments, &ControlPoint) -> f64 + Send + Sync;

/// Coefficient-level model description.
///
/// Mark-dependent closures take `(t, x, mark, law, control)`; the others take
/// `(t, x, law, control)`.
#[derive(Clone)]
pub struct GenericModel {
    pub drift: Arc<DriftFn>,
    pub vol: Arc<VolFn>,
    pub run_cost: Arc<RunCostFn>,
    pub jump_reward: Arc<MarkFn>,
    pub intensity_tilt: Arc<MarkFn>,
    pub marks: Vec<f64>,
    pub base_rates: Vec<f64>,
    /// Principal's running cost, accumulated into `g_integral` when present.
    pub principal_cost: Option<Arc<VolFn>>,
}

impl fmt::Debug for GenericModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenericModel")
            .field("marks", &self.marks)
            .field("base_rates", &self.base_rates)
            .finish_non_exhaustive()
    }
}

impl GenericModel {
    pub fn validate(&self) -> Result<()> {
        if self.marks.is_empty() {
            return Err(Error::invalid("marks", "must be nonempty"));
        }
        if self.marks.len() != self.base_rates.len() {
            return Err(Error::invalid("base_rates", "must have the same length as marks"));
        }
        if self.base_rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("base_rates", "must be finite and >= 0"));
        }
        if self.marks.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("marks", "must be finite"));
        }
        Ok(())
    }
}

/// The demand-response instance: drift `α⁰ + k₁·mean`, constant volatility,
/// quadratic effort cost net of `f`, jump reward `α¹`, intensity tilt
/// `e^{−k₂α¹}·variance`, and a single mark at −1 with unit base rate.
pub fn example_model(p: &MarketParams) -> GenericModel {
    let p = *p;
    GenericModel {
        drift: Arc::new(move |_t, _x, law, a| a.alpha0 + p.k1 * law.mean),
        vol: Arc::new(move |_t, _x| p.sigma),
        run_cost: Arc::new(move |t, x, _law, a| 0.5 * a.alpha0 * a.alpha0 - p.f(t, x)),
        jump_reward: Arc::new(|_t, _x, _mark, _law, a| a.alpha1),
        intensity_tilt: Arc::new(move |_t, _x, _mark, law, a| (-p.k2 * a.alpha1).exp() * law.variance),
        marks: vec![-1.0],
        base_rates: vec![1.0],
        principal_cost: Some(Arc::new(move |t, x| p.g(t, x))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_set_is_valid() {
        assert!(MarketParams::reference().validate().is_ok());
    }

    #[test]
    fn zero_gamma_is_rejected() {
        let p = MarketParams {
            gamma: 0.0,
            ..MarketParams::reference()
        };
        let err = p.validate().unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].name, "gamma");
    }

    #[test]
    fn positive_reservation_is_rejected() {
        let p = MarketParams {
            reservation: 1.0,
            ..MarketParams::reference()
        };
        let err = p.validate().unwrap_err();
        assert_eq!(err[0].name, "reservation");
    }

    #[test]
    fn every_violation_is_reported() {
        let p = MarketParams {
            gamma: -1.0,
            sigma: 0.0,
            k2: 0.0,
            theta: -0.1,
            v0: -1.0,
            ..MarketParams::reference()
        };
        let names: Vec<_> = p.validate().unwrap_err().iter().map(|e| e.name).collect();
        assert_eq!(names, ["gamma", "sigma", "k2", "theta", "v0"]);
    }

    #[test]
    fn nan_reported_once() {
        let p = MarketParams {
            sigma: f64::NAN,
            ..MarketParams::reference()
        };
        let err = p.validate().unwrap_err();
        assert_eq!(err.len(), 1);
        assert_eq!(err[0].name, "sigma");
    }

    #[test]
    fn example_model_coefficients() {
        let p = MarketParams::reference();
        let m = example_model(&p);
        let law = LawMoments::new(2.0, 3.0);
        let a = ControlPoint::new(0.3, 0.0);
        assert!((((m.drift)(0.1, 5.0, &law, &a)) - 1.3).abs() < 1e-15);
        let a = ControlPoint::new(2.0, 0.0);
        assert!((((m.run_cost)(0.0, 1.0, &law, &a)) - 1.8).abs() < 1e-15);
        let a = ControlPoint::new(0.0, 0.0);
        assert_eq!((m.intensity_tilt)(0.0, 0.0, -1.0, &law, &a), 3.0);
        assert_eq!((m.vol)(0.3, 1.0), 0.5);
        assert_eq!(m.marks, vec![-1.0]);
        assert_eq!(m.base_rates, vec![1.0]);
        m.validate().unwrap();
    }

    #[test]
    fn generic_model_shape_checks() {
        let p = MarketParams::reference();
        let mut m = example_model(&p);
        m.base_rates = vec![1.0, 2.0];
        assert!(m.validate().is_err());
        m.base_rates = vec![-1.0];
        assert!(m.validate().is_err());
        m.marks.clear();
        m.base_rates.clear();
        assert!(m.validate().is_err());
    }

    #[test]
    fn set_field_by_name() {
        let mut p = MarketParams::reference();
        assert!(p.set_field("k2", 4.0));
        assert_eq!(p.k2, 4.0);
        assert!(!p.set_field("eta", 1.0));
    }

    proptest! {
        #[test]
        fn cost_split_difference_is_delta_x(
            f0 in -5.0..5.0f64, f1 in -5.0..5.0f64, delta in -3.0..3.0f64,
            t in 0.0..1.0f64, x in -10.0..10.0f64,
        ) {
            let p = MarketParams { f_intercept: f0, f_slope: f1, delta, ..MarketParams::reference() };
            let diff = p.f(t, x) - p.g(t, x);
            prop_assert!((diff - delta * x).abs() <= 1e-12 * (1.0 + (f1 * x).abs()));
        }

        #[test]
        fn tilt_decreasing_in_effort_and_linear_in_variance(
            a in -3.0..3.0f64, da in 0.01..2.0f64, var in 0.01..5.0f64, c in 0.1..4.0f64,
        ) {
            let p = MarketParams::reference();
            let m = example_model(&p);
            let law = LawMoments::new(0.0, var);
            let lo = (m.intensity_tilt)(0.0, 0.0, -1.0, &law, &ControlPoint::new(0.0, a));
            let hi = (m.intensity_tilt)(0.0, 0.0, -1.0, &law, &ControlPoint::new(0.0, a + da));
            prop_assert!(hi < lo);
            let scaled = LawMoments::new(0.0, c * var);
            let s = (m.intensity_tilt)(0.0, 0.0, -1.0, &scaled, &ControlPoint::new(0.0, a));
            prop_assert!((s - c * lo).abs() <= 1e-12 * s.abs().max(1.0));
        }
    }
}
