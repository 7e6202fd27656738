//! Value estimates and verification diagnostics computed from ensembles.

use crate::error::{Error, Result};
use crate::incentives::{AgentPolicy, IncentivePolicy};
use crate::model::MarketParams;
use crate::moments::MomentFlow;
use crate::simulator::{simulate_deviation, simulate_equilibrium, PathEnsemble, SimConfig, N_SNAPSHOTS};
use crate::stats::{combined_se, mean, MCEstimate};

/// Verdict threshold in standard errors.
pub const SE_THRESHOLD: f64 = 3.0;
/// Slack for values that should agree exactly up to rounding.
const ROUNDING: f64 = 1e-12;

/// `Ȳ_T = ξ − ∫c₀ + Σc₁` per path.
fn certainty_terms(ens: &PathEnsemble) -> impl Iterator<Item = f64> + '_ {
    ens.y_terminal
        .iter()
        .zip(&ens.cost_integral)
        .zip(&ens.reward_sum)
        .map(|((y, c), r)| y - c + r)
}

/// `E[−e^{−γ(ξ − ∫c₀ + Σc₁)}]`.
pub fn agent_value(ens: &PathEnsemble, p: &MarketParams) -> MCEstimate {
    let u: Vec<f64> = certainty_terms(ens).map(|w| -(-p.gamma * w).exp()).collect();
    MCEstimate::from_samples(&u, ens.antithetic)
}

/// `β E[X_T] − E[ξ] − E[∫g] − (θ/2) Var(X_T)`, with a delta-method standard
/// error from the per-path influence values.
pub fn principal_value(ens: &PathEnsemble, p: &MarketParams) -> MCEstimate {
    let xbar = mean(&ens.x_terminal);
    let phi: Vec<f64> = (0..ens.len())
        .map(|i| {
            let x = ens.x_terminal[i];
            p.beta * x - ens.y_terminal[i] - ens.g_integral[i] - 0.5 * p.theta * (x - xbar) * (x - xbar)
        })
        .collect();
    MCEstimate::from_samples(&phi, ens.antithetic)
}

/// Agent value of the contract when the reservation constraint binds at `y0`.
pub fn envelope_value(y0: f64, p: &MarketParams) -> f64 {
    -(-p.gamma * y0).exp()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationOutcome {
    pub e0: f64,
    pub e1: f64,
    pub value: MCEstimate,
    /// Paired estimate of `value − optimal`.
    pub gain: MCEstimate,
    pub pass: bool,
}

impl DeviationOutcome {
    pub fn label(&self) -> String {
        format!("({:+}, {:+})", self.e0, self.e1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ICReport {
    pub optimal_value: MCEstimate,
    /// `−e^{−γY₀}`.
    pub envelope: f64,
    /// The equilibrium value sits within 3 SE of the envelope.
    pub envelope_ok: bool,
    pub deviations: Vec<DeviationOutcome>,
}

impl ICReport {
    pub fn verdict(&self) -> bool {
        self.envelope_ok && self.deviations.iter().all(|d| d.pass)
    }
}

/// The constant-shift grid `{(±¼,0), (±½,0), (0,±¼), (0,±½), (±¼,±¼)}`.
pub fn default_deviation_grid() -> Vec<(f64, f64)> {
    let mut g = Vec::new();
    for e in [0.25, -0.25, 0.5, -0.5] {
        g.push((e, 0.0));
    }
    for e in [0.25, -0.25, 0.5, -0.5] {
        g.push((0.0, e));
    }
    for a in [0.25, -0.25] {
        for b in [0.25, -0.25] {
            g.push((a, b));
        }
    }
    g
}

/// Simulates the equilibrium and every constant-shift deviation
/// `(α⁰ + e0, α¹ + e1)` on common random numbers and compares agent values.
///
/// `agent` is whatever the agent plays at equilibrium; the envelope check
/// catches contracts it does not best-respond to.
pub fn ic_verify(
    p: &MarketParams,
    pol: &IncentivePolicy,
    agent: &AgentPolicy,
    flow: &MomentFlow,
    cfg: &SimConfig,
    grid: &[(f64, f64)],
) -> Result<(ICReport, PathEnsemble)> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("deviation grid is empty".into()));
    }
    let eq = simulate_equilibrium(p, pol, agent, flow, cfg)?;
    let opt = agent_value(&eq, p);
    let opt_samples: Vec<f64> = certainty_terms(&eq).map(|w| -(-p.gamma * w).exp()).collect();
    let envelope = envelope_value(pol.y0, p);
    let envelope_ok = (opt.mean - envelope).abs() <= SE_THRESHOLD * opt.std_error + ROUNDING * envelope.abs();
    let mut deviations = Vec::with_capacity(grid.len());
    for &(e0, e1) in grid {
        let dev = if e0 == 0.0 && e1 == 0.0 {
            eq.clone()
        } else {
            simulate_deviation(p, pol, &agent.shifted(e0, e1), flow, cfg)?
        };
        let value = agent_value(&dev, p);
        let dev_samples: Vec<f64> = certainty_terms(&dev).map(|w| -(-p.gamma * w).exp()).collect();
        let gain = MCEstimate::paired_difference(&dev_samples, &opt_samples, cfg.antithetic);
        let pass = value.mean <= opt.mean + SE_THRESHOLD * combined_se(value.std_error, opt.std_error);
        deviations.push(DeviationOutcome {
            e0,
            e1,
            value,
            gain,
            pass,
        });
    }
    Ok((
        ICReport {
            optimal_value: opt,
            envelope,
            envelope_ok,
            deviations,
        },
        eq,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    /// Snapshot times.
    pub times: [f64; N_SNAPSHOTS],
    /// `E[e^{−γȲ}]` at each snapshot.
    pub levels: Vec<MCEstimate>,
    /// Paired increments over consecutive snapshot intervals.
    pub increments: Vec<MCEstimate>,
    /// Every increment is ≥ −3 SE.
    pub submartingale: bool,
    /// Every increment is within 3 SE of zero.
    pub martingale: bool,
}

impl MartingaleReport {
    /// Verdict: submartingale for any policy, martingale at equilibrium.
    pub fn verdict(&self, equilibrium: bool) -> bool {
        self.submartingale && (!equilibrium || self.martingale)
    }

    /// Largest increment in standard errors (signed).
    pub fn max_z(&self) -> f64 {
        self.increments
            .iter()
            .map(|e| if e.std_error > 0.0 { e.mean / e.std_error } else { 0.0 })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Increments of `E[e^{−γȲ_t}]` between snapshots, `Ȳ_t = Y_t − ∫₀ᵗc₀ + Σc₁`.
pub fn martingale_check(ens: &PathEnsemble, p: &MarketParams) -> MartingaleReport {
    let cols: Vec<Vec<f64>> = (0..N_SNAPSHOTS)
        .map(|j| ens.ybar_at(j).iter().map(|y| (-p.gamma * y).exp()).collect())
        .collect();
    let levels = cols
        .iter()
        .map(|c| MCEstimate::from_samples(c, ens.antithetic))
        .collect();
    let increments: Vec<MCEstimate> = cols
        .windows(2)
        .map(|w| MCEstimate::paired_difference(&w[1], &w[0], ens.antithetic))
        .collect();
    let slack = |e: &MCEstimate| SE_THRESHOLD * e.std_error + ROUNDING;
    let submartingale = increments.iter().all(|e| e.mean >= -slack(e));
    let martingale = increments.iter().all(|e| e.mean.abs() <= slack(e));
    MartingaleReport {
        times: ens.snapshot_times,
        levels,
        increments,
        submartingale,
        martingale,
    }
}
