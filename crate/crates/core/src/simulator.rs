//! Monte Carlo of the coupled state/contract system.
//!
//! Each step of length `Δt` draws one Gaussian `G` and one accident count
//! `ΔN ~ Poisson(e^{−k₂α¹} v Δt)`, with every deterministic coefficient taken
//! at the step midpoint:
//!
//! ```text
//! ΔX = (α⁰ + k₁m)Δt + σ√Δt G − ΔN
//! ΔY = Zσ√Δt G + Z(α⁰ + k₁m)Δt + U ΔN − (H_free + f̄)Δt
//! ```
//!
//! where `f̄` is `f` at the average of the old and new state. With these
//! choices `e^{−γ(Y − ∫c₀ + Σc₁)}` is an exact discrete martingale when the
//! agent best-responds, and a submartingale otherwise, whatever `Δt`.
//!
//! The law `(m, v)` comes from a supplied [`MomentFlow`] rather than the
//! sample, so a single representative agent can deviate without moving the
//! crowd. [`picard_meanfield`] closes the loop by feeding empirical moments
//! back in.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hamiltonian::hamiltonian_state_free;
use crate::incentives::{AgentPolicy, IncentivePolicy};
use crate::model::{LawMoments, MarketParams};
use crate::moments::MomentFlow;
use crate::rng::{open_uniform, path_rng, poisson_count};
use crate::stats::{mean, MCEstimate};

/// Number of snapshot times, including both ends.
pub const N_SNAPSHOTS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub picard_tol: f64,
    pub picard_max_iters: usize,
    /// Pair paths `(2k, 2k+1)` with negated Gaussians and reflected uniforms.
    pub antithetic: bool,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_paths: 100_000,
            n_steps: 200,
            seed: 42,
            picard_tol: 0.02,
            picard_max_iters: 10,
            antithetic: false,
            workers: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths", "must be >= 1"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps", "must be >= 1"));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(Error::invalid("n_paths", "must be even with antithetic pairing"));
        }
        if !(self.picard_tol >= 0.0) {
            return Err(Error::invalid("picard_tol", "must be >= 0"));
        }
        if self.picard_max_iters == 0 {
            return Err(Error::invalid("picard_max_iters", "must be >= 1"));
        }
        if self.workers == Some(0) {
            return Err(Error::invalid("workers", "must be >= 1"));
        }
        Ok(())
    }

    /// Step indices of the snapshots.
    pub fn snapshot_steps(&self) -> [usize; N_SNAPSHOTS] {
        snapshot_steps(self.n_steps)
    }
}

pub(crate) fn snapshot_steps(n_steps: usize) -> [usize; N_SNAPSHOTS] {
    let mut s = [0; N_SNAPSHOTS];
    for (j, slot) in s.iter_mut().enumerate() {
        *slot = (j as f64 * n_steps as f64 / (N_SNAPSHOTS - 1) as f64).round() as usize;
    }
    s
}

/// One simulated path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathRecord {
    pub x: f64,
    pub y: f64,
    pub jumps: u64,
    pub cost: f64,
    pub reward: f64,
    pub g: f64,
    pub x_snap: [f64; N_SNAPSHOTS],
    /// `Y − ∫c₀ + Σc₁` at the snapshots.
    pub ybar_snap: [f64; N_SNAPSHOTS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub x_terminal: Vec<f64>,
    pub y_terminal: Vec<f64>,
    pub jump_count: Vec<u64>,
    pub cost_integral: Vec<f64>,
    pub reward_sum: Vec<f64>,
    pub g_integral: Vec<f64>,
    pub snapshot_times: [f64; N_SNAPSHOTS],
    /// Path-major: `x_snapshots[path][j]`.
    pub x_snapshots: Vec<[f64; N_SNAPSHOTS]>,
    pub ybar_snapshots: Vec<[f64; N_SNAPSHOTS]>,
    pub antithetic: bool,
}

impl PathEnsemble {
    fn from_records(records: Vec<PathRecord>, snapshot_times: [f64; N_SNAPSHOTS], antithetic: bool) -> Self {
        let n = records.len();
        let mut e = PathEnsemble {
            x_terminal: Vec::with_capacity(n),
            y_terminal: Vec::with_capacity(n),
            jump_count: Vec::with_capacity(n),
            cost_integral: Vec::with_capacity(n),
            reward_sum: Vec::with_capacity(n),
            g_integral: Vec::with_capacity(n),
            snapshot_times,
            x_snapshots: Vec::with_capacity(n),
            ybar_snapshots: Vec::with_capacity(n),
            antithetic,
        };
        for r in records {
            e.x_terminal.push(r.x);
            e.y_terminal.push(r.y);
            e.jump_count.push(r.jumps);
            e.cost_integral.push(r.cost);
            e.reward_sum.push(r.reward);
            e.g_integral.push(r.g);
            e.x_snapshots.push(r.x_snap);
            e.ybar_snapshots.push(r.ybar_snap);
        }
        e
    }

    pub fn len(&self) -> usize {
        self.x_terminal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_terminal.is_empty()
    }

    pub fn x_at(&self, j: usize) -> Vec<f64> {
        self.x_snapshots.iter().map(|s| s[j]).collect()
    }

    pub fn ybar_at(&self, j: usize) -> Vec<f64> {
        self.ybar_snapshots.iter().map(|s| s[j]).collect()
    }

    /// Sample mean and variance of `X` at every snapshot.
    pub fn snapshot_moments(&self) -> [LawMoments; N_SNAPSHOTS] {
        let mut out = [LawMoments::default(); N_SNAPSHOTS];
        for (j, slot) in out.iter_mut().enumerate() {
            let col = self.x_at(j);
            let m = mean(&col);
            let sq: Vec<f64> = col.iter().map(|x| (x - m) * (x - m)).collect();
            *slot = LawMoments::new(m, mean(&sq));
        }
        out
    }

    /// Empirical snapshot flow; `rate` supplies the jump-rate factor column.
    pub fn empirical_flow(&self, rate: impl Fn(f64) -> f64) -> MomentFlow {
        let mom = self.snapshot_moments();
        MomentFlow::from_moments(
            self.snapshot_times.to_vec(),
            mom.iter().map(|l| l.mean).collect(),
            mom.iter().map(|l| l.variance).collect(),
            self.snapshot_times.iter().map(|&t| rate(t)).collect(),
        )
    }

    /// Mean of `X` at snapshot `j` with its standard error.
    pub fn mean_estimate(&self, j: usize) -> MCEstimate {
        MCEstimate::from_samples(&self.x_at(j), self.antithetic)
    }

    /// Variance of `X` at snapshot `j` with standard error `√((μ₄ − v²)/n)`.
    pub fn variance_estimate(&self, j: usize) -> MCEstimate {
        variance_estimate(&self.x_at(j))
    }

    /// Second moment `E[X²]` at snapshot `j`.
    pub fn second_moment_estimate(&self, j: usize) -> MCEstimate {
        let sq: Vec<f64> = self.x_at(j).iter().map(|x| x * x).collect();
        MCEstimate::from_samples(&sq, self.antithetic)
    }

    pub fn jump_estimate(&self) -> MCEstimate {
        let j: Vec<f64> = self.jump_count.iter().map(|&k| k as f64).collect();
        MCEstimate::from_samples(&j, self.antithetic)
    }
}

/// Sample variance (1/n) with the fourth-moment standard error.
pub fn variance_estimate(xs: &[f64]) -> MCEstimate {
    let n = xs.len();
    let m = mean(xs);
    let d2: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let v = mean(&d2);
    let d4: Vec<f64> = d2.iter().map(|d| d * d).collect();
    let mu4 = mean(&d4);
    MCEstimate {
        mean: v,
        std_error: ((mu4 - v * v).max(0.0) / n as f64).sqrt(),
        n,
    }
}

/// Deterministic per-step inputs, evaluated at the step midpoint.
#[derive(Debug, Clone, Copy)]
struct Step {
    drift: f64,
    a0: f64,
    a1: f64,
    z: f64,
    u: f64,
    jump_mean: f64,
    h_free: f64,
}

fn step_table(
    p: &MarketParams,
    pol: &IncentivePolicy,
    agent: &AgentPolicy,
    flow: &MomentFlow,
    n_steps: usize,
) -> Result<Vec<Step>> {
    let dt = p.horizon / n_steps as f64;
    (0..n_steps)
        .map(|i| {
            let t = p.horizon * (i as f64 + 0.5) / n_steps as f64;
            let law = flow.at(t);
            let s = pol.slice(t);
            let a = agent.at(t);
            let step = Step {
                drift: a.alpha0 + p.k1 * law.mean,
                a0: a.alpha0,
                a1: a.alpha1,
                z: s.z,
                u: s.u_minus1(),
                jump_mean: (-p.k2 * a.alpha1).exp() * law.variance * dt,
                h_free: hamiltonian_state_free(&s, &law, p),
            };
            let vals = [step.drift, step.a1, step.z, step.u, step.jump_mean, step.h_free];
            if vals.iter().all(|v| v.is_finite()) && step.jump_mean >= 0.0 {
                Ok(step)
            } else {
                Err(Error::NonFiniteValue("step coefficients"))
            }
        })
        .collect()
}

/// Random source of one path: its stream and whether it is the reflected
/// member of an antithetic pair.
pub(crate) struct PathDraws {
    rng: rand_chacha::ChaCha8Rng,
    flip: bool,
}

impl PathDraws {
    pub(crate) fn new(seed: u64, path: usize, antithetic: bool) -> Self {
        let (stream, flip) = if antithetic {
            (path / 2, path % 2 == 1)
        } else {
            (path, false)
        };
        Self {
            rng: path_rng(seed, stream as u64),
            flip,
        }
    }

    pub(crate) fn normal(&mut self) -> f64 {
        let g: f64 = self.rng.sample(StandardNormal);
        if self.flip {
            -g
        } else {
            g
        }
    }

    pub(crate) fn poisson(&mut self, mean: f64) -> u64 {
        let u = open_uniform(&mut self.rng);
        let u = if self.flip { 1.0 - u } else { u };
        poisson_count(mean, u, &mut self.rng)
    }

    /// Gaussian draw with the given moments, or the mean itself when the
    /// variance is zero.
    pub(crate) fn initial_state(&mut self, law: LawMoments) -> f64 {
        if law.variance > 0.0 {
            law.mean + law.variance.sqrt() * self.normal()
        } else {
            law.mean
        }
    }
}

fn simulate_path(
    p: &MarketParams,
    steps: &[Step],
    snaps: &[usize; N_SNAPSHOTS],
    seed: u64,
    path: usize,
    antithetic: bool,
) -> Result<PathRecord> {
    let n = steps.len();
    let dt = p.horizon / n as f64;
    let sq = dt.sqrt();
    let mut d = PathDraws::new(seed, path, antithetic);
    let mut x = d.initial_state(LawMoments::new(p.m0, p.v0));
    let (mut y, mut cost, mut reward, mut g, mut jumps) = (0.0, 0.0, 0.0, 0.0, 0u64);
    let mut rec = PathRecord {
        x: 0.0,
        y: 0.0,
        jumps: 0,
        cost: 0.0,
        reward: 0.0,
        g: 0.0,
        x_snap: [0.0; N_SNAPSHOTS],
        ybar_snap: [0.0; N_SNAPSHOTS],
    };
    let mut next_snap = 0;
    while next_snap < N_SNAPSHOTS && snaps[next_snap] == 0 {
        rec.x_snap[next_snap] = x;
        rec.ybar_snap[next_snap] = 0.0;
        next_snap += 1;
    }
    let g_slope = p.g_slope();
    for (i, s) in steps.iter().enumerate() {
        let t = p.horizon * (i as f64 + 0.5) / n as f64;
        let gauss = d.normal();
        let dn = d.poisson(s.jump_mean);
        let dnf = dn as f64;
        let x_new = x + s.drift * dt + p.sigma * sq * gauss - dnf;
        let xm = 0.5 * (x + x_new);
        let f_bar = p.f(t, xm);
        y += s.z * p.sigma * sq * gauss + s.z * s.drift * dt + s.u * dnf - (s.h_free + f_bar) * dt;
        cost += (0.5 * s.a0 * s.a0 - f_bar) * dt;
        reward += s.a1 * dnf;
        g += (p.f_intercept + g_slope * xm) * dt;
        jumps += dn;
        x = x_new;
        if !(x.is_finite() && y.is_finite() && cost.is_finite() && reward.is_finite()) {
            return Err(Error::NonFiniteState { step: i + 1, path });
        }
        while next_snap < N_SNAPSHOTS && snaps[next_snap] == i + 1 {
            rec.x_snap[next_snap] = x;
            rec.ybar_snap[next_snap] = y - cost + reward;
            next_snap += 1;
        }
    }
    rec.x = x;
    rec.y = y;
    rec.jumps = jumps;
    rec.cost = cost;
    rec.reward = reward;
    rec.g = g;
    Ok(rec)
}

/// Runs `f` for every path index in parallel and assembles the ensemble in
/// index order. The first failing path (by index) determines the error.
pub(crate) fn collect_paths<F>(horizon: f64, cfg: &SimConfig, f: F) -> Result<PathEnsemble>
where
    F: Fn(usize) -> Result<PathRecord> + Sync + Send,
{
    let run = || -> Vec<Result<PathRecord>> { (0..cfg.n_paths).into_par_iter().map(&f).collect() };
    let results = match cfg.workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    };
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let snaps = snapshot_steps(cfg.n_steps);
    let mut times = [0.0; N_SNAPSHOTS];
    for (t, &s) in times.iter_mut().zip(&snaps) {
        *t = horizon * s as f64 / cfg.n_steps as f64;
    }
    Ok(PathEnsemble::from_records(records, times, cfg.antithetic))
}

fn simulate(
    p: &MarketParams,
    pol: &IncentivePolicy,
    agent: &AgentPolicy,
    flow: &MomentFlow,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    let p = p.validated()?;
    cfg.validate()?;
    let steps = step_table(&p, pol, agent, flow, cfg.n_steps)?;
    let snaps = cfg.snapshot_steps();
    let mut ens = collect_paths(p.horizon, cfg, |i| {
        simulate_path(&p, &steps, &snaps, cfg.seed, i, cfg.antithetic)
    })?;
    for y in &mut ens.y_terminal {
        *y += pol.y0;
    }
    for s in &mut ens.ybar_snapshots {
        for v in s.iter_mut() {
            *v += pol.y0;
        }
    }
    Ok(ens)
}

/// Ensemble under the equilibrium measure, with the law taken from `flow`.
pub fn simulate_equilibrium(
    p: &MarketParams,
    pol: &IncentivePolicy,
    agent: &AgentPolicy,
    flow: &MomentFlow,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    simulate(p, pol, agent, flow, cfg)
}

/// Ensemble of a single agent playing `deviated` against the fixed contract,
/// with the crowd's law frozen at `flow`.
pub fn simulate_deviation(
    p: &MarketParams,
    pol: &IncentivePolicy,
    deviated: &AgentPolicy,
    flow: &MomentFlow,
    cfg: &SimConfig,
) -> Result<PathEnsemble> {
    simulate(p, pol, deviated, flow, cfg)
}

#[derive(Debug, Clone)]
pub struct PicardOutcome {
    /// Empirical snapshot moments of the last iterate.
    pub flow: MomentFlow,
    pub iterations: usize,
    pub gap: f64,
    /// Ensemble of the last iterate.
    pub ensemble: PathEnsemble,
}

/// Sup-norm distance between two flows on the same nodes, over `m` and `v`.
pub fn flow_gap(a: &MomentFlow, b: &MomentFlow) -> f64 {
    a.m.iter()
        .zip(&b.m)
        .chain(a.v.iter().zip(&b.v))
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Fixed-point iteration on the law: simulate with the candidate moments,
/// replace them with the empirical snapshot moments, stop once they move
/// less than `picard_tol`. Starts from the flat flow `(m₀, v₀)` and reuses
/// the seed so successive iterates share random numbers.
pub fn picard_meanfield(
    p: &MarketParams,
    pol: &IncentivePolicy,
    agent: &AgentPolicy,
    rate: impl Fn(f64) -> f64,
    cfg: &SimConfig,
) -> Result<PicardOutcome> {
    picard_loop(p.horizon, LawMoments::new(p.m0, p.v0), cfg, rate, |flow| {
        simulate_equilibrium(p, pol, agent, flow, cfg)
    })
}

pub(crate) fn picard_loop(
    horizon: f64,
    initial: LawMoments,
    cfg: &SimConfig,
    rate: impl Fn(f64) -> f64,
    mut run: impl FnMut(&MomentFlow) -> Result<PathEnsemble>,
) -> Result<PicardOutcome> {
    cfg.validate()?;
    let times: Vec<f64> = snapshot_steps(cfg.n_steps)
        .iter()
        .map(|&s| horizon * s as f64 / cfg.n_steps as f64)
        .collect();
    let rates = times.iter().map(|&t| rate(t)).collect();
    let mut candidate = MomentFlow::flat(times, initial.mean, initial.variance, rates);
    let mut gap = f64::INFINITY;
    for k in 1..=cfg.picard_max_iters {
        let ensemble = run(&candidate)?;
        let next = ensemble.empirical_flow(&rate);
        gap = flow_gap(&next, &candidate);
        if gap < cfg.picard_tol {
            return Ok(PicardOutcome {
                flow: next,
                iterations: k,
                gap,
                ensemble,
            });
        }
        candidate = next;
    }
    Err(Error::PicardNoConvergence {
        iterations: cfg.picard_max_iters,
        gap,
    })
}
