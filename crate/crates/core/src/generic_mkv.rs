//! Closed-form-free engine for [`GenericModel`]s.
//!
//! Every path and step searches the control grid for the maximiser of the
//! payoff rate `h` at the current state, contract exposures and candidate
//! law, then advances
//!
//! ```text
//! ΔX = b Δt + σ√Δt G + Σ_ζ ζ ΔN_ζ,           ΔN_ζ ~ Poisson(K λ⁰(ζ) Δt)
//! ΔY = Zσ√Δt G + Z b Δt + Σ_ζ U(ζ) ΔN_ζ − H Δt
//! ```
//!
//! with `H` the grid maximum of `h`. State-dependent coefficients are taken at
//! the start of the step and time-dependent ones at its midpoint. The law is
//! closed by the same Picard loop as the specialised simulator.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hamiltonian::{best_response_grid, ControlGrid, ControlPoint, GridAxis, IncentiveSlice};
use crate::incentives::IncentivePolicy;
use crate::model::{GenericModel, LawMoments};
use crate::moments::MomentFlow;
use crate::simulator::{
    collect_paths, picard_loop, snapshot_steps, PathDraws, PathEnsemble, PathRecord, SimConfig, N_SNAPSHOTS,
};

/// Control grid to search at time `t`.
pub type GridSchedule = Arc<dyn Fn(f64) -> ControlGrid + Send + Sync>;

#[derive(Clone)]
pub struct GenericRun {
    pub model: GenericModel,
    pub incentive: IncentivePolicy,
    pub gamma: f64,
    pub sim: SimConfig,
    pub grid: GridSchedule,
    pub horizon: f64,
    /// Mean and variance of the (Gaussian or point-mass) initial law.
    pub initial: LawMoments,
}

impl std::fmt::Debug for GenericRun {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GenericRun")
            .field("model", &self.model)
            .field("gamma", &self.gamma)
            .field("sim", &self.sim)
            .field("horizon", &self.horizon)
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

impl GenericRun {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sim.validate()?;
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid("gamma", "must be > 0"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("horizon", "must be > 0"));
        }
        if !(self.initial.variance >= 0.0) || !self.initial.mean.is_finite() {
            return Err(Error::invalid("initial", "needs a finite mean and a variance >= 0"));
        }
        Ok(())
    }
}

/// Grid schedule `t → product grid of (2·half+1)² points with spacing
/// `step`, centred at `center(t)`.
pub fn centred_schedule(
    center: impl Fn(f64) -> ControlPoint + Send + Sync + 'static,
    half: usize,
    step: f64,
) -> GridSchedule {
    Arc::new(move |t| {
        let c = center(t);
        let span = half as f64 * step;
        ControlGrid::product(
            GridAxis::new(c.alpha0 - span, c.alpha0 + span, 2 * half + 1),
            GridAxis::new(c.alpha1 - span, c.alpha1 + span, 2 * half + 1),
        )
    })
}

fn generic_path(run: &GenericRun, flow: &MomentFlow, snaps: &[usize; N_SNAPSHOTS], path: usize) -> Result<PathRecord> {
    let m = &run.model;
    let n = run.sim.n_steps;
    let dt = run.horizon / n as f64;
    let sq = dt.sqrt();
    let mut d = PathDraws::new(run.sim.seed, path, run.sim.antithetic);
    let mut x = d.initial_state(run.initial);
    let (mut y, mut cost, mut reward, mut g, mut jumps) = (0.0, 0.0, 0.0, 0.0, 0u64);
    let mut rec = PathRecord {
        x,
        y: 0.0,
        jumps: 0,
        cost: 0.0,
        reward: 0.0,
        g: 0.0,
        x_snap: [x; N_SNAPSHOTS],
        ybar_snap: [0.0; N_SNAPSHOTS],
    };
    let mut next_snap = snaps.iter().take_while(|&&s| s == 0).count();
    for i in 0..n {
        let t = run.horizon * (i as f64 + 0.5) / n as f64;
        let law = flow.at(t);
        let slice = IncentiveSlice {
            z: run.incentive.z(t),
            u: m.marks.iter().map(|&z| (run.incentive.u_of_t)(t, z)).collect(),
        };
        let (a, h_max) = best_response_grid(t, x, &slice, &law, m, run.gamma, &(run.grid)(t))?;
        let b = (m.drift)(t, x, &law, &a);
        let vol = (m.vol)(t, x);
        let gauss = d.normal();
        let mut dx_jump = 0.0;
        let mut dy_jump = 0.0;
        let mut dreward = 0.0;
        for (k, (&mark, &rate)) in m.marks.iter().zip(&m.base_rates).enumerate() {
            let mean = if rate == 0.0 {
                0.0
            } else {
                (m.intensity_tilt)(t, x, mark, &law, &a) * rate * dt
            };
            let dn = d.poisson(mean);
            let dnf = dn as f64;
            dx_jump += mark * dnf;
            dy_jump += slice.u[k] * dnf;
            if dn > 0 {
                dreward += (m.jump_reward)(t, x, mark, &law, &a) * dnf;
            }
            jumps += dn;
        }
        y += slice.z * vol * sq * gauss + slice.z * b * dt + dy_jump - h_max * dt;
        cost += (m.run_cost)(t, x, &law, &a) * dt;
        reward += dreward;
        if let Some(pc) = &m.principal_cost {
            g += pc(t, x) * dt;
        }
        x += b * dt + vol * sq * gauss + dx_jump;
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

/// One ensemble with the law fixed at `flow`.
pub fn generic_pass(run: &GenericRun, flow: &MomentFlow) -> Result<PathEnsemble> {
    run.validate()?;
    let snaps = snapshot_steps(run.sim.n_steps);
    let mut ens = collect_paths(run.horizon, &run.sim, |i| generic_path(run, flow, &snaps, i))?;
    for y in &mut ens.y_terminal {
        *y += run.incentive.y0;
    }
    for s in &mut ens.ybar_snapshots {
        for v in s.iter_mut() {
            *v += run.incentive.y0;
        }
    }
    Ok(ens)
}

/// Ensemble and empirical law at the Picard fixed point. The flow's `rate`
/// column is NaN: generic intensities need not factor through the variance.
pub fn simulate_generic(run: &GenericRun) -> Result<(PathEnsemble, MomentFlow)> {
    run.validate()?;
    let out = picard_loop(
        run.horizon,
        run.initial,
        &run.sim,
        |_| f64::NAN,
        |flow| generic_pass(run, flow),
    )?;
    Ok((out.ensemble, out.flow))
}

/// A law-independent benchmark: drift `α⁰`, constant volatility, cost
/// `α⁰²/2`, unit tilt, no jump reward, and down-jumps at constant rate.
pub fn decoupled_model(sigma: f64, jump_rate: f64) -> GenericModel {
    GenericModel {
        drift: Arc::new(|_t, _x, _law, a| a.alpha0),
        vol: Arc::new(move |_t, _x| sigma),
        run_cost: Arc::new(|_t, _x, _law, a| 0.5 * a.alpha0 * a.alpha0),
        jump_reward: Arc::new(|_t, _x, _mark, _law, _a| 0.0),
        intensity_tilt: Arc::new(|_t, _x, _mark, _law, _a| 1.0),
        marks: vec![-1.0],
        base_rates: vec![jump_rate],
        principal_cost: None,
    }
}
