//! Monte Carlo checks against deterministic oracles.

use mfpa_core::evaluator::{agent_value, default_deviation_grid, ic_verify, martingale_check, principal_value};
use mfpa_core::incentives::{equilibrium_agent_policy, optimal_policy, AgentPolicy, IncentivePolicy};
use mfpa_core::moments::{solve_moments, MomentFlow};
use mfpa_core::simulator::{picard_meanfield, simulate_deviation, simulate_equilibrium, SimConfig, N_SNAPSHOTS};
use mfpa_core::value_ode::{solve_coefficients, ValueCoefficients};
use mfpa_core::{Error, MarketParams};

struct Setup {
    p: MarketParams,
    c: ValueCoefficients,
    pol: IncentivePolicy,
    agent: AgentPolicy,
    flow: MomentFlow,
}

fn setup(p: MarketParams) -> Setup {
    let c = solve_coefficients(&p, 201).unwrap();
    let pol = optimal_policy(&c, &p);
    let agent = equilibrium_agent_policy(&pol, &p);
    let flow = solve_moments(&c, &p, 201);
    Setup { p, c, pol, agent, flow }
}

fn cfg(n: usize) -> SimConfig {
    SimConfig {
        n_paths: n,
        ..SimConfig::default()
    }
}

/// `∫₀ᵀ h(t) v(t) dt` by composite Simpson on the flow nodes.
fn expected_jumps(s: &Setup) -> f64 {
    let n = s.flow.len() - 1;
    let dt = s.p.horizon / n as f64;
    let f = |i: usize| s.flow.rate[i] * s.flow.v[i];
    let mut acc = f(0) + f(n);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i);
    }
    acc * dt / 3.0
}

#[test]
fn terminal_mean_and_jump_count() {
    let s = setup(MarketParams::reference());
    let ens = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &cfg(100_000)).unwrap();
    let m = ens.mean_estimate(N_SNAPSHOTS - 1);
    assert!(m.within(s.flow.m[200], 3.0), "{m:?} vs {}", s.flow.m[200]);
    let lam = expected_jumps(&s);
    assert!((lam - 0.008_870_4).abs() < 1e-6);
    let j = ens.jump_estimate();
    assert!(j.within(lam, 3.0), "{j:?} vs {lam}");
}

#[test]
fn jump_counts_are_poisson() {
    // A wider initial law raises the intensity enough to populate several cells.
    let s = setup(MarketParams {
        v0: 3.0,
        ..MarketParams::reference()
    });
    let n = 100_000;
    let ens = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &cfg(n)).unwrap();
    // Per-path counts are exactly Poisson with the scheme's summed step means.
    let steps = 200;
    let dt = s.p.horizon / steps as f64;
    let lam: f64 = (0..steps)
        .map(|i| {
            let t = (i as f64 + 0.5) * dt;
            (-s.p.k2 * s.agent.at(t).alpha1).exp() * s.flow.at(t).variance * dt
        })
        .sum();
    let mut observed = [0.0f64; 4];
    for &k in &ens.jump_count {
        observed[(k as usize).min(3)] += 1.0;
    }
    let p0 = (-lam).exp();
    let p1 = p0 * lam;
    let p2 = p1 * lam / 2.0;
    let probs = [p0, p1, p2, 1.0 - p0 - p1 - p2];
    let expected: Vec<f64> = probs.iter().map(|q| q * n as f64).collect();
    assert!(expected.iter().all(|&e| e >= 5.0), "{expected:?}");
    let chi2: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e) * (o - e) / e).sum();
    // 99th percentile of χ² with 3 degrees of freedom.
    assert!(
        chi2 < 11.345,
        "chi2 = {chi2}, observed {observed:?}, expected {expected:?}"
    );
}

#[test]
fn mitigation_shift_cuts_accidents_by_e_to_minus_k2() {
    let s = setup(MarketParams {
        v0: 1.0,
        ..MarketParams::reference()
    });
    let c = cfg(100_000);
    let eq = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &c).unwrap();
    let dev = simulate_deviation(&s.p, &s.pol, &s.agent.shifted(0.0, 1.0), &s.flow, &c).unwrap();
    let (a, b) = (eq.jump_estimate(), dev.jump_estimate());
    assert!(b.mean < a.mean);
    let target = a.mean * (-s.p.k2).exp();
    let se = (b.std_error.powi(2) + (a.std_error * (-s.p.k2).exp()).powi(2)).sqrt();
    assert!((b.mean - target).abs() <= 3.0 * se, "{b:?} vs {target}");
}

#[test]
fn drift_shift_moves_terminal_mean_by_eps_t() {
    // With the law frozen the shift enters ΔX only through α⁰: E[X_T] = m(T) + εT.
    let s = setup(MarketParams::reference());
    let eps = 0.3;
    let dev = simulate_deviation(&s.p, &s.pol, &s.agent.shifted(eps, 0.0), &s.flow, &cfg(100_000)).unwrap();
    let m = dev.mean_estimate(N_SNAPSHOTS - 1);
    assert!(m.within(s.flow.m[200] + eps * s.p.horizon, 3.0), "{m:?}");
}

#[test]
fn picard_converges_to_the_moment_curves() {
    let s = setup(MarketParams::reference());
    let out = picard_meanfield(&s.p, &s.pol, &s.agent, |t| s.c.rate_at(t), &cfg(100_000)).unwrap();
    assert!(out.iterations <= 10);
    assert!(out.gap < 0.02);
    for j in 0..N_SNAPSHOTS {
        let t = out.flow.grid[j];
        let law = s.flow.at(t);
        let m = out.ensemble.mean_estimate(j);
        let v = out.ensemble.variance_estimate(j);
        assert!(m.within(law.mean, 3.0), "t = {t}: {m:?} vs {}", law.mean);
        assert!(v.within(law.variance, 3.0), "t = {t}: {v:?} vs {}", law.variance);
    }
}

#[test]
fn noiseless_picard_confirms_on_second_pass() {
    // Without synergy the drift ignores the candidate mean, so the first pass
    // already produces the fixed point.
    let s = setup(MarketParams {
        sigma: 1e-300,
        k1: 0.0,
        ..MarketParams::reference()
    });
    let out = picard_meanfield(&s.p, &s.pol, &s.agent, |t| s.c.rate_at(t), &cfg(8)).unwrap();
    assert_eq!(out.iterations, 2);
    assert_eq!(out.gap, 0.0);
}

#[test]
fn zero_tolerance_never_converges() {
    let s = setup(MarketParams::reference());
    let c = SimConfig {
        picard_tol: 0.0,
        ..cfg(2000)
    };
    let err = picard_meanfield(&s.p, &s.pol, &s.agent, |t| s.c.rate_at(t), &c).unwrap_err();
    assert!(matches!(err, Error::PicardNoConvergence { iterations: 10, .. }));
}

#[test]
fn agent_value_tracks_initial_certainty_equivalent() {
    let s = setup(MarketParams::reference());
    for shift in [0.0, 0.3] {
        let pol = s.pol.clone().with_y0(s.pol.y0 + shift);
        let ens = simulate_equilibrium(&s.p, &pol, &s.agent, &s.flow, &cfg(100_000)).unwrap();
        let v = agent_value(&ens, &s.p);
        assert!(v.within(-(-shift).exp(), 3.0), "shift {shift}: {v:?}");
    }
}

#[test]
fn principal_value_matches_prediction_and_ignores_cost_split() {
    for f_slope in [0.0, 0.2, 1.0] {
        let s = setup(MarketParams {
            f_slope,
            ..MarketParams::reference()
        });
        let ens = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &cfg(100_000)).unwrap();
        let v = principal_value(&ens, &s.p);
        let predicted = s.c.principal_value(s.pol.y0);
        assert!((predicted - 0.776_056_34).abs() < 1e-7);
        assert!(v.within(predicted, 3.0), "f1 = {f_slope}: {v:?} vs {predicted}");
    }
}

#[test]
fn martingale_at_equilibrium_and_drift_under_deviation() {
    let s = setup(MarketParams::reference());
    let c = cfg(100_000);
    let eq = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &c).unwrap();
    let rep = martingale_check(&eq, &s.p);
    assert!(rep.verdict(true), "{:?}", rep.increments);
    let dev = simulate_deviation(&s.p, &s.pol, &s.agent.shifted(0.5, 0.0), &s.flow, &c).unwrap();
    let rep = martingale_check(&dev, &s.p);
    assert!(rep.verdict(false));
    assert!(rep.max_z() > 3.0);
}

#[test]
fn constant_shifts_do_not_pay() {
    let s = setup(MarketParams::reference());
    let (rep, _) = ic_verify(&s.p, &s.pol, &s.agent, &s.flow, &cfg(20_000), &default_deviation_grid()).unwrap();
    assert!(rep.envelope_ok);
    for d in &rep.deviations {
        assert!(d.pass, "{}: {:?}", d.label(), d.value);
        assert!(d.gain.mean <= 3.0 * d.gain.std_error, "{}: {:?}", d.label(), d.gain);
    }
}

#[test]
fn antithetic_pairs_keep_estimates_unbiased() {
    let s = setup(MarketParams::reference());
    let c = SimConfig {
        antithetic: true,
        ..cfg(50_000)
    };
    let ens = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &c).unwrap();
    assert_eq!(ens.mean_estimate(N_SNAPSHOTS - 1).n, 25_000);
    assert!(ens.mean_estimate(N_SNAPSHOTS - 1).within(s.flow.m[200], 3.0));
    assert!(agent_value(&ens, &s.p).within(-1.0, 3.0));
}
