//! The generic engine on the demand-response instance against the specialised one.

use mfpa_core::evaluator::agent_value;
use mfpa_core::generic_mkv::{centred_schedule, simulate_generic, GenericRun};
use mfpa_core::hamiltonian::{best_response_closed, ControlPoint};
use mfpa_core::incentives::{equilibrium_agent_policy, optimal_policy};
use mfpa_core::model::{example_model, LawMoments};
use mfpa_core::moments::solve_moments;
use mfpa_core::simulator::{simulate_equilibrium, SimConfig, N_SNAPSHOTS};
use mfpa_core::stats::{combined_se, MCEstimate};
use mfpa_core::value_ode::solve_coefficients;
use mfpa_core::MarketParams;

fn agree(a: &MCEstimate, b: &MCEstimate) -> bool {
    (a.mean - b.mean).abs() <= 3.0 * combined_se(a.std_error, b.std_error)
}

#[test]
fn generic_engine_reproduces_specialised_moments_and_value() {
    let p = MarketParams::reference();
    let c = solve_coefficients(&p, 201).unwrap();
    let pol = optimal_policy(&c, &p);
    let agent = equilibrium_agent_policy(&pol, &p);
    let flow = solve_moments(&c, &p, 201);
    let n = 4_000;

    let step = 0.002;
    let hint = pol.clone();
    // Off-node centring keeps the optimum away from grid points.
    let grid = centred_schedule(
        move |t| {
            let a = best_response_closed(&hint.slice(t), &p);
            ControlPoint::new(a.alpha0 + 0.3 * step, a.alpha1 - 0.3 * step)
        },
        5,
        step,
    );
    let run = GenericRun {
        model: example_model(&p),
        incentive: pol.clone(),
        gamma: p.gamma,
        sim: SimConfig {
            n_paths: n,
            seed: 7,
            ..SimConfig::default()
        },
        grid,
        horizon: p.horizon,
        initial: LawMoments::new(p.m0, p.v0),
    };
    let (gen, gflow) = simulate_generic(&run).unwrap();
    assert_eq!(gflow.len(), N_SNAPSHOTS);

    let spec = simulate_equilibrium(
        &p,
        &pol,
        &agent,
        &flow,
        &SimConfig {
            n_paths: n,
            seed: 8,
            ..SimConfig::default()
        },
    )
    .unwrap();
    let last = N_SNAPSHOTS - 1;
    let (gm, sm) = (gen.mean_estimate(last), spec.mean_estimate(last));
    let (gv, sv) = (gen.variance_estimate(last), spec.variance_estimate(last));
    let (ga, sa) = (agent_value(&gen, &p), agent_value(&spec, &p));
    assert!(agree(&gm, &sm), "{gm:?} vs {sm:?}");
    assert!(agree(&gv, &sv), "{gv:?} vs {sv:?}");
    assert!(agree(&ga, &sa), "{ga:?} vs {sa:?}");
    // The engine pays out H at the grid maximum, so e^{−γȲ} has no drift.
    assert!((ga.mean + 1.0).abs() <= 3.0 * ga.std_error);
}
