//! Acceptance suite. Runs every criterion at its stated size and tolerance,
//! prints one PASS/FAIL line per criterion and exits non-zero on any failure.

use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use mfpa_core::evaluator::{agent_value, default_deviation_grid, ic_verify, martingale_check, principal_value};
use mfpa_core::generic_mkv::{centred_schedule, simulate_generic, GenericRun};
use mfpa_core::hamiltonian::{
    best_response_closed, best_response_grid, ControlGrid, ControlPoint, GridAxis, IncentiveSlice,
};
use mfpa_core::incentives::{
    equilibrium_agent_policy, optimal_policy, reservation_level, AgentPolicy, IncentivePolicy,
};
use mfpa_core::model::{example_model, LawMoments};
use mfpa_core::moments::{integrate_second_moment, solve_moments, MomentFlow, QVariant};
use mfpa_core::rng::path_rng;
use mfpa_core::simulator::{picard_meanfield, simulate_deviation, simulate_equilibrium, SimConfig, N_SNAPSHOTS};
use mfpa_core::stats::{combined_se, MCEstimate};
use mfpa_core::value_ode::{backward_rk4, hjb_residual, solve_coefficients, ValueCoefficients};
use mfpa_core::MarketParams;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Setup {
    p: MarketParams,
    c: ValueCoefficients,
    pol: IncentivePolicy,
    agent: AgentPolicy,
    flow: MomentFlow,
}

fn setup(p: MarketParams) -> Setup {
    let c = solve_coefficients(&p, 201).expect("coefficients");
    let pol = optimal_policy(&c, &p);
    let agent = equilibrium_agent_policy(&pol, &p);
    let flow = solve_moments(&c, &p, 201);
    Setup { p, c, pol, agent, flow }
}

fn sim(n: usize) -> SimConfig {
    SimConfig {
        n_paths: n,
        ..SimConfig::default()
    }
}

fn agree(a: &MCEstimate, b: &MCEstimate) -> bool {
    (a.mean - b.mean).abs() <= 3.0 * combined_se(a.std_error, b.std_error)
}

fn c1_ode_fidelity() -> Outcome {
    let p = MarketParams::reference();
    let rk = backward_rk4(&p, 10_000);
    let c = solve_coefficients(&p, 10_001).unwrap();
    let n = c.len() - 1;
    let mut worst: f64 = 0.0;
    for (k, row) in rk.iter().enumerate() {
        let i = n - k;
        worst = worst.max((row[0] - c.grid[i]).abs());
        worst = worst.max((row[1] - c.h0[i]).abs());
        worst = worst.max((row[2] - c.h1[i]).abs());
        worst = worst.max((row[3] - c.h2[i]).abs());
    }
    let terminal = c.h0[n] == 0.0 && c.h1[n] == p.beta && c.h2[n] == -p.theta / 2.0;
    outcome(
        worst <= 1e-6 && terminal,
        format!("max |closed − RK4| = {worst:.2e}, terminal exact = {terminal}"),
    )
}

fn c2_hjb_residual() -> Outcome {
    let c = solve_coefficients(&MarketParams::reference(), 201).unwrap();
    let mut samples = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            samples.push(LawMoments::new(-2.0 + i as f64, 0.5 * j as f64));
        }
    }
    let r = hjb_residual(&c, &samples);
    outcome(r <= 1e-6, format!("max residual = {r:.2e} over 201 nodes × 25 laws"))
}

fn c3_best_response() -> Outcome {
    let p = MarketParams::reference();
    let model = example_model(&p);
    let step = 1e-4;
    let mut rng = path_rng(2024, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.random_range(0.0..p.horizon);
        let x = rng.random_range(-2.0..2.0);
        let law = LawMoments::new(rng.random_range(-1.0..1.0), rng.random_range(0.05..2.0));
        let s = IncentiveSlice::single(rng.random_range(-2.0..2.0), rng.random_range(-3.0..3.0));
        let closed = best_response_closed(&s, &p);
        // h separates in (α⁰, α¹): scan each coordinate over a wide fixed axis
        // with the other held at an arbitrary value.
        let wide = GridAxis::with_step(-6.0, 6.0, step);
        let (a, _) = best_response_grid(
            t,
            x,
            &s,
            &law,
            &model,
            p.gamma,
            &ControlGrid::product(wide, GridAxis::new(0.37, 0.37, 1)),
        )
        .unwrap();
        let (b, _) = best_response_grid(
            t,
            x,
            &s,
            &law,
            &model,
            p.gamma,
            &ControlGrid::product(GridAxis::new(0.37, 0.37, 1), wide),
        )
        .unwrap();
        // Joint scan on a window whose nodes are offset from the optimum.
        let off = (rng.random_range(-0.005..0.005), rng.random_range(-0.005..0.005));
        let joint = ControlGrid::product(
            GridAxis::with_step(closed.alpha0 + off.0 - 0.01, closed.alpha0 + off.0 + 0.01, step),
            GridAxis::with_step(closed.alpha1 + off.1 - 0.01, closed.alpha1 + off.1 + 0.01, step),
        );
        let (j, _) = best_response_grid(t, x, &s, &law, &model, p.gamma, &joint).unwrap();
        for d in [
            a.alpha0 - closed.alpha0,
            b.alpha1 - closed.alpha1,
            j.alpha0 - closed.alpha0,
            j.alpha1 - closed.alpha1,
        ] {
            worst = worst.max(d.abs());
        }
    }
    outcome(
        worst <= step,
        format!("max |grid − closed| = {worst:.2e} (step {step:.0e}) over 100 slices"),
    )
}

fn c4_mean_field() -> Outcome {
    let s = setup(MarketParams::reference());
    let cfg = sim(100_000);
    let ens = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &cfg).unwrap();
    let within = |e: &mfpa_core::simulator::PathEnsemble| {
        let mut worst: f64 = 0.0;
        for j in 0..N_SNAPSHOTS {
            let law = s.flow.at(e.snapshot_times[j]);
            worst = worst.max(e.mean_estimate(j).z_score(law.mean).abs());
            worst = worst.max(e.variance_estimate(j).z_score(law.variance).abs());
        }
        worst
    };
    let z_ode = within(&ens);
    let picard = picard_meanfield(&s.p, &s.pol, &s.agent, |t| s.c.rate_at(t), &cfg);
    match picard {
        Ok(out) => {
            let z_pic = within(&out.ensemble);
            let pass = z_ode <= 3.0 && z_pic <= 3.0 && out.iterations <= 10 && out.gap < 0.02;
            outcome(
                pass,
                format!(
                    "max |z| = {z_ode:.2} on the ODE law; Picard {} iterations, gap {:.4}, max |z| = {z_pic:.2}",
                    out.iterations, out.gap
                ),
            )
        }
        Err(e) => outcome(false, format!("max |z| = {z_ode:.2}; Picard failed: {e}")),
    }
}

fn c5_second_moment() -> Outcome {
    let s = setup(MarketParams {
        sigma: 1.0,
        ..MarketParams::reference()
    });
    let ens = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &sim(1_000_000)).unwrap();
    let derived = integrate_second_moment(&s.c, &s.p, 201, QVariant::Derived);
    let alternative = integrate_second_moment(&s.c, &s.p, 201, QVariant::Alternative);
    let mut pass = true;
    let mut parts = Vec::new();
    for (j, node) in [(10, 100), (20, 200)] {
        let est = ens.second_moment_estimate(j);
        let (qd, qa) = (derived.q[node], alternative.q[node]);
        let separation = (qd - qa) / est.std_error;
        let zd = est.z_score(qd);
        let za = est.z_score(qa);
        pass &= separation > 6.0 && zd.abs() <= 3.0 && za.abs() > 3.0;
        parts.push(format!(
            "t={}: gap {separation:.1} SE, z(derived) = {zd:.2}, z(alternative) = {za:.1}",
            ens.snapshot_times[j]
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c6_agent_value() -> Outcome {
    let s = setup(MarketParams::reference());
    let y0 = reservation_level(&s.p);
    let mut pass = y0 == 0.0;
    let mut parts = Vec::new();
    for shift in [0.0, 0.3] {
        let pol = s.pol.clone().with_y0(y0 + shift);
        let ens = simulate_equilibrium(&s.p, &pol, &s.agent, &s.flow, &sim(100_000)).unwrap();
        let v = agent_value(&ens, &s.p);
        let target = -(-s.p.gamma * (y0 + shift)).exp();
        pass &= v.within(target, 3.0);
        parts.push(format!("Y0+{shift}: {:.5} ± {:.5} vs {target:.5}", v.mean, v.std_error));
    }
    outcome(pass, parts.join("; "))
}

fn c7_incentive_compatibility() -> Outcome {
    let s = setup(MarketParams::reference());
    let (rep, _) = ic_verify(
        &s.p,
        &s.pol,
        &s.agent,
        &s.flow,
        &sim(100_000),
        &default_deviation_grid(),
    )
    .unwrap();
    let worst = rep
        .deviations
        .iter()
        .map(|d| (d.value.mean - rep.optimal_value.mean) / combined_se(d.value.std_error, rep.optimal_value.std_error))
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = rep.deviations.len() == 12 && rep.deviations.iter().all(|d| d.pass);
    outcome(pass, format!("12 deviations, largest gain = {worst:.2} combined SE"))
}

fn c8_martingale() -> Outcome {
    let s = setup(MarketParams::reference());
    let cfg = sim(100_000);
    let eq = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &cfg).unwrap();
    let eq_rep = martingale_check(&eq, &s.p);
    let dev = simulate_deviation(&s.p, &s.pol, &s.agent.shifted(0.5, 0.0), &s.flow, &cfg).unwrap();
    let dev_rep = martingale_check(&dev, &s.p);
    let eq_worst = eq_rep
        .increments
        .iter()
        .map(|e| (e.mean / e.std_error).abs())
        .fold(0.0, f64::max);
    let pass = eq_rep.martingale && dev_rep.max_z() > 3.0;
    outcome(
        pass,
        format!(
            "equilibrium max |z| = {eq_worst:.2}; deviation (0.5, 0) max z = {:.1}",
            dev_rep.max_z()
        ),
    )
}

fn c9_principal() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut estimates = Vec::new();
    let delta = MarketParams::reference().delta;
    for f_slope in [0.0, delta, 1.0] {
        let s = setup(MarketParams {
            f_slope,
            ..MarketParams::reference()
        });
        let ens = simulate_equilibrium(&s.p, &s.pol, &s.agent, &s.flow, &sim(100_000)).unwrap();
        let v = principal_value(&ens, &s.p);
        let predicted = s.c.h0[0] + s.c.h1[0] * s.p.m0 + s.c.h2[0] * s.p.v0 - s.pol.y0;
        pass &= v.within(predicted, 3.0);
        parts.push(format!("f1={f_slope}: z = {:.2}", v.z_score(predicted)));
        estimates.push(v);
    }
    for i in 0..estimates.len() {
        for j in i + 1..estimates.len() {
            pass &= agree(&estimates[i], &estimates[j]);
        }
    }
    outcome(pass, format!("{} against the prediction", parts.join(", ")))
}

fn c10_engines() -> Outcome {
    let s = setup(MarketParams::reference());
    let p = s.p;
    let n = 10_000;
    let step = 0.002;
    let hint = s.pol.clone();
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
        incentive: s.pol.clone(),
        gamma: p.gamma,
        sim: SimConfig { seed: 7, ..sim(n) },
        grid,
        horizon: p.horizon,
        initial: LawMoments::new(p.m0, p.v0),
    };
    let (gen, _) = match simulate_generic(&run) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("generic engine failed: {e}")),
    };
    let spec = simulate_equilibrium(&p, &s.pol, &s.agent, &s.flow, &SimConfig { seed: 8, ..sim(n) }).unwrap();
    let last = N_SNAPSHOTS - 1;
    let pairs = [
        ("m(T)", gen.mean_estimate(last), spec.mean_estimate(last)),
        ("v(T)", gen.variance_estimate(last), spec.variance_estimate(last)),
        ("agent value", agent_value(&gen, &p), agent_value(&spec, &p)),
        (
            "E[ξ]",
            MCEstimate::from_samples(&gen.y_terminal, false),
            MCEstimate::from_samples(&spec.y_terminal, false),
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, a, b) in &pairs {
        pass &= agree(a, b);
        parts.push(format!(
            "{name} z = {:.2}",
            (a.mean - b.mean) / combined_se(a.std_error, b.std_error)
        ));
    }
    outcome(pass, parts.join(", "))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn c11_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serde_json::json!({
        "market": {
            "gamma": 1.0, "sigma": 0.5, "k1": 0.5, "k2": 1.0, "delta": 0.2,
            "beta": 1.0, "theta": 0.5, "T": 1.0, "R0": -1.0, "m0": 0.0, "v0": 0.0
        },
        "sim": { "n_paths": 20000, "seed": 42 },
        "run": { "picard": true, "dump_paths": true, "plots": false, "deviations": [[0.25, 0.0], [0.0, -0.25]] }
    });
    let cfg_path = dir.path().join("cfg.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let mut produced = Vec::new();
    for (k, workers) in ["1", "4", "1", "3"].iter().enumerate() {
        let out = dir.path().join(format!("run{k}"));
        for cmd in ["solve", "simulate", "verify-ic"] {
            let argv = [
                "mfpa",
                cmd,
                "--config",
                cfg_path.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--workers",
                workers,
            ];
            let cli = mfpa_cli::Cli::try_parse_from(argv).unwrap();
            if let Err(e) = mfpa_cli::execute(&cli.command) {
                return outcome(false, format!("{cmd} failed with exit code {}: {e}", e.exit_code()));
            }
        }
        produced.push(files_in(&out));
    }
    let n_files = produced[0].len();
    let same = produced.iter().all(|p| *p == produced[0]);
    outcome(
        same && n_files >= 7,
        format!("{n_files} CSV files identical across 4 runs with 1, 4, 1, 3 workers"),
    )
}

type Criterion = (&'static str, Option<Duration>, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("ODE fidelity", Some(Duration::from_secs(1)), c1_ode_fidelity),
        ("HJB residual", Some(Duration::from_secs(1)), c2_hjb_residual),
        (
            "best-response agreement",
            Some(Duration::from_secs(10)),
            c3_best_response,
        ),
        ("mean-field consistency", Some(Duration::from_secs(60)), c4_mean_field),
        ("second-moment sign", Some(Duration::from_secs(300)), c5_second_moment),
        ("agent value and reservation", None, c6_agent_value),
        ("incentive compatibility", None, c7_incentive_compatibility),
        ("martingale diagnostic", None, c8_martingale),
        ("principal consistency", None, c9_principal),
        ("engine cross-validation", None, c10_engines),
        ("reproducibility", None, c11_reproducibility),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut o = run();
        let took = start.elapsed();
        if let Some(b) = budget {
            if took > *b {
                o.pass = false;
                o.detail
                    .push_str(&format!("; over the {:.0} s budget", b.as_secs_f64()));
            }
        }
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<29} {}  [{:.2} s]  {}",
            k + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            o.detail
        );
    }
    println!(
        "acceptance: {} of {} criteria pass",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
