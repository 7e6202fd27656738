//! Subcommand bodies. Each writes its files into `out` and returns a short
//! report, or [`CliError::Verification`] after writing when a check fails.

use std::path::Path;
use std::sync::Arc;

use mfpa_core::evaluator::{
    agent_value, default_deviation_grid, ic_verify, martingale_check, principal_value, SE_THRESHOLD,
};
use mfpa_core::generic_mkv::{centred_schedule, decoupled_model, simulate_generic as run_generic, GenericRun};
use mfpa_core::hamiltonian::{best_response_closed, ControlPoint};
use mfpa_core::incentives::{
    equilibrium_agent_policy, optimal_policy, policy_rows, reservation_level, AgentPolicy, IncentivePolicy,
};
use mfpa_core::model::{example_model, LawMoments};
use mfpa_core::moments::{solve_moments, MomentFlow};
use mfpa_core::quadrature::adaptive_simpson;
use mfpa_core::simulator::{
    picard_meanfield, simulate_equilibrium, variance_estimate, PathEnsemble, SimConfig, N_SNAPSHOTS,
};
use mfpa_core::stats::MCEstimate;
use mfpa_core::value_ode::{solve_coefficients, ValueCoefficients};
use mfpa_core::MarketParams;

use crate::config::RunConfig;
use crate::output::{real, write_csv, write_real_csv, Summary};
use crate::svg::{histogram, line_chart, Series};
use crate::CliError;

const DEFAULT_PATHS: usize = 100_000;
const DEFAULT_GENERIC_PATHS: usize = 10_000;
/// Slack for Euler discretisation when the Monte Carlo error vanishes.
const DISCRETISATION_TOL: f64 = 1e-5;

/// Everything the deterministic solve produces.
pub struct Solved {
    pub params: MarketParams,
    pub coeffs: ValueCoefficients,
    pub policy: IncentivePolicy,
    pub agent: AgentPolicy,
    pub flow: MomentFlow,
}

pub fn solve_market(p: &MarketParams, n_grid: usize, y0: Option<f64>) -> Result<Solved, CliError> {
    let p = p.validated()?;
    let coeffs = solve_coefficients(&p, n_grid)?;
    coeffs.check_invariants()?;
    let mut policy = optimal_policy(&coeffs, &p);
    if let Some(y) = y0 {
        policy = policy.with_y0(y);
    }
    let agent = equilibrium_agent_policy(&policy, &p);
    let flow = solve_moments(&coeffs, &p, n_grid);
    Ok(Solved {
        params: p,
        coeffs,
        policy,
        agent,
        flow,
    })
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write_svg(out: &Path, name: &str, body: &str) -> Result<(), CliError> {
    let dir = out.join("plots");
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(io(&path))
}

pub fn solve(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let s = solve_market(&cfg.params()?, cfg.run.n_grid, cfg.run.y0)?;
    let c = &s.coeffs;
    write_real_csv(
        &out.join("coefficients.csv"),
        &["t", "h0", "h1", "h2", "h_rate"],
        c.rows(),
    )?;
    let rows = policy_rows(&s.policy, &s.agent, &c.grid)
        .into_iter()
        .zip(&c.h_rate)
        .map(|(r, &h)| [r[0], r[1], r[2], r[3], r[4], h]);
    write_real_csv(
        &out.join("policy.csv"),
        &["t", "z", "u_minus1", "alpha0", "alpha1", "h_rate"],
        rows,
    )?;
    write_real_csv(
        &out.join("moments.csv"),
        &["t", "m", "v", "q", "intensity"],
        s.flow.rows(),
    )?;

    let p = &s.params;
    let mut sum = Summary::new();
    sum.real("h0_0", c.h0[0])
        .real("h1_0", c.h1[0])
        .real("h2_0", c.h2[0])
        .real("reservation_level", reservation_level(p))
        .real("y0", s.policy.y0)
        .real("predicted_principal_value", c.principal_value(s.policy.y0))
        .real("expected_jumps", s.flow.expected_jumps())
        .real("m_T", *s.flow.m.last().unwrap())
        .real("v_T", *s.flow.v.last().unwrap())
        .text("n_grid", c.len());
    sum.write(&out.join("summary.txt"))?;

    if cfg.run.plots {
        let t = c.grid.clone();
        let chart = line_chart(
            "value coefficients",
            "t",
            "h",
            &[
                Series::line("h0", t.clone(), c.h0.clone()),
                Series::line("h1", t.clone(), c.h1.clone()),
                Series::line("h2", t.clone(), c.h2.clone()),
            ],
        );
        write_svg(out, "coefficients.svg", &chart)?;
        let z: Vec<f64> = t.iter().map(|&x| s.policy.z(x)).collect();
        let u: Vec<f64> = t.iter().map(|&x| s.policy.u_minus1(x)).collect();
        let chart = line_chart(
            "optimal contract",
            "t",
            "exposure",
            &[Series::line("Z", t.clone(), z), Series::line("U(-1)", t, u)],
        );
        write_svg(out, "policy.svg", &chart)?;
    }
    Ok(format!(
        "solve: h1(0) = {:.6}, predicted principal value = {:.6}",
        c.h1[0],
        c.principal_value(s.policy.y0)
    ))
}

/// One snapshot of the Monte Carlo versus reference comparison.
#[derive(Debug, Clone, Copy)]
pub struct MomentRow {
    pub t: f64,
    pub reference: LawMoments,
    pub mean: MCEstimate,
    pub variance: MCEstimate,
}

impl MomentRow {
    fn z(est: &MCEstimate, target: f64) -> f64 {
        let d = est.mean - target;
        if d.abs() <= DISCRETISATION_TOL * (1.0 + target.abs()) {
            0.0
        } else if est.std_error > 0.0 {
            d / est.std_error
        } else {
            f64::INFINITY.copysign(d)
        }
    }

    pub fn mean_z(&self) -> f64 {
        Self::z(&self.mean, self.reference.mean)
    }

    pub fn variance_z(&self) -> f64 {
        Self::z(&self.variance, self.reference.variance)
    }

    pub fn ok(&self) -> bool {
        let within = |est: &MCEstimate, target: f64| {
            (est.mean - target).abs() <= SE_THRESHOLD * est.std_error + DISCRETISATION_TOL * (1.0 + target.abs())
        };
        within(&self.mean, self.reference.mean) && within(&self.variance, self.reference.variance)
    }
}

pub fn compare_moments(ens: &PathEnsemble, reference: impl Fn(f64) -> LawMoments) -> Vec<MomentRow> {
    (0..N_SNAPSHOTS)
        .map(|j| {
            let t = ens.snapshot_times[j];
            MomentRow {
                t,
                reference: reference(t),
                mean: ens.mean_estimate(j),
                variance: variance_estimate(&ens.x_at(j)),
            }
        })
        .collect()
}

fn write_moment_comparison(out: &Path, rows: &[MomentRow]) -> Result<(), CliError> {
    let header = [
        "t", "m_ref", "m_mc", "m_se", "m_z", "v_ref", "v_mc", "v_se", "v_z", "ok",
    ];
    let body = rows.iter().map(|r| {
        vec![
            real(r.t),
            real(r.reference.mean),
            real(r.mean.mean),
            real(r.mean.std_error),
            real(r.mean_z()),
            real(r.reference.variance),
            real(r.variance.mean),
            real(r.variance.std_error),
            real(r.variance_z()),
            r.ok().to_string(),
        ]
    });
    write_csv(&out.join("moment_comparison.csv"), &header, body)
}

fn moment_plots(out: &Path, rows: &[MomentRow], curve: &MomentFlow, ens: &PathEnsemble) -> Result<(), CliError> {
    let t: Vec<f64> = rows.iter().map(|r| r.t).collect();
    let band = |e: &MCEstimate| SE_THRESHOLD * e.std_error;
    let chart = line_chart(
        "mean of X",
        "t",
        "m(t)",
        &[
            Series::line("moment ODE", curve.grid.clone(), curve.m.clone()),
            Series::points(
                "Monte Carlo ± 3 SE",
                t.clone(),
                rows.iter().map(|r| r.mean.mean).collect(),
                rows.iter().map(|r| band(&r.mean)).collect(),
            ),
        ],
    );
    write_svg(out, "mean.svg", &chart)?;
    let chart = line_chart(
        "variance of X",
        "t",
        "v(t)",
        &[
            Series::line("moment ODE", curve.grid.clone(), curve.v.clone()),
            Series::points(
                "Monte Carlo ± 3 SE",
                t,
                rows.iter().map(|r| r.variance.mean).collect(),
                rows.iter().map(|r| band(&r.variance)).collect(),
            ),
        ],
    );
    write_svg(out, "variance.svg", &chart)?;
    write_svg(
        out,
        "xi_histogram.svg",
        &histogram("contract payment ξ", "ξ", &ens.y_terminal, 60),
    )
}

fn ensemble_summary(sum: &mut Summary, ens: &PathEnsemble, p: &MarketParams, sim: &SimConfig) {
    let last = N_SNAPSHOTS - 1;
    sum.text("n_paths", sim.n_paths)
        .text("n_steps", sim.n_steps)
        .text("seed", sim.seed)
        .text("antithetic", sim.antithetic)
        .estimate("mean_x_T", &ens.mean_estimate(last))
        .estimate("var_x_T", &variance_estimate(&ens.x_at(last)))
        .estimate("mean_xi", &MCEstimate::from_samples(&ens.y_terminal, ens.antithetic))
        .estimate("mean_jumps", &ens.jump_estimate())
        .estimate("agent_value", &agent_value(ens, p))
        .estimate("principal_value", &principal_value(ens, p));
}

fn dump_paths(out: &Path, ens: &PathEnsemble) -> Result<(), CliError> {
    let rows = (0..ens.len()).map(|i| {
        vec![
            i.to_string(),
            real(ens.x_terminal[i]),
            real(ens.y_terminal[i]),
            ens.jump_count[i].to_string(),
        ]
    });
    write_csv(
        &out.join("paths.csv"),
        &["path", "x_terminal", "y_terminal", "jump_count"],
        rows,
    )
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let s = solve_market(&cfg.params()?, cfg.run.n_grid, cfg.run.y0)?;
    let sim = cfg.sim_config(DEFAULT_PATHS)?;
    let p = &s.params;
    let mut sum = Summary::new();
    let ens = if cfg.run.picard {
        let outcome = picard_meanfield(p, &s.policy, &s.agent, |t| s.coeffs.rate_at(t), &sim)?;
        sum.text("picard_iterations", outcome.iterations)
            .real("picard_gap", outcome.gap);
        outcome.ensemble
    } else {
        simulate_equilibrium(p, &s.policy, &s.agent, &s.flow, &sim)?
    };
    let rows = compare_moments(&ens, |t| s.flow.at(t));
    write_moment_comparison(out, &rows)?;

    ensemble_summary(&mut sum, &ens, p, &sim);
    let expected = s.flow.expected_jumps();
    let predicted = s.coeffs.principal_value(s.policy.y0);
    let ok = rows.iter().all(MomentRow::ok);
    let worst = rows
        .iter()
        .map(|r| r.mean_z().abs().max(r.variance_z().abs()))
        .fold(0.0, f64::max);
    sum.real("expected_jumps", expected)
        .real("predicted_principal_value", predicted)
        .real("envelope_value", -(-p.gamma * s.policy.y0).exp())
        .real("max_abs_moment_z", worst)
        .text("verdict", if ok { "pass" } else { "fail" });
    sum.write(&out.join("ensemble_summary.txt"))?;
    if cfg.run.dump_paths {
        dump_paths(out, &ens)?;
    }
    if cfg.run.plots {
        moment_plots(out, &rows, &s.flow, &ens)?;
    }
    if !ok {
        return Err(CliError::Verification(format!(
            "Monte Carlo moments leave the 3 SE band (worst |z| = {worst:.2})"
        )));
    }
    Ok(format!(
        "simulate: {} paths, moments within 3 SE at all snapshots (worst |z| = {worst:.2})",
        sim.n_paths
    ))
}

/// Reads a contract table with columns `t,z,u_minus1` and optionally
/// `alpha0,alpha1`. Without effort columns the agent best-responds.
pub fn read_policy(path: &Path, y0: f64, p: &MarketParams) -> Result<(IncentivePolicy, AgentPolicy), CliError> {
    let err = |m: String| CliError::Config(format!("{}: {m}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (ti, zi, ui) = match (col("t"), col("z"), col("u_minus1")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(err("needs columns t, z, u_minus1".into())),
    };
    let effort = col("alpha0").zip(col("alpha1"));
    let mut cols: [Vec<f64>; 5] = Default::default();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let num = |i: usize| -> Result<f64, CliError> {
            let s = rec.get(i).unwrap_or("").trim();
            s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")))
        };
        cols[0].push(num(ti)?);
        cols[1].push(num(zi)?);
        cols[2].push(num(ui)?);
        if let Some((a, b)) = effort {
            cols[3].push(num(a)?);
            cols[4].push(num(b)?);
        }
    }
    let [t, z, u, a0, a1] = cols;
    let pol = IncentivePolicy::tabulated(y0, t.clone(), z, u).map_err(|e| err(e.to_string()))?;
    let agent = if effort.is_some() {
        AgentPolicy::tabulated(t, a0, a1).map_err(|e| err(e.to_string()))?
    } else {
        AgentPolicy::best_response(&pol, p)
    };
    Ok((pol, agent))
}

pub fn verify_ic(cfg: &RunConfig, out: &Path, policy_file: Option<&Path>) -> Result<String, CliError> {
    let s = solve_market(&cfg.params()?, cfg.run.n_grid, cfg.run.y0)?;
    let sim = cfg.sim_config(DEFAULT_PATHS)?;
    let p = &s.params;
    let (pol, agent) = match policy_file {
        Some(path) => read_policy(path, s.policy.y0, p)?,
        None => (s.policy.clone(), s.agent.clone()),
    };
    let grid: Vec<(f64, f64)> = match &cfg.run.deviations {
        Some(d) => d.iter().map(|[a, b]| (*a, *b)).collect(),
        None => default_deviation_grid(),
    };
    let (rep, eq) = ic_verify(p, &pol, &agent, &s.flow, &sim, &grid)?;
    let mart = martingale_check(&eq, p);

    let header = ["e0", "e1", "value", "value_se", "gain", "gain_se", "pass"];
    let rows = rep.deviations.iter().map(|d| {
        vec![
            real(d.e0),
            real(d.e1),
            real(d.value.mean),
            real(d.value.std_error),
            real(d.gain.mean),
            real(d.gain.std_error),
            d.pass.to_string(),
        ]
    });
    write_csv(&out.join("ic_report.csv"), &header, rows)?;
    let rows = mart.increments.iter().enumerate().map(|(i, e)| {
        let z = if e.std_error > 0.0 { e.mean / e.std_error } else { 0.0 };
        [mart.times[i], mart.times[i + 1], e.mean, e.std_error, z]
    });
    write_real_csv(
        &out.join("martingale.csv"),
        &["t_start", "t_end", "increment", "se", "z"],
        rows,
    )?;

    let ic_ok = rep.verdict();
    let mart_ok = mart.verdict(true);
    let mut sum = Summary::new();
    sum.text("n_paths", sim.n_paths)
        .text("seed", sim.seed)
        .real("y0", pol.y0)
        .estimate("optimal_value", &rep.optimal_value)
        .real("envelope", rep.envelope)
        .text("envelope_ok", rep.envelope_ok)
        .text("deviations", rep.deviations.len())
        .text("deviations_pass", rep.deviations.iter().all(|d| d.pass))
        .text("martingale_ok", mart.martingale)
        .text("submartingale_ok", mart.submartingale)
        .real("max_martingale_z", mart.max_z())
        .text("verdict", if ic_ok && mart_ok { "pass" } else { "fail" });
    sum.write(&out.join("ic_summary.txt"))?;
    if !(ic_ok && mart_ok) {
        let mut why = Vec::new();
        if !rep.envelope_ok {
            why.push(format!(
                "agent value {:.6} ± {:.6} is off the envelope {:.6}",
                rep.optimal_value.mean, rep.optimal_value.std_error, rep.envelope
            ));
        }
        for d in rep.deviations.iter().filter(|d| !d.pass) {
            why.push(format!("deviation {} pays", d.label()));
        }
        if !mart_ok {
            why.push("e^{-γȲ} is not a martingale at equilibrium".into());
        }
        return Err(CliError::Verification(why.join("; ")));
    }
    Ok(format!(
        "verify-ic: {} deviations checked, contract is incentive compatible",
        rep.deviations.len()
    ))
}

/// One sweep row; `Err` carries the message recorded in the table.
struct SweepRow {
    value: f64,
    result: Result<SweepValues, String>,
}

struct SweepValues {
    h0: f64,
    predicted: f64,
    principal: MCEstimate,
    expected_jumps: f64,
    jumps: MCEstimate,
}

fn sweep_point(cfg: &RunConfig, p: &MarketParams, sim: &SimConfig) -> Result<SweepValues, CliError> {
    let s = solve_market(p, cfg.run.n_grid, cfg.run.y0)?;
    let ens = simulate_equilibrium(&s.params, &s.policy, &s.agent, &s.flow, sim)?;
    Ok(SweepValues {
        h0: s.coeffs.h0[0],
        predicted: s.coeffs.principal_value(s.policy.y0),
        principal: principal_value(&ens, &s.params),
        expected_jumps: s.flow.expected_jumps(),
        jumps: ens.jump_estimate(),
    })
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let spec = cfg
        .run
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Config("sweep needs run.sweep {axis, values}".into()))?;
    let base = cfg.market.params();
    let sim = cfg.sim_config(DEFAULT_PATHS)?;
    let rows: Vec<SweepRow> = spec
        .values
        .iter()
        .map(|&value| {
            let mut p = base;
            p.set_field(&spec.axis, value);
            SweepRow {
                value,
                result: sweep_point(cfg, &p, &sim).map_err(|e| e.to_string()),
            }
        })
        .collect();

    let header = [
        spec.axis.as_str(),
        "status",
        "h0_0",
        "predicted_principal_value",
        "mc_principal_value",
        "mc_principal_value_se",
        "expected_jumps",
        "mc_jumps",
        "mc_jumps_se",
    ];
    let body = rows.iter().map(|r| match &r.result {
        Ok(v) => vec![
            real(r.value),
            "ok".to_string(),
            real(v.h0),
            real(v.predicted),
            real(v.principal.mean),
            real(v.principal.std_error),
            real(v.expected_jumps),
            real(v.jumps.mean),
            real(v.jumps.std_error),
        ],
        Err(msg) => {
            let mut row = vec![real(r.value), msg.clone()];
            row.resize(header.len(), String::new());
            row
        }
    });
    write_csv(&out.join("sweep.csv"), &header, body)?;

    if cfg.run.plots {
        let good: Vec<(f64, &SweepValues)> = rows
            .iter()
            .filter_map(|r| r.result.as_ref().ok().map(|v| (r.value, v)))
            .collect();
        let x: Vec<f64> = good.iter().map(|g| g.0).collect();
        let chart = line_chart(
            &format!("principal value across {}", spec.axis),
            &spec.axis,
            "principal value",
            &[
                Series::line("predicted", x.clone(), good.iter().map(|g| g.1.predicted).collect()),
                Series::points(
                    "Monte Carlo ± 3 SE",
                    x,
                    good.iter().map(|g| g.1.principal.mean).collect(),
                    good.iter().map(|g| SE_THRESHOLD * g.1.principal.std_error).collect(),
                ),
            ],
        );
        write_svg(out, "sweep.svg", &chart)?;
    }
    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    Ok(format!(
        "sweep: {} values over {}, {failed} failed",
        rows.len(),
        spec.axis
    ))
}

pub fn simulate_generic(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let s = solve_market(&cfg.params()?, cfg.run.n_grid, cfg.run.y0)?;
    let sim = cfg.sim_config(DEFAULT_GENERIC_PATHS)?;
    let p = s.params;
    let name = cfg.run.generic_model.as_deref().unwrap_or("demand-response");
    let step = 0.002;
    let hint = s.policy.clone();
    let (model, incentive, grid, reference): (_, _, _, Box<dyn Fn(f64) -> LawMoments>) = match name {
        "demand-response" => {
            // Offset so the closed-form optimum is never a grid node.
            let grid = centred_schedule(
                move |t| {
                    let a = best_response_closed(&hint.slice(t), &p);
                    ControlPoint::new(a.alpha0 + 0.3 * step, a.alpha1 - 0.3 * step)
                },
                5,
                step,
            );
            let flow = s.flow.clone();
            (example_model(&p), s.policy.clone(), grid, Box::new(move |t| flow.at(t)))
        }
        "decoupled" => {
            // Drift α⁰ against unit-rate accidents: m = m₀ + ∫Z − t, v = v₀ + (σ² + 1)t.
            let zero_u = IncentivePolicy {
                y0: s.policy.y0,
                z_of_t: s.policy.z_of_t.clone(),
                u_of_t: Arc::new(|_, _| 0.0),
            };
            let grid = centred_schedule(move |t| ControlPoint::new(hint.z(t) + 0.3 * step, 0.0), 5, step);
            let z = s.policy.z_of_t.clone();
            let reference = move |t: f64| {
                let drift = if t > 0.0 {
                    adaptive_simpson(|u| z(u), 0.0, t, 1e-10, 1e-14)
                } else {
                    0.0
                };
                LawMoments::new(p.m0 + drift - t, p.v0 + (p.sigma * p.sigma + 1.0) * t)
            };
            (decoupled_model(p.sigma, 1.0), zero_u, grid, Box::new(reference))
        }
        other => {
            return Err(CliError::Config(format!(
                "run.generic_model `{other}` is not one of demand-response, decoupled"
            )))
        }
    };
    let run = GenericRun {
        model,
        incentive,
        gamma: p.gamma,
        sim,
        grid,
        horizon: p.horizon,
        initial: LawMoments::new(p.m0, p.v0),
    };
    let (ens, flow) = run_generic(&run)?;
    let rows = compare_moments(&ens, reference);
    write_moment_comparison(out, &rows)?;
    write_real_csv(
        &out.join("moments.csv"),
        &["t", "m", "v", "q", "intensity"],
        flow.rows(),
    )?;
    let ok = rows.iter().all(MomentRow::ok);
    let mut sum = Summary::new();
    sum.text("model", name);
    ensemble_summary(&mut sum, &ens, &p, &sim);
    sum.text("verdict", if ok { "pass" } else { "fail" });
    sum.write(&out.join("ensemble_summary.txt"))?;
    if !ok {
        return Err(CliError::Verification(
            "generic engine moments leave the 3 SE band".into(),
        ));
    }
    Ok(format!(
        "simulate-generic: {name}, {} paths, moments within 3 SE",
        sim.n_paths
    ))
}
