//! JSON run configuration with sections `market`, `sim` and `run`.
//!
//! Unknown keys anywhere are rejected. `market.f_slope` defaults to `delta`
//! and `market.f_intercept` to zero; `market.eta` is accepted and ignored.

use std::path::Path;

use mfpa_core::simulator::SimConfig;
use mfpa_core::MarketParams;
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketSection {
    pub gamma: f64,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub delta: f64,
    pub beta: f64,
    pub theta: f64,
    #[serde(alias = "T")]
    pub horizon: f64,
    #[serde(alias = "R0")]
    pub reservation: f64,
    pub m0: f64,
    pub v0: f64,
    #[serde(default)]
    pub f_slope: Option<f64>,
    #[serde(default)]
    pub f_intercept: Option<f64>,
    /// Principal risk aversion. The mean-variance principal never uses it.
    #[serde(default)]
    pub eta: Option<f64>,
}

impl MarketSection {
    pub fn params(&self) -> MarketParams {
        MarketParams {
            gamma: self.gamma,
            sigma: self.sigma,
            k1: self.k1,
            k2: self.k2,
            delta: self.delta,
            beta: self.beta,
            theta: self.theta,
            horizon: self.horizon,
            reservation: self.reservation,
            m0: self.m0,
            v0: self.v0,
            f_slope: self.f_slope.unwrap_or(self.delta),
            f_intercept: self.f_intercept.unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    pub seed: Option<u64>,
    pub picard_tol: Option<f64>,
    pub picard_max_iters: Option<usize>,
    pub antithetic: Option<bool>,
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: String,
    pub values: Vec<f64>,
}

fn default_n_grid() -> usize {
    201
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Nodes of the coefficient and moment grids.
    #[serde(default = "default_n_grid")]
    pub n_grid: usize,
    /// Overrides the reservation level `Y₀ = −log(−R₀)/γ`.
    #[serde(default)]
    pub y0: Option<f64>,
    /// Constant shifts `[e0, e1]` for verify-ic.
    #[serde(default)]
    pub deviations: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    /// Close the law with the Picard loop instead of the moment ODE.
    #[serde(default)]
    pub picard: bool,
    #[serde(default = "default_true")]
    pub plots: bool,
    /// Write paths.csv with one row per path.
    #[serde(default)]
    pub dump_paths: bool,
    /// Built-in model for simulate-generic: "demand-response" or "decoupled".
    #[serde(default)]
    pub generic_model: Option<String>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            n_grid: default_n_grid(),
            y0: None,
            deviations: None,
            sweep: None,
            picard: false,
            plots: true,
            dump_paths: false,
            generic_model: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub market: MarketSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn check(&self) -> Result<(), CliError> {
        if self.run.n_grid < 3 {
            return Err(CliError::Config("run.n_grid must be >= 3".into()));
        }
        if let Some(s) = &self.run.sweep {
            if !MarketParams::reference().set_field(&s.axis, 0.0) {
                return Err(CliError::Config(format!(
                    "run.sweep.axis `{}` is not a market field",
                    s.axis
                )));
            }
            if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite()) {
                return Err(CliError::Config("run.sweep.values must be finite and nonempty".into()));
            }
        }
        if let Some(d) = &self.run.deviations {
            if d.iter().flatten().any(|v| !v.is_finite()) {
                return Err(CliError::Config("run.deviations must be finite".into()));
            }
        }
        Ok(())
    }

    /// Market parameters, validated.
    pub fn params(&self) -> Result<MarketParams, CliError> {
        Ok(self.market.params().validated()?)
    }

    /// Simulation settings with unset fields at their defaults, except
    /// `n_paths` which falls back to `default_paths`.
    pub fn sim_config(&self, default_paths: usize) -> Result<SimConfig, CliError> {
        let d = SimConfig::default();
        let s = &self.sim;
        let cfg = SimConfig {
            n_paths: s.n_paths.unwrap_or(default_paths),
            n_steps: s.n_steps.unwrap_or(d.n_steps),
            seed: s.seed.unwrap_or(d.seed),
            picard_tol: s.picard_tol.unwrap_or(d.picard_tol),
            picard_max_iters: s.picard_max_iters.unwrap_or(d.picard_max_iters),
            antithetic: s.antithetic.unwrap_or(d.antithetic),
            workers: s.workers.or(d.workers),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
