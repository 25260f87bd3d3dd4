//! Experiment configuration: a JSON document, optionally overridden by flags.

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hessian::{VarianceMethod, VarianceSettings, FD_STEP};
use crate::model::{ChannelParams, DeterministicProfile};
use crate::montecarlo::RunConfig;
use crate::replica::SolverSettings;

/// Diagonal profile constructor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ProfileShape {
    Constant(f64),
    /// Endpoints, inclusive.
    Linspace([f64; 2]),
    List(Vec<f64>),
}

impl ProfileShape {
    pub fn expand(&self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        let values = match self {
            ProfileShape::Constant(x) => vec![*x; n],
            ProfileShape::Linspace([a, b]) => match n {
                0 => vec![],
                1 => vec![*a],
                _ => (0..n)
                    .map(|k| if k + 1 == n { *b } else { a + (b - a) * k as f64 / (n - 1) as f64 })
                    .collect(),
            },
            ProfileShape::List(v) => {
                if v.len() != n {
                    return Err(Error::InvalidParameter {
                        field,
                        reason: format!("list has {} entries but n = {n}", v.len()),
                    });
                }
                v.clone()
            }
        };
        if let Some(x) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                field,
                reason: format!("non-finite entry {x}"),
            });
        }
        Ok(values)
    }
}

/// Accepts `0.2`, `const:0.2`, `linspace:0.5:1.5` and `list:0.1,0.2,0.3`.
impl FromStr for ProfileShape {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"));
        let (kind, rest) = s.split_once(':').unwrap_or(("const", s));
        match kind {
            "const" | "constant" => Ok(ProfileShape::Constant(num(rest)?)),
            "linspace" => {
                let (a, b) = rest
                    .split_once(':')
                    .ok_or_else(|| format!("expected linspace:A:B, got `{s}`"))?;
                Ok(ProfileShape::Linspace([num(a)?, num(b)?]))
            }
            "list" => Ok(ProfileShape::List(rest.split(',').map(num).collect::<std::result::Result<_, _>>()?)),
            _ => Err(format!("unknown profile kind `{kind}` (const, linspace, list)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub n: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub rho0: f64,
    pub h0: ProfileShape,
    pub loss: ProfileShape,
    pub runs: u64,
    pub seed: u64,
    pub chunks: usize,
    /// Worker cap; `None` uses every core.
    pub threads: Option<usize>,
    pub solver: SolverSettings,
    pub fd_step: f64,
    pub cdf_points: usize,
    /// Random `H` draws per size in the scattering check.
    pub scattering_draws: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 6,
            alpha: 0.5 / PI,
            gamma: 0.5,
            rho0: 2.0,
            h0: ProfileShape::Linspace([0.5, 1.5]),
            loss: ProfileShape::Constant(0.2),
            runs: 1_000_000,
            seed: 7,
            chunks: 16,
            threads: None,
            solver: SolverSettings::default(),
            fd_step: FD_STEP,
            cdf_points: 200,
            scattering_draws: 100,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidParameter {
            field: "config",
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidParameter {
            field: "config",
            reason: format!("{}: {e}", path.display()),
        })?;
        Self::from_json(&text)
    }

    pub fn params(&self) -> Result<ChannelParams> {
        ChannelParams::new(self.n, self.alpha, self.gamma, self.rho0)
    }

    pub fn profile(&self) -> Result<DeterministicProfile> {
        DeterministicProfile::new(self.h0.expand(self.n, "h0")?, self.loss.expand(self.n, "loss")?)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        let run = RunConfig::new(self.params()?, self.profile()?, self.runs, self.seed).with_chunks(self.chunks);
        run.validate()?;
        Ok(run)
    }

    pub fn variance_settings(&self) -> VarianceSettings {
        VarianceSettings {
            solver: self.solver,
            fd_step: self.fd_step,
            method: VarianceMethod::Analytic,
            mc_runs: self.runs,
            mc_seed: self.seed,
            mc_chunks: self.chunks,
        }
    }

    /// Checks every field, naming the first offending one.
    pub fn validate(&self) -> Result<()> {
        self.params()?;
        self.profile()?;
        self.run_config()?;
        self.solver.validate()?;
        if !(crate::hessian::FD_STEP_RANGE.0..=crate::hessian::FD_STEP_RANGE.1).contains(&self.fd_step) {
            return Err(Error::InvalidParameter {
                field: "fd_step",
                reason: format!("must lie in [1e-6, 1e-3], got {}", self.fd_step),
            });
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidParameter {
                field: "threads",
                reason: "must be >= 1".into(),
            });
        }
        if self.cdf_points < 2 {
            return Err(Error::InvalidParameter {
                field: "cdf_points",
                reason: "must be >= 2".into(),
            });
        }
        if self.scattering_draws == 0 {
            return Err(Error::InvalidParameter {
                field: "scattering_draws",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}
