//! Run configuration: one experiment per TOML file with `[model]`,
//! `[payoff]`, `[design]` and `[run]` tables.
//!
//! ```toml
//! [model]
//! kind = "gbm"
//! spot = [40.0]
//! rate = 0.06
//! vol = 0.2
//!
//! [payoff]
//! kind = "put1d"
//! strike = 40.0
//! horizon = 25
//! dt = 0.04
//!
//! [design]
//! method = "dt"
//! initial = 1000
//! budget = 5000
//!
//! [run]
//! seed = 1
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::design::{EiConfig, LossKind, SelectionRule, Termination};
use crate::error::{Result, RmcError};
use crate::model::{GbmParams, ModelSpec, State, SvDiffusion, SvParams};
use crate::oracle::OracleSpec;
use crate::payoff::PayoffKind;
use crate::regression::{LeafModel, RegressionSpec, TreeConfig};
use crate::rmc::{LsmcSpec, RunSettings, SequentialSpec, StoppingProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Sequential design with dynamic trees.
    Dt,
    /// Non-adaptive design with the equiprobable-partition regression.
    Bw,
    /// Non-adaptive design with the dynamic-tree final regression.
    Lsmc,
}

impl std::str::FromStr for Method {
    type Err = RmcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dt" => Ok(Method::Dt),
            "bw" => Ok(Method::Bw),
            "lsmc" => Ok(Method::Lsmc),
            _ => Err(RmcError::Config(format!("unknown method '{s}' (expected dt, bw or lsmc)"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Dt => "dt",
            Method::Bw => "bw",
            Method::Lsmc => "lsmc",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelConfig {
    Gbm {
        spot: Vec<f64>,
        rate: f64,
        vol: f64,
    },
    Sv {
        spot: f64,
        /// Initial log-volatility `Y_0`.
        logvol: f64,
        rate: f64,
        meanrev: f64,
        level: f64,
        volvol: f64,
        corr: f64,
        /// Euler steps per exercise interval.
        euler_substeps: usize,
        #[serde(default)]
        diffusion: SvDiffusion,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffConfig {
    pub kind: PayoffKind,
    pub strike: f64,
    /// Exercise steps `T`.
    pub horizon: usize,
    /// Years per step.
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub method: Method,
    /// Pilot design size `N_0` (sequential only).
    #[serde(default = "d_initial")]
    pub initial: usize,
    /// Final design size `N_t`; the path count for non-adaptive methods.
    pub budget: usize,
    #[serde(default = "d_batch")]
    pub batch: usize,
    #[serde(default = "d_candidates")]
    pub candidates: usize,
    #[serde(default = "d_beta")]
    pub beta: f64,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub selection: SelectionRule,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "d_cap")]
    pub cap: f64,
    /// Early-stop tolerance base `C`; absent means budget-only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Count tolerance exponents forward from step 0 instead of back from
    /// maturity.
    #[serde(default)]
    pub tolerance_forward: bool,
    #[serde(default = "d_rough_particles")]
    pub rough_particles: usize,
    #[serde(default = "d_final_particles")]
    pub final_particles: usize,
    #[serde(default)]
    pub rough_leaf: LeafModel,
    #[serde(default)]
    pub final_leaf: LeafModel,
    #[serde(default = "d_rejuvenate")]
    pub rejuvenate_every: usize,
    /// Smallest leaf a tree may create; defaults to `max(d + 2, 5)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_leaf: Option<usize>,
    #[serde(default = "d_cells")]
    pub cells_per_dim: usize,
}

fn d_initial() -> usize {
    1000
}
fn d_batch() -> usize {
    100
}
fn d_candidates() -> usize {
    500
}
fn d_beta() -> f64 {
    0.5
}
fn d_cap() -> f64 {
    10.0
}
fn d_rough_particles() -> usize {
    1
}
fn d_final_particles() -> usize {
    10
}
fn d_rejuvenate() -> usize {
    500
}
fn d_cells() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    #[serde(default = "d_replications")]
    pub replications: usize,
    #[serde(default = "d_valuation_paths")]
    pub valuation_paths: usize,
    /// Use one out-of-sample path set for every replication.
    #[serde(default = "d_true")]
    pub common_valuation: bool,
    #[serde(default = "d_true")]
    pub in_money_only: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

fn d_replications() -> usize {
    1
}
fn d_valuation_paths() -> usize {
    50_000
}
fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub payoff: PayoffConfig,
    pub design: DesignConfig,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSpec>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| RmcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| RmcError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RmcError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Checks every field that can be checked without simulating.
    pub fn validate(&self) -> Result<()> {
        let problem = self.problem()?;
        let d = problem.dim();
        let cfg_err = |m: String| Err(RmcError::Config(m));
        if self.run.replications == 0 {
            return cfg_err("run.replications must be >= 1".into());
        }
        if self.run.valuation_paths == 0 {
            return cfg_err("run.valuation_paths must be >= 1".into());
        }
        match self.design.method {
            Method::Dt => {
                let spec = self.sequential_spec();
                spec.ei.validate()?;
                for r in [&spec.rough, &spec.final_fit] {
                    if let RegressionSpec::DynamicTree(c) = r {
                        c.validate()?;
                    }
                }
                let need = spec.rough.min_design(d).max(spec.final_fit.min_design(d));
                if self.design.initial < need {
                    return cfg_err(format!("design.initial must be >= {need}"));
                }
                if self.design.budget < self.design.initial {
                    return cfg_err("design.budget must be >= design.initial".into());
                }
            }
            Method::Bw | Method::Lsmc => {
                let spec = self.lsmc_spec();
                if let RegressionSpec::Partition { cells_per_dim: 0 } = spec.regression {
                    return cfg_err("design.cells_per_dim must be >= 1".into());
                }
                if let RegressionSpec::DynamicTree(c) = &spec.regression {
                    c.validate()?;
                }
                let need = spec.regression.min_design(d);
                if spec.paths < need {
                    return cfg_err(format!("design.budget must be >= {need} for this regression"));
                }
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<StoppingProblem> {
        let p = &self.payoff;
        let (model, initial) = match &self.model {
            ModelConfig::Gbm { spot, rate, vol } => {
                (ModelSpec::Gbm(GbmParams { spot: spot.clone(), rate: *rate, vol: *vol }), State(spot.clone()))
            }
            ModelConfig::Sv { spot, logvol, rate, meanrev, level, volvol, corr, euler_substeps, diffusion } => {
                if *euler_substeps == 0 {
                    return Err(RmcError::Config("model.euler_substeps must be >= 1".into()));
                }
                let params = SvParams {
                    rate: *rate,
                    meanrev: *meanrev,
                    level: *level,
                    volvol: *volvol,
                    corr: *corr,
                    euler_step: p.dt / *euler_substeps as f64,
                    diffusion: *diffusion,
                };
                (ModelSpec::Sv(params), State(vec![*spot, *logvol]))
            }
        };
        StoppingProblem::new(model, p.kind, p.strike, p.horizon, p.dt, initial)
    }

    fn tree(&self, particles: usize, leaf: LeafModel, rejuvenate: bool) -> RegressionSpec {
        let mut c = TreeConfig::new(particles, leaf);
        c.min_leaf = self.design.min_leaf;
        if rejuvenate && self.design.rejuvenate_every > 0 {
            c = c.with_rejuvenation(self.design.rejuvenate_every);
        }
        RegressionSpec::DynamicTree(c)
    }

    pub fn ei_config(&self) -> EiConfig {
        let d = &self.design;
        EiConfig {
            loss: d.loss,
            beta: d.beta,
            selection: d.selection,
            epsilon: d.epsilon,
            batch: d.batch,
            candidates: d.candidates,
            cap: d.cap,
            termination: match d.tolerance {
                Some(base) => Termination::Tolerance { base, forward: d.tolerance_forward },
                None => Termination::Budget,
            },
        }
    }

    pub fn sequential_spec(&self) -> SequentialSpec {
        let d = &self.design;
        SequentialSpec {
            rough: self.tree(d.rough_particles, d.rough_leaf, true),
            final_fit: self.tree(d.final_particles, d.final_leaf, false),
            ei: self.ei_config(),
            initial: d.initial,
            budget: d.budget,
        }
    }

    pub fn lsmc_spec(&self) -> LsmcSpec {
        let d = &self.design;
        let regression = match d.method {
            Method::Bw => RegressionSpec::Partition { cells_per_dim: d.cells_per_dim },
            _ => self.tree(d.final_particles, d.final_leaf, false),
        };
        LsmcSpec { regression, paths: d.budget }
    }

    /// Settings for replication `k`.
    pub fn settings(&self, k: usize) -> RunSettings {
        let seed = crate::rng::replication_seed(self.run.seed, k as u64);
        RunSettings {
            seed,
            valuation_paths: self.run.valuation_paths,
            valuation_seed: if self.run.common_valuation { self.run.seed } else { seed },
            exec: Default::default(),
            in_money_only: self.run.in_money_only,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const PUT: &str = r#"
[model]
kind = "gbm"
spot = [40.0]
rate = 0.06
vol = 0.2

[payoff]
kind = "put1d"
strike = 40.0
horizon = 25
dt = 0.04

[design]
method = "dt"
initial = 1000
budget = 5000

[run]
seed = 7
"#;

    #[test]
    fn parse_and_defaults() {
        let c = RunConfig::from_toml_str(PUT).unwrap();
        assert_eq!(c.design.batch, 100);
        assert_eq!(c.design.candidates, 500);
        assert_eq!(c.run.valuation_paths, 50_000);
        let s = c.sequential_spec();
        assert_eq!(s.ei.beta, 0.5);
        match s.final_fit {
            RegressionSpec::DynamicTree(t) => assert_eq!(t.particles, 10),
            _ => panic!("final fit should be a tree"),
        }
        assert_eq!(c.problem().unwrap().horizon, 25);
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::from_toml_str(PUT).unwrap();
        let again = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::from_toml_str(&PUT.replace("budget = 5000", "budget = 500")).is_err());
        assert!(RunConfig::from_toml_str(&PUT.replace("vol = 0.2", "vol = -0.2")).is_err());
        assert!(RunConfig::from_toml_str(&PUT.replace("seed = 7", "seed = 7\ncolour = 1")).is_err());
        assert!(RunConfig::from_toml_str(&PUT.replace("\"dt\"", "\"gp\"")).is_err());
        assert!(RunConfig::from_toml_str(&PUT.replace("spot = [40.0]", "spot = [40.0, 40.0]")).is_err());
    }

    #[test]
    fn replication_seeds_and_common_valuation() {
        let c = RunConfig::from_toml_str(PUT).unwrap();
        let (a, b) = (c.settings(0), c.settings(1));
        assert_ne!(a.seed, b.seed);
        assert_eq!(a.valuation_seed, b.valuation_seed);
    }
}
