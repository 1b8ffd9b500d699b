//! Replicated experiments, result tables and fit-grid dumps.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{Method, RunConfig};
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::policy::ClassifierStack;
use crate::rmc::{run_lsmc, run_sequential, RunOutput, RunReport, RunSettings, StoppingProblem};

pub const CSV_HEADER: &str = "method,N_t,seed,value,se,totsim,wall_ms";

/// Mean and standard error across replications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub runs: usize,
    pub mean: f64,
    /// Sample standard deviation of the replication values.
    pub sd: f64,
    /// `sd / sqrt(runs)`.
    pub se: f64,
    pub mean_totsim: f64,
    pub wall_ms: u64,
}

impl Summary {
    pub fn of(reports: &[RunReport]) -> Option<Summary> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let mean = reports.iter().map(|r| r.value).sum::<f64>() / n;
        let sd = if reports.len() > 1 { (reports.iter().map(|r| (r.value - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Some(Summary {
            runs: reports.len(),
            mean,
            sd,
            se: sd / n.sqrt(),
            mean_totsim: reports.iter().map(|r| r.totsim as f64).sum::<f64>() / n,
            wall_ms: reports.iter().map(|r| r.wall_ms).sum(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub method: Method,
    pub budget: usize,
    pub reports: Vec<RunReport>,
    /// Failed replications with their error messages.
    pub failures: Vec<(usize, String)>,
    pub summary: Option<Summary>,
}

impl ExperimentResult {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty() && !self.reports.is_empty()
    }

    /// Rows in the documented CSV layout, summary last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.reports {
            let _ = writeln!(out, "{},{},{},{},{},{},{}", r.method, r.budget, r.seed, r.value, r.std_error, r.totsim, r.wall_ms);
        }
        if let Some(s) = &self.summary {
            let _ = writeln!(out, "{},{},summary,{},{},{},{}", self.method, self.budget, s.mean, s.se, s.mean_totsim, s.wall_ms);
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Run one replication of `config` with explicit settings.
pub fn run_once(config: &RunConfig, settings: &RunSettings) -> Result<RunOutput> {
    let problem = config.problem()?;
    match config.design.method {
        Method::Dt => run_sequential(&problem, &config.sequential_spec(), settings),
        Method::Bw | Method::Lsmc => run_lsmc(&problem, &config.lsmc_spec(), settings),
    }
}

/// Run every replication of `config`. Replication `k` uses the seed
/// `replication_seed(run.seed, k)`; failures are recorded and the summary
/// covers the successful runs.
pub fn run_experiment(config: &RunConfig, exec: Execution) -> Result<ExperimentResult> {
    config.validate()?;
    let mut reports = Vec::with_capacity(config.run.replications);
    let mut failures = Vec::new();
    for k in 0..config.run.replications {
        let settings = RunSettings { exec, ..config.settings(k) };
        match run_once(config, &settings) {
            Ok(out) => reports.push(out.report),
            Err(e) => failures.push((k, e.to_string())),
        }
    }
    let summary = Summary::of(&reports);
    Ok(ExperimentResult { method: config.design.method, budget: config.design.budget, reports, failures, summary })
}

/// Regular grid over a box, `points[j]` nodes along axis `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub points: Vec<usize>,
}

impl GridSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.lo.len() != dim || self.hi.len() != dim || self.points.len() != dim {
            return Err(invalid("grid must give lo, hi and points for every dimension"));
        }
        if self.points.contains(&0) || self.lo.iter().zip(&self.hi).any(|(l, h)| !(h >= l)) {
            return Err(invalid("grid needs at least one point per axis and lo <= hi"));
        }
        Ok(())
    }

    fn node(&self, j: usize, i: usize) -> f64 {
        if self.points[j] == 1 {
            return 0.5 * (self.lo[j] + self.hi[j]);
        }
        self.lo[j] + (self.hi[j] - self.lo[j]) * i as f64 / (self.points[j] - 1) as f64
    }

    /// Grid nodes with the first axis varying slowest.
    pub fn nodes(&self) -> Vec<Vec<f64>> {
        let d = self.points.len();
        let total: usize = self.points.iter().product();
        (0..total)
            .map(|mut k| {
                let mut x = vec![0.0; d];
                for j in (0..d).rev() {
                    x[j] = self.node(j, k % self.points[j]);
                    k /= self.points[j];
                }
                x
            })
            .collect()
    }
}

/// Tab-separated evaluation of the fitted timing value at `step` over the
/// grid. The first line is the schema `x1 .. xd  mean  variance  stop`;
/// `stop` is 1 where `mean <= 0`.
pub fn dump_fit_grid(stack: &ClassifierStack, problem: &StoppingProblem, step: usize, grid: &GridSpec) -> Result<String> {
    if step == 0 || step >= problem.horizon {
        return Err(invalid(format!("fit grids exist for steps 1..{}, got {step}", problem.horizon - 1)));
    }
    let d = problem.dim();
    grid.validate(d)?;
    if stack.horizon() != problem.horizon {
        return Err(invalid("classifier stack horizon differs from the problem"));
    }
    let rule = stack.rule(step).and_then(|r| r.model()).ok_or_else(|| invalid(format!("no fitted model at step {step}")))?;
    let mut out = String::new();
    for j in 1..=d {
        let _ = write!(out, "x{j}\t");
    }
    out.push_str("mean\tvariance\tstop\n");
    for x in grid.nodes() {
        let p = rule.predict(&x);
        for v in &x {
            let _ = write!(out, "{v}\t");
        }
        let _ = writeln!(out, "{}\t{}\t{}", p.mean, p.variance, u8::from(p.mean <= 0.0));
    }
    Ok(out)
}
