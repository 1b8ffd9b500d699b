//! Backward-induction drivers: plain regression Monte Carlo on a pilot
//! design and the sequential expected-improvement variant, plus
//! out-of-sample valuation.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::density::{DensityModel, KernelDensity};
use crate::design::{lhs_candidates, select_batch, termination_check, CandidateSet, Decision, EiConfig};
use crate::error::{invalid, Result, RmcError};
use crate::exec::{map_indexed, Execution};
use crate::model::{ModelSpec, Simulator, State};
use crate::payoff::{PayoffKind, PayoffSpec};
use crate::policy::{forward_stop, sample_timing_batch, ClassifierStack, StopRule};
use crate::regression::{FittedModel, RegressionSpec};
use crate::rng::{stream, Purpose};

/// Largest supported state dimension.
pub const MAX_DIM: usize = 16;

/// Quantiles bounding the candidate box at each step.
pub const BOX_QUANTILES: (f64, f64) = (0.001, 0.999);

/// A complete optimal stopping instance.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingProblem {
    pub model: ModelSpec,
    pub payoff: PayoffSpec,
    /// Number of exercise steps `T`; step `T` is maturity.
    pub horizon: usize,
    /// Years per step.
    pub dt: f64,
    pub initial: State,
}

impl StoppingProblem {
    /// Builds the payoff from the model's rate and the step length so the
    /// two can never disagree.
    pub fn new(model: ModelSpec, kind: PayoffKind, strike: f64, horizon: usize, dt: f64, initial: State) -> Result<Self> {
        let payoff = PayoffSpec { kind, strike, rate: model.rate(), step_years: dt };
        let p = StoppingProblem { model, payoff, horizon, dt, initial };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least one step"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("step length must be positive"));
        }
        if self.dim() == 0 || self.dim() > MAX_DIM {
            return Err(invalid(format!("state dimension must be in 1..={MAX_DIM}")));
        }
        if (self.payoff.rate - self.model.rate()).abs() > 0.0 || (self.payoff.step_years - self.dt).abs() > 0.0 {
            return Err(invalid("payoff discounting disagrees with the model"));
        }
        self.payoff.validate(self.dim())?;
        Simulator::new(self.model.clone(), self.dt, &self.initial).map(|_| ())
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    pub fn simulator(&self) -> Result<Simulator> {
        Simulator::new(self.model.clone(), self.dt, &self.initial)
    }

    /// Physical time of `step`.
    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }
}

/// Design `Z_t`: sites and sampled timing values in arrival order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DesignSet {
    pub step: usize,
    pub dim: usize,
    pub sites: Vec<f64>,
    pub responses: Vec<f64>,
}

impl DesignSet {
    pub fn new(step: usize, dim: usize) -> Self {
        DesignSet { step, dim, sites: Vec::new(), responses: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn site(&self, i: usize) -> &[f64] {
        &self.sites[i * self.dim..(i + 1) * self.dim]
    }

    pub fn extend(&mut self, sites: &[f64], responses: &[f64]) {
        debug_assert_eq!(sites.len(), responses.len() * self.dim);
        self.sites.extend_from_slice(sites);
        self.responses.extend_from_slice(responses);
    }
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: u64,
    /// Per-step design size `N_t` (the configured value).
    pub budget: usize,
    pub value: f64,
    pub std_error: f64,
    /// `sum_t sum_n (tau - t)` over every response path.
    pub totsim: u64,
    /// Transitions drawn while sampling responses, from the simulator's
    /// counter. Always equal to `totsim`.
    pub response_transitions: u64,
    /// Transitions drawn for pilot paths.
    pub pilot_transitions: u64,
    pub valuation_paths: usize,
    /// Design size at each step `0..T` (zero at 0 and `T`).
    pub design_sizes: Vec<usize>,
    /// Positivity clamps applied by the SV simulator.
    pub clamps: u64,
    pub wall_ms: u64,
}

impl RunReport {
    /// Copy with the wall time zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> RunReport {
        RunReport { wall_ms: 0, ..self.clone() }
    }
}

/// Settings shared by both drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub seed: u64,
    pub valuation_paths: usize,
    /// Seed of the out-of-sample path set, shared across replications.
    pub valuation_seed: u64,
    pub exec: Execution,
    /// Never exercise with zero immediate payoff.
    pub in_money_only: bool,
}

impl RunSettings {
    pub fn new(seed: u64, valuation_paths: usize) -> Self {
        RunSettings { seed, valuation_paths, valuation_seed: seed, exec: Execution::Parallel, in_money_only: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LsmcSpec {
    pub regression: RegressionSpec,
    /// Design size per step.
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequentialSpec {
    /// Regression refreshed during the design loop.
    pub rough: RegressionSpec,
    /// Regression refit on the complete design; it defines the classifier.
    pub final_fit: RegressionSpec,
    pub ei: EiConfig,
    /// Pilot design size `N_0`.
    pub initial: usize,
    /// Final design size `N_t`.
    pub budget: usize,
}

/// Everything a driver produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stack: ClassifierStack,
    pub report: RunReport,
    /// Designs for steps `1..T`, index `t - 1`.
    pub designs: Vec<DesignSet>,
}

/// Row-major pilot sites per step `1..T`; entry `t` holds `X_t` of every
/// path (entry 0 is unused).
fn pilot_paths(problem: &StoppingProblem, sim: &Simulator, n: usize, seed: u64, exec: Execution) -> Vec<Vec<f64>> {
    let d = problem.dim();
    let steps = problem.horizon.saturating_sub(1);
    let paths = map_indexed(exec, n, |i| {
        let mut rng = stream(seed, Purpose::Pilot, 0, i as u64);
        let mut x = problem.initial.0.clone();
        let mut out = Vec::with_capacity(steps * d);
        for _ in 0..steps {
            sim.advance(&mut x, &mut rng);
            out.extend_from_slice(&x);
        }
        out
    });
    let mut by_step = vec![Vec::new(); problem.horizon];
    for (t, sites) in by_step.iter_mut().enumerate().skip(1) {
        sites.reserve(n * d);
        for p in &paths {
            sites.extend_from_slice(&p[(t - 1) * d..t * d]);
        }
    }
    by_step
}

/// Response sampling with TOTSIM bookkeeping.
struct Sampler<'a> {
    problem: &'a StoppingProblem,
    sim: &'a Simulator,
    seed: u64,
    exec: Execution,
    totsim: u64,
    transitions: u64,
}

impl Sampler<'_> {
    fn sample(&mut self, stack: &ClassifierStack, t: usize, sites: &[f64], first: usize) -> Result<Vec<f64>> {
        let before = self.sim.transitions();
        let out = sample_timing_batch(self.sim, &self.problem.payoff, stack, t, sites, self.seed, first as u64, self.exec)?;
        self.transitions += self.sim.transitions() - before;
        self.totsim += out.iter().map(|s| s.steps_used as u64).sum::<u64>();
        Ok(out.into_iter().map(|s| s.response).collect())
    }
}

fn regression_error(step: usize) -> impl Fn(RmcError) -> RmcError {
    move |e| RmcError::Regression { step, reason: e.to_string() }
}

fn check_settings(problem: &StoppingProblem, settings: &RunSettings) -> Result<()> {
    problem.validate()?;
    if settings.valuation_paths == 0 {
        return Err(invalid("valuation needs at least one path"));
    }
    Ok(())
}

/// Regression Monte Carlo with a non-adaptive design: at each step the
/// sites are `paths` pilot states drawn from `p(t, . | 0, X0)`.
pub fn run_lsmc(problem: &StoppingProblem, spec: &LsmcSpec, settings: &RunSettings) -> Result<RunOutput> {
    check_settings(problem, settings)?;
    let start = Instant::now();
    let d = problem.dim();
    if spec.paths < spec.regression.min_design(d) {
        return Err(invalid(format!("{} paths per step is below the regression minimum {}", spec.paths, spec.regression.min_design(d))));
    }
    let sim = problem.simulator()?;
    let pilot = pilot_paths(problem, &sim, spec.paths, settings.seed, settings.exec);
    let pilot_transitions = sim.transitions();
    let mut sampler = Sampler { problem, sim: &sim, seed: settings.seed, exec: settings.exec, totsim: 0, transitions: 0 };
    let mut stack = ClassifierStack::new(problem.horizon).with_in_money_only(settings.in_money_only);
    let mut designs = Vec::with_capacity(problem.horizon.saturating_sub(1));
    for t in (1..problem.horizon).rev() {
        let ys = sampler.sample(&stack, t, &pilot[t], 0)?;
        let model = FittedModel::fit(&pilot[t], &ys, d, &spec.regression, stream(settings.seed, Purpose::FinalFit, t as u64, 0))
            .map_err(regression_error(t))?;
        stack.set(t, StopRule::Fitted(model))?;
        let mut z = DesignSet::new(t, d);
        z.extend(&pilot[t], &ys);
        designs.push(z);
    }
    designs.reverse();
    finish(problem, &sim, stack, designs, settings, "lsmc", spec.paths, sampler.totsim, sampler.transitions, pilot_transitions, start)
}

/// Sequential design regression Monte Carlo: each step starts from `N_0`
/// pilot sites and grows the design in batches drawn by expected
/// improvement until the budget `N_t` (or the tolerance) is reached.
pub fn run_sequential(problem: &StoppingProblem, spec: &SequentialSpec, settings: &RunSettings) -> Result<RunOutput> {
    check_settings(problem, settings)?;
    spec.ei.validate()?;
    let start = Instant::now();
    let d = problem.dim();
    let need = spec.rough.min_design(d).max(spec.final_fit.min_design(d));
    if spec.initial < need {
        return Err(invalid(format!("initial design {} is below the regression minimum {need}", spec.initial)));
    }
    if spec.budget < spec.initial {
        return Err(invalid("budget must be at least the initial design size"));
    }
    let sim = problem.simulator()?;
    let pilot = pilot_paths(problem, &sim, spec.initial, settings.seed, settings.exec);
    let pilot_transitions = sim.transitions();
    let mut sampler = Sampler { problem, sim: &sim, seed: settings.seed, exec: settings.exec, totsim: 0, transitions: 0 };
    let mut stack = ClassifierStack::new(problem.horizon).with_in_money_only(settings.in_money_only);
    let mut designs = Vec::with_capacity(problem.horizon.saturating_sub(1));
    for t in (1..problem.horizon).rev() {
        let ys = sampler.sample(&stack, t, &pilot[t], 0)?;
        let mut z = DesignSet::new(t, d);
        z.extend(&pilot[t], &ys);
        if z.len() < spec.budget {
            grow_design(problem, spec, settings, &stack, &mut sampler, &pilot[t], &mut z)?;
        }
        let model = FittedModel::fit(&z.sites, &z.responses, d, &spec.final_fit, stream(settings.seed, Purpose::FinalFit, t as u64, 0))
            .map_err(regression_error(t))?;
        stack.set(t, StopRule::Fitted(model))?;
        designs.push(z);
    }
    designs.reverse();
    finish(problem, &sim, stack, designs, settings, "dt", spec.budget, sampler.totsim, sampler.transitions, pilot_transitions, start)
}

fn step_density(problem: &StoppingProblem, pilot_sites: &[f64]) -> Result<DensityModel> {
    match &problem.model {
        ModelSpec::Gbm(p) if p.vol > 0.0 => Ok(DensityModel::Lognormal { spot: problem.initial.0.clone(), rate: p.rate, vol: p.vol }),
        _ => Ok(DensityModel::Kernel(KernelDensity::silverman(pilot_sites.to_vec(), problem.dim())?)),
    }
}

/// Design loop at step `t`: candidates, EI scores, weighted batch, fresh
/// responses, rough-model update.
#[allow(clippy::too_many_arguments)]
fn grow_design(
    problem: &StoppingProblem,
    spec: &SequentialSpec,
    settings: &RunSettings,
    stack: &ClassifierStack,
    sampler: &mut Sampler<'_>,
    pilot_sites: &[f64],
    z: &mut DesignSet,
) -> Result<()> {
    let t = z.step;
    let d = problem.dim();
    let time = problem.time(t);
    let density = step_density(problem, pilot_sites)?;
    let bounds = density.support_box(time, BOX_QUANTILES.0, BOX_QUANTILES.1)?;
    let mut bounds = bounds;
    for b in bounds.iter_mut() {
        if !(b.1 > b.0) {
            b.1 = b.0 + 1e-9 * (1.0 + b.0.abs());
        }
    }
    let mut model = FittedModel::fit(&z.sites, &z.responses, d, &spec.rough, stream(settings.seed, Purpose::RoughFit, t as u64, 0))
        .map_err(regression_error(t))?;
    let mut iter = 0u64;
    while z.len() < spec.budget {
        let points = lhs_candidates(&bounds, spec.ei.candidates, &mut stream(settings.seed, Purpose::Candidates, t as u64, iter))?;
        let mut cands = CandidateSet::score(points, d, &model, &density, time, spec.ei.loss, settings.exec)?;
        if stack.in_money_only() {
            // Out of the money the rule never stops, so no loss is possible.
            cands.mask(|x| problem.payoff.value(t, x) > 0.0);
        }
        if termination_check(&cands, t, problem.horizon, z.len(), spec.budget, &spec.ei) == Decision::Stop {
            break;
        }
        let take = spec.ei.batch.min(spec.budget - z.len());
        let ei = EiConfig { batch: take, ..spec.ei.clone() };
        let picks = select_batch(&cands, &ei, &mut stream(settings.seed, Purpose::Selection, t as u64, iter))?;
        let mut sites = Vec::with_capacity(take * d);
        for &i in &picks {
            sites.extend_from_slice(cands.point(i));
        }
        let ys = sampler.sample(stack, t, &sites, z.len())?;
        model.update(&sites, &ys).map_err(regression_error(t))?;
        z.extend(&sites, &ys);
        iter += 1;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    problem: &StoppingProblem,
    sim: &Simulator,
    stack: ClassifierStack,
    designs: Vec<DesignSet>,
    settings: &RunSettings,
    method: &str,
    budget: usize,
    totsim: u64,
    response_transitions: u64,
    pilot_transitions: u64,
    start: Instant,
) -> Result<RunOutput> {
    let est = value_estimate(&stack, problem, settings.valuation_paths, settings.valuation_seed, settings.exec)?;
    let mut design_sizes = vec![0; problem.horizon + 1];
    for z in &designs {
        design_sizes[z.step] = z.len();
    }
    let report = RunReport {
        method: method.to_string(),
        seed: settings.seed,
        budget,
        value: est.value,
        std_error: est.std_error,
        totsim,
        response_transitions,
        pilot_transitions,
        valuation_paths: settings.valuation_paths,
        design_sizes,
        clamps: sim.clamps(),
        wall_ms: start.elapsed().as_millis() as u64,
    };
    Ok(RunOutput { stack, report, designs })
}

/// Out-of-sample value of a stopping rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    /// Mean stopping step.
    pub mean_tau: f64,
}

/// Mean and standard error of the discounted payoff over `paths` fresh
/// paths from `X0`, each stopped by the stack from step 0. Path `i` uses
/// the stream `(seed, Valuation, 0, i)`.
pub fn value_estimate(stack: &ClassifierStack, problem: &StoppingProblem, paths: usize, seed: u64, exec: Execution) -> Result<Estimate> {
    if paths == 0 {
        return Err(invalid("valuation needs at least one path"));
    }
    if stack.horizon() != problem.horizon {
        return Err(invalid("classifier stack horizon differs from the problem"));
    }
    if !stack.covers(0) {
        return Err(invalid("classifier stack is incomplete"));
    }
    let sim = problem.simulator()?;
    let outcomes = map_indexed(exec, paths, |i| {
        let mut rng = stream(seed, Purpose::Valuation, 0, i as u64);
        forward_stop(&sim, &problem.payoff, stack, 0, problem.initial.coords(), &mut rng)
    });
    let n = paths as f64;
    // Shifted by the first payoff: exact for constant samples, and better
    // conditioned in general.
    let shift = outcomes[0].payoff;
    let dm = outcomes.iter().map(|o| o.payoff - shift).sum::<f64>() / n;
    let mean = shift + dm;
    let var = if paths > 1 { outcomes.iter().map(|o| (o.payoff - shift - dm).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let mean_tau = outcomes.iter().map(|o| o.tau as f64).sum::<f64>() / n;
    Ok(Estimate { value: mean, std_error: (var / n).sqrt(), mean_tau })
}
