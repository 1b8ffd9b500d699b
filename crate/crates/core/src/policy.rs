//! Stopping policies and forward simulation under them.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::{Simulator, State};
use crate::payoff::PayoffSpec;
use crate::regression::{FittedModel, PosteriorSummary};
use crate::rng::{stream, Purpose};

/// Exercise rule at one step.
#[derive(Debug, Clone)]
pub enum StopRule {
    /// Stop iff the fitted timing value `m(x) <= 0`.
    Fitted(FittedModel),
    /// Stop iff the payoff aggregate (price, basket mean or product) is at
    /// or below the boundary.
    Boundary(f64),
    Always,
    Never,
}

impl StopRule {
    #[inline]
    pub fn stops(&self, payoff: &PayoffSpec, x: &[f64]) -> bool {
        match self {
            StopRule::Fitted(m) => m.mean(x) <= 0.0,
            StopRule::Boundary(b) => payoff.aggregate(x) <= *b,
            StopRule::Always => true,
            StopRule::Never => false,
        }
    }

    pub fn model(&self) -> Option<&FittedModel> {
        match self {
            StopRule::Fitted(m) => Some(m),
            _ => None,
        }
    }
}

/// Estimated stopping sets for steps `1..T`. Step `T` always stops.
///
/// With `in_money_only` (the default for fitted stacks) a state with zero
/// immediate payoff never stops: its timing value equals the continuation
/// value and is never negative.
#[derive(Debug, Clone)]
pub struct ClassifierStack {
    horizon: usize,
    rules: Vec<Option<StopRule>>,
    in_money_only: bool,
}

impl ClassifierStack {
    /// Stack with only the terminal rule in place.
    pub fn new(horizon: usize) -> Self {
        ClassifierStack { horizon, rules: vec![None; horizon + 1], in_money_only: true }
    }

    /// Every intermediate step uses the same rule.
    pub fn uniform(horizon: usize, rule: StopRule) -> Self {
        let mut s = Self::new(horizon);
        for t in 1..horizon {
            s.rules[t] = Some(rule.clone());
        }
        s
    }

    pub fn with_in_money_only(mut self, on: bool) -> Self {
        self.in_money_only = on;
        self
    }

    pub fn in_money_only(&self) -> bool {
        self.in_money_only
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn set(&mut self, step: usize, rule: StopRule) -> Result<()> {
        if step == 0 || step >= self.horizon {
            return Err(invalid(format!("rules live on steps 1..{}, got {step}", self.horizon)));
        }
        self.rules[step] = Some(rule);
        Ok(())
    }

    pub fn rule(&self, step: usize) -> Option<&StopRule> {
        self.rules.get(step).and_then(|r| r.as_ref())
    }

    /// True when every step in `t+1..T` has a rule.
    pub fn covers(&self, t: usize) -> bool {
        (t + 1..self.horizon).all(|s| self.rules[s].is_some())
    }

    /// Stop decision at `step` for state `x` with immediate payoff `reward`.
    #[inline]
    pub fn stops(&self, step: usize, x: &[f64], payoff: &PayoffSpec, reward: f64) -> bool {
        if step >= self.horizon {
            return true;
        }
        if self.in_money_only && reward <= 0.0 {
            return false;
        }
        match &self.rules[step] {
            Some(r) => r.stops(payoff, x),
            None => true,
        }
    }

    /// Posterior of the fitted rule at `step`, if any.
    pub fn predict(&self, step: usize, x: &[f64]) -> Option<PosteriorSummary> {
        self.rule(step).and_then(|r| r.model()).map(|m| m.predict(x))
    }
}

/// Outcome of one forward path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopOutcome {
    /// Discounted reward `h_tau(x_tau)`.
    pub payoff: f64,
    pub tau: usize,
    /// Transitions simulated, `tau - t`.
    pub steps: usize,
}

/// Simulate from `x_t` at step `t` until the first step `s > t` whose
/// stopping set contains the state, or the horizon.
pub fn forward_stop<R: Rng + ?Sized>(
    sim: &Simulator,
    payoff: &PayoffSpec,
    stack: &ClassifierStack,
    t: usize,
    x_t: &[f64],
    rng: &mut R,
) -> StopOutcome {
    let horizon = stack.horizon();
    let mut x = [0.0f64; 16];
    let x = &mut x[..x_t.len()];
    x.copy_from_slice(x_t);
    let mut s = t;
    loop {
        sim.advance(x, rng);
        s += 1;
        let reward = payoff.value(s, x);
        if s >= horizon || stack.stops(s, x, payoff, reward) {
            return StopOutcome { payoff: reward, tau: s, steps: s - t };
        }
    }
}

/// A sampled timing value at a design site.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingSample {
    pub site: State,
    /// `h_tau(x_tau) - h_t(x_t)`.
    pub response: f64,
    pub tau: usize,
    pub steps_used: usize,
}

/// Draw one independent forward path per site (row-major `sites`) and
/// return the timing-value samples. Path `i` uses the stream
/// `(seed, Response, t, first_index + i)`.
#[allow(clippy::too_many_arguments)]
pub fn sample_timing_batch(
    sim: &Simulator,
    payoff: &PayoffSpec,
    stack: &ClassifierStack,
    t: usize,
    sites: &[f64],
    seed: u64,
    first_index: u64,
    exec: Execution,
) -> Result<Vec<TimingSample>> {
    let d = sim.dim();
    if sites.is_empty() || !sites.len().is_multiple_of(d) {
        return Err(invalid("sites must be a non-empty set of whole rows"));
    }
    if t >= stack.horizon() {
        return Err(invalid("timing values need t < T"));
    }
    if !stack.covers(t) {
        return Err(invalid(format!("classifier stack does not cover steps after {t}")));
    }
    let n = sites.len() / d;
    Ok(map_indexed(exec, n, |i| {
        let x = &sites[i * d..(i + 1) * d];
        let mut rng = stream(seed, Purpose::Response, t as u64, first_index + i as u64);
        let out = forward_stop(sim, payoff, stack, t, x, &mut rng);
        TimingSample { site: State(x.to_vec()), response: out.payoff - payoff.value(t, x), tau: out.tau, steps_used: out.steps }
    }))
}
