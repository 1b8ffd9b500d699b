//! Reference prices: Black–Scholes European put and a Cox–Ross–Rubinstein
//! lattice for one-dimensional Bermudan puts.

use serde::{Deserialize, Serialize};

use crate::density::std_normal_cdf;
use crate::error::{invalid, Result, RmcError};
use crate::model::ModelSpec;
use crate::payoff::PayoffKind;
use crate::policy::{ClassifierStack, StopRule};
use crate::rmc::StoppingProblem;

/// European put under Black–Scholes.
pub fn black_scholes_put(spot: f64, strike: f64, rate: f64, vol: f64, maturity: f64) -> f64 {
    if maturity <= 0.0 || vol <= 0.0 {
        return (strike * (-rate * maturity.max(0.0)).exp() - spot).max(0.0);
    }
    let sd = vol * maturity.sqrt();
    let d1 = ((spot / strike).ln() + (rate + 0.5 * vol * vol) * maturity) / sd;
    let d2 = d1 - sd;
    strike * (-rate * maturity).exp() * std_normal_cdf(-d2) - spot * std_normal_cdf(-d1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// Lattice steps per exercise interval at the first attempt.
    pub steps_per_interval: usize,
    /// Stop refining once doubling the lattice moves the price by less.
    pub tolerance: f64,
    /// Upper bound on lattice steps per interval.
    #[serde(default = "default_max_steps")]
    pub max_steps_per_interval: usize,
}

fn default_max_steps() -> usize {
    2560
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { steps_per_interval: 80, tolerance: 1e-4, max_steps_per_interval: default_max_steps() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub price: f64,
    /// Critical price per exercise step `0..=T`: exercise is optimal at or
    /// below it. `None` where no in-the-money node exercises.
    pub boundary: Vec<Option<f64>>,
    pub steps_per_interval: usize,
    /// Price change at the last doubling.
    pub last_change: f64,
}

impl OracleResult {
    /// The lattice boundary as a classifier stack.
    pub fn stack(&self) -> ClassifierStack {
        let horizon = self.boundary.len() - 1;
        let mut s = ClassifierStack::new(horizon);
        for t in 1..horizon {
            let rule = match self.boundary[t] {
                Some(b) => StopRule::Boundary(b),
                None => StopRule::Never,
            };
            s.set(t, rule).expect("step within horizon");
        }
        s
    }
}

/// Bermudan put on a CRR lattice with `m` lattice steps per exercise
/// interval; exercise is allowed on exercise steps `1..=horizon`.
/// Returns the price and the interpolated critical price per exercise step.
pub fn crr_bermudan_put(spot: f64, strike: f64, rate: f64, vol: f64, dt: f64, horizon: usize, m: usize) -> (f64, Vec<Option<f64>>) {
    let n = horizon * m;
    let h = dt / m as f64;
    let u = (vol * h.sqrt()).exp();
    let d = 1.0 / u;
    let disc = (-rate * h).exp();
    let q = ((rate * h).exp() - d) / (u - d);
    let price_at = |i: usize, j: usize| spot * u.powi(j as i32) * d.powi((i - j) as i32);
    let mut v: Vec<f64> = (0..=n).map(|j| (strike - price_at(n, j)).max(0.0)).collect();
    let mut boundary = vec![None; horizon + 1];
    boundary[horizon] = Some(strike);
    for i in (0..n).rev() {
        for j in 0..=i {
            v[j] = disc * (q * v[j + 1] + (1.0 - q) * v[j]);
        }
        if i % m == 0 && i > 0 {
            let t = i / m;
            // Nodes ordered by increasing price; the exercise region is a
            // lower interval. Interpolate the zero of exercise - continuation
            // between the last exercising node and the next one.
            let mut last: Option<(f64, f64)> = None;
            let mut crossing = None;
            for j in 0..=i {
                let s = price_at(i, j);
                let ex = strike - s;
                let gap = ex - v[j];
                if ex > 0.0 && gap >= 0.0 {
                    last = Some((s, gap));
                } else if let Some((s0, g0)) = last {
                    crossing = Some(s0 + (s - s0) * g0 / (g0 - gap));
                    break;
                }
            }
            boundary[t] = crossing.or(last.map(|(s, _)| s));
            for j in 0..=i {
                v[j] = v[j].max(strike - price_at(i, j));
            }
        }
    }
    (v[0], boundary)
}

/// Lattice reference for a one-dimensional GBM put, refined by doubling
/// until the price settles within the tolerance.
pub fn binomial_oracle(problem: &StoppingProblem, spec: &OracleSpec) -> Result<OracleResult> {
    let p = match &problem.model {
        ModelSpec::Gbm(p) if problem.dim() == 1 && problem.payoff.kind == PayoffKind::Put1d => p,
        _ => return Err(RmcError::Unsupported("the lattice oracle prices one-dimensional GBM puts".into())),
    };
    if spec.steps_per_interval == 0 || !(spec.tolerance > 0.0) {
        return Err(invalid("oracle needs positive lattice steps and tolerance"));
    }
    let s0 = problem.initial.0[0];
    let k = problem.payoff.strike;
    let price = |m| crr_bermudan_put(s0, k, p.rate, p.vol, problem.dt, problem.horizon, m);
    let mut m = spec.steps_per_interval;
    let (mut prev, _) = price(m);
    loop {
        let (next, boundary) = price(2 * m);
        let change = (next - prev).abs();
        m *= 2;
        if change < spec.tolerance || 2 * m > spec.max_steps_per_interval {
            return Ok(OracleResult { price: next, boundary, steps_per_interval: m, last_change: change });
        }
        prev = next;
    }
}
