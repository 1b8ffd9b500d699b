//! Expected-improvement design: zero-contour losses, candidate sets,
//! potential-weighted batch selection and termination.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::{std_normal_cdf, std_normal_pdf, DensityModel};
use crate::error::{invalid, Result};
use crate::exec::{map_indexed, Execution};
use crate::regression::FittedModel;

/// Expected loss from misclassifying the sign of `T(t, x)` when the
/// posterior is `N(m, v)`: `sqrt(v) phi(-|m|/sqrt(v)) - |m| Phi(-|m|/sqrt(v))`.
pub fn loss_zc(m: f64, v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(invalid(format!("posterior variance must be >= 0, got {v}")));
    }
    Ok(loss_zc_unchecked(m, v))
}

#[inline]
pub(crate) fn loss_zc_unchecked(m: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return 0.0;
    }
    let s = v.sqrt();
    let z = -m.abs() / s;
    (s * std_normal_pdf(z) - m.abs() * std_normal_cdf(z)).max(0.0)
}

/// Posterior probability that the sign of `m` is wrong: `Phi(-|m|/sqrt(v))`.
pub fn loss_sign(m: f64, v: f64) -> Result<f64> {
    if !(v >= 0.0) {
        return Err(invalid(format!("posterior variance must be >= 0, got {v}")));
    }
    Ok(loss_sign_unchecked(m, v))
}

#[inline]
pub(crate) fn loss_sign_unchecked(m: f64, v: f64) -> f64 {
    if v <= 0.0 {
        return if m == 0.0 { 0.5 } else { 0.0 };
    }
    std_normal_cdf(-m.abs() / v.sqrt())
}

/// `L * ALC * p`.
#[inline]
pub fn ei_score(loss: f64, alc: f64, density: f64) -> f64 {
    loss * alc * density
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Zc,
    Sgn,
}

impl LossKind {
    #[inline]
    pub fn eval(self, m: f64, v: f64) -> f64 {
        match self {
            LossKind::Zc => loss_zc_unchecked(m, v),
            LossKind::Sgn => loss_sign_unchecked(m, v),
        }
    }
}

/// How the batch is drawn from the scored candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionRule {
    /// Multinomial draws with weights `exp(beta * min(score, cap))`.
    #[default]
    Potential,
    /// Each draw is uniform with probability `epsilon`, otherwise the next
    /// best unpicked candidate.
    EpsilonGreedy,
}

/// When a step's design loop stops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Termination {
    /// Stop when the design reaches `N_t`.
    #[default]
    Budget,
    /// Also stop early once the average weighted loss falls below
    /// `base * 3^-k`, with `k` the step index (`forward`) or the number of
    /// steps to maturity.
    Tolerance { base: f64, forward: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EiConfig {
    #[serde(default)]
    pub loss: LossKind,
    pub beta: f64,
    #[serde(default)]
    pub selection: SelectionRule,
    #[serde(default)]
    pub epsilon: f64,
    /// Points added per design iteration (`N'`).
    pub batch: usize,
    /// Candidate set size (`D`).
    pub candidates: usize,
    /// Cap on normalized scores inside the potential.
    #[serde(default = "default_cap")]
    pub cap: f64,
    #[serde(default)]
    pub termination: Termination,
}

fn default_cap() -> f64 {
    10.0
}

impl Default for EiConfig {
    fn default() -> Self {
        EiConfig {
            loss: LossKind::Zc,
            beta: 0.5,
            selection: SelectionRule::Potential,
            epsilon: 0.0,
            batch: 100,
            candidates: 500,
            cap: default_cap(),
            termination: Termination::Budget,
        }
    }
}

impl EiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(invalid("beta must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid("epsilon must lie in [0, 1]"));
        }
        if self.batch == 0 || self.candidates == 0 {
            return Err(invalid("batch size and candidate count must be >= 1"));
        }
        if !(self.cap > 0.0) {
            return Err(invalid("score cap must be positive"));
        }
        if let Termination::Tolerance { base, .. } = self.termination {
            if !(base >= 0.0) {
                return Err(invalid("tolerance base must be >= 0"));
            }
        }
        Ok(())
    }
}

/// Latin hypercube sample of `n` points in `bounds`, row-major: each axis
/// is cut into `n` equal strata and every stratum receives exactly one
/// uniformly jittered point.
pub fn lhs_candidates<R: Rng + ?Sized>(bounds: &[(f64, f64)], n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 || bounds.is_empty() {
        return Err(invalid("LHS needs at least one point and one dimension"));
    }
    if bounds.iter().any(|(lo, hi)| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
        return Err(invalid("LHS box must be finite and non-degenerate"));
    }
    let d = bounds.len();
    let mut out = vec![0.0; n * d];
    let mut perm: Vec<usize> = (0..n).collect();
    for (j, (lo, hi)) in bounds.iter().enumerate() {
        perm.shuffle(rng);
        let width = (hi - lo) / n as f64;
        for (i, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            out[i * d + j] = lo + (stratum as f64 + u) * width;
        }
    }
    Ok(out)
}

/// Candidate sites with their EI components.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub dim: usize,
    /// Row-major sites.
    pub points: Vec<f64>,
    pub loss: Vec<f64>,
    pub alc: Vec<f64>,
    pub density: Vec<f64>,
    pub score: Vec<f64>,
}

impl CandidateSet {
    /// Score `points` against `model` with the state density at physical
    /// time `time`.
    pub fn score(
        points: Vec<f64>,
        dim: usize,
        model: &FittedModel,
        density: &DensityModel,
        time: f64,
        loss: LossKind,
        exec: Execution,
    ) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(invalid("candidates must be a non-empty set of whole rows"));
        }
        let n = points.len() / dim;
        let parts = map_indexed(exec, n, |i| {
            let x = &points[i * dim..(i + 1) * dim];
            let post = model.predict(x);
            let l = loss.eval(post.mean, post.variance);
            let a = model.alc(x);
            let p = density.eval(time, x);
            (l, a, p)
        });
        let mut set = CandidateSet {
            dim,
            loss: Vec::with_capacity(n),
            alc: Vec::with_capacity(n),
            density: Vec::with_capacity(n),
            score: Vec::with_capacity(n),
            points,
        };
        for (l, a, p) in parts {
            set.loss.push(l);
            set.alc.push(a);
            set.density.push(p);
            set.score.push(ei_score(l, a, p));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.score.len()
    }

    /// Zero the loss and score of candidates where `keep` is false, e.g.
    /// where the exercise decision cannot matter.
    pub fn mask(&mut self, keep: impl Fn(&[f64]) -> bool) {
        for i in 0..self.len() {
            if !keep(&self.points[i * self.dim..(i + 1) * self.dim]) {
                self.loss[i] = 0.0;
                self.score[i] = 0.0;
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.score.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// `(1/D) sum L(x) p(x)`, the empirical weighted loss.
    pub fn average_weighted_loss(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.loss.iter().zip(&self.density).map(|(l, p)| l * p).sum::<f64>() / self.len() as f64
    }
}

/// Shift and scale scores to minimum 0 and mean 1. Constant input maps to
/// all ones.
pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let spread = mean - min;
    if !(spread > 0.0) || !spread.is_finite() {
        return vec![1.0; scores.len()];
    }
    scores.iter().map(|s| (s - min) / spread).collect()
}

/// Selection weights proportional to `exp(beta * min(s, cap))` of normalized
/// scores.
///
/// The largest exponent is subtracted first, which leaves the sampling
/// law unchanged and keeps the weights finite.
pub fn potential_weights(normalized: &[f64], beta: f64, cap: f64) -> Vec<f64> {
    let top = normalized.iter().map(|s| s.min(cap)).fold(f64::NEG_INFINITY, f64::max);
    normalized.iter().map(|s| (beta * (s.min(cap) - top)).exp()).collect()
}

/// Pick `cfg.batch` candidate indices (with replacement for the potential
/// rule).
pub fn select_batch<R: Rng + ?Sized>(cands: &CandidateSet, cfg: &EiConfig, rng: &mut R) -> Result<Vec<usize>> {
    if cands.is_empty() {
        return Err(invalid("cannot select from an empty candidate set"));
    }
    let n = cands.len();
    match cfg.selection {
        SelectionRule::Potential => {
            let w = potential_weights(&normalize_scores(&cands.score), cfg.beta, cfg.cap);
            let dist = WeightedIndex::new(&w).map_err(|e| invalid(format!("selection weights: {e}")))?;
            Ok((0..cfg.batch).map(|_| dist.sample(rng)).collect())
        }
        SelectionRule::EpsilonGreedy => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|a, b| cands.score[*b].total_cmp(&cands.score[*a]).then(a.cmp(b)));
            let mut next = 0;
            Ok((0..cfg.batch)
                .map(|_| {
                    if rng.random::<f64>() < cfg.epsilon {
                        rng.random_range(0..n)
                    } else {
                        let i = order[next % n];
                        next += 1;
                        i
                    }
                })
                .collect())
        }
    }
}

/// Tolerance `C 3^-k` for step `step` of `horizon`.
pub fn tolerance(base: f64, step: usize, horizon: usize, forward: bool) -> f64 {
    let k = if forward { step } else { horizon.saturating_sub(step) };
    base * 3f64.powi(-(k as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop,
}

/// Stop when the budget is spent or, in tolerance mode, when the weighted
/// loss over the candidates falls to the tolerance.
pub fn termination_check(cands: &CandidateSet, step: usize, horizon: usize, design_size: usize, budget: usize, cfg: &EiConfig) -> Decision {
    if design_size >= budget {
        return Decision::Stop;
    }
    match cfg.termination {
        Termination::Budget => Decision::Continue,
        Termination::Tolerance { base, forward } => {
            if cands.average_weighted_loss() <= tolerance(base, step, horizon, forward) {
                Decision::Stop
            } else {
                Decision::Continue
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;

    fn set_with_scores(score: Vec<f64>) -> CandidateSet {
        let n = score.len();
        CandidateSet {
            dim: 1,
            points: (0..n).map(|i| i as f64).collect(),
            loss: vec![0.0; n],
            alc: vec![0.0; n],
            density: vec![0.0; n],
            score,
        }
    }

    #[test]
    fn loss_values() {
        assert_abs_diff_eq!(loss_zc(0.0, 1.0).unwrap(), 0.398_942_28, epsilon = 1e-8);
        assert_abs_diff_eq!(loss_zc(1.0, 1.0).unwrap(), 0.083_315_43, epsilon = 1e-7);
        assert_eq!(loss_zc(2.0, 0.0).unwrap(), 0.0);
        assert!(loss_zc(2.0, 1e-12).unwrap() < 1e-100);
        assert_eq!(loss_sign(0.0, 1.0).unwrap(), 0.5);
        assert_abs_diff_eq!(loss_sign(1.96, 1.0).unwrap(), 0.025, epsilon = 1e-4);
        assert_eq!(loss_sign(-1.96, 1.0).unwrap(), loss_sign(1.96, 1.0).unwrap());
        assert_eq!(loss_sign(0.0, 0.0).unwrap(), 0.5);
        assert_eq!(loss_sign(0.3, 0.0).unwrap(), 0.0);
        assert!(loss_zc(0.0, -1.0).is_err());
        assert!(loss_sign(0.0, -1e-9).is_err());
    }

    #[test]
    fn ei_product() {
        assert_eq!(ei_score(0.0, 3.0, 2.0), 0.0);
        assert_abs_diff_eq!(ei_score(0.1, 0.05, 2.0), 0.01, epsilon = 1e-15);
        assert_eq!(ei_score(0.1, 0.05, 4.0), 2.0 * ei_score(0.1, 0.05, 2.0));
    }

    #[test]
    fn lhs_stratified_and_reproducible() {
        let mut rng = stream(1, Purpose::Test, 0, 0);
        let pts = lhs_candidates(&[(0.0, 4.0)], 4, &mut rng).unwrap();
        let mut strata: Vec<usize> = pts.iter().map(|x| x.floor() as usize).collect();
        strata.sort();
        assert_eq!(strata, vec![0, 1, 2, 3]);

        let b = [(0.0, 1.0), (10.0, 20.0), (-5.0, 5.0)];
        let a1 = lhs_candidates(&b, 50, &mut stream(2, Purpose::Test, 0, 0)).unwrap();
        let a2 = lhs_candidates(&b, 50, &mut stream(2, Purpose::Test, 0, 0)).unwrap();
        let a3 = lhs_candidates(&b, 50, &mut stream(3, Purpose::Test, 0, 0)).unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1, a3);
        for (j, (lo, hi)) in b.iter().enumerate() {
            let mut s: Vec<usize> = (0..50).map(|i| ((a1[i * 3 + j] - lo) / (hi - lo) * 50.0).floor() as usize).collect();
            s.sort();
            assert_eq!(s, (0..50).collect::<Vec<_>>());
        }
        assert!(lhs_candidates(&[(1.0, 1.0)], 3, &mut rng).is_err());
    }

    #[test]
    fn normalization_min_zero_mean_one() {
        let n = normalize_scores(&[3.0, 5.0, 7.0, 1.0]);
        assert_abs_diff_eq!(n.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
        assert_abs_diff_eq!(n.iter().sum::<f64>() / 4.0, 1.0, epsilon = 1e-12);
        assert_eq!(normalize_scores(&[2.0, 2.0]), vec![1.0, 1.0]);
    }

    #[test]
    fn dominant_candidate_wins_with_large_beta() {
        let mut s = vec![0.0; 50];
        s[0] = 2.0;
        let cfg = EiConfig { beta: 50.0, batch: 200, cap: 100.0, ..EiConfig::default() };
        let picks = select_batch(&set_with_scores(s), &cfg, &mut stream(4, Purpose::Test, 0, 0)).unwrap();
        assert!(picks.iter().all(|&i| i == 0));
    }

    #[test]
    fn pure_exploration_is_uniform() {
        let cfg = EiConfig { selection: SelectionRule::EpsilonGreedy, epsilon: 1.0, batch: 1, ..EiConfig::default() };
        let mut s = vec![0.0; 5];
        s[2] = 9.0;
        let cands = set_with_scores(s);
        let mut counts = [0usize; 5];
        let mut rng = stream(5, Purpose::Test, 0, 0);
        for _ in 0..5000 {
            counts[select_batch(&cands, &cfg, &mut rng).unwrap()[0]] += 1;
        }
        assert!(counts.iter().all(|&c| (850..1150).contains(&c)), "{counts:?}");
    }

    #[test]
    fn greedy_takes_top_scores() {
        let cfg = EiConfig { selection: SelectionRule::EpsilonGreedy, epsilon: 0.0, batch: 2, ..EiConfig::default() };
        let picks = select_batch(&set_with_scores(vec![0.1, 3.0, 0.2, 2.0]), &cfg, &mut stream(6, Purpose::Test, 0, 0)).unwrap();
        assert_eq!(picks, vec![1, 3]);
    }

    #[test]
    fn termination_rules() {
        let mut c = set_with_scores(vec![1.0; 3]);
        let cfg = EiConfig::default();
        assert_eq!(termination_check(&c, 5, 25, 1000, 5000, &cfg), Decision::Continue);
        assert_eq!(termination_check(&c, 5, 25, 5000, 5000, &cfg), Decision::Stop);
        let tol = EiConfig { termination: Termination::Tolerance { base: 0.0, forward: false }, ..cfg.clone() };
        c.loss = vec![0.1; 3];
        c.density = vec![1.0; 3];
        assert_eq!(termination_check(&c, 5, 25, 1000, 5000, &tol), Decision::Continue);
        c.loss = vec![0.0; 3];
        assert_eq!(termination_check(&c, 5, 25, 1000, 5000, &tol), Decision::Stop);
        assert_abs_diff_eq!(tolerance(9.0, 2, 25, true), 1.0);
        assert_abs_diff_eq!(tolerance(9.0, 23, 25, false), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(EiConfig::default().validate().is_ok());
        assert!(EiConfig { beta: -1.0, ..EiConfig::default() }.validate().is_err());
        assert!(EiConfig { epsilon: 1.5, ..EiConfig::default() }.validate().is_err());
        assert!(EiConfig { batch: 0, ..EiConfig::default() }.validate().is_err());
    }
}
