//! State-process simulators: multi-asset geometric Brownian motion and a
//! log-volatility stochastic volatility model.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RmcError};

/// A point of the state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State(pub Vec<f64>);

impl State {
    pub fn new(coords: Vec<f64>) -> Self {
        State(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl From<Vec<f64>> for State {
    fn from(v: Vec<f64>) -> Self {
        State(v)
    }
}

/// Independent GBMs with a common volatility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub spot: Vec<f64>,
    pub rate: f64,
    pub vol: f64,
}

impl GbmParams {
    pub fn dim(&self) -> usize {
        self.spot.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.spot.is_empty() {
            return Err(invalid("GBM dimension must be at least 1"));
        }
        if self.spot.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(invalid("GBM spot prices must be strictly positive"));
        }
        if !(self.vol >= 0.0) || !self.vol.is_finite() || !self.rate.is_finite() {
            return Err(invalid("GBM volatility must be >= 0 and rate finite"));
        }
        Ok(())
    }
}

/// Diffusion coefficient of the price equation in the stochastic volatility
/// model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SvDiffusion {
    /// `exp(Y) * S`: `Y` is the log of the proportional volatility.
    #[default]
    Multiplicative,
    /// `exp(Y)`: absolute (price-unit) volatility.
    Additive,
}

/// Stochastic volatility model: state `(S, Y)` with
/// `dS = r S dt + exp(Y) S dW1`, `dY = meanrev (level - Y) dt + volvol dW2`,
/// `d<W1, W2> = corr dt`, simulated by Euler steps of size `euler_step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvParams {
    pub rate: f64,
    pub meanrev: f64,
    pub level: f64,
    pub volvol: f64,
    pub corr: f64,
    pub euler_step: f64,
    #[serde(default)]
    pub diffusion: SvDiffusion,
}

impl SvParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.corr.abs() <= 1.0) {
            return Err(invalid("SV correlation must lie in [-1, 1]"));
        }
        if !(self.euler_step > 0.0) {
            return Err(invalid("SV Euler step must be positive"));
        }
        if !(self.volvol >= 0.0) {
            return Err(invalid("SV vol-of-vol must be >= 0"));
        }
        Ok(())
    }

    /// Number of Euler steps in an interval of length `dt`, which must be an
    /// integer multiple of the Euler step.
    pub fn substeps(&self, dt: f64) -> Result<usize> {
        let ratio = dt / self.euler_step;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-6 * ratio.max(1.0) {
            return Err(invalid(format!("interval {dt} is not an integer multiple of the Euler step {}", self.euler_step)));
        }
        Ok(n as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Gbm(GbmParams),
    Sv(SvParams),
}

impl ModelSpec {
    pub fn rate(&self) -> f64 {
        match self {
            ModelSpec::Gbm(p) => p.rate,
            ModelSpec::Sv(p) => p.rate,
        }
    }
}

/// One pair of standard normals with correlation `rho`, built from the
/// Cholesky factor of the 2x2 correlation matrix.
#[inline]
pub fn correlated_normals<R: Rng + ?Sized>(rho: f64, rng: &mut R) -> (f64, f64) {
    let e1: f64 = rng.sample(StandardNormal);
    let e2: f64 = rng.sample(StandardNormal);
    (e1, rho * e1 + (1.0 - rho * rho).max(0.0).sqrt() * e2)
}

fn check_positive(coords: &[f64], what: &str) -> Result<()> {
    if coords.iter().any(|c| !(*c > 0.0)) {
        return Err(RmcError::InvalidState(format!("{what} must be strictly positive")));
    }
    Ok(())
}

#[inline]
fn gbm_step_in_place<R: Rng + ?Sized>(x: &mut [f64], dt: f64, p: &GbmParams, rng: &mut R) {
    let drift = (p.rate - 0.5 * p.vol * p.vol) * dt;
    let diff = p.vol * dt.sqrt();
    for s in x.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *s *= (drift + diff * z).exp();
    }
}

/// Returns the number of floor clamps applied.
#[inline]
fn sv_steps_in_place<R: Rng + ?Sized>(x: &mut [f64], substeps: usize, p: &SvParams, floor: f64, rng: &mut R) -> u64 {
    let h = p.euler_step;
    let sqh = h.sqrt();
    let (mut s, mut y) = (x[0], x[1]);
    let mut clamps = 0;
    for _ in 0..substeps {
        let (z1, z2) = correlated_normals(p.corr, rng);
        let vol = match p.diffusion {
            SvDiffusion::Multiplicative => y.exp() * s,
            SvDiffusion::Additive => y.exp(),
        };
        s += p.rate * s * h + vol * sqh * z1;
        y += p.meanrev * (p.level - y) * h + p.volvol * sqh * z2;
        if s <= floor {
            s = floor;
            clamps += 1;
        }
    }
    x[0] = s;
    x[1] = y;
    clamps
}

/// Exact one-interval GBM transition.
pub fn gbm_transition<R: Rng + ?Sized>(state: &State, dt: f64, params: &GbmParams, rng: &mut R) -> Result<State> {
    if !(dt > 0.0) {
        return Err(invalid("transition interval must be positive"));
    }
    if state.dim() != params.dim() {
        return Err(RmcError::DimensionMismatch { expected: params.dim(), got: state.dim() });
    }
    check_positive(state.coords(), "GBM coordinates")?;
    let mut x = state.0.clone();
    gbm_step_in_place(&mut x, dt, params, rng);
    Ok(State(x))
}

/// Euler transition of the SV model over `dt`. Returns the new state and
/// the number of times the price hit the positivity floor `floor`.
pub fn sv_transition<R: Rng + ?Sized>(state: &State, dt: f64, params: &SvParams, floor: f64, rng: &mut R) -> Result<(State, u64)> {
    if state.dim() != 2 {
        return Err(RmcError::DimensionMismatch { expected: 2, got: state.dim() });
    }
    check_positive(&state.0[..1], "SV price")?;
    let n = params.substeps(dt)?;
    let mut x = state.0.clone();
    let clamps = sv_steps_in_place(&mut x, n, params, floor, rng);
    Ok((State(x), clamps))
}

/// Per-problem simulator: a validated model plus the exercise interval,
/// with counters of transitions drawn and positivity clamps applied.
#[derive(Debug)]
pub struct Simulator {
    spec: ModelSpec,
    dt: f64,
    substeps: usize,
    floor: f64,
    dim: usize,
    transitions: AtomicU64,
    clamps: AtomicU64,
}

impl Simulator {
    pub fn new(spec: ModelSpec, dt: f64, initial: &State) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(invalid("exercise interval must be positive"));
        }
        let (substeps, floor, dim) = match &spec {
            ModelSpec::Gbm(p) => {
                p.validate()?;
                if initial.dim() != p.dim() {
                    return Err(RmcError::DimensionMismatch { expected: p.dim(), got: initial.dim() });
                }
                check_positive(initial.coords(), "initial GBM state")?;
                (1, 0.0, p.dim())
            }
            ModelSpec::Sv(p) => {
                p.validate()?;
                if initial.dim() != 2 {
                    return Err(RmcError::DimensionMismatch { expected: 2, got: initial.dim() });
                }
                check_positive(&initial.0[..1], "initial SV price")?;
                (p.substeps(dt)?, 1e-8 * initial.0[0], 2)
            }
        };
        Ok(Simulator { spec, dt, substeps, floor, dim, transitions: AtomicU64::new(0), clamps: AtomicU64::new(0) })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advance `x` by one exercise interval in place.
    #[inline]
    pub fn advance<R: Rng + ?Sized>(&self, x: &mut [f64], rng: &mut R) {
        match &self.spec {
            ModelSpec::Gbm(p) => gbm_step_in_place(x, self.dt, p, rng),
            ModelSpec::Sv(p) => {
                let c = sv_steps_in_place(x, self.substeps, p, self.floor, rng);
                if c > 0 {
                    self.clamps.fetch_add(c, Ordering::Relaxed);
                }
            }
        }
        self.transitions.fetch_add(1, Ordering::Relaxed);
    }

    /// Total interval transitions drawn through [`Simulator::advance`].
    pub fn transitions(&self) -> u64 {
        self.transitions.load(Ordering::Relaxed)
    }

    pub fn clamps(&self) -> u64 {
        self.clamps.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};
    use approx::assert_abs_diff_eq;

    fn gbm(spot: Vec<f64>, vol: f64) -> GbmParams {
        GbmParams { spot, rate: 0.06, vol }
    }

    #[test]
    fn deterministic_gbm() {
        let mut rng = stream(1, Purpose::Test, 0, 0);
        let s = gbm_transition(&State(vec![40.0]), 1.0, &gbm(vec![40.0], 0.0), &mut rng).unwrap();
        assert_abs_diff_eq!(s.0[0], 42.473_46, epsilon = 1e-4);
        assert_abs_diff_eq!(s.0[0], 40.0 * 0.06f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn gbm_rejects_bad_input() {
        let mut rng = stream(1, Purpose::Test, 0, 0);
        let p = gbm(vec![40.0], 0.2);
        assert!(gbm_transition(&State(vec![-1.0]), 1.0, &p, &mut rng).is_err());
        assert!(gbm_transition(&State(vec![0.0]), 1.0, &p, &mut rng).is_err());
        assert!(gbm_transition(&State(vec![40.0, 40.0]), 1.0, &p, &mut rng).is_err());
        assert!(gbm_transition(&State(vec![40.0]), 0.0, &p, &mut rng).is_err());
    }

    #[test]
    fn gbm_mean_matches_forward() {
        let p = gbm(vec![40.0], 0.2);
        let mut rng = stream(2, Purpose::Test, 0, 0);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        let mut x = [0.0];
        for _ in 0..n {
            x[0] = 40.0;
            gbm_step_in_place(&mut x, 1.0, &p, &mut rng);
            sum += x[0];
            sum2 += x[0] * x[0];
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = 40.0 * 0.06f64.exp();
        assert!((mean - exact).abs() < 3.0 * se, "mean {mean} exact {exact} se {se}");
    }

    #[test]
    fn gbm_coordinates_independent() {
        let p = gbm(vec![40.0, 40.0], 0.2);
        let mut rng = stream(3, Purpose::Test, 0, 0);
        let n = 100_000;
        let (mut sa, mut sb, mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let mut x = [40.0, 40.0];
            gbm_step_in_place(&mut x, 1.0, &p, &mut rng);
            let (a, b) = ((x[0] / 40.0).ln(), (x[1] / 40.0).ln());
            sa += a;
            sb += b;
            sab += a * b;
            saa += a * a;
            sbb += b * b;
        }
        let nf = n as f64;
        let cov = sab / nf - sa / nf * sb / nf;
        let corr = cov / ((saa / nf - (sa / nf).powi(2)) * (sbb / nf - (sb / nf).powi(2))).sqrt();
        assert!(corr.abs() < 0.02, "corr {corr}");
    }

    fn sv(meanrev: f64, volvol: f64, corr: f64) -> SvParams {
        SvParams { rate: 0.055, meanrev, level: -0.583, volvol, corr, euler_step: 0.1 / 252.0, diffusion: SvDiffusion::Multiplicative }
    }

    #[test]
    fn sv_frozen_log_vol() {
        let p = sv(0.0, 0.0, -0.055);
        let mut rng = stream(4, Purpose::Test, 0, 0);
        let y0 = 0.5f64.ln();
        let (s, _) = sv_transition(&State(vec![20.0, y0]), 10.0 / 252.0, &p, 1e-7, &mut rng).unwrap();
        assert_eq!(s.0[1], y0);
    }

    #[test]
    fn sv_log_vol_reverts_to_level() {
        let mut p = sv(3.3, 0.5, -0.055);
        p.euler_step = 0.01;
        let mut rng = stream(5, Purpose::Test, 0, 0);
        let n = 100_000;
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = [20.0, 1.0];
            // five years: exp(-3.3*5) leaves no trace of the start
            sv_steps_in_place(&mut x, 500, &p, 1e-7, &mut rng);
            ys.push(x[1]);
        }
        let mean = ys.iter().sum::<f64>() / n as f64;
        let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((mean - p.level).abs() < 3.0 * se, "mean {mean} level {} se {se}", p.level);
    }

    #[test]
    fn perfect_correlation_reuses_the_draw() {
        let mut rng = stream(6, Purpose::Test, 0, 0);
        for _ in 0..1000 {
            let (z1, z2) = correlated_normals(1.0, &mut rng);
            assert_eq!(z1, z2);
        }
    }

    #[test]
    fn sv_interval_must_be_multiple_of_euler_step() {
        let p = sv(3.3, 0.5, 0.0);
        assert_eq!(p.substeps(1.0 / 252.0).unwrap(), 10);
        assert!(p.substeps(0.15 / 252.0).is_err());
    }

    #[test]
    fn sv_floor_clamps_and_counts() {
        // absurd vol forces the Euler price through zero
        let p = SvParams { level: 5.0, ..sv(0.0, 0.0, 0.0) };
        let sim = Simulator::new(ModelSpec::Sv(p), 1.0 / 252.0, &State(vec![20.0, 5.0])).unwrap();
        let mut rng = stream(7, Purpose::Test, 0, 0);
        let mut hit = false;
        for _ in 0..200 {
            let mut x = [20.0, 5.0];
            sim.advance(&mut x, &mut rng);
            assert!(x[0] > 0.0);
            hit |= x[0] == 20.0 * 1e-8;
        }
        assert!(hit);
        assert!(sim.clamps() > 0);
        assert_eq!(sim.transitions(), 200);
    }
}
