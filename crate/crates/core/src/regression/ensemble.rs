//! Particle ensemble of dynamic trees with sequential Monte Carlo
//! reweighting, systematic resampling and periodic rejuvenation.

use rand::seq::SliceRandom;
use rand::Rng;

use super::leaf::{Evidence, LeafFit};
use super::tree::{Data, TreeParticle, TreePrior};
use super::{alc_formula, PosteriorSummary, TreeConfig};
use crate::rng::StreamRng;

#[derive(Debug, Clone)]
pub struct TreeEnsemble {
    cfg: TreeConfig,
    prior: TreePrior,
    data: Data,
    particles: Vec<TreeParticle>,
    weights: Vec<f64>,
    rng: StreamRng,
    rejuvenations: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl TreeEnsemble {
    pub fn new(dim: usize, cfg: TreeConfig, rng: StreamRng) -> Self {
        let m = cfg.particles.max(1);
        let prior = TreePrior { alpha: cfg.alpha, beta: cfg.beta, min_leaf: cfg.min_leaf_for(dim), evidence: Evidence::default() };
        TreeEnsemble {
            prior,
            data: Data::new(dim),
            particles: vec![TreeParticle::new(cfg.leaf, dim); m],
            weights: vec![1.0 / m as f64; m],
            rng,
            rejuvenations: 0,
            lo: vec![f64::INFINITY; dim],
            hi: vec![f64::NEG_INFINITY; dim],
            cfg,
        }
    }

    pub fn dim(&self) -> usize {
        self.data.dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.len() == 0
    }

    pub fn config(&self) -> &TreeConfig {
        &self.cfg
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn rejuvenations(&self) -> usize {
        self.rejuvenations
    }

    pub fn min_leaf(&self) -> usize {
        self.prior.min_leaf
    }

    /// Leaf counts of each particle.
    pub fn leaf_counts(&self) -> Vec<usize> {
        self.particles.iter().map(|p| p.leaf_count()).collect()
    }

    pub fn max_depth(&self) -> u32 {
        self.particles.iter().map(|p| p.max_depth()).max().unwrap_or(0)
    }

    pub fn effective_sample_size(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Stream a batch of rows (row-major `xs`) into every particle. The
    /// first batch also sets the evidence prior from its responses.
    pub fn absorb_batch(&mut self, xs: &[f64], ys: &[f64]) {
        let d = self.data.dim;
        debug_assert_eq!(xs.len(), ys.len() * d);
        if self.data.len() == 0 {
            self.prior.evidence = Evidence::from_responses(ys);
        }
        for (x, &y) in xs.chunks_exact(d).zip(ys) {
            let idx = self.data.push(x, y);
            for j in 0..d {
                self.lo[j] = self.lo[j].min(x[j]);
                self.hi[j] = self.hi[j].max(x[j]);
            }
            self.absorb_one(idx);
            if let Some(r) = self.cfg.rejuvenate_every {
                if r > 0 && self.data.len().is_multiple_of(r) {
                    self.rejuvenate();
                }
            }
        }
    }

    fn absorb_one(&mut self, idx: u32) {
        let m = self.particles.len();
        if m > 1 {
            let x = self.data.x(idx);
            let y = self.data.y(idx);
            let logs: Vec<f64> =
                self.particles.iter().zip(&self.weights).map(|(p, w)| w.ln() + p.fit_at(x).predictive_logpdf(x, y)).collect();
            let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (w, l) in self.weights.iter_mut().zip(&logs) {
                *w = (l - top).exp();
                total += *w;
            }
            self.weights.iter_mut().for_each(|w| *w /= total);
            if self.effective_sample_size() < 0.5 * m as f64 {
                self.resample();
            }
        }
        for p in &mut self.particles {
            p.absorb(&self.data, idx, &self.prior, &mut self.rng);
        }
    }

    fn resample(&mut self) {
        let m = self.particles.len();
        let u0: f64 = self.rng.random::<f64>() / m as f64;
        let mut picks = Vec::with_capacity(m);
        let mut cum = self.weights[0];
        let mut j = 0;
        for k in 0..m {
            let u = u0 + k as f64 / m as f64;
            while u > cum && j + 1 < m {
                j += 1;
                cum += self.weights[j];
            }
            picks.push(j);
        }
        self.particles = picks.iter().map(|&j| self.particles[j].clone()).collect();
        self.weights = vec![1.0 / m as f64; m];
    }

    /// Refit every particle from an independent random permutation of the
    /// data absorbed so far.
    pub fn rejuvenate(&mut self) {
        let n = self.data.len() as u32;
        let dim = self.data.dim;
        let mut order: Vec<u32> = (0..n).collect();
        for p in &mut self.particles {
            order.shuffle(&mut self.rng);
            let mut fresh = TreeParticle::new(self.cfg.leaf, dim);
            for &i in &order {
                fresh.absorb(&self.data, i, &self.prior, &mut self.rng);
            }
            *p = fresh;
        }
        let m = self.particles.len();
        self.weights = vec![1.0 / m as f64; m];
        self.rejuvenations += 1;
    }

    fn extrapolated(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).any(|(v, (l, h))| v < l || v > h)
    }

    #[inline]
    pub fn mean(&self, x: &[f64]) -> f64 {
        self.particles.iter().zip(&self.weights).map(|(p, w)| w * p.fit_at(x).mean_at(x)).sum()
    }

    pub fn predict(&self, x: &[f64]) -> PosteriorSummary {
        let d = self.data.dim;
        let fits: Vec<&LeafFit> = self.particles.iter().map(|p| p.fit_at(x)).collect();
        let means: Vec<f64> = fits.iter().map(|f| f.mean_at(x)).collect();
        let mean: f64 = means.iter().zip(&self.weights).map(|(m, w)| w * m).sum();
        let spread: f64 = means.iter().zip(&self.weights).map(|(m, w)| w * (m - mean).powi(2)).sum();
        let within: f64 = fits.iter().zip(&self.weights).map(|(f, w)| w * f.latent_var_at(x)).sum();
        let noise_var: f64 = fits.iter().zip(&self.weights).map(|(f, w)| w * f.noise_var).sum();
        let modal = self.weights.iter().enumerate().fold(0, |best, (i, w)| if *w > self.weights[best] { i } else { best });
        let leaf_count = fits[modal].n;
        PosteriorSummary {
            mean,
            variance: (spread + within).max(0.0),
            noise_var,
            leaf_count,
            dof: leaf_count as f64 - d as f64 - 1.0,
            extrapolated: self.extrapolated(x),
        }
    }

    /// Expected reduction in posterior variance from one more sample at
    /// `x`, averaged over particles.
    pub fn alc(&self, x: &[f64]) -> f64 {
        let d = self.data.dim;
        self.particles
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| {
                let f = p.fit_at(x);
                w * alc_formula(f.noise_var, f.n, d)
            })
            .sum()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(format!("weights do not form a distribution (sum {s})"));
        }
        for (i, p) in self.particles.iter().enumerate() {
            p.check_invariants(&self.data, &self.prior, self.data.len()).map_err(|e| format!("particle {i}: {e}"))?;
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = self.clone();
        out.particles = perm.iter().map(|&i| self.particles[i].clone()).collect();
        out.weights = perm.iter().map(|&i| self.weights[i]).collect();
        out
    }

    #[cfg(test)]
    pub(crate) fn log_priors(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_prior(&self.prior)).collect()
    }
}
