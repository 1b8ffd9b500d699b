//! State densities `p(t, x | 0, X0)` used to weight expected-improvement
//! scores and to bound candidate sets.

use std::f64::consts::PI;

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::error::{invalid, Result, RmcError};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

#[inline]
pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub(crate) fn std_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Gaussian product-kernel density estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelDensity {
    dim: usize,
    samples: Vec<f64>,
    bandwidth: Vec<f64>,
}

impl KernelDensity {
    /// `samples` is row-major with `dim` columns. Bandwidth per dimension is
    /// the normal-reference (Silverman) rule
    /// `h_j = sd_j * (4 / ((d + 2) n))^(1 / (d + 4))`.
    pub fn silverman(samples: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || samples.is_empty() || !samples.len().is_multiple_of(dim) {
            return Err(invalid("kernel density needs a non-empty sample of whole rows"));
        }
        let n = samples.len() / dim;
        let factor = (4.0 / ((dim as f64 + 2.0) * n as f64)).powf(1.0 / (dim as f64 + 4.0));
        let bandwidth = (0..dim)
            .map(|j| {
                let col = samples.iter().skip(j).step_by(dim);
                let mean = col.clone().sum::<f64>() / n as f64;
                let var = if n > 1 { col.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
                let h = var.sqrt() * factor;
                if h > 0.0 {
                    h
                } else {
                    1e-6 * (1.0 + mean.abs())
                }
            })
            .collect();
        Ok(KernelDensity { dim, samples, bandwidth })
    }

    pub fn with_bandwidth(samples: Vec<f64>, dim: usize, bandwidth: Vec<f64>) -> Result<Self> {
        if dim == 0 || samples.is_empty() || !samples.len().is_multiple_of(dim) || bandwidth.len() != dim {
            return Err(invalid("kernel density shape mismatch"));
        }
        if bandwidth.iter().any(|h| !(*h > 0.0)) {
            return Err(invalid("kernel bandwidth must be positive"));
        }
        Ok(KernelDensity { dim, samples, bandwidth })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let norm: f64 = self.bandwidth.iter().map(|h| h * (2.0 * PI).sqrt()).product();
        let mut acc = 0.0;
        for row in self.samples.chunks_exact(self.dim) {
            let mut q = 0.0;
            for j in 0..self.dim {
                let z = (x[j] - row[j]) / self.bandwidth[j];
                q += z * z;
            }
            acc += (-0.5 * q).exp();
        }
        acc / (norm * self.len() as f64)
    }

    fn marginal_cdf(&self, j: usize, v: f64) -> f64 {
        let h = self.bandwidth[j];
        self.samples.iter().skip(j).step_by(self.dim).map(|s| std_normal_cdf((v - s) / h)).sum::<f64>() / self.len() as f64
    }

    fn marginal_quantile(&self, j: usize, p: f64) -> f64 {
        let col = self.samples.iter().skip(j).step_by(self.dim);
        let lo0 = col.clone().cloned().fold(f64::INFINITY, f64::min) - 10.0 * self.bandwidth[j];
        let hi0 = col.cloned().fold(f64::NEG_INFINITY, f64::max) + 10.0 * self.bandwidth[j];
        let (mut lo, mut hi) = (lo0, hi0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.marginal_cdf(j, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-12 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Density of the state at a given physical time.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    /// Product of independent lognormals from GBM with common volatility.
    Lognormal { spot: Vec<f64>, rate: f64, vol: f64 },
    /// Kernel estimate from reference samples (time argument unused).
    Kernel(KernelDensity),
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::Lognormal { spot, .. } => spot.len(),
            DensityModel::Kernel(k) => k.dim,
        }
    }

    /// Per-dimension interval between the `lo` and `hi` marginal quantiles.
    pub fn support_box(&self, t: f64, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>> {
        if !(t > 0.0) {
            return Err(invalid("density box requires t > 0"));
        }
        match self {
            DensityModel::Lognormal { spot, rate, vol } => {
                if !(*vol > 0.0) {
                    return Err(invalid("lognormal density needs positive volatility"));
                }
                let sd = vol * t.sqrt();
                let (zl, zh) = (std_normal_quantile(lo), std_normal_quantile(hi));
                Ok(spot
                    .iter()
                    .map(|s0| {
                        let mu = s0.ln() + (rate - 0.5 * vol * vol) * t;
                        ((mu + sd * zl).exp(), (mu + sd * zh).exp())
                    })
                    .collect())
            }
            DensityModel::Kernel(k) => Ok((0..k.dim).map(|j| (k.marginal_quantile(j, lo), k.marginal_quantile(j, hi))).collect()),
        }
    }

    /// Density at `x` without argument checks; `t > 0` is assumed.
    #[inline]
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            DensityModel::Lognormal { spot, rate, vol } => {
                let sd = vol * t.sqrt();
                let mut dens = 1.0;
                for (s0, xi) in spot.iter().zip(x) {
                    if *xi <= 0.0 {
                        return 0.0;
                    }
                    let mu = s0.ln() + (rate - 0.5 * vol * vol) * t;
                    let z = (xi.ln() - mu) / sd;
                    dens *= std_normal_pdf(z) / (xi * sd);
                }
                dens
            }
            DensityModel::Kernel(k) => k.eval(x),
        }
    }
}

/// `p(t, x | 0, X0)` for the given density model.
pub fn state_density(t: f64, x: &[f64], model: &DensityModel) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("state density is a point mass at t <= 0"));
    }
    if x.len() != model.dim() {
        return Err(RmcError::DimensionMismatch { expected: model.dim(), got: x.len() });
    }
    if let DensityModel::Lognormal { vol, .. } = model {
        if !(*vol > 0.0) {
            return Err(invalid("lognormal density needs positive volatility"));
        }
    }
    Ok(model.eval(t, x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn lognormal() -> DensityModel {
        DensityModel::Lognormal { spot: vec![40.0], rate: 0.06, vol: 0.2 }
    }

    #[test]
    fn density_at_log_mean_point() {
        let (r, s, s0) = (0.06f64, 0.2f64, 40.0f64);
        let x = s0 * (r - 0.5 * s * s).exp();
        let got = state_density(1.0, &[x], &lognormal()).unwrap();
        assert_relative_eq!(got, 1.0 / (x * s * (2.0 * PI).sqrt()), max_relative = 1e-12);
    }

    #[test]
    fn analytic_density_integrates_to_one() {
        // composite Simpson on (0, 10 S0 e^{rt}) in log-space-friendly fine grid
        let m = lognormal();
        let upper = 10.0 * 40.0 * 0.06f64.exp();
        let n = 200_000;
        let h = upper / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let x = i as f64 * h;
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * m.eval(1.0, &[x]);
        }
        acc *= h / 3.0;
        assert!((acc - 1.0).abs() < 1e-4, "integral {acc}");
    }

    #[test]
    fn rejects_non_positive_time() {
        assert!(state_density(0.0, &[40.0], &lognormal()).is_err());
        assert!(state_density(-1.0, &[40.0], &lognormal()).is_err());
    }

    #[test]
    fn kernel_positive_at_samples() {
        let samples = vec![1.0, 2.0, 2.5, 3.0, 7.0];
        let k = KernelDensity::silverman(samples.clone(), 1).unwrap();
        let m = DensityModel::Kernel(k);
        for s in samples {
            assert!(state_density(1.0, &[s], &m).unwrap() > 0.0);
        }
    }

    #[test]
    fn silverman_bandwidth_one_dim() {
        let samples: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let k = KernelDensity::silverman(samples, 1).unwrap();
        let sd = (100.0f64 * 101.0 / 12.0).sqrt();
        assert_relative_eq!(k.bandwidth()[0], sd * (4.0f64 / 300.0).powf(0.2), max_relative = 1e-12);
        assert_relative_eq!(k.bandwidth()[0], 1.0592 * sd * 100f64.powf(-0.2), max_relative = 1e-3);
    }

    #[test]
    fn lognormal_box_is_quantile_interval() {
        let b = lognormal().support_box(1.0, 0.001, 0.999).unwrap();
        let mu = 40f64.ln() + 0.04;
        assert_relative_eq!(b[0].0, (mu - 0.2 * 3.090_232_306).exp(), max_relative = 1e-8);
        assert_relative_eq!(b[0].1, (mu + 0.2 * 3.090_232_306).exp(), max_relative = 1e-8);
    }

    #[test]
    fn kernel_box_brackets_samples() {
        let samples: Vec<f64> = (0..200).flat_map(|i| [i as f64, -(i as f64)]).collect();
        let k = KernelDensity::silverman(samples, 2).unwrap();
        let b = DensityModel::Kernel(k).support_box(1.0, 0.001, 0.999).unwrap();
        assert!(b[0].0 < 1.0 && b[0].1 > 198.0);
        assert!(b[1].0 < -198.0 && b[1].1 > -1.0);
    }
}
