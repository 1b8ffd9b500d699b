//! Posterior regression layer.
//!
//! Two implementations share one contract (fit, update, predict with
//! uncertainty, ALC): particle dynamic trees and the equiprobable
//! partition with per-cell linear fits.

mod ensemble;
mod leaf;
mod partition;
mod tree;

pub use ensemble::TreeEnsemble;
pub use leaf::LeafModel;
pub use partition::PartitionModel;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::StreamRng;

/// ALC returned for leaves too small to estimate a variance.
pub const ALC_SENTINEL: f64 = 1e6;

/// Pointwise posterior of the regression surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary {
    /// Posterior mean `m(x)`.
    pub mean: f64,
    /// Posterior variance `v(x)` of the latent mean (not of a response).
    pub variance: f64,
    /// Estimated response variance `sigma_hat^2(x)`.
    pub noise_var: f64,
    /// Points in the leaf or cell containing `x` (modal particle for trees).
    pub leaf_count: usize,
    /// `leaf_count - d - 1`.
    pub dof: f64,
    /// `x` lies outside the bounding box of the training sites.
    pub extrapolated: bool,
}

/// Expected one-sample variance reduction of a leaf with `n` points and
/// residual variance `noise_var`: `noise_var / ((n - d - 1)(n - d))`.
pub fn alc_formula(noise_var: f64, n: usize, dim: usize) -> f64 {
    if n <= dim + 1 {
        return ALC_SENTINEL;
    }
    let a = (n - dim - 1) as f64;
    noise_var.max(0.0) / (a * (a + 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub particles: usize,
    #[serde(default)]
    pub leaf: LeafModel,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Defaults to `max(d + 2, 5)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_leaf: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejuvenate_every: Option<usize>,
}

fn default_alpha() -> f64 {
    0.95
}

fn default_beta() -> f64 {
    2.0
}

impl TreeConfig {
    pub fn new(particles: usize, leaf: LeafModel) -> Self {
        TreeConfig { particles, leaf, alpha: default_alpha(), beta: default_beta(), min_leaf: None, rejuvenate_every: None }
    }

    pub fn with_rejuvenation(mut self, every: usize) -> Self {
        self.rejuvenate_every = Some(every);
        self
    }

    pub fn min_leaf_for(&self, dim: usize) -> usize {
        self.min_leaf.unwrap_or(5).max(dim + 2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(invalid("tree ensemble needs at least one particle"));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(invalid("split prior needs alpha in [0, 1)"));
        }
        if !(self.beta >= 0.0) {
            return Err(invalid("split prior exponent must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegressionSpec {
    DynamicTree(TreeConfig),
    Partition { cells_per_dim: usize },
}

impl RegressionSpec {
    /// Smallest design this regression accepts in dimension `dim`.
    pub fn min_design(&self, dim: usize) -> usize {
        match self {
            RegressionSpec::DynamicTree(c) => c.min_leaf_for(dim).max(dim + 2),
            RegressionSpec::Partition { cells_per_dim } => cells_per_dim.pow(dim as u32) * (dim + 2),
        }
    }
}

/// A fitted regression of either kind.
#[derive(Debug, Clone)]
pub enum FittedModel {
    Tree(TreeEnsemble),
    Partition { model: PartitionModel, cells_per_dim: usize, xs: Vec<f64>, ys: Vec<f64> },
}

impl FittedModel {
    /// Fit to row-major sites `xs` and responses `ys`. Dynamic trees absorb
    /// the rows in order; `rng` drives their stochastic moves.
    pub fn fit(xs: &[f64], ys: &[f64], dim: usize, spec: &RegressionSpec, rng: StreamRng) -> Result<Self> {
        if dim == 0 || xs.len() != ys.len() * dim {
            return Err(invalid("design rows and responses disagree"));
        }
        let need = spec.min_design(dim);
        if ys.len() < need {
            return Err(invalid(format!("design of {} points is below the minimum {need}", ys.len())));
        }
        match spec {
            RegressionSpec::DynamicTree(cfg) => {
                cfg.validate()?;
                let mut e = TreeEnsemble::new(dim, cfg.clone(), rng);
                e.absorb_batch(xs, ys);
                Ok(FittedModel::Tree(e))
            }
            RegressionSpec::Partition { cells_per_dim } => Ok(FittedModel::Partition {
                model: PartitionModel::fit(xs, ys, dim, *cells_per_dim)?,
                cells_per_dim: *cells_per_dim,
                xs: xs.to_vec(),
                ys: ys.to_vec(),
            }),
        }
    }

    /// Add a batch. Trees update incrementally; the partition is refit from
    /// scratch on the augmented design.
    pub fn update(&mut self, xs: &[f64], ys: &[f64]) -> Result<()> {
        if ys.is_empty() {
            return Ok(());
        }
        match self {
            FittedModel::Tree(e) => {
                if xs.len() != ys.len() * e.dim() {
                    return Err(invalid("batch rows and responses disagree"));
                }
                e.absorb_batch(xs, ys);
            }
            FittedModel::Partition { model, cells_per_dim, xs: all_x, ys: all_y } => {
                all_x.extend_from_slice(xs);
                all_y.extend_from_slice(ys);
                let dim = all_x.len() / all_y.len();
                *model = PartitionModel::fit(all_x, all_y, dim, *cells_per_dim)?;
            }
        }
        Ok(())
    }

    #[inline]
    pub fn mean(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Tree(e) => e.mean(x),
            FittedModel::Partition { model, .. } => model.mean(x),
        }
    }

    pub fn predict(&self, x: &[f64]) -> PosteriorSummary {
        match self {
            FittedModel::Tree(e) => e.predict(x),
            FittedModel::Partition { model, .. } => model.predict(x),
        }
    }

    pub fn alc(&self, x: &[f64]) -> f64 {
        match self {
            FittedModel::Tree(e) => e.alc(x),
            FittedModel::Partition { model, .. } => model.alc(x),
        }
    }
}
