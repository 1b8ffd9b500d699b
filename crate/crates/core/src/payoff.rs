//! Discounted exercise rewards `h_t(x)`.
//!
//! Discounting is folded into the reward, so `h_t(x) = e^{-r t} g(x)` with
//! physical time `t = step * step_years`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, RmcError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PayoffKind {
    /// `(K - S)_+` on a one-dimensional state.
    Put1d,
    /// `(K - mean_j S_j)_+`.
    BasketPut,
    /// `(K - prod_j S_j)_+`.
    GeometricPut,
    /// `(K - S)_+` on the price coordinate of an `(S, Y)` state.
    SvPut,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub kind: PayoffKind,
    pub strike: f64,
    pub rate: f64,
    /// Physical time per exercise step, in years.
    pub step_years: f64,
}

impl PayoffSpec {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.strike > 0.0) {
            return Err(invalid("strike must be positive"));
        }
        if !(self.step_years > 0.0) {
            return Err(invalid("step length must be positive"));
        }
        match self.kind {
            PayoffKind::Put1d if dim != 1 => Err(RmcError::DimensionMismatch { expected: 1, got: dim }),
            PayoffKind::SvPut if dim != 2 => Err(RmcError::DimensionMismatch { expected: 2, got: dim }),
            _ => Ok(()),
        }
    }

    /// The quantity compared against the strike.
    #[inline]
    pub fn aggregate(&self, x: &[f64]) -> f64 {
        match self.kind {
            PayoffKind::Put1d | PayoffKind::SvPut => x[0],
            PayoffKind::BasketPut => x.iter().sum::<f64>() / x.len() as f64,
            PayoffKind::GeometricPut => x.iter().product(),
        }
    }

    #[inline]
    pub fn discount(&self, step: usize) -> f64 {
        (-self.rate * self.step_years * step as f64).exp()
    }

    /// Discounted reward at exercise step `step`, no dimension check.
    #[inline]
    pub fn value(&self, step: usize, x: &[f64]) -> f64 {
        let intrinsic = self.strike - self.aggregate(x);
        if intrinsic > 0.0 {
            self.discount(step) * intrinsic
        } else {
            0.0
        }
    }

    /// Checked evaluation of `h_step(x)`.
    pub fn evaluate(&self, step: usize, x: &[f64], dim: usize) -> Result<f64> {
        if x.len() != dim {
            return Err(RmcError::DimensionMismatch { expected: dim, got: x.len() });
        }
        self.validate(dim)?;
        Ok(self.value(step, x))
    }
}
