//! Sequential-design regression Monte Carlo for discrete-time optimal
//! stopping (Bermudan option pricing).
//!
//! The backward induction fits, at each exercise date, a regression of
//! pathwise timing values `h_tau(x_tau) - h_t(x_t)` on the state. The
//! adaptive driver grows each step's design by sampling candidate sites in
//! proportion to an expected-improvement potential built from the
//! posterior of a particle dynamic-tree regression, which concentrates the
//! simulation budget near the estimated exercise boundary.

// `!(x > 0.0)` is the idiom that also rejects NaN; index loops read better in the linear algebra.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant)]

pub mod config;
pub mod density;
pub mod design;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod model;
pub mod oracle;
pub mod payoff;
pub mod policy;
pub mod regression;
pub mod rmc;
pub mod rng;

pub use error::{Result, RmcError};
