//! Pairs trading on a latent mean-reverting spread.
//!
//! The crate covers the whole research loop:
//!
//! * [`model`] defines the observation/state equations and simulates spreads,
//! * [`qmc`] and [`mixture`] provide the Halton point sets and Gaussian-sum
//!   approximations the filter is built from,
//! * [`filter`] is the quasi Monte Carlo Kalman filter and its likelihood,
//! * [`estimation`] maximises that likelihood,
//! * [`strategies`], [`backtest`] and [`optimizer`] turn a spread into
//!   trading signals, returns, and Monte Carlo optimal boundaries,
//! * [`data`], [`config`] and [`pipeline`] wire it together for the CLI.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backtest;
pub mod config;
pub mod data;
pub mod error;
pub mod estimation;
pub mod filter;
pub mod mixture;
pub mod model;
pub mod optim;
pub mod optimizer;
pub mod parallel;
pub mod pipeline;
pub mod qmc;
pub mod quadrature;
pub mod rng;
pub mod strategies;

pub use error::{Error, Result};
