//! Besov-Laplace priors for density estimation on `[0,1]^d`.
//!
//! The crate is `no_std` (it needs `alloc`) and contains the numerical
//! machinery only: periodized tensor-product wavelet bases on a dyadic grid,
//! the Laplace prior regimes and their smoothness hyper-prior, link functions
//! turning wavelet expansions into densities, the discretized posterior with
//! its Metropolis-within-Gibbs sampler, and distances between densities.
//! File formats, experiment orchestration and the command line live in the
//! `besov-density` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod link;
pub mod metrics;
pub mod posterior;
pub mod prior;
pub mod quad;
pub mod rng;
pub mod wavelet;

mod filters;

pub use error::{Error, Result};
pub use link::{push_forward, DensityOnGrid, LinkFunction, LinkKind};
pub use metrics::{fit_rate, hellinger, kl_divergence, tv_distance, RateFit};
pub use posterior::{ChainState, ChainSummary, Dataset, McmcConfig, Model};
pub use prior::{HyperPrior, PriorDraw, PriorSpec, Regime};
pub use wavelet::{CoefficientTree, Family, GridFunction, WaveletBasis};
