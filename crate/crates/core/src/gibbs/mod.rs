//! Gibbs sampler for the full hierarchical model.
//!
//! A sweep updates, in order: the sounding-level latent field Y, the daily
//! means X, the seasonal coefficients β, the vertical shift a, a move along
//! the (a, β0) ridge that leaves μ_t unchanged, the daily spatial variances ν
//! and the intraseasonal variance δ. All updates are exact conditional draws.

pub mod chain;
pub mod conditionals;
pub mod diagnostics;
pub mod summary;

use serde::{Deserialize, Serialize};

pub use chain::{chain_seed, sample_posterior, Chain, ChainDraws, PosteriorDraws, SampleOptions};
pub use conditionals::{
    a_conditional, beta_conditional, beta_coordinate_conditional, precision_conditional,
    shift_conditional, sweep, update_a, update_betas, update_delta, update_latent_y, update_nu,
    update_shift, update_x, x_conditional, y_conditional, BetaPrior, ChainState, ModelPrior,
    Observations, ShiftConditional, UpdatePlan,
};
pub use diagnostics::{diagnostics, effective_sample_size, ess_bulk, split_rhat, Diagnostics};
pub use summary::{summarize, CoefficientSummary, DaySummary, PosteriorSummary};

use crate::error::{Error, Result};
use crate::model::{CellYearDataset, SeasonalPriorSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Iterations per chain, burn-in included.
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub rhat_threshold: f64,
    pub ess_threshold: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_chains: 3,
            n_iterations: 5000,
            n_burnin: 2000,
            thin: 1,
            seed: 0,
            rhat_threshold: 1.05,
            ess_threshold: 400.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_chains == 0 {
            return Err(Error::InvalidArgument("at least one chain required".into()));
        }
        if self.n_burnin >= self.n_iterations {
            return Err(Error::InvalidArgument("burn-in must be shorter than the run".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be >= 1".into()));
        }
        if !(self.rhat_threshold > 0.0 && self.ess_threshold > 0.0) {
            return Err(Error::InvalidArgument("diagnostic thresholds must be positive".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.n_iterations - self.n_burnin).div_ceil(self.thin)
    }

    /// Stable textual form, used for the product's config digest.
    pub fn canonical_string(&self) -> String {
        format!(
            "n_chains={};n_iterations={};n_burnin={};thin={};seed={};rhat_threshold={:e};ess_threshold={:e}",
            self.n_chains,
            self.n_iterations,
            self.n_burnin,
            self.thin,
            self.seed,
            self.rhat_threshold,
            self.ess_threshold
        )
    }
}

/// Fit one cell-year and summarize the posterior of every X_t.
///
/// Non-convergence is reported through `converged`, never as an error.
pub fn run_chain(
    data: &CellYearDataset,
    prior: &SeasonalPriorSpec,
    config: &SamplerConfig,
) -> Result<PosteriorSummary> {
    let draws = run_chain_draws(data, prior, config)?;
    summarize(&draws, config)
}

/// As [`run_chain`], returning the raw draws.
pub fn run_chain_draws(
    data: &CellYearDataset,
    prior: &SeasonalPriorSpec,
    config: &SamplerConfig,
) -> Result<PosteriorDraws> {
    prior.validate()?;
    if data.days.is_empty() {
        return Err(Error::InvalidArgument("cell-year has no overpass days".into()));
    }
    let obs = Observations::from_dataset(data, prior.harmonics())?;
    sample_posterior(&obs, &ModelPrior::from(prior), config, data.cell, &SampleOptions::default())
}
