use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::conditionals::{sweep, ChainState, ModelPrior, Observations, UpdatePlan};
use super::SamplerConfig;
use crate::error::{Error, Result};
use crate::model::{dot, fourier_basis, CellId};

/// Seed of one chain, mixed from the run seed, the cell and the chain index
/// so that results never depend on scheduling.
pub fn chain_seed(seed: u64, cell: CellId, chain_index: usize) -> u64 {
    let cell_key = (u64::from(cell.lat_index) << 16) | u64::from(cell.lon_index);
    let mut h = splitmix64(seed);
    h = splitmix64(h ^ cell_key);
    splitmix64(h ^ chain_index as u64)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A single Markov chain: its state plus its own generator.
pub struct Chain<'a> {
    pub state: ChainState,
    obs: &'a Observations,
    prior: &'a ModelPrior,
    plan: UpdatePlan,
    rng: ChaCha8Rng,
}

impl<'a> Chain<'a> {
    pub fn new(obs: &'a Observations, prior: &'a ModelPrior, seed: u64) -> Self {
        Self::with_state(obs, prior, ChainState::initial(obs, prior), seed)
    }

    pub fn with_state(obs: &'a Observations, prior: &'a ModelPrior, state: ChainState, seed: u64) -> Self {
        Self {
            state,
            obs,
            prior,
            plan: UpdatePlan::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn plan(mut self, plan: UpdatePlan) -> Self {
        self.plan = plan;
        self
    }

    pub fn step(&mut self) -> Result<()> {
        sweep(&mut self.state, self.obs, self.prior, &self.plan, &mut self.rng)
    }
}

/// Retained draws of one chain. Per-day series are empty when latent
/// draws were not kept.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChainDraws {
    /// `[day][draw]`
    pub x: Vec<Vec<f64>>,
    /// `[day][draw]`
    pub nu: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    /// `[coefficient][draw]`, basis order.
    pub beta: Vec<Vec<f64>>,
    pub delta: Vec<f64>,
}

impl ChainDraws {
    fn new(n_days: usize, n_coefficients: usize, keep_latent: bool, capacity: usize) -> Self {
        let series = |n: usize| (0..n).map(|_| Vec::with_capacity(capacity)).collect();
        let days = if keep_latent { n_days } else { 0 };
        Self {
            x: series(days),
            nu: series(days),
            a: Vec::with_capacity(capacity),
            beta: series(n_coefficients),
            delta: Vec::with_capacity(capacity),
        }
    }

    fn record(&mut self, state: &ChainState) {
        for (series, v) in self.x.iter_mut().zip(&state.latent.x) {
            series.push(*v);
        }
        for (series, v) in self.nu.iter_mut().zip(&state.vars.nu) {
            series.push(*v);
        }
        self.a.push(state.coeffs.a);
        for (series, v) in self.beta.iter_mut().zip(state.coeffs.beta_vector()) {
            series.push(v);
        }
        self.delta.push(state.vars.delta);
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    /// μ_t draws at day value `t`.
    pub fn mu_at(&self, t: f64, harmonics: usize) -> Vec<f64> {
        let basis = fourier_basis(t, harmonics).expect("finite day value");
        (0..self.len())
            .map(|i| {
                let beta: Vec<f64> = self.beta.iter().map(|b| b[i]).collect();
                self.a[i] + dot(&basis, &beta)
            })
            .collect()
    }
}

/// Draws of every chain, in chain-index order.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    pub day_values: Vec<f64>,
    pub harmonics: usize,
    pub chains: Vec<ChainDraws>,
}

impl PosteriorDraws {
    pub fn n_retained(&self) -> usize {
        self.chains.iter().map(ChainDraws::len).sum()
    }

    pub fn pooled<F>(&self, select: F) -> Vec<f64>
    where
        F: Fn(&ChainDraws) -> &[f64],
    {
        self.chains.iter().flat_map(|c| select(c).iter().copied()).collect()
    }

    pub fn per_chain<F>(&self, select: F) -> Vec<&[f64]>
    where
        F: Fn(&ChainDraws) -> &[f64],
    {
        self.chains.iter().map(select).collect()
    }
}

/// Options beyond [`SamplerConfig`] for a sampling run.
#[derive(Clone, Debug)]
pub struct SampleOptions {
    pub plan: UpdatePlan,
    /// Keep X_t and ν_t draws. Dense-data fits only need the coefficients.
    pub keep_latent: bool,
    /// Starting state for every chain; defaults to [`ChainState::initial`].
    pub init: Option<ChainState>,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            plan: UpdatePlan::default(),
            keep_latent: true,
            init: None,
        }
    }
}

/// Run `config.n_chains` independent chains, discard burn-in and thin.
pub fn sample_posterior(
    obs: &Observations,
    prior: &ModelPrior,
    config: &SamplerConfig,
    cell: CellId,
    options: &SampleOptions,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if obs.n_days() == 0 {
        return Err(Error::InvalidArgument("cell-year has no overpass days".into()));
    }
    if obs.harmonics != prior.harmonics {
        return Err(Error::LengthMismatch("observation and prior harmonics differ".into()));
    }
    let chains = (0..config.n_chains)
        .into_par_iter()
        .map(|c| {
            let init = options
                .init
                .clone()
                .unwrap_or_else(|| ChainState::initial(obs, prior));
            let mut chain = Chain::with_state(obs, prior, init, chain_seed(config.seed, cell, c))
                .plan(options.plan);
            let mut draws = ChainDraws::new(
                obs.n_days(),
                obs.n_coefficients(),
                options.keep_latent,
                config.retained_per_chain(),
            );
            for it in 0..config.n_iterations {
                chain.step()?;
                if it >= config.n_burnin && (it - config.n_burnin).is_multiple_of(config.thin) {
                    draws.record(&chain.state);
                }
            }
            Ok(draws)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PosteriorDraws {
        day_values: obs.days.iter().map(|d| d.t).collect(),
        harmonics: obs.harmonics,
        chains,
    })
}
