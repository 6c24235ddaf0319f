//! Full conditional distributions and the single-block updates built on them.
//!
//! Every `*_conditional` function is a pure map from the conditioning values
//! to the parameters of the conditional distribution; the matching `update_*`
//! function draws from it and writes the result into a [`ChainState`].

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{
    dot, fourier_basis, CellYearDataset, LatentState, SeasonalCoefficients, SeasonalPriorSpec,
    VarianceState,
};
use crate::stats::{GammaParams, NormalParams};

/// Observations of one day, with the seasonal design row precomputed.
#[derive(Clone, Debug, PartialEq)]
pub struct DayObs {
    pub t: f64,
    pub z: Vec<f64>,
    pub tau: Vec<f64>,
    pub basis: Vec<f64>,
}

impl DayObs {
    pub fn n(&self) -> usize {
        self.z.len()
    }
}

/// The numeric view of a cell-year the sampler works on.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations {
    pub days: Vec<DayObs>,
    pub harmonics: usize,
}

impl Observations {
    /// Days given as `(t, sif values, retrieval variances)`.
    pub fn new(days: Vec<(f64, Vec<f64>, Vec<f64>)>, harmonics: usize) -> Result<Self> {
        let days = days
            .into_iter()
            .map(|(t, z, tau)| {
                if z.len() != tau.len() {
                    return Err(Error::LengthMismatch("one tau per sounding required".into()));
                }
                if tau.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::InvalidArgument("retrieval variances must be positive".into()));
                }
                Ok(DayObs {
                    t,
                    basis: fourier_basis(t, harmonics)?,
                    z,
                    tau,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { days, harmonics })
    }

    pub fn from_dataset(data: &CellYearDataset, harmonics: usize) -> Result<Self> {
        Self::new(
            data.days
                .iter()
                .map(|d| {
                    (
                        d.t,
                        d.soundings.iter().map(|s| s.sif).collect(),
                        d.soundings.iter().map(|s| s.retrieval_variance).collect(),
                    )
                })
                .collect(),
            harmonics,
        )
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn n_coefficients(&self) -> usize {
        2 + 2 * self.harmonics
    }
}

/// Prior on the β vector.
#[derive(Clone, Debug, PartialEq)]
pub enum BetaPrior {
    /// Independent normals, basis-ordered means and variances.
    Normal { mean: Vec<f64>, var: Vec<f64> },
    /// Independent uniforms on a common interval.
    Uniform { lower: f64, upper: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelPrior {
    pub beta: BetaPrior,
    pub a_bounds: (f64, f64),
    pub precision_rate: f64,
    pub harmonics: usize,
}

impl ModelPrior {
    /// Unif(lower, upper) on every β, as used for the dense-data fits.
    pub fn flat(harmonics: usize, lower: f64, upper: f64) -> Self {
        Self {
            beta: BetaPrior::Uniform { lower, upper },
            a_bounds: (-1.0, 1.0),
            precision_rate: 1.0,
            harmonics,
        }
    }
}

impl From<&SeasonalPriorSpec> for ModelPrior {
    fn from(spec: &SeasonalPriorSpec) -> Self {
        Self {
            beta: BetaPrior::Normal {
                mean: spec.mean_vector(),
                var: spec.variance_vector(),
            },
            a_bounds: spec.a_bounds,
            precision_rate: spec.precision_rate,
            harmonics: spec.harmonics(),
        }
    }
}

/// The full joint state of one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState {
    pub latent: LatentState,
    pub coeffs: SeasonalCoefficients,
    pub vars: VarianceState,
    pub iteration: u64,
}

impl ChainState {
    /// β at prior means (interval midpoint for uniform priors), a = 0, unit
    /// precisions, X_t at the 1/τ-weighted mean of the day's soundings and
    /// Y_it at Z_it.
    pub fn initial(obs: &Observations, prior: &ModelPrior) -> Self {
        let p = obs.n_coefficients();
        let beta = match &prior.beta {
            BetaPrior::Normal { mean, .. } => mean.clone(),
            BetaPrior::Uniform { lower, upper } => vec![0.5 * (lower + upper); p],
        };
        let (lo, hi) = prior.a_bounds;
        let a = if lo < 0.0 && hi > 0.0 { 0.0 } else { 0.5 * (lo + hi) };
        let x = obs
            .days
            .iter()
            .map(|d| {
                let w: f64 = d.tau.iter().map(|t| 1.0 / t).sum();
                d.z.iter().zip(&d.tau).map(|(z, t)| z / t).sum::<f64>() / w
            })
            .collect();
        Self {
            latent: LatentState {
                x,
                y: obs.days.iter().map(|d| d.z.clone()).collect(),
            },
            coeffs: SeasonalCoefficients::from_beta_vector(a, &beta),
            vars: VarianceState {
                nu: vec![1.0; obs.n_days()],
                delta: 1.0,
            },
            iteration: 0,
        }
    }

    /// β·basis for every day, without the vertical shift.
    pub fn fitted_without_shift(&self, obs: &Observations) -> Vec<f64> {
        let beta = self.coeffs.beta_vector();
        obs.days.iter().map(|d| dot(&d.basis, &beta)).collect()
    }

    /// μ_t for every day.
    pub fn seasonal_means(&self, obs: &Observations) -> Vec<f64> {
        let a = self.coeffs.a;
        self.fitted_without_shift(obs).into_iter().map(|f| a + f).collect()
    }
}

/// Y_it | Z_it, X_t: precision-weighted combination of measurement and day mean.
pub fn y_conditional(z: f64, tau: f64, x: f64, nu: f64) -> NormalParams {
    let var = 1.0 / (1.0 / tau + 1.0 / nu);
    NormalParams::new(var * (z / tau + x / nu), var)
}

/// X_t | Y_·t, μ_t, with `sum_y` the sum of the day's n latent soundings.
pub fn x_conditional(sum_y: f64, n: usize, nu: f64, mu: f64, delta: f64) -> NormalParams {
    let var = 1.0 / (n as f64 / nu + 1.0 / delta);
    NormalParams::new(var * (sum_y / nu + mu / delta), var)
}

/// Gamma full conditional of a precision with an Exp(rate) prior after
/// observing `n` Gaussian residuals with sum of squares `sum_sq`.
pub fn precision_conditional(n: usize, sum_sq: f64, rate: f64) -> GammaParams {
    GammaParams::new(1.0 + 0.5 * n as f64, rate + 0.5 * sum_sq)
}

/// Untruncated normal conditional of a: mean residual of X after removing
/// every non-shift seasonal term, variance δ / T.
pub fn a_conditional(x: &[f64], fitted_without_shift: &[f64], delta: f64) -> NormalParams {
    let n = x.len() as f64;
    let resid: f64 = x.iter().zip(fitted_without_shift).map(|(x, f)| x - f).sum();
    NormalParams::new(resid / n, delta / n)
}

/// Joint Gaussian full conditional of β under a normal prior.
#[derive(Clone, Debug)]
pub struct BetaConditional {
    pub mean: DVector<f64>,
    precision: Cholesky<f64, Dyn>,
}

impl BetaConditional {
    pub fn covariance(&self) -> DMatrix<f64> {
        self.precision.inverse()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let p = self.mean.len();
        let eps = DVector::from_fn(p, |_, _| StandardNormal.sample(rng));
        // Precision = L Lᵀ, so L⁻ᵀ ε has covariance Precision⁻¹.
        let offset = self
            .precision
            .l_dirty()
            .tr_solve_lower_triangular(&eps)
            .expect("cholesky factor has a positive diagonal");
        (&self.mean + offset).iter().copied().collect()
    }
}

/// Precision `FᵀF/δ + S⁻¹` and mean `Precision⁻¹ (Fᵀ(x - a)/δ + S⁻¹ b)`.
pub fn beta_conditional(
    obs: &Observations,
    x: &[f64],
    a: f64,
    delta: f64,
    prior_mean: &[f64],
    prior_var: &[f64],
) -> Result<BetaConditional> {
    let p = obs.n_coefficients();
    let mut precision = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for (d, day) in obs.days.iter().enumerate() {
        let r = x[d] - a;
        for i in 0..p {
            rhs[i] += day.basis[i] * r / delta;
            for j in 0..=i {
                precision[(i, j)] += day.basis[i] * day.basis[j] / delta;
            }
        }
    }
    for i in 0..p {
        precision[(i, i)] += 1.0 / prior_var[i];
        rhs[i] += prior_mean[i] / prior_var[i];
        for j in 0..i {
            precision[(j, i)] = precision[(i, j)];
        }
    }
    if precision.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned("non-finite coefficient precision".into()));
    }
    let chol = Cholesky::new(precision).ok_or_else(|| {
        Error::IllConditioned("coefficient precision matrix is not positive definite".into())
    })?;
    let mean = chol.solve(&rhs);
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::IllConditioned("coefficient posterior mean is not finite".into()));
    }
    Ok(BetaConditional {
        mean,
        precision: chol,
    })
}

/// Untruncated normal conditional of coordinate `j` of β given the others,
/// or `None` when the design carries no information about it.
pub fn beta_coordinate_conditional(
    obs: &Observations,
    x: &[f64],
    a: f64,
    beta: &[f64],
    j: usize,
    delta: f64,
) -> Option<NormalParams> {
    let mut ss = 0.0;
    let mut cross = 0.0;
    for (d, day) in obs.days.iter().enumerate() {
        let f = day.basis[j];
        let others = dot(&day.basis, beta) - f * beta[j];
        ss += f * f;
        cross += f * (x[d] - a - others);
    }
    (ss > 0.0).then(|| NormalParams::new(cross / ss, delta / ss))
}

/// Distribution of the step `e` in `(a, β0) -> (a + e, β0 - e)`, a direction
/// along which μ_t, and hence the likelihood, is unchanged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShiftConditional {
    Normal {
        dist: NormalParams,
        lower: f64,
        upper: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
}

pub fn shift_conditional(a: f64, beta0: f64, prior: &ModelPrior) -> ShiftConditional {
    let (lo, hi) = prior.a_bounds;
    match &prior.beta {
        BetaPrior::Normal { mean, var } => ShiftConditional::Normal {
            dist: NormalParams::new(beta0 - mean[0], var[0]),
            lower: lo - a,
            upper: hi - a,
        },
        BetaPrior::Uniform { lower, upper } => ShiftConditional::Uniform {
            lower: (lo - a).max(beta0 - upper),
            upper: (hi - a).min(beta0 - lower),
        },
    }
}

pub fn update_latent_y<R: Rng + ?Sized>(state: &mut ChainState, obs: &Observations, rng: &mut R) {
    for (d, day) in obs.days.iter().enumerate() {
        let x = state.latent.x[d];
        let nu = state.vars.nu[d];
        for (i, (z, tau)) in day.z.iter().zip(&day.tau).enumerate() {
            state.latent.y[d][i] = y_conditional(*z, *tau, x, nu).sample(rng);
        }
    }
}

pub fn update_x<R: Rng + ?Sized>(state: &mut ChainState, obs: &Observations, rng: &mut R) {
    let mu = state.seasonal_means(obs);
    for d in 0..obs.n_days() {
        let ys = &state.latent.y[d];
        let cond = x_conditional(ys.iter().sum(), ys.len(), state.vars.nu[d], mu[d], state.vars.delta);
        state.latent.x[d] = cond.sample(rng);
    }
}

pub fn update_betas<R: Rng + ?Sized>(
    state: &mut ChainState,
    obs: &Observations,
    prior: &ModelPrior,
    rng: &mut R,
) -> Result<()> {
    match &prior.beta {
        BetaPrior::Normal { mean, var } => {
            let cond = beta_conditional(
                obs,
                &state.latent.x,
                state.coeffs.a,
                state.vars.delta,
                mean,
                var,
            )?;
            state.coeffs.set_beta_vector(&cond.sample(rng));
        }
        BetaPrior::Uniform { lower, upper } => {
            let mut beta = state.coeffs.beta_vector();
            for j in 0..beta.len() {
                beta[j] = match beta_coordinate_conditional(
                    obs,
                    &state.latent.x,
                    state.coeffs.a,
                    &beta,
                    j,
                    state.vars.delta,
                ) {
                    Some(cond) => cond.sample_truncated(*lower, *upper, rng),
                    None => rng.random_range(*lower..*upper),
                };
            }
            state.coeffs.set_beta_vector(&beta);
        }
    }
    Ok(())
}

pub fn update_a<R: Rng + ?Sized>(
    state: &mut ChainState,
    obs: &Observations,
    prior: &ModelPrior,
    rng: &mut R,
) {
    let fitted = state.fitted_without_shift(obs);
    let cond = a_conditional(&state.latent.x, &fitted, state.vars.delta);
    let (lo, hi) = prior.a_bounds;
    state.coeffs.a = cond.sample_truncated(lo, hi, rng);
}

/// Moves along the (a, β0) ridge, where only the priors of a and β0 vary.
pub fn update_shift<R: Rng + ?Sized>(state: &mut ChainState, prior: &ModelPrior, rng: &mut R) {
    let e = match shift_conditional(state.coeffs.a, state.coeffs.beta0, prior) {
        ShiftConditional::Normal { dist, lower, upper } => dist.sample_truncated(lower, upper, rng),
        ShiftConditional::Uniform { lower, upper } => {
            if lower < upper {
                rng.random_range(lower..upper)
            } else {
                0.0
            }
        }
    };
    state.coeffs.a += e;
    state.coeffs.beta0 -= e;
}

pub fn update_nu<R: Rng + ?Sized>(
    state: &mut ChainState,
    obs: &Observations,
    prior: &ModelPrior,
    rng: &mut R,
) {
    for d in 0..obs.n_days() {
        let x = state.latent.x[d];
        let ys = &state.latent.y[d];
        let sum_sq: f64 = ys.iter().map(|y| (y - x) * (y - x)).sum();
        let precision = precision_conditional(ys.len(), sum_sq, prior.precision_rate).sample(rng);
        state.vars.nu[d] = 1.0 / precision;
    }
}

pub fn update_delta<R: Rng + ?Sized>(
    state: &mut ChainState,
    obs: &Observations,
    prior: &ModelPrior,
    rng: &mut R,
) {
    let mu = state.seasonal_means(obs);
    let sum_sq: f64 = state
        .latent
        .x
        .iter()
        .zip(&mu)
        .map(|(x, m)| (x - m) * (x - m))
        .sum();
    let precision = precision_conditional(obs.n_days(), sum_sq, prior.precision_rate).sample(rng);
    state.vars.delta = 1.0 / precision;
}

/// Which blocks a sweep updates. Disabled blocks keep their current value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdatePlan {
    pub y: bool,
    pub x: bool,
    pub betas: bool,
    pub a: bool,
    pub shift: bool,
    pub nu: bool,
    pub delta: bool,
}

impl Default for UpdatePlan {
    fn default() -> Self {
        Self {
            y: true,
            x: true,
            betas: true,
            a: true,
            shift: true,
            nu: true,
            delta: true,
        }
    }
}

impl UpdatePlan {
    /// Only the Gaussian blocks (Y, X, β); a, ν and δ stay fixed.
    pub fn gaussian_only() -> Self {
        Self {
            a: false,
            shift: false,
            nu: false,
            delta: false,
            ..Self::default()
        }
    }
}

/// One Gibbs sweep in the order Y, X, β, a, ridge shift, ν, δ.
pub fn sweep<R: Rng + ?Sized>(
    state: &mut ChainState,
    obs: &Observations,
    prior: &ModelPrior,
    plan: &UpdatePlan,
    rng: &mut R,
) -> Result<()> {
    if plan.y {
        update_latent_y(state, obs, rng);
    }
    if plan.x {
        update_x(state, obs, rng);
    }
    if plan.betas {
        update_betas(state, obs, prior, rng)?;
    }
    if plan.a {
        update_a(state, obs, prior, rng);
    }
    if plan.shift {
        update_shift(state, prior, rng);
    }
    if plan.nu {
        update_nu(state, obs, prior, rng);
    }
    if plan.delta {
        update_delta(state, obs, prior, rng);
    }
    state.iteration += 1;
    Ok(())
}
