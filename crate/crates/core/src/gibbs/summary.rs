use serde::{Deserialize, Serialize};

use super::chain::PosteriorDraws;
use super::diagnostics::{diagnostics, Diagnostics};
use super::SamplerConfig;
use crate::error::{Error, Result};
use crate::model::beta_names;
use crate::stats::ScalarSummary;

/// Fewest pooled draws a posterior summary is computed from.
pub const MIN_RETAINED_DRAWS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DaySummary {
    pub t: f64,
    pub x_mean: f64,
    pub x_sd: f64,
    pub x_q2_5: f64,
    pub x_q97_5: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSummary {
    pub name: String,
    pub mean: f64,
    pub variance: f64,
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub days: Vec<DaySummary>,
    /// a, the β coefficients in basis order, then δ.
    pub coefficients: Vec<CoefficientSummary>,
    pub n_draws: usize,
    pub converged: bool,
}

impl PosteriorSummary {
    pub fn coefficient(&self, name: &str) -> Option<&CoefficientSummary> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

fn coefficient_summary(name: String, per_chain: &[&[f64]]) -> Result<CoefficientSummary> {
    let pooled: Vec<f64> = per_chain.iter().flat_map(|c| c.iter().copied()).collect();
    let s = ScalarSummary::from_draws(&pooled)?;
    let Diagnostics { rhat, ess } = diagnostics(per_chain);
    Ok(CoefficientSummary {
        name,
        mean: s.mean,
        variance: s.sd * s.sd,
        rhat,
        ess,
    })
}

/// Pool the retained draws of every chain into per-day and per-coefficient
/// summaries, with split R-hat and bulk ESS for each quantity.
pub fn summarize(draws: &PosteriorDraws, config: &SamplerConfig) -> Result<PosteriorSummary> {
    let n_draws = draws.n_retained();
    if n_draws < MIN_RETAINED_DRAWS {
        return Err(Error::TooFewDraws {
            got: n_draws,
            need: MIN_RETAINED_DRAWS,
        });
    }

    let mut days = Vec::with_capacity(draws.day_values.len());
    let keep_latent = draws.chains.first().is_some_and(|c| !c.x.is_empty());
    if keep_latent {
        for (d, t) in draws.day_values.iter().enumerate() {
            let per_chain = draws.per_chain(|c| &c.x[d]);
            let pooled: Vec<f64> = per_chain.iter().flat_map(|c| c.iter().copied()).collect();
            let s = ScalarSummary::from_draws(&pooled)?;
            let Diagnostics { rhat, ess } = diagnostics(&per_chain);
            days.push(DaySummary {
                t: *t,
                x_mean: s.mean,
                x_sd: s.sd,
                x_q2_5: s.q2_5,
                x_q97_5: s.q97_5,
                rhat,
                ess,
            });
        }
    }

    let mut coefficients = vec![coefficient_summary("a".into(), &draws.per_chain(|c| &c.a))?];
    for (j, name) in beta_names(draws.harmonics).into_iter().enumerate() {
        coefficients.push(coefficient_summary(name, &draws.per_chain(|c| &c.beta[j]))?);
    }
    coefficients.push(coefficient_summary("delta".into(), &draws.per_chain(|c| &c.delta))?);

    let rhat_ok = |r: f64| r.is_finite() && r <= config.rhat_threshold;
    let ess_ok = |e: f64| e.is_finite() && e >= config.ess_threshold;
    let converged = days.iter().all(|d| rhat_ok(d.rhat) && ess_ok(d.ess))
        && coefficients.iter().all(|c| rhat_ok(c.rhat) && ess_ok(c.ess));

    Ok(PosteriorSummary {
        days,
        coefficients,
        n_draws,
        converged,
    })
}
