//! Split R-hat and effective sample size.
//!
//! Both follow the Stan reference definitions: chains are split in half,
//! ESS uses Geyer's initial monotone sequence on the averaged
//! autocorrelations, and the bulk ESS is computed on rank-normalized draws.

use crate::stats::std_normal_quantile;

/// Per-quantity convergence diagnostics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub rhat: f64,
    pub ess: f64,
}

/// Split R-hat and rank-normalized bulk ESS of one scalar.
pub fn diagnostics(chains: &[&[f64]]) -> Diagnostics {
    Diagnostics {
        rhat: split_rhat(chains),
        ess: ess_bulk(chains),
    }
}

fn split_halves<'a>(chains: &[&'a [f64]]) -> Vec<&'a [f64]> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = n / 2;
    chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect()
}

fn sorted_sum(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

struct ChainMoments {
    n: f64,
    within: f64,
    var_plus: f64,
}

fn chain_moments(chains: &[&[f64]]) -> ChainMoments {
    let m = chains.len() as f64;
    let n = chains[0].len() as f64;
    let means: Vec<f64> = chains.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let vars: Vec<f64> = chains
        .iter()
        .zip(&means)
        .map(|(c, mean)| c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0))
        .collect();
    let grand = sorted_sum(means.clone()) / m;
    let between_over_n = if m > 1.0 {
        sorted_sum(means.iter().map(|v| (v - grand) * (v - grand)).collect()) / (m - 1.0)
    } else {
        0.0
    };
    let within = sorted_sum(vars) / m;
    ChainMoments {
        n,
        within,
        var_plus: (n - 1.0) / n * within + between_over_n,
    }
}

/// Split potential scale reduction factor. Constant draws give exactly 1.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let split = split_halves(chains);
    if split.is_empty() || split[0].len() < 2 {
        return f64::NAN;
    }
    let first = split[0][0];
    if split.iter().all(|c| c.iter().all(|v| *v == first)) {
        return 1.0;
    }
    let mom = chain_moments(&split);
    if mom.within == 0.0 {
        return if mom.var_plus == 0.0 { 1.0 } else { f64::INFINITY };
    }
    (mom.var_plus / mom.within).sqrt()
}

/// ESS of the raw draws (split chains, Geyer truncation).
pub fn effective_sample_size(chains: &[&[f64]]) -> f64 {
    let split = split_halves(chains);
    if split.is_empty() || split[0].len() < 4 {
        return f64::NAN;
    }
    let m = split.len();
    let n = split[0].len();
    let total = (m * n) as f64;
    let mom = chain_moments(&split);
    if mom.var_plus == 0.0 || !mom.var_plus.is_finite() {
        return total;
    }
    let centered: Vec<Vec<f64>> = split
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / mom.n;
            c.iter().map(|v| v - mean).collect()
        })
        .collect();
    let mean_acov = |lag: usize| -> f64 {
        centered
            .iter()
            .map(|c| c[..n - lag].iter().zip(&c[lag..]).map(|(a, b)| a * b).sum::<f64>() / mom.n)
            .sum::<f64>()
            / m as f64
    };
    let rho = |lag: usize| 1.0 - (mom.within - mean_acov(lag)) / mom.var_plus;

    let mut rho_hat = vec![1.0, rho(1)];
    let mut even = 1.0;
    let mut odd = rho_hat[1];
    let mut t = 1;
    while t + 2 < n && even + odd > 0.0 {
        even = rho(t + 1);
        odd = rho(t + 2);
        if even + odd >= 0.0 {
            rho_hat.push(even);
            rho_hat.push(odd);
        }
        t += 2;
    }
    let max_t = rho_hat.len() - 1;
    let tail = if even > 0.0 && t + 1 < n { even } else { 0.0 };

    // Initial monotone sequence on the paired sums.
    let mut k = 1;
    while k + 2 <= max_t {
        let prev = rho_hat[k - 1] + rho_hat[k];
        if rho_hat[k + 1] + rho_hat[k + 2] > prev {
            rho_hat[k + 1] = prev / 2.0;
            rho_hat[k + 2] = prev / 2.0;
        }
        k += 2;
    }
    let tau = -1.0 + 2.0 * rho_hat.iter().sum::<f64>() + tail;
    let ess = total / tau;
    ess.min(total * total.log10())
}

/// ESS after replacing draws by normal scores of their pooled ranks.
pub fn ess_bulk(chains: &[&[f64]]) -> f64 {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 8 {
        return f64::NAN;
    }
    let normalized = rank_normalize(&chains.iter().map(|c| &c[..n]).collect::<Vec<_>>());
    let views: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
    effective_sample_size(&views)
}

/// Normal scores `Φ⁻¹((r - 3/8) / (S + 1/4))` of average ranks over all draws.
pub fn rank_normalize(chains: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut pooled: Vec<(f64, usize, usize)> = chains
        .iter()
        .enumerate()
        .flat_map(|(c, draws)| draws.iter().enumerate().map(move |(i, v)| (*v, c, i)))
        .collect();
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));
    let s = pooled.len() as f64;
    let mut out: Vec<Vec<f64>> = chains.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut start = 0;
    while start < pooled.len() {
        let mut end = start + 1;
        while end < pooled.len() && pooled[end].0 == pooled[start].0 {
            end += 1;
        }
        // 1-based ranks start+1..=end share their average.
        let rank = (start + 1 + end) as f64 / 2.0;
        let z = std_normal_quantile((rank - 0.375) / (s + 0.25));
        for &(_, c, i) in &pooled[start..end] {
            out[c][i] = z;
        }
        start = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn identical_constant_chains_have_unit_rhat() {
        let a = vec![0.7; 100];
        let b = vec![0.7; 100];
        assert_eq!(split_rhat(&[&a, &b]), 1.0);
    }

    #[test]
    fn iid_draws_have_rhat_near_one_and_full_ess() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let views: Vec<&[f64]> = chains.iter().map(Vec::as_slice).collect();
        let d = diagnostics(&views);
        assert!((d.rhat - 1.0).abs() < 0.01, "{d:?}");
        assert!(d.ess > 6000.0 && d.ess < 10000.0, "{d:?}");
    }

    #[test]
    fn shifted_chain_inflates_rhat() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..500).map(|_| 3.0 + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
        assert!(split_rhat(&[&a, &b]) > 1.5);
    }

    #[test]
    fn autocorrelated_chain_has_reduced_ess() {
        // AR(1) with phi = 0.9: integrated autocorrelation time (1 + phi) / (1 - phi) = 19.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = 0.0;
        let chain: Vec<f64> = (0..40_000)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                v = 0.9 * v + e;
                v
            })
            .collect();
        let ess = effective_sample_size(&[&chain]);
        let expected = 40_000.0 / 19.0;
        assert!((ess / expected - 1.0).abs() < 0.2, "{ess} vs {expected}");
    }

    #[test]
    fn rank_normalization_handles_ties() {
        let a = [1.0, 2.0, 2.0];
        let b = [3.0, 1.0, 5.0];
        let z = rank_normalize(&[&a, &b]);
        assert_eq!(z[0][1], z[0][2]);
        assert_eq!(z[0][0], z[1][1]);
        assert!(z[1][2] > z[1][0]);
    }
}
