mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sif_bhm::model::{log_joint, simulate_cell_year, DesignDay, LatentState, SimulationDesign, VarianceState};
use sif_bhm::{SeasonalCoefficients, SeasonalPriorSpec};

fn random_instance(seed: u64) -> (sif_bhm::CellYearDataset, LatentState, SeasonalCoefficients, VarianceState, SeasonalPriorSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = SeasonalPriorSpec::from_vectors(
        &(0..6).map(|_| rng.random_range(-0.5..0.5)).collect::<Vec<_>>(),
        &(0..6).map(|_| rng.random_range(0.01..1.0)).collect::<Vec<_>>(),
    );
    let days: Vec<DesignDay> = (0..rng.random_range(1..8))
        .map(|d| DesignDay {
            t: 20.0 + 40.0 * d as f64 + rng.random_range(0.0..30.0),
            tau: (0..rng.random_range(1..5)).map(|_| rng.random_range(0.01..0.1)).collect(),
        })
        .collect();
    let (coeffs, vars) = draw_from_prior(&prior, days.len(), &mut rng);
    let (data, mut latent) = simulate_cell_year(&coeffs, &vars, &SimulationDesign::new(days), rng.random()).unwrap();
    // Move the latent state off the simulated values.
    for x in latent.x.iter_mut() {
        *x += rng.random_range(-0.1..0.1);
    }
    (data, latent, coeffs, vars, prior)
}

fn oracle_log_joint(
    data: &sif_bhm::CellYearDataset,
    latent: &LatentState,
    c: &SeasonalCoefficients,
    v: &VarianceState,
    prior: &SeasonalPriorSpec,
) -> f64 {
    let mut terms = Vec::new();
    for (d, day) in data.days.iter().enumerate() {
        for (i, s) in day.soundings.iter().enumerate() {
            terms.push(normal_logpdf(s.sif, latent.y[d][i], s.retrieval_variance));
            terms.push(normal_logpdf(latent.y[d][i], latent.x[d], v.nu[d]));
        }
        terms.push(normal_logpdf(latent.x[d], mu_direct(c, day.t), v.delta));
    }
    let beta = [c.beta0, c.beta1, c.beta2[0], c.beta3[0], c.beta2[1], c.beta3[1]];
    let (m, s) = (prior.mean_vector(), prior.variance_vector());
    for j in 0..6 {
        terms.push(normal_logpdf(beta[j], m[j], s[j]));
    }
    terms.push(-(prior.a_bounds.1 - prior.a_bounds.0).ln());
    for var in v.nu.iter().chain([&v.delta]) {
        terms.push(exp_logpdf(1.0 / var, prior.precision_rate));
    }
    terms.iter().sum()
}

#[test]
fn log_joint_matches_term_by_term_oracle() {
    for seed in 0..100 {
        let (data, latent, coeffs, vars, prior) = random_instance(seed);
        if !(coeffs.a > -1.0 && coeffs.a < 1.0) {
            continue;
        }
        let got = log_joint(&data, &latent, &coeffs, &vars, &prior).unwrap();
        let want = oracle_log_joint(&data, &latent, &coeffs, &vars, &prior);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn log_joint_is_minus_infinity_outside_a_bounds() {
    let (data, latent, mut coeffs, vars, prior) = random_instance(3);
    coeffs.a = 1.5;
    assert_eq!(log_joint(&data, &latent, &coeffs, &vars, &prior).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn log_joint_rejects_mismatched_lengths() {
    let (data, mut latent, coeffs, vars, prior) = random_instance(4);
    latent.x.push(0.0);
    assert!(log_joint(&data, &latent, &coeffs, &vars, &prior).is_err());
}

#[test]
fn simulated_moments_match_the_generative_model() {
    const REPS: u64 = 50_000;
    let coeffs = SeasonalCoefficients {
        a: 0.1,
        beta0: 0.3,
        beta1: 0.0005,
        beta2: vec![0.2, -0.05],
        beta3: vec![-0.1, 0.04],
    };
    let vars = VarianceState { nu: vec![0.02, 0.05], delta: 0.03 };
    let design = SimulationDesign::new(vec![
        DesignDay { t: 40.5, tau: vec![0.01, 0.04] },
        DesignDay { t: 200.5, tau: vec![0.02] },
    ]);
    let mut x0 = Vec::new();
    let mut z00 = Vec::new();
    let mut z01_minus_z00 = Vec::new();
    let mut z10 = Vec::new();
    for r in 0..REPS {
        let (data, latent) = simulate_cell_year(&coeffs, &vars, &design, r).unwrap();
        x0.push(latent.x[0]);
        z00.push(data.days[0].soundings[0].sif);
        z01_minus_z00.push(data.days[0].soundings[1].sif - data.days[0].soundings[0].sif);
        z10.push(data.days[1].soundings[0].sif);
    }
    let check = |label: &str, xs: &[f64], mean: f64, var: f64| {
        let m = moments(xs);
        assert!((m.mean - mean).abs() < 3.0 * (var / REPS as f64).sqrt(), "{label} mean {} vs {mean}", m.mean);
        assert!((m.var - var).abs() < 3.0 * m.var_se, "{label} var {} vs {var}", m.var);
    };
    let mu0 = mu_direct(&coeffs, 40.5);
    let mu1 = mu_direct(&coeffs, 200.5);
    check("X", &x0, mu0, 0.03);
    check("Z day 0", &z00, mu0, 0.03 + 0.02 + 0.01);
    // Soundings of one day share X, so their difference carries ν and τ only.
    check("Z diff", &z01_minus_z00, 0.0, 2.0 * 0.02 + 0.01 + 0.04);
    check("Z day 1", &z10, mu1, 0.03 + 0.05 + 0.02);
}

#[test]
fn simulation_is_deterministic_in_the_seed() {
    let coeffs = SeasonalCoefficients::zeros(2);
    let vars = VarianceState { nu: vec![0.1], delta: 0.1 };
    let design = SimulationDesign::new(vec![DesignDay { t: 10.0, tau: vec![0.1, 0.1] }]);
    let a = simulate_cell_year(&coeffs, &vars, &design, 5).unwrap();
    let b = simulate_cell_year(&coeffs, &vars, &design, 5).unwrap();
    let c = simulate_cell_year(&coeffs, &vars, &design, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.1, c.1);
}
