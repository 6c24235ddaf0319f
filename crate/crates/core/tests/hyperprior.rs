mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sif_bhm::gibbs::SamplerConfig;
use sif_bhm::hyperprior::{
    export_prior_table, fit_seasonal_prior, fit_seasonal_prior_with, read_prior_table, DenseCellDataset,
    DenseFitOptions, PriorEntry, PriorFlag, PriorTable,
};
use sif_bhm::model::{beta_names, simulate_cell_year, DesignDay, SimulationDesign, VarianceState};
use sif_bhm::{run_chain, CellId, Error, SeasonalCoefficients, SeasonalPriorSpec, SoundingRecord};

const CELL: CellId = CellId { lat_index: 125, lon_index: 250 };

fn fit_config(seed: u64) -> SamplerConfig {
    SamplerConfig { n_chains: 3, n_iterations: 3000, n_burnin: 1000, seed, ..SamplerConfig::default() }
}

/// Near-daily dense records over 2020 and 2021 from fixed coefficients.
fn dense_dataset(truth: &SeasonalCoefficients, seed: u64) -> DenseCellDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records: Vec<SoundingRecord> = Vec::new();
    for year in [2020, 2021] {
        let days: Vec<DesignDay> = (0..365)
            .filter(|d| d % 2 == (year as usize) % 2 || rng.random_bool(0.3))
            .map(|d| DesignDay { t: d as f64 + 0.55, tau: vec![0.09; 12] })
            .collect();
        let vars = VarianceState { nu: vec![0.02; days.len()], delta: 0.01 };
        let design = SimulationDesign { cell: CELL, year, land_cover: 12, days };
        let (ds, _) = simulate_cell_year(truth, &vars, &design, rng.random()).unwrap();
        records.extend(ds.days.into_iter().flat_map(|d| d.soundings));
    }
    DenseCellDataset::new(CELL, records, "synthetic").unwrap()
}

fn truth() -> SeasonalCoefficients {
    SeasonalCoefficients {
        a: 0.1,
        beta0: 0.35,
        beta1: -0.0004,
        beta2: vec![0.3, -0.08],
        beta3: vec![-0.25, 0.06],
    }
}

#[test]
fn dense_fit_recovers_the_coefficients() {
    let t = truth();
    let fit = fit_seasonal_prior(&dense_dataset(&t, 1), &fit_config(1)).unwrap();
    assert_eq!(fit.flag, PriorFlag::Ok);
    let b = fit.spec.mean_vector();
    let s = fit.spec.variance_vector();
    let beta = t.beta_vector();
    for (j, name) in beta_names(2).iter().enumerate() {
        assert!(s[j] > 0.0 && (-1.0..=1.0).contains(&b[j]));
        assert!((b[j] - beta[j]).abs() < 3.0 * s[j].sqrt(), "{name}: {} vs {} (sd {})", b[j], beta[j], s[j].sqrt());
    }
}

#[test]
fn dense_fit_is_deterministic() {
    let data = dense_dataset(&truth(), 2);
    let config = SamplerConfig { n_iterations: 800, n_burnin: 300, seed: 3, ..SamplerConfig::default() };
    let a = fit_seasonal_prior(&data, &config).unwrap();
    let b = fit_seasonal_prior(&data.clone(), &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_coefficients_fit_near_zero() {
    let fit = fit_seasonal_prior(&dense_dataset(&SeasonalCoefficients::zeros(2), 4), &fit_config(4)).unwrap();
    for (b, s) in fit.spec.mean_vector().iter().zip(fit.spec.variance_vector()) {
        assert!(b.abs() < 3.0 * s.sqrt(), "b {b}, sd {}", s.sqrt());
    }
}

#[test]
fn fitted_prior_is_consistent_with_its_own_data() {
    let fit = fit_seasonal_prior(&dense_dataset(&truth(), 5), &fit_config(5)).unwrap();
    let b = fit.spec.mean_vector();
    let coeffs = SeasonalCoefficients::from_beta_vector(0.0, &b);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut design = sparse_design(&mut rng, 8);
    design.cell = CELL;
    let vars = VarianceState { nu: vec![0.02; design.days.len()], delta: 0.01 };
    let (data, _) = simulate_cell_year(&coeffs, &vars, &design, 7).unwrap();
    let summary = run_chain(&data, &fit.spec, &fit_config(6)).unwrap();
    for (j, name) in beta_names(2).iter().enumerate() {
        let c = summary.coefficient(name).unwrap();
        let sd = c.variance.sqrt();
        assert!((c.mean - b[j]).abs() < 3.0 * sd, "{name}: {} vs {} (sd {sd})", c.mean, b[j]);
    }
}

#[test]
fn short_dense_records_are_rejected() {
    let t = truth();
    let days: Vec<DesignDay> = (0..30).map(|d| DesignDay { t: 5.0 * d as f64 + 0.5, tau: vec![0.05] }).collect();
    let vars = VarianceState { nu: vec![0.02; 30], delta: 0.01 };
    let design = SimulationDesign { cell: CELL, year: 2020, land_cover: 12, days };
    let (ds, _) = simulate_cell_year(&t, &vars, &design, 1).unwrap();
    let records: Vec<SoundingRecord> = ds.days.into_iter().flat_map(|d| d.soundings).collect();
    let data = DenseCellDataset::new(CELL, records, "short").unwrap();
    let err = fit_seasonal_prior(&data, &fit_config(1)).unwrap_err();
    assert!(matches!(err, Error::InsufficientDays { got: 30, floor: 60 }));
    let options = DenseFitOptions { min_days: 20, ..DenseFitOptions::default() };
    let config = SamplerConfig { n_iterations: 300, n_burnin: 100, ..SamplerConfig::default() };
    assert!(fit_seasonal_prior_with(&data, &config, &options).is_ok());
}

#[test]
fn level_outside_the_bounds_is_flagged() {
    // a + β0 = 2.5 cannot be represented without β0 at its upper bound.
    let t = SeasonalCoefficients { a: 0.9, beta0: 1.6, ..SeasonalCoefficients::zeros(2) };
    let data = dense_dataset(&t, 8);
    let config = SamplerConfig { n_iterations: 1000, n_burnin: 400, ..SamplerConfig::default() };
    let fit = fit_seasonal_prior(&data, &config).unwrap();
    assert_eq!(fit.flag, PriorFlag::BoundaryPileup);
    assert!(fit.boundary_coefficients.contains(&"beta0".to_string()));
    assert!(fit.spec.b0 <= 1.0);
}

#[test]
fn full_grid_prior_table_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut table = PriorTable::new();
    for i in 0..180u16 {
        for j in 0..360u16 {
            let mean: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let var: Vec<f64> = (0..6).map(|_| rng.random_range(1e-8..0.5)).collect();
            let flag = [PriorFlag::Ok, PriorFlag::BoundaryPileup][rng.random_range(0..2)];
            table.insert(CellId::new(i, j).unwrap(), PriorEntry { spec: SeasonalPriorSpec::from_vectors(&mean, &var), flag });
        }
    }
    assert_eq!(table.len(), 64_800);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("priors.csv");
    export_prior_table(&table, &path, false).unwrap();
    assert_eq!(read_prior_table(&path).unwrap(), table);
    assert!(matches!(export_prior_table(&table, &path, false), Err(Error::WouldOverwrite(_))));
    assert!(export_prior_table(&PriorTable::new(), &dir.path().join("empty.csv"), false).is_err());

    let text = std::fs::read_to_string(&path).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(
        header,
        "cell_lat_index,cell_lon_index,b0,s0,b1,s1,b2_1,s2_1,b3_1,s3_1,b2_2,s2_2,b3_2,s3_2,flag"
    );
    let second_row = text.lines().nth(2).unwrap();
    assert!(second_row.starts_with("0,1,"));
}
