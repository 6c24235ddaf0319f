//! Test-side oracles, written without the library's linear algebra or
//! density code.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal};

use sif_bhm::model::{DesignDay, SeasonalCoefficients, SimulationDesign, VarianceState};
use sif_bhm::SeasonalPriorSpec;

pub const PERIOD: f64 = 365.25;

/// Inverse of a square matrix by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|x, y| m[*x][col].abs().total_cmp(&m[*y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        m[r][c] -= f * m[col][c];
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[n..].to_vec()).collect()
}

pub fn mat_vec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(v).map(|(x, y)| x * y).sum()).collect()
}

/// Seasonal mean by direct summation of every term.
pub fn mu_direct(c: &SeasonalCoefficients, t: f64) -> f64 {
    let mut s = c.a + c.beta0 + c.beta1 * t;
    for k in 0..c.beta2.len() {
        let w = 2.0 * (k + 1) as f64 * std::f64::consts::PI * t / PERIOD;
        s += c.beta2[k] * w.sin() + c.beta3[k] * w.cos();
    }
    s
}

/// Basis row [1, t, sin, cos, ...] built term by term.
pub fn basis_row(t: f64, k: usize) -> Vec<f64> {
    let mut row = vec![1.0, t];
    for j in 1..=k {
        let w = 2.0 * j as f64 * std::f64::consts::PI * t / PERIOD;
        row.push(w.sin());
        row.push(w.cos());
    }
    row
}

pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - r * r / (2.0 * var)
}

/// Exponential log-density of a precision.
pub fn exp_logpdf(precision: f64, rate: f64) -> f64 {
    rate.ln() - rate * precision
}

/// Mean and variance of N(m, v) truncated to (lo, hi), by Simpson quadrature.
pub fn truncated_moments_quadrature(m: f64, v: f64, lo: f64, hi: f64) -> (f64, f64) {
    let sd = v.sqrt();
    let a = lo.max(m - 12.0 * sd);
    let b = hi.min(m + 12.0 * sd);
    let n = 20_000;
    let h = (b - a) / n as f64;
    let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let x = a + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let d = w * (-(x - m) * (x - m) / (2.0 * v)).exp();
        z += d;
        s1 += d * x;
        s2 += d * x * x;
    }
    let mean = s1 / z;
    (mean, s2 / z - mean * mean)
}

/// Empirical mean, variance (n - 1) and the standard errors of both.
pub struct Moments {
    pub mean: f64,
    pub var: f64,
    pub mean_se: f64,
    pub var_se: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    Moments {
        mean,
        var,
        mean_se: (var / n).sqrt(),
        var_se: ((m4 - var * var).max(0.0) / n).sqrt(),
    }
}

/// A representative informative prior, used for prior-draw simulations.
pub fn informative_prior() -> SeasonalPriorSpec {
    SeasonalPriorSpec::from_vectors(
        &[0.4, 0.0005, 0.25, -0.2, 0.05, 0.03],
        &[0.04, 1e-6, 0.01, 0.01, 0.0025, 0.0025],
    )
}

/// Coefficients and variances drawn from the model's prior.
pub fn draw_from_prior(
    prior: &SeasonalPriorSpec,
    n_days: usize,
    rng: &mut ChaCha8Rng,
) -> (SeasonalCoefficients, VarianceState) {
    let (lo, hi) = prior.a_bounds;
    let a = rng.random_range(lo..hi);
    let beta: Vec<f64> = prior
        .mean_vector()
        .iter()
        .zip(prior.variance_vector())
        .map(|(m, v)| Normal::new(*m, v.sqrt()).unwrap().sample(rng))
        .collect();
    let precision = Gamma::new(1.0, 1.0 / prior.precision_rate).unwrap();
    let nu = (0..n_days).map(|_| 1.0 / precision.sample(rng)).collect();
    let delta = 1.0 / precision.sample(rng);
    (SeasonalCoefficients::from_beta_vector(a, &beta), VarianceState { nu, delta })
}

/// A 16-day revisit year with 1..=max_n soundings per overpass.
pub fn sparse_design(rng: &mut ChaCha8Rng, max_n: usize) -> SimulationDesign {
    let first = rng.random_range(0.0..16.0);
    let mut days = Vec::new();
    let mut t = first;
    while t < 364.0 {
        let n = rng.random_range(1..=max_n);
        let tau = (0..n).map(|_| rng.random_range(0.005..0.05)).collect();
        days.push(DesignDay { t: t + 0.3, tau });
        t += 16.0;
    }
    SimulationDesign::new(days)
}

/// Synthetic inputs for an end-to-end run: a 0.05° land-cover map over a
/// block of cells, and one year of sparse soundings per cell with some
/// failed retrievals and some water pixels mixed in.
pub fn build_pipeline_fixture(
    dir: &std::path::Path,
    n_cells: usize,
    year: i32,
    seed: u64,
) -> sif_bhm::pipeline::PipelineConfig {
    use rand::SeedableRng;
    use sif_bhm::ingest::{write_soundings, ClassGrid};
    use sif_bhm::model::simulate_cell_year;
    use sif_bhm::{CellId, QualityFlag, SoundingRecord};

    let (lat0, lon0) = (40i32, -100i32);
    let cols_cells = 10usize;
    let rows_cells = n_cells.div_ceil(cols_cells);
    let (rows, cols) = (rows_cells * 20, cols_cells * 20);
    let mut grid = ClassGrid::new(20, lat0, lon0, rows, cols, vec![12; rows * cols]).unwrap();
    // A water corner in every cell and one barren cell beyond the modeled block.
    for cr in 0..rows_cells {
        for cc in 0..cols_cells {
            for k in 0..10 {
                grid.set(cr * 20, cc * 20 + k, 17);
            }
        }
    }
    let lc = dir.join("landcover_005.grid");
    grid.write(&lc).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prior = informative_prior();
    let mut records: Vec<SoundingRecord> = Vec::new();
    for i in 0..n_cells {
        let cell = CellId::new((lat0 + 90) as u16 + (i / cols_cells) as u16, (lon0 + 180) as u16 + (i % cols_cells) as u16)
            .unwrap();
        let mut design = sparse_design(&mut rng, 6);
        design.cell = cell;
        design.year = year;
        let (mut coeffs, mut vars) = draw_from_prior(&prior, design.days.len(), &mut rng);
        coeffs.a = coeffs.a.clamp(-0.5, 0.5);
        vars.delta = vars.delta.min(0.05);
        vars.nu.iter_mut().for_each(|v| *v = v.min(0.05));
        let (ds, _) = simulate_cell_year(&coeffs, &vars, &design, rng.random()).unwrap();
        let (clat, clon) = cell.center();
        for day in ds.days {
            for s in day.soundings {
                // Spread soundings over the cell, away from the water corner.
                let lat = clat - 0.4 + rng.random_range(0.1..0.8);
                let lon = clon - 0.5 + rng.random_range(0.0..0.99);
                records.push(SoundingRecord::new(lat, lon, s.time, s.sif, s.retrieval_variance, QualityFlag::Best).unwrap());
            }
        }
        let t = records.last().unwrap().time;
        records.push(SoundingRecord::new(clat, clon, t, 9.0, 0.01, QualityFlag::Failed).unwrap());
        records.push(SoundingRecord::new(clat - 0.49, clon - 0.4, t, 9.0, 0.01, QualityFlag::Good).unwrap());
    }
    let soundings = dir.join(format!("soundings_{year}.csv"));
    write_soundings(&records, &soundings).unwrap();

    let toml = format!(
        r#"
landcover_005 = "landcover_005.grid"
output_dir = "out"
years = [{year}]
workers = 1
seed = {seed}

[soundings]
{year} = "soundings_{year}.csv"

[sampler]
n_chains = 3
n_iterations = 700
n_burnin = 200
"#
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, toml).unwrap();
    sif_bhm::pipeline::PipelineConfig::from_toml_file(&path).unwrap()
}
