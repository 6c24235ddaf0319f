//! Domain types and the deterministic mathematics of the hierarchical model.
//!
//! Each cell-year is modeled as
//!
//! ```text
//! Z_it = Y_it + m_it,   m_it ~ N(0, tau_it)     (retrieval error)
//! Y_it = X_t  + r_it,   r_it ~ N(0, nu_t)       (within-cell spread)
//! X_t  = mu_t + d_t,    d_t  ~ N(0, delta)      (intraseasonal deviation)
//! mu_t = a + b0 + b1 t + sum_k [b2k sin(2k pi t / P) + b3k cos(2k pi t / P)]
//! ```
//!
//! with `P = 365.25` days and `t` the fractional UTC day-of-year.

use chrono::{DateTime, Datelike, NaiveDate, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{normal_log_pdf, NormalParams};

/// Period of the seasonal harmonics in days. Leap years use it unchanged.
pub const SEASONAL_PERIOD_DAYS: f64 = 365.25;

/// Number of Fourier harmonics used for sparse-revisit fits.
pub const DEFAULT_HARMONICS: usize = 2;

const SECONDS_PER_DAY: f64 = 86_400.0;

/// A 1° grid cell. Cell `(i, j)` covers latitudes `[i - 90, i - 89)` and
/// longitudes `[j - 180, j - 179)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub lat_index: u16,
    pub lon_index: u16,
}

impl CellId {
    pub const N_LAT: u16 = 180;
    pub const N_LON: u16 = 360;

    pub fn new(lat_index: u16, lon_index: u16) -> Result<Self> {
        if lat_index >= Self::N_LAT || lon_index >= Self::N_LON {
            return Err(Error::InvalidArgument(format!(
                "cell index ({lat_index}, {lon_index}) outside the 180x360 grid"
            )));
        }
        Ok(Self {
            lat_index,
            lon_index,
        })
    }

    /// Containing cell under half-open bounds; `None` outside the globe.
    pub fn containing(latitude: f64, longitude: f64) -> Option<Self> {
        let i = (latitude + 90.0).floor();
        let j = (longitude + 180.0).floor();
        if !(0.0..f64::from(Self::N_LAT)).contains(&i) || !(0.0..f64::from(Self::N_LON)).contains(&j)
        {
            return None;
        }
        Some(Self {
            lat_index: i as u16,
            lon_index: j as u16,
        })
    }

    pub fn center(&self) -> (f64, f64) {
        (
            f64::from(self.lat_index) - 89.5,
            f64::from(self.lon_index) - 179.5,
        )
    }

    pub fn contains(&self, latitude: f64, longitude: f64) -> bool {
        Self::containing(latitude, longitude) == Some(*self)
    }
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:03}_{:03}", self.lat_index, self.lon_index)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum QualityFlag {
    Best = 0,
    Good = 1,
    Failed = 2,
}

impl TryFrom<i64> for QualityFlag {
    type Error = Error;

    fn try_from(value: i64) -> Result<Self> {
        match value {
            0 => Ok(QualityFlag::Best),
            1 => Ok(QualityFlag::Good),
            2 => Ok(QualityFlag::Failed),
            other => Err(Error::InvalidRecord(format!("quality flag {other} not in {{0,1,2}}"))),
        }
    }
}

/// Fractional UTC day-of-year in `[0, 366)` and the calendar date of an epoch time.
pub fn utc_day_of_year(time_epoch_s: f64) -> Result<(NaiveDate, f64)> {
    let whole = time_epoch_s.floor();
    let nanos = ((time_epoch_s - whole) * 1e9).round().min(999_999_999.0) as u32;
    let dt = DateTime::from_timestamp(whole as i64, nanos)
        .ok_or_else(|| Error::InvalidRecord(format!("time {time_epoch_s} out of range")))?;
    let seconds_into_day = f64::from(dt.num_seconds_from_midnight()) + f64::from(nanos) * 1e-9;
    let doy = f64::from(dt.ordinal0()) + seconds_into_day / SECONDS_PER_DAY;
    Ok((dt.date_naive(), doy))
}

/// One retrieval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoundingRecord {
    pub latitude: f64,
    pub longitude: f64,
    /// Seconds since 1970-01-01T00:00:00 UTC.
    pub time: f64,
    pub day_of_year: f64,
    /// W m⁻² sr⁻¹ μm⁻¹, may be negative.
    pub sif: f64,
    pub retrieval_variance: f64,
    pub quality_flag: QualityFlag,
}

impl SoundingRecord {
    pub fn new(
        latitude: f64,
        longitude: f64,
        time: f64,
        sif: f64,
        retrieval_variance: f64,
        quality_flag: QualityFlag,
    ) -> Result<Self> {
        if !(retrieval_variance > 0.0 && retrieval_variance.is_finite()) {
            return Err(Error::InvalidRecord(format!(
                "retrieval variance {retrieval_variance} must be positive"
            )));
        }
        if !(latitude.is_finite() && longitude.is_finite() && sif.is_finite()) {
            return Err(Error::InvalidRecord("non-finite coordinate or SIF".into()));
        }
        let (_, day_of_year) = utc_day_of_year(time)?;
        Ok(Self {
            latitude,
            longitude,
            time,
            day_of_year,
            sif,
            retrieval_variance,
            quality_flag,
        })
    }

    pub fn utc_date(&self) -> NaiveDate {
        utc_day_of_year(self.time)
            .map(|(d, _)| d)
            .expect("time validated at construction")
    }
}

/// All soundings of one cell on one UTC calendar date.
#[derive(Clone, Debug, PartialEq)]
pub struct OverpassDay {
    pub date: NaiveDate,
    /// Mean fractional day-of-year of the soundings.
    pub t: f64,
    pub soundings: Vec<SoundingRecord>,
}

impl OverpassDay {
    pub fn new(soundings: Vec<SoundingRecord>) -> Result<Self> {
        let first = soundings
            .first()
            .ok_or_else(|| Error::InvalidArgument("overpass day without soundings".into()))?;
        let date = first.utc_date();
        if soundings.iter().any(|s| s.utc_date() != date) {
            return Err(Error::InvalidArgument(
                "soundings of one overpass day span several UTC dates".into(),
            ));
        }
        let t = soundings.iter().map(|s| s.day_of_year).sum::<f64>() / soundings.len() as f64;
        Ok(Self { date, t, soundings })
    }

    pub fn n(&self) -> usize {
        self.soundings.len()
    }
}

/// All soundings for one cell and one calendar year, grouped by overpass day.
#[derive(Clone, Debug, PartialEq)]
pub struct CellYearDataset {
    pub cell: CellId,
    pub year: i32,
    pub days: Vec<OverpassDay>,
    pub land_cover: u8,
}

impl CellYearDataset {
    pub fn new(cell: CellId, year: i32, days: Vec<OverpassDay>, land_cover: u8) -> Result<Self> {
        let ds = Self {
            cell,
            year,
            days,
            land_cover,
        };
        ds.validate(true)?;
        Ok(ds)
    }

    /// Several years pooled on the day-of-year axis. Day values are then
    /// only non-decreasing, since different years can share a day-of-year.
    pub fn pooled(cell: CellId, year: i32, mut days: Vec<OverpassDay>, land_cover: u8) -> Result<Self> {
        days.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.date.cmp(&b.date)));
        let ds = Self {
            cell,
            year,
            days,
            land_cover,
        };
        ds.validate(false)?;
        Ok(ds)
    }

    fn validate(&self, strict_days: bool) -> Result<()> {
        if matches!(self.land_cover, 15..=17) {
            return Err(Error::InvalidArgument(format!(
                "land cover {} is excluded from modeling",
                self.land_cover
            )));
        }
        for w in self.days.windows(2) {
            let ordered = if strict_days { w[0].t < w[1].t } else { w[0].t <= w[1].t };
            if !ordered {
                return Err(Error::InvalidArgument("overpass days out of order".into()));
            }
        }
        for day in &self.days {
            if day.soundings.is_empty() {
                return Err(Error::InvalidArgument("overpass day without soundings".into()));
            }
            if let Some(s) = day
                .soundings
                .iter()
                .find(|s| !self.cell.contains(s.latitude, s.longitude))
            {
                return Err(Error::InvalidArgument(format!(
                    "sounding at ({}, {}) outside cell {}",
                    s.latitude, s.longitude, self.cell
                )));
            }
        }
        Ok(())
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn n_soundings(&self) -> usize {
        self.days.iter().map(OverpassDay::n).sum()
    }
}

/// Seasonal cycle coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonalCoefficients {
    /// Vertical shift, restricted to (-1, 1).
    pub a: f64,
    pub beta0: f64,
    pub beta1: f64,
    /// Sine coefficients, one per harmonic.
    pub beta2: Vec<f64>,
    /// Cosine coefficients, one per harmonic.
    pub beta3: Vec<f64>,
}

impl SeasonalCoefficients {
    pub fn zeros(harmonics: usize) -> Self {
        Self {
            a: 0.0,
            beta0: 0.0,
            beta1: 0.0,
            beta2: vec![0.0; harmonics],
            beta3: vec![0.0; harmonics],
        }
    }

    pub fn harmonics(&self) -> usize {
        self.beta2.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > -1.0 && self.a < 1.0) {
            return Err(Error::InvalidArgument(format!("a = {} outside (-1, 1)", self.a)));
        }
        if self.beta2.len() != self.beta3.len() || self.beta2.is_empty() {
            return Err(Error::InvalidArgument(
                "sine and cosine coefficient counts must match and be >= 1".into(),
            ));
        }
        Ok(())
    }

    /// β in basis order: `[β0, β1, β2_1, β3_1, …, β2_K, β3_K]`.
    pub fn beta_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 + 2 * self.harmonics());
        v.push(self.beta0);
        v.push(self.beta1);
        for (s, c) in self.beta2.iter().zip(&self.beta3) {
            v.push(*s);
            v.push(*c);
        }
        v
    }

    pub fn set_beta_vector(&mut self, beta: &[f64]) {
        debug_assert_eq!(beta.len(), 2 + 2 * self.harmonics());
        self.beta0 = beta[0];
        self.beta1 = beta[1];
        for k in 0..self.harmonics() {
            self.beta2[k] = beta[2 + 2 * k];
            self.beta3[k] = beta[3 + 2 * k];
        }
    }

    pub fn from_beta_vector(a: f64, beta: &[f64]) -> Self {
        let harmonics = (beta.len() - 2) / 2;
        let mut c = Self::zeros(harmonics);
        c.a = a;
        c.set_beta_vector(beta);
        c
    }
}

/// Coefficient names in basis order.
pub fn beta_names(harmonics: usize) -> Vec<String> {
    let mut names = vec!["beta0".to_string(), "beta1".to_string()];
    for k in 1..=harmonics {
        names.push(format!("beta2_{k}"));
        names.push(format!("beta3_{k}"));
    }
    names
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceState {
    /// Within-cell spatial variance, one per overpass day.
    pub nu: Vec<f64>,
    /// Intraseasonal variance.
    pub delta: f64,
}

impl VarianceState {
    pub fn is_valid(&self) -> bool {
        self.delta > 0.0 && self.nu.iter().all(|v| *v > 0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    /// 1° mean SIF, one per overpass day.
    pub x: Vec<f64>,
    /// Noise-free sounding-level SIF, indexed `[day][sounding]`.
    pub y: Vec<Vec<f64>>,
}

/// Hyperparameters of the seasonal prior. `s*` are variances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeasonalPriorSpec {
    pub b0: f64,
    pub s0: f64,
    pub b1: f64,
    pub s1: f64,
    pub b2: Vec<f64>,
    pub s2: Vec<f64>,
    pub b3: Vec<f64>,
    pub s3: Vec<f64>,
    pub a_bounds: (f64, f64),
    /// Rate of the exponential prior on 1/ν_t and 1/δ.
    pub precision_rate: f64,
}

impl SeasonalPriorSpec {
    /// Fallback for cells without dense data: b = 0, s = 0.25 everywhere.
    pub fn global_default(harmonics: usize) -> Self {
        Self::from_vectors(&vec![0.0; 2 + 2 * harmonics], &vec![0.25; 2 + 2 * harmonics])
    }

    /// Build from basis-ordered mean and variance vectors with the
    /// standard a bounds and unit precision rate.
    pub fn from_vectors(mean: &[f64], var: &[f64]) -> Self {
        let harmonics = (mean.len() - 2) / 2;
        let pick = |v: &[f64], off: usize| (0..harmonics).map(|k| v[off + 2 * k]).collect();
        Self {
            b0: mean[0],
            s0: var[0],
            b1: mean[1],
            s1: var[1],
            b2: pick(mean, 2),
            s2: pick(var, 2),
            b3: pick(mean, 3),
            s3: pick(var, 3),
            a_bounds: (-1.0, 1.0),
            precision_rate: 1.0,
        }
    }

    pub fn harmonics(&self) -> usize {
        self.b2.len()
    }

    pub fn mean_vector(&self) -> Vec<f64> {
        interleave(self.b0, self.b1, &self.b2, &self.b3)
    }

    pub fn variance_vector(&self) -> Vec<f64> {
        interleave(self.s0, self.s1, &self.s2, &self.s3)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.harmonics();
        if k == 0 || self.s2.len() != k || self.b3.len() != k || self.s3.len() != k {
            return Err(Error::InvalidArgument("prior harmonic counts disagree".into()));
        }
        if self.variance_vector().iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument("prior variances must be positive".into()));
        }
        if self.mean_vector().iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("prior means must be finite".into()));
        }
        if !(self.precision_rate > 0.0) {
            return Err(Error::InvalidArgument("precision rate must be positive".into()));
        }
        if !(self.a_bounds.0 < self.a_bounds.1) {
            return Err(Error::InvalidArgument("a bounds are empty".into()));
        }
        Ok(())
    }
}

fn interleave(first: f64, second: f64, sin: &[f64], cos: &[f64]) -> Vec<f64> {
    let mut v = vec![first, second];
    for (s, c) in sin.iter().zip(cos) {
        v.push(*s);
        v.push(*c);
    }
    v
}

/// `[1, t, sin(2πt/P), cos(2πt/P), …, sin(2Kπt/P), cos(2Kπt/P)]`.
pub fn fourier_basis(t: f64, harmonics: usize) -> Result<Vec<f64>> {
    if harmonics < 1 {
        return Err(Error::InvalidArgument("harmonic count must be >= 1".into()));
    }
    if !t.is_finite() {
        return Err(Error::InvalidArgument(format!("day value {t} is not finite")));
    }
    let mut row = Vec::with_capacity(2 + 2 * harmonics);
    row.push(1.0);
    row.push(t);
    for k in 1..=harmonics {
        let angle = 2.0 * k as f64 * std::f64::consts::PI * t / SEASONAL_PERIOD_DAYS;
        let (s, c) = angle.sin_cos();
        row.push(s);
        row.push(c);
    }
    Ok(row)
}

/// μ_t: vertical shift plus the basis expansion.
pub fn seasonal_mean(coeffs: &SeasonalCoefficients, t: f64) -> Result<f64> {
    coeffs.validate()?;
    let basis = fourier_basis(t, coeffs.harmonics())?;
    Ok(coeffs.a + dot(&basis, &coeffs.beta_vector()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Log of the unnormalized posterior density: data, sounding-level process,
/// daily process and every prior factor. Precision priors are evaluated as
/// densities in precision space.
pub fn log_joint(
    data: &CellYearDataset,
    latent: &LatentState,
    coeffs: &SeasonalCoefficients,
    vars: &VarianceState,
    prior: &SeasonalPriorSpec,
) -> Result<f64> {
    let n_days = data.n_days();
    if latent.x.len() != n_days || latent.y.len() != n_days || vars.nu.len() != n_days {
        return Err(Error::LengthMismatch(
            "latent/variance state does not match the dataset's day count".into(),
        ));
    }
    if coeffs.harmonics() != prior.harmonics() || coeffs.beta2.len() != coeffs.beta3.len() {
        return Err(Error::LengthMismatch("coefficient and prior harmonics differ".into()));
    }
    let (lo, hi) = prior.a_bounds;
    if !(coeffs.a > lo && coeffs.a < hi) || !vars.is_valid() {
        return Ok(f64::NEG_INFINITY);
    }

    let beta = coeffs.beta_vector();
    let mut total = 0.0;
    for (d, day) in data.days.iter().enumerate() {
        if latent.y[d].len() != day.n() {
            return Err(Error::LengthMismatch(format!("day {d} sounding count differs")));
        }
        let nu = vars.nu[d];
        let x = latent.x[d];
        for (s, y) in day.soundings.iter().zip(&latent.y[d]) {
            total += normal_log_pdf(s.sif, *y, s.retrieval_variance);
            total += normal_log_pdf(*y, x, nu);
        }
        let mu = coeffs.a + dot(&fourier_basis(day.t, coeffs.harmonics())?, &beta);
        total += normal_log_pdf(x, mu, vars.delta);
    }

    for (b, (m, s)) in beta
        .iter()
        .zip(prior.mean_vector().iter().zip(prior.variance_vector()))
    {
        total += normal_log_pdf(*b, *m, s);
    }
    total -= (hi - lo).ln();
    let rate = prior.precision_rate;
    for nu in vars.nu.iter().chain(std::iter::once(&vars.delta)) {
        total += rate.ln() - rate / nu;
    }
    Ok(total)
}

/// One design day for the forward simulator.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignDay {
    pub t: f64,
    /// Retrieval variances; one sounding is simulated per entry.
    pub tau: Vec<f64>,
}

/// Where and when simulated soundings are placed.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationDesign {
    pub cell: CellId,
    pub year: i32,
    pub land_cover: u8,
    pub days: Vec<DesignDay>,
}

impl SimulationDesign {
    pub fn new(days: Vec<DesignDay>) -> Self {
        Self {
            cell: CellId {
                lat_index: 130,
                lon_index: 90,
            },
            year: 2019,
            land_cover: 12,
            days,
        }
    }
}

/// Epoch seconds of January 1st, 00:00 UTC.
pub fn year_start_epoch(year: i32) -> i64 {
    NaiveDate::from_ymd_opt(year, 1, 1)
        .expect("valid year")
        .and_hms_opt(0, 0, 0)
        .expect("midnight")
        .and_utc()
        .timestamp()
}

/// Run the model forward: `X_t = μ_t + d_t`, `Y_it = X_t + r_it`, `Z_it = Y_it + m_it`.
///
/// Soundings are placed at the cell center at time `t` days into the year.
/// Deterministic given `seed`.
pub fn simulate_cell_year(
    coeffs: &SeasonalCoefficients,
    vars: &VarianceState,
    design: &SimulationDesign,
    seed: u64,
) -> Result<(CellYearDataset, LatentState)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with_rng(coeffs, vars, design, &mut rng)
}

pub(crate) fn simulate_with_rng<R: rand::Rng + ?Sized>(
    coeffs: &SeasonalCoefficients,
    vars: &VarianceState,
    design: &SimulationDesign,
    rng: &mut R,
) -> Result<(CellYearDataset, LatentState)> {
    if design.days.is_empty() {
        return Err(Error::InvalidArgument("simulation design has no days".into()));
    }
    if vars.nu.len() != design.days.len() {
        return Err(Error::LengthMismatch("one nu per design day required".into()));
    }
    if design.days.iter().any(|d| d.tau.is_empty() || d.tau.iter().any(|t| !(*t > 0.0))) {
        return Err(Error::InvalidArgument(
            "every design day needs at least one positive retrieval variance".into(),
        ));
    }
    let (lat, lon) = design.cell.center();
    let start = year_start_epoch(design.year) as f64;

    let mut days = Vec::with_capacity(design.days.len());
    let mut latent = LatentState {
        x: Vec::with_capacity(design.days.len()),
        y: Vec::with_capacity(design.days.len()),
    };
    for (d, day) in design.days.iter().enumerate() {
        let mu = seasonal_mean(coeffs, day.t)?;
        let x = NormalParams::new(mu, vars.delta).sample(rng);
        let mut ys = Vec::with_capacity(day.tau.len());
        let mut soundings = Vec::with_capacity(day.tau.len());
        for &tau in &day.tau {
            let y = NormalParams::new(x, vars.nu[d]).sample(rng);
            let z = NormalParams::new(y, tau).sample(rng);
            let mut record =
                SoundingRecord::new(lat, lon, start + day.t * SECONDS_PER_DAY, z, tau, QualityFlag::Best)?;
            // Keep the design's day value exactly rather than its epoch round trip.
            record.day_of_year = day.t;
            soundings.push(record);
            ys.push(y);
        }
        latent.x.push(x);
        latent.y.push(ys);
        let date = soundings[0].utc_date();
        days.push(OverpassDay {
            date,
            t: day.t,
            soundings,
        });
    }
    let dataset = CellYearDataset::new(design.cell, design.year, days, design.land_cover)?;
    Ok((dataset, latent))
}
