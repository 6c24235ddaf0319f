//! Informative seasonal priors from dense SIF records.
//!
//! The hierarchical model is fit to a temporally dense dataset with Unif(-1, 1)
//! priors on every β coefficient; the posterior mean and variance of each
//! coefficient become the (b, s) hyperparameters of the sparse-data fits.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::Datelike;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{sample_posterior, ModelPrior, Observations, SampleOptions, SamplerConfig};
use crate::model::{
    beta_names, CellId, OverpassDay, SeasonalPriorSpec, SoundingRecord, DEFAULT_HARMONICS,
};
use crate::product::{format_float, parse_float};
use crate::stats::{mean, sample_variance};

/// Dense retrievals for one cell, possibly spanning several years.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseCellDataset {
    pub cell: CellId,
    pub records: Vec<SoundingRecord>,
    pub source: String,
}

impl DenseCellDataset {
    pub fn new(cell: CellId, records: Vec<SoundingRecord>, source: impl Into<String>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument(format!("no dense records for cell {cell}")));
        }
        if let Some(r) = records.iter().find(|r| !cell.contains(r.latitude, r.longitude)) {
            return Err(Error::InvalidArgument(format!(
                "dense record at ({}, {}) outside cell {cell}",
                r.latitude, r.longitude
            )));
        }
        Ok(Self {
            cell,
            records,
            source: source.into(),
        })
    }

    /// Overpass days keyed by UTC date, with years pooled on the
    /// day-of-year axis and sorted by day value.
    pub fn pooled_days(&self) -> Result<Vec<OverpassDay>> {
        let mut by_date: BTreeMap<chrono::NaiveDate, Vec<SoundingRecord>> = BTreeMap::new();
        for r in &self.records {
            by_date.entry(r.utc_date()).or_default().push(r.clone());
        }
        let mut days = by_date
            .into_values()
            .map(OverpassDay::new)
            .collect::<Result<Vec<_>>>()?;
        days.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.date.cmp(&b.date)));
        Ok(days)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorFlag {
    Ok,
    /// Posterior mass of some coefficient piles up at the ±1 bounds.
    BoundaryPileup,
    /// No usable dense data; the global default prior was used.
    GlobalDefault,
}

impl PriorFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            PriorFlag::Ok => "ok",
            PriorFlag::BoundaryPileup => "boundary_pileup",
            PriorFlag::GlobalDefault => "global_default",
        }
    }
}

impl std::str::FromStr for PriorFlag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(PriorFlag::Ok),
            "boundary_pileup" => Ok(PriorFlag::BoundaryPileup),
            "global_default" => Ok(PriorFlag::GlobalDefault),
            other => Err(Error::InvalidRecord(format!("unknown prior flag {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseFitOptions {
    pub harmonics: usize,
    /// Fewest distinct days accepted.
    pub min_days: usize,
    pub bounds: (f64, f64),
    /// Draws within this distance of a bound count toward pileup.
    pub pileup_margin: f64,
    /// Fraction of draws near a bound that raises the pileup flag.
    pub pileup_fraction: f64,
}

impl Default for DenseFitOptions {
    fn default() -> Self {
        Self {
            harmonics: DEFAULT_HARMONICS,
            min_days: 60,
            bounds: (-1.0, 1.0),
            pileup_margin: 0.01,
            pileup_fraction: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorFit {
    pub spec: SeasonalPriorSpec,
    pub flag: PriorFlag,
    /// Names of coefficients whose draws pile up at a bound.
    pub boundary_coefficients: Vec<String>,
}

/// Fit with the default options (K = 2, 60-day floor).
pub fn fit_seasonal_prior(data: &DenseCellDataset, config: &SamplerConfig) -> Result<PriorFit> {
    fit_seasonal_prior_with(data, config, &DenseFitOptions::default())
}

pub fn fit_seasonal_prior_with(
    data: &DenseCellDataset,
    config: &SamplerConfig,
    options: &DenseFitOptions,
) -> Result<PriorFit> {
    let days = data.pooled_days()?;
    if days.len() < options.min_days {
        return Err(Error::InsufficientDays {
            got: days.len(),
            floor: options.min_days,
        });
    }
    let obs = Observations::new(
        days.iter()
            .map(|d| {
                (
                    d.t,
                    d.soundings.iter().map(|s| s.sif).collect(),
                    d.soundings.iter().map(|s| s.retrieval_variance).collect(),
                )
            })
            .collect(),
        options.harmonics,
    )?;
    let (lower, upper) = options.bounds;
    let prior = ModelPrior::flat(options.harmonics, lower, upper);
    let sample_options = SampleOptions {
        keep_latent: false,
        ..SampleOptions::default()
    };
    let draws = sample_posterior(&obs, &prior, config, data.cell, &sample_options)?;

    let names = beta_names(options.harmonics);
    let mut b = Vec::with_capacity(names.len());
    let mut s = Vec::with_capacity(names.len());
    let mut boundary_coefficients = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let pooled = draws.pooled(|c| &c.beta[j]);
        b.push(mean(&pooled).clamp(lower, upper));
        s.push(sample_variance(&pooled).max(f64::MIN_POSITIVE));
        let near = pooled
            .iter()
            .filter(|v| **v - lower < options.pileup_margin || upper - **v < options.pileup_margin)
            .count();
        if near as f64 > options.pileup_fraction * pooled.len() as f64 {
            boundary_coefficients.push(name.clone());
        }
    }
    let flag = if boundary_coefficients.is_empty() {
        PriorFlag::Ok
    } else {
        PriorFlag::BoundaryPileup
    };
    Ok(PriorFit {
        spec: SeasonalPriorSpec::from_vectors(&b, &s),
        flag,
        boundary_coefficients,
    })
}

/// One row of the prior table.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorEntry {
    pub spec: SeasonalPriorSpec,
    pub flag: PriorFlag,
}

pub type PriorTable = BTreeMap<CellId, PriorEntry>;

/// Prior for `cell`, falling back to the global default (flagged).
pub fn prior_for(table: &PriorTable, cell: CellId, harmonics: usize) -> PriorEntry {
    table.get(&cell).cloned().unwrap_or_else(|| PriorEntry {
        spec: SeasonalPriorSpec::global_default(harmonics),
        flag: PriorFlag::GlobalDefault,
    })
}

fn prior_table_header(harmonics: usize) -> Vec<String> {
    let mut cols = vec!["cell_lat_index".to_string(), "cell_lon_index".to_string()];
    cols.extend(["b0", "s0", "b1", "s1"].map(String::from));
    for k in 1..=harmonics {
        cols.extend([
            format!("b2_{k}"),
            format!("s2_{k}"),
            format!("b3_{k}"),
            format!("s3_{k}"),
        ]);
    }
    cols.push("flag".into());
    cols
}

/// Write the table in lat-major cell order. Refuses to replace an existing
/// file unless `overwrite` is set.
pub fn export_prior_table(table: &PriorTable, path: &Path, overwrite: bool) -> Result<()> {
    let harmonics = table
        .values()
        .next()
        .ok_or_else(|| Error::InvalidArgument("empty prior table".into()))?
        .spec
        .harmonics();
    if table.values().any(|e| e.spec.harmonics() != harmonics) {
        return Err(Error::InvalidArgument("mixed harmonic counts in prior table".into()));
    }
    if path.exists() && !overwrite {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    let mut out = String::new();
    out.push_str(&prior_table_header(harmonics).join(","));
    out.push('\n');
    for (cell, entry) in table {
        let sp = &entry.spec;
        let mut row = vec![cell.lat_index.to_string(), cell.lon_index.to_string()];
        for v in [sp.b0, sp.s0, sp.b1, sp.s1] {
            row.push(format_float(v));
        }
        for k in 0..harmonics {
            for v in [sp.b2[k], sp.s2[k], sp.b3[k], sp.s3[k]] {
                row.push(format_float(v));
            }
        }
        row.push(entry.flag.as_str().into());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_prior_table(path: &Path) -> Result<PriorTable> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
    if header.len() < 7 || !(header.len() - 7).is_multiple_of(4) {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("unexpected prior table header {header:?}"),
        });
    }
    let harmonics = (header.len() - 7) / 4;
    if header != prior_table_header(harmonics) {
        return Err(Error::Corrupt {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("unexpected prior table header {header:?}"),
        });
    }
    let mut table = PriorTable::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |message: String| Error::RowInvariant {
            path: path.to_path_buf(),
            row,
            message,
        };
        let index = |i: usize| -> Result<u16> {
            rec[i].parse().map_err(|e| bad(format!("column {}: {e}", header[i])))
        };
        let cell = CellId::new(index(0)?, index(1)?)?;
        let values = (2..header.len() - 1)
            .map(|i| parse_float(&rec[i]).ok_or_else(|| bad(format!("column {}: not a number", header[i]))))
            .collect::<Result<Vec<f64>>>()?;
        // Row layout: b0 s0 b1 s1 then (b2 s2 b3 s3) per harmonic.
        let mut mean = vec![values[0], values[2]];
        let mut var = vec![values[1], values[3]];
        for k in 0..harmonics {
            let o = 4 + 4 * k;
            mean.extend([values[o], values[o + 2]]);
            var.extend([values[o + 1], values[o + 3]]);
        }
        let spec = SeasonalPriorSpec::from_vectors(&mean, &var);
        spec.validate().map_err(|e| bad(e.to_string()))?;
        let flag = rec[header.len() - 1].parse()?;
        if table.insert(cell, PriorEntry { spec, flag }).is_some() {
            return Err(bad(format!("duplicate cell {cell}")));
        }
    }
    Ok(table)
}

/// Calendar years covered by a dense dataset, for reporting.
pub fn years_spanned(data: &DenseCellDataset) -> Vec<i32> {
    let mut years: Vec<i32> = data.records.iter().map(|r| r.utc_date().year()).collect();
    years.sort_unstable();
    years.dedup();
    years
}
