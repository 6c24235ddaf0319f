//! End-to-end runs: ingest, priors, per-cell fits and product writing.
//!
//! Cells are fit on a bounded worker pool. Workers only compute; the
//! coordinator writes every file, in cell order. Each finished cell is
//! stored under `cells/<year>/` before the product is assembled, so an
//! interrupted run can resume without refitting finished cells.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{run_chain, SamplerConfig};
use crate::hyperprior::{
    export_prior_table, fit_seasonal_prior_with, prior_for, read_prior_table, DenseCellDataset,
    DenseFitOptions, PriorEntry, PriorFlag, PriorTable,
};
use crate::ingest::{
    aggregate_time, exclude_cells, filter_quality, mask_ocean, prepare_cell_years,
    read_coincident_times, read_soundings, upscale_landcover, CellMask, CoincidentTimes,
    LandCoverMap, RejectionCounters,
};
use crate::model::{CellId, CellYearDataset, SoundingRecord, DEFAULT_HARMONICS};
use crate::product::{
    attach_context, format_float, sha256_hex, write_atomic, write_product, GriddedProductRecord,
    ProductProvenance,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Sounding table per year; keys are years.
    #[serde(default)]
    pub soundings: BTreeMap<String, PathBuf>,
    /// Dense sounding tables for prior fitting.
    #[serde(default)]
    pub dense: Vec<PathBuf>,
    pub landcover_005: PathBuf,
    /// Precomputed 1° land cover; upscaled from the 0.05° map when absent.
    pub landcover_1deg: Option<PathBuf>,
    pub biome: Option<PathBuf>,
    pub coincident_times: Option<PathBuf>,
    pub prior_table: Option<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub years: Vec<i32>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub resume: bool,
    #[serde(default)]
    pub force: bool,
    #[serde(default = "default_harmonics")]
    pub harmonics: usize,
    /// Minimum distinct days for a dense prior fit.
    #[serde(default = "default_min_dense_days")]
    pub min_dense_days: usize,
    #[serde(default)]
    pub sampler: SamplerConfig,
    /// Sampler settings for dense prior fits; defaults to `sampler`.
    pub prior_sampler: Option<SamplerConfig>,
}

fn default_workers() -> usize {
    1
}

fn default_harmonics() -> usize {
    DEFAULT_HARMONICS
}

fn default_min_dense_days() -> usize {
    DenseFitOptions::default().min_days
}

impl PipelineConfig {
    /// Parse a TOML file. Relative paths resolve against its directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.soundings.values_mut().for_each(fix);
        self.dense.iter_mut().for_each(fix);
        fix(&mut self.landcover_005);
        fix(&mut self.output_dir);
        for p in [
            &mut self.landcover_1deg,
            &mut self.biome,
            &mut self.coincident_times,
            &mut self.prior_table,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Seed actually used by the sampler.
    pub fn effective_sampler(&self) -> SamplerConfig {
        SamplerConfig {
            seed: self.seed,
            ..self.sampler.clone()
        }
    }

    pub fn soundings_for(&self, year: i32) -> Option<&PathBuf> {
        self.soundings.get(&year.to_string())
    }

    fn check_exists(path: &Path) -> Result<()> {
        if path.exists() {
            Ok(())
        } else {
            Err(Error::Config(format!("missing input {}", path.display())))
        }
    }

    /// Pre-flight checks for `run`.
    pub fn validate_run(&self) -> Result<()> {
        self.validate_common()?;
        if self.years.is_empty() {
            return Err(Error::Config("years list is empty".into()));
        }
        for year in &self.years {
            let path = self
                .soundings_for(*year)
                .ok_or_else(|| Error::Config(format!("no sounding table for year {year}")))?;
            Self::check_exists(path)?;
        }
        for key in self.soundings.keys() {
            key.parse::<i32>()
                .map_err(|_| Error::Config(format!("sounding key {key:?} is not a year")))?;
        }
        if let Some(p) = &self.coincident_times {
            Self::check_exists(p)?;
        }
        if let Some(p) = &self.prior_table {
            if !p.exists() && self.dense.is_empty() {
                return Err(Error::Config(format!(
                    "prior table {} missing and no dense data to derive it",
                    p.display()
                )));
            }
        }
        self.sampler.validate()
    }

    /// Pre-flight checks for `fit-prior`.
    pub fn validate_fit_prior(&self) -> Result<()> {
        self.validate_common()?;
        if self.dense.is_empty() {
            return Err(Error::Config("no dense datasets configured".into()));
        }
        self.dense.iter().try_for_each(|p| Self::check_exists(p))?;
        self.prior_sampler.as_ref().unwrap_or(&self.sampler).validate()
    }

    fn validate_common(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.harmonics == 0 {
            return Err(Error::Config("harmonics must be at least 1".into()));
        }
        Self::check_exists(&self.landcover_005)?;
        if let Some(p) = &self.landcover_1deg {
            Self::check_exists(p)?;
        }
        if let Some(p) = &self.biome {
            Self::check_exists(p)?;
        }
        Ok(())
    }

    pub fn product_path(&self, year: i32) -> PathBuf {
        self.output_dir.join(format!("bhm_sif_{year}.csv"))
    }

    fn cell_dir(&self, year: i32) -> PathBuf {
        self.output_dir.join("cells").join(year.to_string())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }
}

/// Land maps derived once per run.
pub struct LandMaps {
    pub fine: LandCoverMap,
    pub coarse: LandCoverMap,
    pub mask: CellMask,
}

pub fn load_land_maps(config: &PipelineConfig) -> Result<LandMaps> {
    let fine = LandCoverMap::read(&config.landcover_005)?;
    let coarse = match &config.landcover_1deg {
        Some(p) => LandCoverMap::read(p)?,
        None => upscale_landcover(&fine)?,
    };
    let mask = exclude_cells(&coarse)?;
    Ok(LandMaps { fine, coarse, mask })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorFitReport {
    pub cells_fit: usize,
    pub boundary_pileup_cells: Vec<String>,
    /// Cells with dense data that could not be fit, with the reason.
    pub skipped_cells: Vec<(String, String)>,
    pub dense_rejections: RejectionCounters,
}

/// Fit per-cell priors from the configured dense datasets.
pub fn fit_prior_table(config: &PipelineConfig, maps: &LandMaps) -> Result<(PriorTable, PriorFitReport)> {
    let mut report = PriorFitReport::default();
    let mut records = Vec::new();
    for path in &config.dense {
        let load = read_soundings(path)?;
        report.dense_rejections.invalid_rows += load.invalid_rows;
        records.extend(load.records);
    }
    let n_in = records.len();
    let filtered = filter_quality(records);
    report.dense_rejections.quality = n_in - filtered.len();
    let masked = mask_ocean(filtered, &maps.fine);
    report.dense_rejections.water = masked.water_dropped;
    report.dense_rejections.outside_land_map = masked.out_of_bounds;

    let mut by_cell: BTreeMap<CellId, Vec<SoundingRecord>> = BTreeMap::new();
    for r in masked.kept {
        match CellId::containing(r.latitude, r.longitude) {
            None => report.dense_rejections.outside_grid += 1,
            Some(c) if !maps.mask.is_included(c) => report.dense_rejections.masked_cell += 1,
            Some(c) => by_cell.entry(c).or_default().push(r),
        }
    }
    let sampler = config.prior_sampler.clone().unwrap_or_else(|| config.effective_sampler());
    let options = DenseFitOptions {
        harmonics: config.harmonics,
        min_days: config.min_dense_days,
        ..DenseFitOptions::default()
    };
    let cells: Vec<(CellId, Vec<SoundingRecord>)> = by_cell.into_iter().collect();
    let fits: Vec<(CellId, Result<_>)> = config.pool()?.install(|| {
        cells
            .into_par_iter()
            .map(|(cell, recs)| {
                let fit = DenseCellDataset::new(cell, recs, "dense")
                    .and_then(|d| fit_seasonal_prior_with(&d, &sampler, &options));
                (cell, fit)
            })
            .collect()
    });
    let mut table = PriorTable::new();
    for (cell, fit) in fits {
        match fit {
            Ok(fit) => {
                if fit.flag == PriorFlag::BoundaryPileup {
                    report.boundary_pileup_cells.push(cell.to_string());
                }
                report.cells_fit += 1;
                table.insert(cell, PriorEntry { spec: fit.spec, flag: fit.flag });
            }
            Err(e) => report.skipped_cells.push((cell.to_string(), e.to_string())),
        }
    }
    Ok((table, report))
}

/// Result of `fit-prior`: table written to `path`.
pub fn run_fit_prior(config: &PipelineConfig, path: &Path) -> Result<PriorFitReport> {
    config.validate_fit_prior()?;
    if path.exists() && !config.force {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    let maps = load_land_maps(config)?;
    let (table, report) = fit_prior_table(config, &maps)?;
    if table.is_empty() {
        return Err(Error::InvalidArgument("no cell had enough dense data for a prior fit".into()));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    export_prior_table(&table, path, config.force)?;
    Ok(report)
}

/// One finished cell-year as stored under `cells/<year>/`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: CellId,
    /// Digest of everything the fit depends on; a stored result is reused
    /// only when it matches.
    pub input_digest: String,
    pub converged: bool,
    pub prior_flag: PriorFlag,
    pub records: Vec<GriddedProductRecord>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFailure {
    pub cell: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct YearReport {
    pub year: i32,
    pub product: PathBuf,
    pub cells_total: usize,
    pub cells_fit: usize,
    pub cells_resumed: usize,
    pub records_written: usize,
    pub non_converged_cells: Vec<String>,
    pub default_prior_cells: Vec<String>,
    pub failed_cells: Vec<CellFailure>,
    pub rejections: RejectionCounters,
    pub input_records: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub workers: usize,
    pub sampler_config_digest: String,
    pub prior_table_digest: String,
    pub unclassified_cells: usize,
    pub prior_fit: Option<PriorFitReport>,
    pub years: Vec<YearReport>,
}

impl RunReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("seed: {}\nworkers: {}\n", self.seed, self.workers));
        s.push_str(&format!("sampler config digest: {}\n", self.sampler_config_digest));
        s.push_str(&format!("prior table digest: {}\n", self.prior_table_digest));
        s.push_str(&format!("unclassified (255) cells modeled: {}\n", self.unclassified_cells));
        if let Some(p) = &self.prior_fit {
            s.push_str(&format!(
                "prior fit: {} cells fit, {} boundary pileup, {} skipped\n",
                p.cells_fit,
                p.boundary_pileup_cells.len(),
                p.skipped_cells.len()
            ));
        }
        for y in &self.years {
            let r = &y.rejections;
            s.push_str(&format!("\nyear {}\n", y.year));
            s.push_str(&format!("  product: {}\n", y.product.display()));
            s.push_str(&format!("  input records: {}\n", y.input_records));
            s.push_str(&format!(
                "  rejected: invalid {}, quality {}, water {}, outside land map {}, excluded cell {}, other year {}, outside grid {}\n",
                r.invalid_rows, r.quality, r.water, r.outside_land_map, r.masked_cell, r.other_year, r.outside_grid
            ));
            s.push_str(&format!(
                "  cells: {} total, {} fit, {} resumed, {} failed\n",
                y.cells_total,
                y.cells_fit,
                y.cells_resumed,
                y.failed_cells.len()
            ));
            s.push_str(&format!("  records written: {}\n", y.records_written));
            s.push_str(&format!("  non-converged cells: {}\n", y.non_converged_cells.len()));
            s.push_str(&format!("  default-prior cells: {}\n", y.default_prior_cells.len()));
            for f in &y.failed_cells {
                s.push_str(&format!("  failed {}: {}\n", f.cell, f.message));
            }
            for w in &y.warnings {
                s.push_str(&format!("  warning: {w}\n"));
            }
        }
        s
    }
}

fn cell_input_digest(ds: &CellYearDataset, prior: &PriorEntry, sampler: &str, times: &[i64]) -> String {
    let mut text = format!("{}|{}|{}|{}\n", ds.cell, ds.year, ds.land_cover, sampler);
    let sp = &prior.spec;
    for v in sp.mean_vector().iter().chain(&sp.variance_vector()) {
        text.push_str(&format_float(*v));
        text.push(',');
    }
    text.push_str(&format!(
        "{}|{}|{}|{}\n",
        format_float(sp.a_bounds.0),
        format_float(sp.a_bounds.1),
        format_float(sp.precision_rate),
        prior.flag.as_str()
    ));
    for (day, time) in ds.days.iter().zip(times) {
        text.push_str(&format!("day {time}\n"));
        for s in &day.soundings {
            for v in [s.latitude, s.longitude, s.time, s.sif, s.retrieval_variance] {
                text.push_str(&format_float(v));
                text.push(',');
            }
            text.push('\n');
        }
    }
    sha256_hex(text.as_bytes())
}

fn cell_path(dir: &Path, cell: CellId) -> PathBuf {
    dir.join(format!("{cell}.json"))
}

fn load_cell_result(path: &Path, digest: &str) -> Option<CellResult> {
    let bytes = fs::read(path).ok()?;
    let stored: CellResult = serde_json::from_slice(&bytes).ok()?;
    let valid = stored.input_digest == digest && stored.records.iter().all(|r| r.validate().is_ok());
    valid.then_some(stored)
}

struct CellTask {
    dataset: CellYearDataset,
    prior: PriorEntry,
    times: Vec<i64>,
    digest: String,
}

fn fit_cell(task: &CellTask, sampler: &SamplerConfig) -> Result<CellResult> {
    let summary = run_chain(&task.dataset, &task.prior.spec, sampler)?;
    let records = attach_context(&summary, task.dataset.cell, task.dataset.land_cover, &task.times)?;
    if let Some((i, msg)) = records
        .iter()
        .enumerate()
        .find_map(|(i, r)| r.validate().err().map(|m| (i, m)))
    {
        return Err(Error::InvalidRecord(format!("day {i}: {msg}")));
    }
    Ok(CellResult {
        cell: task.dataset.cell,
        input_digest: task.digest.clone(),
        converged: summary.converged,
        prior_flag: task.prior.flag,
        records,
    })
}

/// Optional hooks for tests: stop after this many newly fit cells, as if
/// the process had been killed.
#[derive(Clone, Debug, Default)]
pub struct RunControl {
    pub stop_after_new_cells: Option<usize>,
}

/// Run every configured year and write products plus the run report.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    run_pipeline_with(config, &RunControl::default())
}

pub fn run_pipeline_with(config: &PipelineConfig, control: &RunControl) -> Result<RunReport> {
    config.validate_run()?;
    if !config.force && !config.resume {
        for year in &config.years {
            let p = config.product_path(*year);
            if p.exists() {
                return Err(Error::WouldOverwrite(p));
            }
        }
    }
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let maps = load_land_maps(config)?;
    let sampler = config.effective_sampler();
    let sampler_text = sampler.canonical_string();

    let mut report = RunReport {
        seed: config.seed,
        workers: config.workers,
        sampler_config_digest: sha256_hex(sampler_text.as_bytes()),
        unclassified_cells: maps.mask.unclassified_cells,
        ..RunReport::default()
    };

    let table = match &config.prior_table {
        Some(p) if p.exists() => {
            report.prior_table_digest = sha256_hex(&fs::read(p).map_err(|e| Error::io(p, e))?);
            read_prior_table(p)?
        }
        _ if !config.dense.is_empty() => {
            let (table, fit_report) = fit_prior_table(config, &maps)?;
            report.prior_fit = Some(fit_report);
            let path = config
                .prior_table
                .clone()
                .unwrap_or_else(|| config.output_dir.join("prior_table.csv"));
            if !table.is_empty() {
                export_prior_table(&table, &path, true)?;
                report.prior_table_digest = sha256_hex(&fs::read(&path).map_err(|e| Error::io(&path, e))?);
            } else {
                report.prior_table_digest = "none".into();
            }
            table
        }
        _ => {
            report.prior_table_digest = "none".into();
            PriorTable::new()
        }
    };
    let coincident: CoincidentTimes = match &config.coincident_times {
        Some(p) => read_coincident_times(p)?,
        None => CoincidentTimes::new(),
    };

    let pool = config.pool()?;
    let mut new_cells = 0usize;
    for &year in &config.years {
        let year_report = run_year(
            config, control, &maps, &table, &coincident, &sampler, &sampler_text, &report, year,
            &pool, &mut new_cells,
        )?;
        match year_report {
            Some(y) => report.years.push(y),
            None => return Ok(report),
        }
    }
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_atomic(&config.output_dir.join("run_report.json"), json.as_bytes())?;
    write_atomic(&config.output_dir.join("run_report.txt"), report.to_text().as_bytes())?;
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn run_year(
    config: &PipelineConfig,
    control: &RunControl,
    maps: &LandMaps,
    table: &PriorTable,
    coincident: &CoincidentTimes,
    sampler: &SamplerConfig,
    sampler_text: &str,
    run: &RunReport,
    year: i32,
    pool: &rayon::ThreadPool,
    new_cells: &mut usize,
) -> Result<Option<YearReport>> {
    let mut yr = YearReport {
        year,
        product: config.product_path(year),
        ..YearReport::default()
    };
    let load = read_soundings(config.soundings_for(year).expect("validated"))?;
    yr.input_records = load.records.len() + load.invalid_rows;
    let (datasets, mut rejections) = prepare_cell_years(load.records, &maps.fine, &maps.mask, year)?;
    rejections.invalid_rows = load.invalid_rows;
    yr.rejections = rejections;
    yr.cells_total = datasets.len();

    let dir = config.cell_dir(year);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut results: Vec<CellResult> = Vec::with_capacity(datasets.len());
    let mut pending: Vec<CellTask> = Vec::new();
    for dataset in datasets {
        let prior = prior_for(table, dataset.cell, config.harmonics);
        let times: Vec<i64> = dataset
            .days
            .iter()
            .map(|d| aggregate_time(d, coincident.get(&(dataset.cell, d.date)).copied()))
            .collect();
        let digest = cell_input_digest(&dataset, &prior, sampler_text, &times);
        let path = cell_path(&dir, dataset.cell);
        if config.resume {
            if let Some(stored) = load_cell_result(&path, &digest) {
                yr.cells_resumed += 1;
                results.push(stored);
                continue;
            }
        }
        pending.push(CellTask {
            dataset,
            prior,
            times,
            digest,
        });
    }

    let chunk = config.workers.max(1) * 2;
    for tasks in pending.chunks(chunk) {
        let outcomes: Vec<Result<CellResult>> =
            pool.install(|| tasks.par_iter().map(|t| fit_cell(t, sampler)).collect());
        for (task, outcome) in tasks.iter().zip(outcomes) {
            match outcome {
                Ok(result) => {
                    let json = serde_json::to_vec(&result)?;
                    write_atomic(&cell_path(&dir, result.cell), &json)?;
                    yr.cells_fit += 1;
                    results.push(result);
                    *new_cells += 1;
                    if control.stop_after_new_cells.is_some_and(|n| *new_cells >= n) {
                        return Ok(None);
                    }
                }
                Err(e) => {
                    log::warn!("cell {} year {year} failed: {e}", task.dataset.cell);
                    yr.failed_cells.push(CellFailure {
                        cell: task.dataset.cell.to_string(),
                        message: e.to_string(),
                    });
                }
            }
        }
    }

    results.sort_by_key(|r| r.cell);
    let mut records = Vec::new();
    for r in &results {
        if !r.converged {
            yr.non_converged_cells.push(r.cell.to_string());
        }
        if r.prior_flag == PriorFlag::GlobalDefault {
            yr.default_prior_cells.push(r.cell.to_string());
        }
        records.extend(r.records.iter().cloned());
    }
    if records.is_empty() {
        let w = format!("year {year} has no modeled cells; product is header-only");
        log::warn!("{w}");
        yr.warnings.push(w);
    }
    let provenance = ProductProvenance {
        year,
        seed: run.seed,
        sampler_config_digest: run.sampler_config_digest.clone(),
        prior_table_digest: run.prior_table_digest.clone(),
        default_prior_cells: yr.default_prior_cells.clone(),
    };
    let meta = write_product(&records, &provenance, &yr.product, true)?;
    yr.records_written = meta.record_count;
    Ok(Some(yr))
}
