//! Monthly and biome-level aggregations of a product, emitted as tables.
//!
//! Daily records are first reduced to cell-months: the mean of `sif_740nm`
//! and the root-mean-square of `sif_uncertainty`. Biome-months then collect
//! the cell-month values of every cell assigned to the biome.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::BiomeMap;
use crate::model::CellId;
use crate::product::{format_float, write_atomic, GriddedProductRecord};
use crate::stats::quantile_sorted;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hemisphere {
    North,
    South,
}

impl Hemisphere {
    /// Cells with center latitude ≥ 0 are northern.
    pub fn of_cell(cell: CellId) -> Self {
        if cell.center().0 >= 0.0 {
            Hemisphere::North
        } else {
            Hemisphere::South
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Hemisphere::North => "north",
            Hemisphere::South => "south",
        }
    }
}

impl std::str::FromStr for Hemisphere {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "north" => Ok(Hemisphere::North),
            "south" => Ok(Hemisphere::South),
            other => Err(Error::InvalidArgument(format!("unknown hemisphere {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellMonth {
    pub mean: f64,
    pub rms_uncertainty: f64,
    pub n_days: usize,
}

/// Cell-month reductions keyed by (cell, month). Records outside the grid
/// are ignored.
pub fn cell_months(records: &[GriddedProductRecord]) -> BTreeMap<(CellId, u32), CellMonth> {
    let mut acc: BTreeMap<(CellId, u32), Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        if let Some(cell) = r.cell() {
            acc.entry((cell, r.sif_date.month))
                .or_default()
                .push((r.sif_740nm, r.sif_uncertainty));
        }
    }
    acc.into_iter()
        .map(|(key, mut v)| {
            // Sorted so the floating-point sums do not depend on record order.
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let n = v.len() as f64;
            let mean = v.iter().map(|p| p.0).sum::<f64>() / n;
            let rms = (v.iter().map(|p| p.1 * p.1).sum::<f64>() / n).sqrt();
            (
                key,
                CellMonth {
                    mean,
                    rms_uncertainty: rms,
                    n_days: v.len(),
                },
            )
        })
        .collect()
}

/// Box-plot statistics with 1.5 IQR whiskers clipped to the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
}

impl BoxStats {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q1 = quantile_sorted(&v, 0.25);
        let q3 = quantile_sorted(&v, 0.75);
        let iqr = q3 - q1;
        let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        Some(Self {
            n: v.len(),
            min: v[0],
            q1,
            median: quantile_sorted(&v, 0.5),
            q3,
            max: v[v.len() - 1],
            whisker_low: *v.iter().find(|x| **x >= lo).unwrap_or(&v[0]),
            whisker_high: *v.iter().rev().find(|x| **x <= hi).unwrap_or(&v[v.len() - 1]),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiomeMonthDistribution {
    pub biome: u8,
    pub month: u32,
    pub hemisphere: Hemisphere,
    /// Cell-month means in cell order.
    pub values: Vec<(CellId, f64)>,
    pub stats: BoxStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregated<T> {
    pub rows: Vec<T>,
    /// Cell-months skipped because their cell has no biome.
    pub unassigned_cell_months: usize,
}

fn biome_groups(
    records: &[GriddedProductRecord],
    biomes: &BiomeMap,
    hemisphere: Hemisphere,
) -> (BTreeMap<(u8, u32), Vec<(CellId, CellMonth)>>, usize) {
    let mut groups: BTreeMap<(u8, u32), Vec<(CellId, CellMonth)>> = BTreeMap::new();
    let mut unassigned = 0;
    for ((cell, month), cm) in cell_months(records) {
        if Hemisphere::of_cell(cell) != hemisphere {
            continue;
        }
        match biomes.biome(cell) {
            Some(b) => groups.entry((b, month)).or_default().push((cell, cm)),
            None => unassigned += 1,
        }
    }
    (groups, unassigned)
}

/// Distribution of cell-month mean SIF per (biome, month) in one hemisphere.
pub fn monthly_biome_aggregate(
    records: &[GriddedProductRecord],
    biomes: &BiomeMap,
    hemisphere: Hemisphere,
) -> Aggregated<BiomeMonthDistribution> {
    let (groups, unassigned) = biome_groups(records, biomes, hemisphere);
    let rows = groups
        .into_iter()
        .map(|((biome, month), cells)| {
            let values: Vec<(CellId, f64)> = cells.iter().map(|(c, cm)| (*c, cm.mean)).collect();
            let plain: Vec<f64> = values.iter().map(|v| v.1).collect();
            BiomeMonthDistribution {
                biome,
                month,
                hemisphere,
                stats: BoxStats::from_values(&plain).expect("groups are non-empty"),
                values,
            }
        })
        .collect();
    Aggregated {
        rows,
        unassigned_cell_months: unassigned,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RibbonRow {
    pub biome: u8,
    pub month: u32,
    pub hemisphere: Hemisphere,
    pub n_cells: usize,
    pub mean: f64,
    /// RMS over cells of the cell-month RMS uncertainties.
    pub uncertainty: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Biome-month mean SIF with a ±1 aggregated-uncertainty band.
pub fn mean_uncertainty_series(
    records: &[GriddedProductRecord],
    biomes: &BiomeMap,
    hemisphere: Hemisphere,
) -> Aggregated<RibbonRow> {
    let (groups, unassigned) = biome_groups(records, biomes, hemisphere);
    let rows = groups
        .into_iter()
        .map(|((biome, month), cells)| {
            let n = cells.len() as f64;
            let mean = cells.iter().map(|(_, cm)| cm.mean).sum::<f64>() / n;
            let uncertainty = (cells.iter().map(|(_, cm)| cm.rms_uncertainty.powi(2)).sum::<f64>() / n).sqrt();
            RibbonRow {
                biome,
                month,
                hemisphere,
                n_cells: cells.len(),
                mean,
                uncertainty,
                lower: mean - uncertainty,
                upper: mean + uncertainty,
            }
        })
        .collect();
    Aggregated {
        rows,
        unassigned_cell_months: unassigned,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapCell {
    pub cell: CellId,
    pub latitude: f64,
    pub longitude: f64,
    pub mean: f64,
    pub n_days: usize,
}

/// Monthly mean SIF per cell, in cell order. Cells without data are absent.
pub fn monthly_global_map(records: &[GriddedProductRecord], month: u32) -> Result<Vec<MapCell>> {
    if !(1..=12).contains(&month) {
        return Err(Error::InvalidArgument(format!("month {month} not in 1..12")));
    }
    let cells: Vec<MapCell> = cell_months(records)
        .into_iter()
        .filter(|((_, m), _)| *m == month)
        .map(|((cell, _), cm)| {
            let (latitude, longitude) = cell.center();
            MapCell {
                cell,
                latitude,
                longitude,
                mean: cm.mean,
                n_days: cm.n_days,
            }
        })
        .collect();
    if cells.is_empty() {
        log::warn!("no product records in month {month}; map is empty");
    }
    Ok(cells)
}

pub fn write_box_table(rows: &[BiomeMonthDistribution], path: &Path) -> Result<()> {
    let mut out = String::from(
        "biome,month,hemisphere,n_cells,min,q1,median,q3,max,whisker_low,whisker_high\n",
    );
    for r in rows {
        let s = &r.stats;
        let nums = [s.min, s.q1, s.median, s.q3, s.max, s.whisker_low, s.whisker_high].map(format_float);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.biome,
            r.month,
            r.hemisphere.as_str(),
            s.n,
            nums.join(",")
        ));
    }
    write_atomic(path, out.as_bytes())
}

/// Long-form table with one row per cell-month value, for plotting tools
/// that compute their own box statistics.
pub fn write_distribution_table(rows: &[BiomeMonthDistribution], path: &Path) -> Result<()> {
    let mut out = String::from("biome,month,hemisphere,cell_lat_index,cell_lon_index,sif_740nm_mean\n");
    for r in rows {
        for (cell, v) in &r.values {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.biome,
                r.month,
                r.hemisphere.as_str(),
                cell.lat_index,
                cell.lon_index,
                format_float(*v)
            ));
        }
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_ribbon_table(rows: &[RibbonRow], path: &Path) -> Result<()> {
    let mut out = String::from("biome,month,hemisphere,n_cells,mean,uncertainty,lower,upper\n");
    for r in rows {
        let nums = [r.mean, r.uncertainty, r.lower, r.upper].map(format_float);
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.biome,
            r.month,
            r.hemisphere.as_str(),
            r.n_cells,
            nums.join(",")
        ));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_map_table(cells: &[MapCell], path: &Path) -> Result<()> {
    let mut out = String::from("cell_lat_index,cell_lon_index,latitude,longitude,sif_740nm_mean,n_days\n");
    for c in cells {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            c.cell.lat_index,
            c.cell.lon_index,
            format_float(c.latitude),
            format_float(c.longitude),
            format_float(c.mean),
            c.n_days
        ));
    }
    write_atomic(path, out.as_bytes())
}
