//! From raw sounding tables to modeling-ready cell-years.
//!
//! Every stage is a pure selection or partition: retained records are never
//! modified, and every dropped record is counted.

pub mod grid;
pub mod io;

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

pub use grid::{BiomeMap, ClassGrid, LandCoverMap};
pub use io::{read_coincident_times, read_soundings, write_soundings, CoincidentTimes, SoundingLoad};

use crate::error::{Error, Result};
use crate::model::{CellId, CellYearDataset, OverpassDay, QualityFlag, SoundingRecord};

/// Keep Best (0) and Good (1) retrievals, in input order.
pub fn filter_quality(records: Vec<SoundingRecord>) -> Vec<SoundingRecord> {
    records
        .into_iter()
        .filter(|r| matches!(r.quality_flag, QualityFlag::Best | QualityFlag::Good))
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OceanMaskOutcome {
    pub kept: Vec<SoundingRecord>,
    pub water_dropped: usize,
    pub out_of_bounds: usize,
}

/// Drop records over Water Bodies pixels of the fine land-cover map.
pub fn mask_ocean(records: Vec<SoundingRecord>, map: &LandCoverMap) -> OceanMaskOutcome {
    let mut out = OceanMaskOutcome::default();
    for r in records {
        match map.grid().code_at(r.latitude, r.longitude) {
            None => out.out_of_bounds += 1,
            Some(grid::WATER) => out.water_dropped += 1,
            Some(_) => out.kept.push(r),
        }
    }
    out
}

/// Mode of the non-water classes within each 1° cell; all-water cells stay
/// water. Ties go to the lowest class code.
pub fn upscale_landcover(map: &LandCoverMap) -> Result<LandCoverMap> {
    let g = map.grid();
    let ppd = g.pixels_per_degree() as usize;
    let (rows, cols) = g.dims();
    if rows % ppd != 0 || cols % ppd != 0 {
        return Err(Error::InvalidArgument(
            "land-cover grid does not tile whole degrees".into(),
        ));
    }
    let (out_rows, out_cols) = (rows / ppd, cols / ppd);
    let mut codes = vec![grid::WATER; out_rows * out_cols];
    for cr in 0..out_rows {
        for cc in 0..out_cols {
            let mut counts = [0u32; 256];
            for r in cr * ppd..(cr + 1) * ppd {
                for c in cc * ppd..(cc + 1) * ppd {
                    counts[g.get(r, c) as usize] += 1;
                }
            }
            counts[grid::WATER as usize] = 0;
            let mut best = (0u32, grid::WATER);
            for (code, &n) in counts.iter().enumerate() {
                // Strict comparison keeps the lowest code on ties.
                if n > best.0 {
                    best = (n, code as u8);
                }
            }
            codes[cr * out_cols + cc] = best.1;
        }
    }
    let (olat, olon) = g.origin();
    LandCoverMap::new(ClassGrid::new(1, olat, olon, out_rows, out_cols, codes)?)
}

/// Which 1° cells are modeled, and their land cover.
#[derive(Clone, Debug, PartialEq)]
pub struct CellMask {
    included: Vec<bool>,
    land_cover: Vec<u8>,
    /// Modeled cells whose class is Unclassified (255).
    pub unclassified_cells: usize,
}

impl CellMask {
    fn slot(cell: CellId) -> usize {
        cell.lat_index as usize * CellId::N_LON as usize + cell.lon_index as usize
    }

    pub fn is_included(&self, cell: CellId) -> bool {
        self.included[Self::slot(cell)]
    }

    pub fn land_cover(&self, cell: CellId) -> Option<u8> {
        let code = self.land_cover[Self::slot(cell)];
        (code != 0).then_some(code)
    }

    pub fn included_cells(&self) -> impl Iterator<Item = CellId> + '_ {
        self.included.iter().enumerate().filter(|(_, inc)| **inc).map(|(i, _)| CellId {
            lat_index: (i / CellId::N_LON as usize) as u16,
            lon_index: (i % CellId::N_LON as usize) as u16,
        })
    }
}

/// Exclude Permanent Snow and Ice (15), Barren (16) and Water Bodies (17).
/// Cells outside the map are excluded too.
pub fn exclude_cells(map: &LandCoverMap) -> Result<CellMask> {
    let g = map.grid();
    if g.pixels_per_degree() != 1 {
        return Err(Error::InvalidArgument("cell exclusion needs the 1 degree map".into()));
    }
    let n = CellId::N_LAT as usize * CellId::N_LON as usize;
    let mut mask = CellMask {
        included: vec![false; n],
        land_cover: vec![0; n],
        unclassified_cells: 0,
    };
    let (rows, cols) = g.dims();
    for r in 0..rows {
        for c in 0..cols {
            let cell = g.cell_of_pixel(r, c);
            let code = g.get(r, c);
            let slot = CellMask::slot(cell);
            mask.land_cover[slot] = code;
            mask.included[slot] = !matches!(code, grid::SNOW_ICE | grid::BARREN | grid::WATER);
            if code == grid::UNCLASSIFIED {
                mask.unclassified_cells += 1;
            }
        }
    }
    Ok(mask)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupOutcome {
    /// Sorted by cell (lat-major).
    pub datasets: Vec<CellYearDataset>,
    pub masked_cell_dropped: usize,
    pub other_year_dropped: usize,
    pub outside_grid: usize,
}

/// Partition records by containing 1° cell and UTC calendar day.
pub fn group_cell_year(records: Vec<SoundingRecord>, mask: &CellMask, year: i32) -> Result<GroupOutcome> {
    let mut out = GroupOutcome::default();
    let mut cells: BTreeMap<CellId, BTreeMap<NaiveDate, Vec<SoundingRecord>>> = BTreeMap::new();
    for r in records {
        let Some(cell) = CellId::containing(r.latitude, r.longitude) else {
            out.outside_grid += 1;
            continue;
        };
        if !mask.is_included(cell) {
            out.masked_cell_dropped += 1;
            continue;
        }
        let date = r.utc_date();
        if date.year() != year {
            out.other_year_dropped += 1;
            continue;
        }
        cells.entry(cell).or_default().entry(date).or_default().push(r);
    }
    for (cell, by_date) in cells {
        let days = by_date
            .into_values()
            .map(OverpassDay::new)
            .collect::<Result<Vec<_>>>()?;
        let land_cover = mask.land_cover(cell).expect("included cells carry a class");
        out.datasets.push(CellYearDataset::new(cell, year, days, land_cover)?);
    }
    Ok(out)
}

/// Product time of an overpass day: the coincident time when supplied,
/// otherwise the mean sounding time rounded half-up to whole seconds.
pub fn aggregate_time(day: &OverpassDay, coincident_time: Option<i64>) -> i64 {
    if let Some(t) = coincident_time {
        return t;
    }
    let base = day.soundings[0].time.floor();
    let offset: f64 =
        day.soundings.iter().map(|s| s.time - base).sum::<f64>() / day.soundings.len() as f64;
    base as i64 + (offset + 0.5).floor() as i64
}

/// Counters for every record that does not reach a cell-year.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounters {
    pub invalid_rows: usize,
    pub quality: usize,
    pub water: usize,
    pub outside_land_map: usize,
    pub masked_cell: usize,
    pub other_year: usize,
    pub outside_grid: usize,
}

impl RejectionCounters {
    pub fn total(&self) -> usize {
        self.invalid_rows
            + self.quality
            + self.water
            + self.outside_land_map
            + self.masked_cell
            + self.other_year
            + self.outside_grid
    }
}

/// Quality filter, ocean mask and grouping in one pass, with counters.
pub fn prepare_cell_years(
    records: Vec<SoundingRecord>,
    fine_map: &LandCoverMap,
    mask: &CellMask,
    year: i32,
) -> Result<(Vec<CellYearDataset>, RejectionCounters)> {
    let mut counters = RejectionCounters::default();
    let n_in = records.len();
    let filtered = filter_quality(records);
    counters.quality = n_in - filtered.len();
    let masked = mask_ocean(filtered, fine_map);
    counters.water = masked.water_dropped;
    counters.outside_land_map = masked.out_of_bounds;
    let grouped = group_cell_year(masked.kept, mask, year)?;
    counters.masked_cell = grouped.masked_cell_dropped;
    counters.other_year = grouped.other_year_dropped;
    counters.outside_grid = grouped.outside_grid;
    Ok((grouped.datasets, counters))
}
