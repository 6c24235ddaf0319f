//! Sounding and coincident-time tables.
//!
//! Soundings: `latitude,longitude,time_epoch_s,sif_740nm,sif_variance,quality_flag`.
//! Coincident times: `cell_lat_index,cell_lon_index,date,time_epoch_s` with
//! `date` as `YYYY-MM-DD`.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{CellId, QualityFlag, SoundingRecord};
use crate::product::{format_float, write_atomic};

pub const SOUNDING_COLUMNS: [&str; 6] = [
    "latitude",
    "longitude",
    "time_epoch_s",
    "sif_740nm",
    "sif_variance",
    "quality_flag",
];

#[derive(Deserialize)]
struct SoundingRow {
    latitude: f64,
    longitude: f64,
    time_epoch_s: f64,
    sif_740nm: f64,
    sif_variance: f64,
    quality_flag: i64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SoundingLoad {
    pub records: Vec<SoundingRecord>,
    /// Rows that failed to parse or violate a record invariant.
    pub invalid_rows: usize,
}

pub fn read_soundings(path: &Path) -> Result<SoundingLoad> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| with_path(e, path))?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for col in SOUNDING_COLUMNS {
        if !header.iter().any(|h| h == col) {
            return Err(Error::Corrupt {
                path: path.to_path_buf(),
                offset: 0,
                message: format!("missing column {col}"),
            });
        }
    }
    let mut load = SoundingLoad::default();
    for row in reader.deserialize::<SoundingRow>() {
        let parsed = row.ok().and_then(|r| {
            let flag = QualityFlag::try_from(r.quality_flag).ok()?;
            SoundingRecord::new(r.latitude, r.longitude, r.time_epoch_s, r.sif_740nm, r.sif_variance, flag).ok()
        });
        match parsed {
            Some(r) => load.records.push(r),
            None => load.invalid_rows += 1,
        }
    }
    Ok(load)
}

/// Lossless writer matching [`read_soundings`].
pub fn write_soundings(records: &[SoundingRecord], path: &Path) -> Result<()> {
    let mut out = SOUNDING_COLUMNS.join(",");
    out.push('\n');
    for r in records {
        let row = [
            format_float(r.latitude),
            format_float(r.longitude),
            format_float(r.time),
            format_float(r.sif),
            format_float(r.retrieval_variance),
            (r.quality_flag as u8).to_string(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

/// Externally supplied product times keyed by cell and UTC date.
pub type CoincidentTimes = BTreeMap<(CellId, NaiveDate), i64>;

#[derive(Deserialize)]
struct CoincidentRow {
    cell_lat_index: u16,
    cell_lon_index: u16,
    date: String,
    time_epoch_s: i64,
}

pub fn read_coincident_times(path: &Path) -> Result<CoincidentTimes> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| with_path(e, path))?;
    let mut out = CoincidentTimes::new();
    for (row, rec) in reader.deserialize::<CoincidentRow>().enumerate() {
        let bad = |message: String| Error::RowInvariant {
            path: path.to_path_buf(),
            row,
            message,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let cell = CellId::new(rec.cell_lat_index, rec.cell_lon_index).map_err(|e| bad(e.to_string()))?;
        let date = NaiveDate::parse_from_str(&rec.date, "%Y-%m-%d").map_err(|e| bad(e.to_string()))?;
        if out.insert((cell, date), rec.time_epoch_s).is_some() {
            return Err(bad(format!("duplicate entry for {cell} on {date}")));
        }
    }
    Ok(out)
}

fn with_path(e: csv::Error, path: &Path) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}
