//! The gridded product: one record per cell and overpass day.
//!
//! A product is a comma-separated file whose header names exactly the
//! product variables, plus a JSON sidecar (`<file>.meta.json`) carrying
//! units, run provenance and a digest of the body. Floats are written with
//! 17 significant digits so that a write/read round trip is bitwise exact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, Timelike};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gibbs::PosteriorSummary;
use crate::model::CellId;

pub const PRODUCT_VERSION: &str = "1.0";

const SIF_UNITS: &str = "W m-2 sr-1 um-1";

/// Column names, in file order.
pub const PRODUCT_COLUMNS: [&str; 15] = [
    "sif_740nm",
    "sif_uncertainty",
    "sif_quantile_2.5",
    "sif_quantile_97.5",
    "sif_land_cover",
    "sif_latitude",
    "sif_longitude",
    "sif_time",
    "sif_date_year",
    "sif_date_month",
    "sif_date_day",
    "sif_date_hour",
    "sif_date_minute",
    "sif_date_second",
    "sif_date_ms",
];

/// Product variables with their units and descriptions.
pub const PRODUCT_VARIABLES: [(&str, &str, &str); 9] = [
    ("sif_740nm", SIF_UNITS, "Daily, gridded estimate of SIF at 740 nm (posterior mean of the 1 degree SIF process)"),
    ("sif_uncertainty", SIF_UNITS, "Standard error of the daily, gridded SIF estimate (posterior standard deviation)"),
    ("sif_quantile_2.5", SIF_UNITS, "2.5th posterior quantile of the daily, gridded SIF"),
    ("sif_quantile_97.5", SIF_UNITS, "97.5th posterior quantile of the daily, gridded SIF"),
    ("sif_land_cover", "N/A", "Majority MCD12C1 land cover class of the 1 degree cell"),
    ("sif_latitude", "Degrees North", "Center latitude of the cell"),
    ("sif_longitude", "Degrees East", "Center longitude of the cell"),
    ("sif_time", "Seconds", "Time of the estimate in seconds since 1970-01-01 00:00:00"),
    ("sif_date", "N/A", "Date and time of the estimate as year, month, day, hour, minute, second, milliseconds"),
];

/// Lossless decimal form of a float (17 significant digits).
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_float(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SifDate {
    pub year: i32,
    pub month: u32,
    pub day: u32,
    pub hour: u32,
    pub minute: u32,
    pub second: u32,
    pub ms: u32,
}

impl SifDate {
    pub fn from_epoch(time: i64) -> Result<Self> {
        let dt = DateTime::from_timestamp(time, 0)
            .ok_or_else(|| Error::InvalidRecord(format!("time {time} out of range")))?;
        Ok(Self {
            year: dt.year(),
            month: dt.month(),
            day: dt.day(),
            hour: dt.hour(),
            minute: dt.minute(),
            second: dt.second(),
            ms: dt.timestamp_subsec_millis(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GriddedProductRecord {
    pub sif_740nm: f64,
    pub sif_uncertainty: f64,
    pub sif_quantile_2_5: f64,
    pub sif_quantile_97_5: f64,
    pub sif_land_cover: u8,
    pub sif_latitude: f64,
    pub sif_longitude: f64,
    pub sif_time: i64,
    pub sif_date: SifDate,
}

impl GriddedProductRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let values = [
            self.sif_740nm,
            self.sif_uncertainty,
            self.sif_quantile_2_5,
            self.sif_quantile_97_5,
            self.sif_latitude,
            self.sif_longitude,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err("non-finite value".into());
        }
        if self.sif_quantile_2_5 > self.sif_quantile_97_5 {
            return Err(format!(
                "sif_quantile_2.5 {} exceeds sif_quantile_97.5 {}",
                self.sif_quantile_2_5, self.sif_quantile_97_5
            ));
        }
        if self.sif_uncertainty < 0.0 {
            return Err(format!("negative sif_uncertainty {}", self.sif_uncertainty));
        }
        if !matches!(self.sif_land_cover, 1..=14 | 255) {
            return Err(format!("land cover {} not allowed in the product", self.sif_land_cover));
        }
        if !(-90.0..=90.0).contains(&self.sif_latitude) || !(-180.0..=180.0).contains(&self.sif_longitude) {
            return Err("coordinates outside the globe".into());
        }
        match SifDate::from_epoch(self.sif_time) {
            Ok(d) if d == self.sif_date => Ok(()),
            _ => Err(format!("sif_date disagrees with sif_time {}", self.sif_time)),
        }
    }

    pub fn cell(&self) -> Option<CellId> {
        CellId::containing(self.sif_latitude, self.sif_longitude)
    }

    fn to_row(&self) -> Vec<String> {
        let d = &self.sif_date;
        vec![
            format_float(self.sif_740nm),
            format_float(self.sif_uncertainty),
            format_float(self.sif_quantile_2_5),
            format_float(self.sif_quantile_97_5),
            self.sif_land_cover.to_string(),
            format_float(self.sif_latitude),
            format_float(self.sif_longitude),
            self.sif_time.to_string(),
            d.year.to_string(),
            d.month.to_string(),
            d.day.to_string(),
            d.hour.to_string(),
            d.minute.to_string(),
            d.second.to_string(),
            d.ms.to_string(),
        ]
    }

    fn from_row(fields: &csv::StringRecord) -> std::result::Result<Self, String> {
        let float = |i: usize| {
            parse_float(&fields[i]).ok_or_else(|| format!("{}: not a number: {:?}", PRODUCT_COLUMNS[i], &fields[i]))
        };
        fn int<T: std::str::FromStr>(fields: &csv::StringRecord, i: usize) -> std::result::Result<T, String> {
            fields[i]
                .trim()
                .parse()
                .map_err(|_| format!("{}: not an integer: {:?}", PRODUCT_COLUMNS[i], &fields[i]))
        }
        Ok(Self {
            sif_740nm: float(0)?,
            sif_uncertainty: float(1)?,
            sif_quantile_2_5: float(2)?,
            sif_quantile_97_5: float(3)?,
            sif_land_cover: int(fields, 4)?,
            sif_latitude: float(5)?,
            sif_longitude: float(6)?,
            sif_time: int(fields, 7)?,
            sif_date: SifDate {
                year: int(fields, 8)?,
                month: int(fields, 9)?,
                day: int(fields, 10)?,
                hour: int(fields, 11)?,
                minute: int(fields, 12)?,
                second: int(fields, 13)?,
                ms: int(fields, 14)?,
            },
        })
    }
}

/// One posterior-summary day turned into a product record per day.
pub fn attach_context(
    summary: &PosteriorSummary,
    cell: CellId,
    land_cover: u8,
    times: &[i64],
) -> Result<Vec<GriddedProductRecord>> {
    if summary.days.len() != times.len() {
        return Err(Error::LengthMismatch(format!(
            "{} summary days but {} times",
            summary.days.len(),
            times.len()
        )));
    }
    let (lat, lon) = cell.center();
    summary
        .days
        .iter()
        .zip(times)
        .map(|(day, &time)| {
            Ok(GriddedProductRecord {
                sif_740nm: day.x_mean,
                sif_uncertainty: day.x_sd,
                sif_quantile_2_5: day.x_q2_5,
                sif_quantile_97_5: day.x_q97_5,
                sif_land_cover: land_cover,
                sif_latitude: lat,
                sif_longitude: lon,
                sif_time: time,
                sif_date: SifDate::from_epoch(time)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableInfo {
    pub name: String,
    pub units: String,
    pub description: String,
}

/// Provenance supplied by the writer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductProvenance {
    pub year: i32,
    pub seed: u64,
    pub sampler_config_digest: String,
    pub prior_table_digest: String,
    /// Cells fit with the global default prior, as `lat_lon` indices.
    pub default_prior_cells: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductMetadata {
    pub product_version: String,
    #[serde(flatten)]
    pub provenance: ProductProvenance,
    pub record_count: usize,
    pub body_sha256: String,
    pub variables: Vec<VariableInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Product {
    pub metadata: ProductMetadata,
    pub records: Vec<GriddedProductRecord>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn product_order(a: &GriddedProductRecord, b: &GriddedProductRecord) -> std::cmp::Ordering {
    a.sif_time
        .cmp(&b.sif_time)
        .then(a.sif_latitude.total_cmp(&b.sif_latitude))
        .then(a.sif_longitude.total_cmp(&b.sif_longitude))
}

/// Serialize records sorted by (time, latitude, longitude).
pub fn encode_product(records: &[GriddedProductRecord]) -> Result<String> {
    for (i, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|m| Error::InvalidRecord(format!("record {i}: {m}")))?;
    }
    let mut sorted: Vec<&GriddedProductRecord> = records.iter().collect();
    sorted.sort_by(|a, b| product_order(a, b));
    let mut body = PRODUCT_COLUMNS.join(",");
    body.push('\n');
    for r in sorted {
        body.push_str(&r.to_row().join(","));
        body.push('\n');
    }
    Ok(body)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".partial");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Write one year's product and its sidecar. Output bytes depend only on
/// the record set and the provenance.
pub fn write_product(
    records: &[GriddedProductRecord],
    provenance: &ProductProvenance,
    path: &Path,
    force: bool,
) -> Result<ProductMetadata> {
    if !force && (path.exists() || sidecar_path(path).exists()) {
        return Err(Error::WouldOverwrite(path.to_path_buf()));
    }
    let body = encode_product(records)?;
    let metadata = ProductMetadata {
        product_version: PRODUCT_VERSION.into(),
        provenance: provenance.clone(),
        record_count: records.len(),
        body_sha256: sha256_hex(body.as_bytes()),
        variables: PRODUCT_VARIABLES
            .iter()
            .map(|(name, units, description)| VariableInfo {
                name: (*name).into(),
                units: (*units).into(),
                description: (*description).into(),
            })
            .collect(),
    };
    let mut meta_json = serde_json::to_string_pretty(&metadata)?;
    meta_json.push('\n');
    write_atomic(path, body.as_bytes())?;
    write_atomic(&sidecar_path(path), meta_json.as_bytes())?;
    Ok(metadata)
}

/// Read a product written by [`write_product`], validating every record.
pub fn read_product(path: &Path) -> Result<Product> {
    let meta_path = sidecar_path(path);
    let meta_bytes = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let metadata: ProductMetadata = serde_json::from_slice(&meta_bytes).map_err(|e| Error::Corrupt {
        path: meta_path.clone(),
        offset: 0,
        message: e.to_string(),
    })?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |offset: u64, message: String| Error::Corrupt {
        path: path.to_path_buf(),
        offset,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .has_headers(true)
        .from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| corrupt(0, e.to_string()))?.clone();
    if header.iter().ne(PRODUCT_COLUMNS.iter().copied()) {
        return Err(corrupt(0, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut records = Vec::new();
    let mut fields = csv::StringRecord::new();
    loop {
        let offset = reader.position().byte();
        match reader.read_record(&mut fields) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(corrupt(offset, e.to_string())),
        }
        if fields.len() != PRODUCT_COLUMNS.len() {
            return Err(corrupt(
                offset,
                format!("expected {} fields, found {}", PRODUCT_COLUMNS.len(), fields.len()),
            ));
        }
        let record = GriddedProductRecord::from_row(&fields).map_err(|m| corrupt(offset, m))?;
        record.validate().map_err(|message| Error::RowInvariant {
            path: path.to_path_buf(),
            row: records.len(),
            message,
        })?;
        records.push(record);
    }
    let end = bytes.len() as u64;
    if !bytes.is_empty() && bytes.last() != Some(&b'\n') {
        return Err(corrupt(end, "file does not end with a complete row".into()));
    }
    if records.len() != metadata.record_count {
        return Err(corrupt(
            end,
            format!("found {} records, metadata declares {}", records.len(), metadata.record_count),
        ));
    }
    if sha256_hex(&bytes) != metadata.body_sha256 {
        return Err(corrupt(end, "body digest does not match metadata".into()));
    }
    Ok(Product { metadata, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibbs::DaySummary;

    pub(crate) fn record(time: i64, lat: f64, value: f64) -> GriddedProductRecord {
        GriddedProductRecord {
            sif_740nm: value,
            sif_uncertainty: 0.1,
            sif_quantile_2_5: value - 0.2,
            sif_quantile_97_5: value + 0.2,
            sif_land_cover: 12,
            sif_latitude: lat,
            sif_longitude: -96.5,
            sif_time: time,
            sif_date: SifDate::from_epoch(time).unwrap(),
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let mut recs = vec![
            record(1_561_000_000, 40.5, 0.123_456_789_012_345_67),
            record(1_560_000_000, 41.5, -0.1 / 3.0),
            record(1_560_000_000, 40.5, 1e-300),
        ];
        recs[0].sif_uncertainty = std::f64::consts::E;
        write_product(&recs, &ProductProvenance::default(), &path, false).unwrap();
        let back = read_product(&path).unwrap();
        recs.sort_by(product_order);
        assert_eq!(back.records.len(), 3);
        for (a, b) in back.records.iter().zip(&recs) {
            assert_eq!(a.sif_740nm.to_bits(), b.sif_740nm.to_bits());
            assert_eq!(a.sif_uncertainty.to_bits(), b.sif_uncertainty.to_bits());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn empty_product_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_product(&[], &ProductProvenance::default(), &path, false).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(read_product(&path).unwrap().records.is_empty());
    }

    #[test]
    fn overwrite_requires_force() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_product(&[], &ProductProvenance::default(), &path, false).unwrap();
        assert!(matches!(
            write_product(&[], &ProductProvenance::default(), &path, false),
            Err(Error::WouldOverwrite(_))
        ));
        write_product(&[], &ProductProvenance::default(), &path, true).unwrap();
    }

    #[test]
    fn invalid_records_refused() {
        let mut r = record(1_560_000_000, 40.5, 0.3);
        r.sif_quantile_2_5 = 1.0;
        assert!(encode_product(&[r]).is_err());
        let mut r = record(1_560_000_000, 40.5, 0.3);
        r.sif_land_cover = 16;
        assert!(encode_product(&[r]).is_err());
        let mut r = record(1_560_000_000, 40.5, 0.3);
        r.sif_date.day += 1;
        assert!(encode_product(&[r]).is_err());
    }

    #[test]
    fn truncation_is_an_error_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let recs: Vec<_> = (0..5).map(|i| record(1_560_000_000 + i * 86_400, 40.5, 0.2)).collect();
        write_product(&recs, &ProductProvenance::default(), &path, false).unwrap();
        let bytes = fs::read(&path).unwrap();

        // Mid-row truncation.
        fs::write(&path, &bytes[..bytes.len() - 30]).unwrap();
        match read_product(&path) {
            Err(Error::Corrupt { offset, .. }) => assert!(offset > 0),
            other => panic!("{other:?}"),
        }
        // Truncation on a row boundary.
        let text = String::from_utf8(bytes.clone()).unwrap();
        let cut = text.trim_end().rfind('\n').unwrap() + 1;
        fs::write(&path, &bytes[..cut]).unwrap();
        match read_product(&path) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, cut as u64),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn swapped_quantiles_are_a_row_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let recs: Vec<_> = (0..4).map(|i| record(1_560_000_000 + i * 86_400, 40.5, 0.2)).collect();
        write_product(&recs, &ProductProvenance::default(), &path, false).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut fields: Vec<String> = lines[3].split(',').map(String::from).collect();
        fields.swap(2, 3);
        lines[3] = fields.join(",");
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        match read_product(&path) {
            Err(Error::RowInvariant { row, .. }) => assert_eq!(row, 2),
            other => panic!("{other:?}"),
        }
    }

    fn summary(days: usize) -> PosteriorSummary {
        PosteriorSummary {
            days: (0..days)
                .map(|i| DaySummary {
                    t: 10.0 + i as f64,
                    x_mean: 0.1 * i as f64 + 1.0 / 3.0,
                    x_sd: 0.05,
                    x_q2_5: 0.0,
                    x_q97_5: 2.0,
                    rhat: 1.0,
                    ess: 1000.0,
                })
                .collect(),
            coefficients: vec![],
            n_draws: 100,
            converged: true,
        }
    }

    #[test]
    fn context_copies_values_unchanged() {
        let cell = CellId::new(130, 83).unwrap();
        let s = summary(1);
        let recs = attach_context(&s, cell, 12, &[1_560_000_123]).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].sif_740nm.to_bits(), s.days[0].x_mean.to_bits());
        assert_eq!(recs[0].sif_uncertainty, 0.05);
        assert_eq!((recs[0].sif_latitude, recs[0].sif_longitude), (40.5, -96.5));
        assert_eq!(recs[0].sif_date.second, 3);
        assert!(attach_context(&summary(2), cell, 12, &[1]).is_err());
    }
}
