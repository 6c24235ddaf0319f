//! Classification rasters and their on-disk format.
//!
//! A grid file is a short ASCII header followed by one byte per pixel:
//!
//! ```text
//! CLASSGRID 1
//! resolution 0.05
//! origin_lat -90
//! origin_lon -180
//! rows 3600
//! cols 7200
//! end_header
//! <rows * cols bytes, row-major, row 0 along the southern edge>
//! ```
//!
//! Pixels are half-open: pixel `(r, c)` covers latitudes
//! `[origin_lat + r*res, origin_lat + (r+1)*res)` and likewise for longitude.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::CellId;

const MAGIC: &str = "CLASSGRID 1";

/// Water Bodies in the MCD12C1 classification.
pub const WATER: u8 = 17;
pub const SNOW_ICE: u8 = 15;
pub const BARREN: u8 = 16;
pub const UNCLASSIFIED: u8 = 255;

/// MCD12C1 majority land cover classes.
pub const LAND_COVER_CLASSES: [(u8, &str); 18] = [
    (1, "Evergreen Needleleaf Forests"),
    (2, "Evergreen Broadleaf Forests"),
    (3, "Deciduous Needleleaf Forests"),
    (4, "Deciduous Broadleaf Forests"),
    (5, "Mixed Forests"),
    (6, "Closed Shrublands"),
    (7, "Open Shrublands"),
    (8, "Woody Savannas"),
    (9, "Savannas"),
    (10, "Grasslands"),
    (11, "Permanent Wetlands"),
    (12, "Croplands"),
    (13, "Urban and Built-up Lands"),
    (14, "Cropland/Natural Vegetation Mosaics"),
    (15, "Permanent Snow and Ice"),
    (16, "Barren"),
    (17, "Water Bodies"),
    (255, "Unclassified"),
];

/// RESOLVE Ecoregions 2017 biomes. Code 0 marks a cell without a biome.
pub const BIOMES: [(u8, &str); 15] = [
    (1, "Tropical & Subtropical Moist Broadleaf Forests"),
    (2, "Tropical & Subtropical Dry Broadleaf Forests"),
    (3, "Tropical & Subtropical Coniferous Forests"),
    (4, "Temperate Broadleaf & Mixed Forests"),
    (5, "Temperate Conifer Forests"),
    (6, "Boreal Forests/Taiga"),
    (7, "Tropical & Subtropical Grasslands, Savannas & Shrublands"),
    (8, "Temperate Grasslands, Savannas & Shrublands"),
    (9, "Flooded Grasslands & Savannas"),
    (10, "Montane Grasslands & Shrublands"),
    (11, "Tundra"),
    (12, "Mediterranean Forests, Woodlands & Scrub"),
    (13, "Deserts & Xeric Shrublands"),
    (14, "Cropland/Natural Vegetation Mosaics"),
    (15, "Mangroves"),
];

pub const BIOME_MISSING: u8 = 0;

pub fn land_cover_name(code: u8) -> Option<&'static str> {
    LAND_COVER_CLASSES.iter().find(|(c, _)| *c == code).map(|(_, n)| *n)
}

pub fn biome_name(code: u8) -> Option<&'static str> {
    BIOMES.iter().find(|(c, _)| *c == code).map(|(_, n)| *n)
}

/// A row-major raster of class codes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassGrid {
    /// Pixels per degree; 20 for 0.05°, 1 for 1°.
    pixels_per_degree: u32,
    /// South-west corner in whole degrees.
    origin_lat: i32,
    origin_lon: i32,
    rows: usize,
    cols: usize,
    codes: Vec<u8>,
}

impl ClassGrid {
    pub fn new(
        pixels_per_degree: u32,
        origin_lat: i32,
        origin_lon: i32,
        rows: usize,
        cols: usize,
        codes: Vec<u8>,
    ) -> Result<Self> {
        if pixels_per_degree == 0 {
            return Err(Error::InvalidArgument("resolution must be positive".into()));
        }
        if codes.len() != rows * cols {
            return Err(Error::LengthMismatch(format!(
                "{} codes for a {rows}x{cols} grid",
                codes.len()
            )));
        }
        let ppd = pixels_per_degree as i64;
        let north = origin_lat as i64 * ppd + rows as i64;
        let east = origin_lon as i64 * ppd + cols as i64;
        if origin_lat < -90 || origin_lon < -180 || north > 90 * ppd || east > 180 * ppd {
            return Err(Error::InvalidArgument("grid extends beyond the globe".into()));
        }
        Ok(Self {
            pixels_per_degree,
            origin_lat,
            origin_lon,
            rows,
            cols,
            codes,
        })
    }

    /// Whole-globe grid filled with `code`.
    pub fn global(pixels_per_degree: u32, code: u8) -> Self {
        let rows = 180 * pixels_per_degree as usize;
        let cols = 360 * pixels_per_degree as usize;
        Self::new(pixels_per_degree, -90, -180, rows, cols, vec![code; rows * cols])
            .expect("global grid is well formed")
    }

    pub fn resolution(&self) -> f64 {
        1.0 / f64::from(self.pixels_per_degree)
    }

    pub fn pixels_per_degree(&self) -> u32 {
        self.pixels_per_degree
    }

    pub fn origin(&self) -> (i32, i32) {
        (self.origin_lat, self.origin_lon)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn is_global(&self) -> bool {
        self.origin_lat == -90
            && self.origin_lon == -180
            && self.rows == 180 * self.pixels_per_degree as usize
            && self.cols == 360 * self.pixels_per_degree as usize
    }

    fn axis_index(&self, value: f64, origin: i32, len: usize) -> Option<usize> {
        let v = (value - f64::from(origin)) * f64::from(self.pixels_per_degree);
        // Decimal pixel edges are not exact in binary; snap near-edge values
        // so they land in the pixel that starts at the edge.
        let r = v.round();
        let idx = if (v - r).abs() < 1e-9 { r } else { v.floor() };
        (idx >= 0.0 && idx < len as f64).then_some(idx as usize)
    }

    /// Pixel `(row, col)` containing a coordinate, if inside the grid.
    pub fn pixel_of(&self, latitude: f64, longitude: f64) -> Option<(usize, usize)> {
        let r = self.axis_index(latitude, self.origin_lat, self.rows)?;
        let c = self.axis_index(longitude, self.origin_lon, self.cols)?;
        Some((r, c))
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, code: u8) {
        self.codes[row * self.cols + col] = code;
    }

    pub fn code_at(&self, latitude: f64, longitude: f64) -> Option<u8> {
        self.pixel_of(latitude, longitude).map(|(r, c)| self.get(r, c))
    }

    /// Code of a 1° cell; only meaningful at 1° resolution.
    pub fn cell_code(&self, cell: CellId) -> Option<u8> {
        if self.pixels_per_degree != 1 {
            return None;
        }
        let r = i32::from(cell.lat_index) - 90 - self.origin_lat;
        let c = i32::from(cell.lon_index) - 180 - self.origin_lon;
        (r >= 0 && c >= 0 && (r as usize) < self.rows && (c as usize) < self.cols)
            .then(|| self.get(r as usize, c as usize))
    }

    /// 1° cell of a 1° pixel.
    pub fn cell_of_pixel(&self, row: usize, col: usize) -> CellId {
        debug_assert_eq!(self.pixels_per_degree, 1);
        CellId {
            lat_index: (self.origin_lat + 90 + row as i32) as u16,
            lon_index: (self.origin_lon + 180 + col as i32) as u16,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut bytes = format!(
            "{MAGIC}\nresolution {}\norigin_lat {}\norigin_lon {}\nrows {}\ncols {}\nend_header\n",
            self.resolution(),
            self.origin_lat,
            self.origin_lon,
            self.rows,
            self.cols
        )
        .into_bytes();
        bytes.extend_from_slice(&self.codes);
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let corrupt = |offset: usize, message: String| Error::Corrupt {
            path: path.to_path_buf(),
            offset: offset as u64,
            message,
        };
        let mut pos = 0;
        let next_line = |pos: &mut usize| -> Result<String> {
            let rest = &bytes[*pos..];
            let end = rest
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| corrupt(*pos, "unterminated header line".into()))?;
            let line = std::str::from_utf8(&rest[..end])
                .map_err(|_| corrupt(*pos, "header is not UTF-8".into()))?
                .trim()
                .to_string();
            *pos += end + 1;
            Ok(line)
        };
        if next_line(&mut pos)? != MAGIC {
            return Err(corrupt(0, "missing CLASSGRID magic".into()));
        }
        let (mut res, mut olat, mut olon, mut rows, mut cols) = (None, None, None, None, None);
        loop {
            let at = pos;
            let line = next_line(&mut pos)?;
            if line == "end_header" {
                break;
            }
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| corrupt(at, format!("bad header line {line:?}")))?;
            let value = value.trim();
            let bad = |_| corrupt(at, format!("bad value in {line:?}"));
            match key {
                "resolution" => res = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "origin_lat" => olat = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "origin_lon" => olon = Some(value.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "rows" => rows = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "cols" => cols = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(corrupt(at, format!("unknown header key {key:?}"))),
            }
        }
        let missing = |k: &str| corrupt(pos, format!("header lacks {k}"));
        let res = res.ok_or_else(|| missing("resolution"))?;
        let (olat, olon) = (olat.ok_or_else(|| missing("origin_lat"))?, olon.ok_or_else(|| missing("origin_lon"))?);
        let (rows, cols) = (rows.ok_or_else(|| missing("rows"))?, cols.ok_or_else(|| missing("cols"))?);
        let ppd = (1.0 / res).round();
        if !(ppd >= 1.0 && ((1.0 / ppd) - res).abs() < 1e-12) || olat.fract() != 0.0 || olon.fract() != 0.0 {
            return Err(corrupt(0, "resolution must divide one degree and origin must be whole degrees".into()));
        }
        let body = &bytes[pos..];
        if body.len() != rows * cols {
            return Err(corrupt(
                pos + body.len().min(rows * cols),
                format!("expected {} pixel bytes, found {}", rows * cols, body.len()),
            ));
        }
        Self::new(ppd as u32, olat as i32, olon as i32, rows, cols, body.to_vec())
    }
}

/// MCD12C1 land cover at 0.05° or 1°.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LandCoverMap(pub ClassGrid);

impl LandCoverMap {
    pub fn new(grid: ClassGrid) -> Result<Self> {
        if let Some(bad) = grid.codes().iter().find(|c| !matches!(**c, 1..=17 | 255)) {
            return Err(Error::InvalidArgument(format!("land cover code {bad} not in {{1..17, 255}}")));
        }
        Ok(Self(grid))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::new(ClassGrid::read(path)?)
    }

    pub fn grid(&self) -> &ClassGrid {
        &self.0
    }
}

/// 1° biome map; 0 marks cells without a biome.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiomeMap(pub ClassGrid);

impl BiomeMap {
    pub fn new(grid: ClassGrid) -> Result<Self> {
        if grid.pixels_per_degree() != 1 {
            return Err(Error::InvalidArgument("biome map must be at 1 degree".into()));
        }
        if let Some(bad) = grid.codes().iter().find(|c| **c > 15) {
            return Err(Error::InvalidArgument(format!("biome code {bad} not in 1..15")));
        }
        Ok(Self(grid))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::new(ClassGrid::read(path)?)
    }

    pub fn biome(&self, cell: CellId) -> Option<u8> {
        self.0.cell_code(cell).filter(|c| *c != BIOME_MISSING)
    }
}
