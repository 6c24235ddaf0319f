use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sif_bhm::analysis::{mean_uncertainty_series, monthly_biome_aggregate, monthly_global_map, Hemisphere};
use sif_bhm::ingest::{BiomeMap, ClassGrid};
use sif_bhm::model::year_start_epoch;
use sif_bhm::product::SifDate;
use sif_bhm::{CellId, GriddedProductRecord};

/// Cells in a band straddling the equator, each observed on random days.
fn records(seed: u64) -> Vec<GriddedProductRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = year_start_epoch(2019);
    let mut out = Vec::new();
    for lat_index in 85..95u16 {
        for lon_index in 0..8u16 {
            let (lat, lon) = CellId::new(lat_index, lon_index).unwrap().center();
            for _ in 0..rng.random_range(5..40) {
                let time = start + rng.random_range(0..365) * 86_400 + 45_000;
                let sif = rng.random_range(-0.2..2.0);
                let sd = rng.random_range(0.01..0.3);
                out.push(GriddedProductRecord {
                    sif_740nm: sif,
                    sif_uncertainty: sd,
                    sif_quantile_2_5: sif - 2.0 * sd,
                    sif_quantile_97_5: sif + 2.0 * sd,
                    sif_land_cover: 12,
                    sif_latitude: lat,
                    sif_longitude: lon,
                    sif_time: time,
                    sif_date: SifDate::from_epoch(time).unwrap(),
                });
            }
        }
    }
    out
}

/// 1° biome grid over the band; column 7 has no biome.
fn biomes() -> BiomeMap {
    let codes: Vec<u8> = (0..10 * 8).map(|i| if i % 8 == 7 { 0 } else { 1 + (i % 8 % 3) as u8 }).collect();
    BiomeMap::new(ClassGrid::new(1, -5, -180, 10, 8, codes).unwrap()).unwrap()
}

fn type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[test]
fn biome_month_groups_match_a_direct_recount() {
    let recs = records(1);
    let map = biomes();
    for hemisphere in [Hemisphere::North, Hemisphere::South] {
        // Oracle: cell-month means and mean squared uncertainty by nested loops.
        let mut per_cell: BTreeMap<(u16, u16, u32), (f64, f64, usize)> = BTreeMap::new();
        for r in &recs {
            let cell = CellId::containing(r.sif_latitude, r.sif_longitude).unwrap();
            let north = r.sif_latitude >= 0.0;
            if north != (hemisphere == Hemisphere::North) {
                continue;
            }
            let e = per_cell.entry((cell.lat_index, cell.lon_index, r.sif_date.month)).or_default();
            e.0 += r.sif_740nm;
            e.1 += r.sif_uncertainty * r.sif_uncertainty;
            e.2 += 1;
        }
        let mut groups: BTreeMap<(u8, u32), Vec<(f64, f64)>> = BTreeMap::new();
        let mut unassigned = 0;
        for ((i, j, month), (s, s2, n)) in per_cell {
            let biome = map.0.cell_code(CellId::new(i, j).unwrap()).unwrap();
            if biome == 0 {
                unassigned += 1;
                continue;
            }
            groups.entry((biome, month)).or_default().push((s / n as f64, (s2 / n as f64).sqrt()));
        }

        let dist = monthly_biome_aggregate(&recs, &map, hemisphere);
        let ribbon = mean_uncertainty_series(&recs, &map, hemisphere);
        assert_eq!(dist.unassigned_cell_months, unassigned);
        assert_eq!(dist.rows.len(), groups.len());
        assert_eq!(ribbon.rows.len(), groups.len());
        for ((row, band), ((biome, month), cells)) in dist.rows.iter().zip(&ribbon.rows).zip(&groups) {
            assert_eq!((row.biome, row.month, row.hemisphere), (*biome, *month, hemisphere));
            let mut means: Vec<f64> = cells.iter().map(|c| c.0).collect();
            means.sort_by(f64::total_cmp);
            let mut got: Vec<f64> = row.values.iter().map(|v| v.1).collect();
            got.sort_by(f64::total_cmp);
            for (g, w) in got.iter().zip(&means) {
                assert!((g - w).abs() < 1e-12);
            }
            let s = &row.stats;
            assert_eq!(s.n, means.len());
            assert!((s.median - type7(&means, 0.5)).abs() < 1e-12);
            assert!((s.q1 - type7(&means, 0.25)).abs() < 1e-12);
            assert!((s.q3 - type7(&means, 0.75)).abs() < 1e-12);
            let iqr = s.q3 - s.q1;
            let lo = means.iter().copied().find(|v| *v >= s.q1 - 1.5 * iqr).unwrap();
            let hi = means.iter().rev().copied().find(|v| *v <= s.q3 + 1.5 * iqr).unwrap();
            assert!((s.whisker_low - lo).abs() < 1e-12 && (s.whisker_high - hi).abs() < 1e-12);

            let n = cells.len() as f64;
            let mean = cells.iter().map(|c| c.0).sum::<f64>() / n;
            let unc = (cells.iter().map(|c| c.1 * c.1).sum::<f64>() / n).sqrt();
            assert_eq!(band.n_cells, cells.len());
            assert!((band.mean - mean).abs() < 1e-12);
            assert!((band.uncertainty - unc).abs() < 1e-12);
            assert!((band.upper - band.lower - 2.0 * unc).abs() < 1e-12);
        }
    }
}

#[test]
fn aggregation_ignores_record_order() {
    let recs = records(2);
    let mut shuffled = recs.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in (1..shuffled.len()).rev() {
        let j = rng.random_range(0..=i);
        shuffled.swap(i, j);
    }
    let map = biomes();
    assert_eq!(
        monthly_biome_aggregate(&recs, &map, Hemisphere::North),
        monthly_biome_aggregate(&shuffled, &map, Hemisphere::North)
    );
    assert_eq!(monthly_global_map(&recs, 6).unwrap(), monthly_global_map(&shuffled, 6).unwrap());
}

#[test]
fn monthly_map_counts_every_record_once() {
    let recs = records(4);
    let total: usize = (1..=12).map(|m| monthly_global_map(&recs, m).unwrap().iter().map(|c| c.n_days).sum::<usize>()).sum();
    assert_eq!(total, recs.len());
    for c in monthly_global_map(&recs, 3).unwrap() {
        let days: Vec<f64> = recs
            .iter()
            .filter(|r| r.sif_date.month == 3 && CellId::containing(r.sif_latitude, r.sif_longitude) == Some(c.cell))
            .map(|r| r.sif_740nm)
            .collect();
        assert_eq!(days.len(), c.n_days);
        assert!((c.mean - days.iter().sum::<f64>() / days.len() as f64).abs() < 1e-12);
    }
    assert!(monthly_global_map(&recs, 13).is_err());
    assert!(monthly_global_map(&[], 5).unwrap().is_empty());
}
