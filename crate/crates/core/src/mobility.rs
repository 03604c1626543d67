//! Daily mobility series derived from GPS fixes.
//!
//! Four series per patient-day: mean distance from home, total movement,
//! mean dwell time per visited 100 m grid cell, and hours spent within
//! 100 m of home. Home is the medoid of the patient's nighttime
//! (00:00-06:00) fixes over the whole record, computed on positions snapped
//! to a 100 m grid; when no nighttime fixes exist, all fixes are used and a
//! warning is emitted. Days without any fix get no entry (masked).

use std::collections::BTreeMap;

use chrono::{NaiveDate, Timelike};

use crate::template::{GpsFix, MobilityDay};

/// Mean Earth radius, meters.
const EARTH_RADIUS_M: f64 = 6_371_000.8;

/// Grid cell edge, meters.
const GRID_M: f64 = 100.0;

/// Radius around home that counts as "at home", meters.
const HOME_RADIUS_M: f64 = 100.0;

/// Nighttime window for home inference: fixes before this hour.
const NIGHT_END_HOUR: u32 = 6;

/// Great-circle distance between two (lat, lon) points in degrees, meters.
pub fn great_circle_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (la1, lo1, la2, lo2) = (
        lat1.to_radians(),
        lon1.to_radians(),
        lat2.to_radians(),
        lon2.to_radians(),
    );
    let dlat = la2 - la1;
    let dlon = lo2 - lo1;
    let a = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Snaps a fix to its 100 m grid cell relative to a reference point, using a
/// local equirectangular projection.
fn grid_cell(reference: (f64, f64), lat: f64, lon: f64) -> (i64, i64) {
    let (lat0, lon0) = reference;
    let dy = (lat - lat0).to_radians() * EARTH_RADIUS_M;
    let dx = (lon - lon0).to_radians() * EARTH_RADIUS_M * lat0.to_radians().cos();
    ((dx / GRID_M).floor() as i64, (dy / GRID_M).floor() as i64)
}

/// Projected cell center back in (lat, lon).
fn cell_center(reference: (f64, f64), cell: (i64, i64)) -> (f64, f64) {
    let (lat0, lon0) = reference;
    let cy = (cell.1 as f64 + 0.5) * GRID_M;
    let cx = (cell.0 as f64 + 0.5) * GRID_M;
    let lat = lat0 + (cy / EARTH_RADIUS_M).to_degrees();
    let lon = lon0 + (cx / (EARTH_RADIUS_M * lat0.to_radians().cos())).to_degrees();
    (lat, lon)
}

/// Picks the home location: the fix whose snapped position minimizes the
/// summed great-circle distance to the other candidates' snapped positions.
/// Ties break to the earliest fix. Returns the original (unsnapped) fix
/// coordinates.
fn medoid_home(reference: (f64, f64), fixes: &[&GpsFix]) -> (f64, f64) {
    debug_assert!(!fixes.is_empty());
    let snapped: Vec<(f64, f64)> = fixes
        .iter()
        .map(|f| cell_center(reference, grid_cell(reference, f.lat, f.lon)))
        .collect();
    let mut best = 0usize;
    let mut best_sum = f64::INFINITY;
    for (i, a) in snapped.iter().enumerate() {
        let sum: f64 = snapped
            .iter()
            .map(|b| great_circle_m(a.0, a.1, b.0, b.1))
            .sum();
        if sum < best_sum {
            best_sum = sum;
            best = i;
        }
    }
    (fixes[best].lat, fixes[best].lon)
}

/// Computes the four daily mobility series for one patient.
///
/// `fixes` must be sorted by timestamp. Returns the per-day series and any
/// warnings (currently only the missing-nighttime-fixes fallback).
pub fn compute_mobility_modalities(
    fixes: &[GpsFix],
) -> (BTreeMap<NaiveDate, MobilityDay>, Vec<String>) {
    let mut warnings = Vec::new();
    if fixes.is_empty() {
        return (BTreeMap::new(), warnings);
    }
    debug_assert!(fixes.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));

    let reference = (fixes[0].lat, fixes[0].lon);
    let night: Vec<&GpsFix> = fixes
        .iter()
        .filter(|f| f.timestamp.hour() < NIGHT_END_HOUR)
        .collect();
    let home = if night.is_empty() {
        warnings.push("no nighttime fixes; home inferred from all fixes".into());
        medoid_home(reference, &fixes.iter().collect::<Vec<_>>())
    } else {
        medoid_home(reference, &night)
    };

    let mut by_day: BTreeMap<NaiveDate, Vec<&GpsFix>> = BTreeMap::new();
    for f in fixes {
        by_day.entry(f.timestamp.date()).or_default().push(f);
    }

    let mut out = BTreeMap::new();
    for (date, day_fixes) in by_day {
        let n = day_fixes.len();
        let distance_from_home = day_fixes
            .iter()
            .map(|f| great_circle_m(f.lat, f.lon, home.0, home.1))
            .sum::<f64>()
            / n as f64;

        let total_movement = day_fixes
            .windows(2)
            .map(|w| great_circle_m(w[0].lat, w[0].lon, w[1].lat, w[1].lon))
            .sum::<f64>();

        // Each inter-fix gap is dwelled at the earlier fix's location.
        let mut dwell: BTreeMap<(i64, i64), f64> = BTreeMap::new();
        let mut at_home_hours = 0.0;
        for w in day_fixes.windows(2) {
            let gap_h =
                (w[1].timestamp - w[0].timestamp).num_seconds() as f64 / 3600.0;
            let cell = grid_cell(reference, w[0].lat, w[0].lon);
            *dwell.entry(cell).or_insert(0.0) += gap_h;
            if great_circle_m(w[0].lat, w[0].lon, home.0, home.1) <= HOME_RADIUS_M {
                at_home_hours += gap_h;
            }
        }
        // The final fix opens no gap but still marks its cell as visited.
        let last = day_fixes[n - 1];
        dwell.entry(grid_cell(reference, last.lat, last.lon)).or_insert(0.0);
        let time_in_location = dwell.values().sum::<f64>() / dwell.len() as f64;

        out.insert(
            date,
            MobilityDay {
                distance_from_home,
                total_movement,
                time_in_location,
                time_at_home: at_home_hours,
            },
        );
    }
    (out, warnings)
}
