//! Core data types: daily templates, patient records, cohorts.

use std::collections::BTreeMap;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::registry::{FLAT_LEN, N_HOURS, N_MODALITIES};

/// One patient-day as a 21 x 24 matrix of hourly modality values plus a
/// missingness mask.
///
/// `values[m][h]` is modality row `m` (registry order) at hour `h`. Cells
/// with no observations are recorded in `missing` and their value is 0.0;
/// the zeros participate in clustering while the mask lets analytics and
/// feature extraction skip them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyTemplate {
    pub date: NaiveDate,
    pub values: Vec<Vec<f64>>,
    /// Sorted flat indices (`m * 24 + h`) of cells without observations.
    pub missing: Vec<u16>,
}

impl DailyTemplate {
    /// An all-missing template for `date` (every value 0, every cell masked).
    pub fn empty(date: NaiveDate) -> Self {
        Self {
            date,
            values: vec![vec![0.0; N_HOURS]; N_MODALITIES],
            missing: (0..FLAT_LEN as u16).collect(),
        }
    }

    /// Builds a template from values and a boolean mask (`true` = missing).
    pub fn from_parts(date: NaiveDate, values: Vec<Vec<f64>>, missing_mask: &[[bool; N_HOURS]]) -> Self {
        debug_assert_eq!(values.len(), N_MODALITIES);
        debug_assert_eq!(missing_mask.len(), N_MODALITIES);
        let mut missing = Vec::new();
        for m in 0..N_MODALITIES {
            for h in 0..N_HOURS {
                if missing_mask[m][h] {
                    missing.push((m * N_HOURS + h) as u16);
                }
            }
        }
        Self { date, values, missing }
    }

    pub fn is_missing(&self, modality: usize, hour: usize) -> bool {
        self.missing
            .binary_search(&((modality * N_HOURS + hour) as u16))
            .is_ok()
    }

    /// Dense missing mask, `mask[m][h] == true` when the cell is unobserved.
    pub fn missing_mask(&self) -> Vec<[bool; N_HOURS]> {
        let mut mask = vec![[false; N_HOURS]; N_MODALITIES];
        for &flat in &self.missing {
            let flat = flat as usize;
            mask[flat / N_HOURS][flat % N_HOURS] = true;
        }
        mask
    }

    /// Flattens modality-major: `flat[m * 24 + h] = values[m][h]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(FLAT_LEN);
        for row in &self.values {
            flat.extend_from_slice(row);
        }
        flat
    }

    /// Inverse of [`flatten`] for the value matrix.
    ///
    /// [`flatten`]: DailyTemplate::flatten
    pub fn unflatten(date: NaiveDate, flat: &[f64], missing: Vec<u16>) -> Self {
        assert_eq!(flat.len(), FLAT_LEN, "flat template must have {FLAT_LEN} entries");
        let values = flat
            .chunks_exact(N_HOURS)
            .map(|row| row.to_vec())
            .collect();
        Self { date, values, missing }
    }

    /// Hour-major copy (`out[h][m]`), the layout the warping kernel wants.
    pub fn hour_major(&self) -> [[f64; N_MODALITIES]; N_HOURS] {
        let mut out = [[0.0; N_MODALITIES]; N_HOURS];
        for (m, row) in self.values.iter().enumerate() {
            for (h, &v) in row.iter().enumerate() {
                out[h][m] = v;
            }
        }
        out
    }
}

/// One GPS fix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpsFix {
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
}

/// Daily mobility summary derived from GPS fixes. Days without fixes have no
/// entry at all (masked).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityDay {
    /// Mean great-circle distance from home over the day's fixes, meters.
    pub distance_from_home: f64,
    /// Sum of consecutive-fix great-circle distances, meters.
    pub total_movement: f64,
    /// Mean dwell time per visited 100 m grid cell, hours.
    pub time_in_location: f64,
    /// Hours spent within 100 m of home.
    pub time_at_home: f64,
}

impl MobilityDay {
    pub const SERIES_NAMES: [&'static str; 4] = [
        "distance_from_home",
        "total_movement",
        "time_in_location",
        "time_at_home",
    ];

    pub fn series(&self) -> [f64; 4] {
        [
            self.distance_from_home,
            self.total_movement,
            self.time_in_location,
            self.time_at_home,
        ]
    }
}

/// All data for one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub age: f64,
    pub education_years: f64,
    /// Daily templates keyed by date.
    pub templates: BTreeMap<NaiveDate, DailyTemplate>,
    /// Ecological momentary assessments: ten items per response day.
    pub ema: BTreeMap<NaiveDate, [f64; 10]>,
    /// Relapse event dates, ascending.
    pub relapse_events: Vec<NaiveDate>,
    /// Raw GPS fixes, ascending by timestamp.
    pub gps: Vec<GpsFix>,
    /// Mobility series derived from `gps`.
    pub mobility: BTreeMap<NaiveDate, MobilityDay>,
}

impl PatientRecord {
    pub fn new(patient_id: impl Into<String>, age: f64, education_years: f64) -> Self {
        Self {
            patient_id: patient_id.into(),
            age,
            education_years,
            templates: BTreeMap::new(),
            ema: BTreeMap::new(),
            relapse_events: Vec::new(),
            gps: Vec::new(),
            mobility: BTreeMap::new(),
        }
    }

    /// First template date, if any.
    pub fn first_date(&self) -> Option<NaiveDate> {
        self.templates.keys().next().copied()
    }

    /// Last template date, if any.
    pub fn last_date(&self) -> Option<NaiveDate> {
        self.templates.keys().next_back().copied()
    }
}

/// A set of patients, ordered by id.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Cohort {
    pub patients: Vec<PatientRecord>,
}

impl Cohort {
    pub fn n_days(&self) -> usize {
        self.patients.iter().map(|p| p.templates.len()).sum()
    }

    pub fn patient(&self, id: &str) -> Option<&PatientRecord> {
        self.patients.iter().find(|p| p.patient_id == id)
    }

    /// All (patient index, date) pairs in iteration order: patients by id,
    /// dates ascending. Every per-day batch in the crate follows this order.
    pub fn day_index(&self) -> Vec<(usize, NaiveDate)> {
        let mut out = Vec::with_capacity(self.n_days());
        for (pi, p) in self.patients.iter().enumerate() {
            for date in p.templates.keys() {
                out.push((pi, *date));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn flatten_is_modality_major_and_invertible() {
        let mut t = DailyTemplate::empty(d("2023-01-01"));
        t.values[3][7] = 1.5;
        t.values[20][23] = 2.5;
        let flat = t.flatten();
        assert_eq!(flat.len(), FLAT_LEN);
        assert_eq!(flat[3 * 24 + 7], 1.5);
        assert_eq!(flat[20 * 24 + 23], 2.5);
        let back = DailyTemplate::unflatten(t.date, &flat, t.missing.clone());
        assert_eq!(back, t);
    }

    #[test]
    fn missing_mask_round_trip() {
        let mut mask = vec![[false; N_HOURS]; N_MODALITIES];
        mask[0][0] = true;
        mask[5][13] = true;
        mask[20][23] = true;
        let t = DailyTemplate::from_parts(
            d("2023-01-01"),
            vec![vec![0.0; N_HOURS]; N_MODALITIES],
            &mask,
        );
        assert!(t.is_missing(0, 0));
        assert!(t.is_missing(5, 13));
        assert!(!t.is_missing(5, 14));
        assert_eq!(t.missing_mask(), mask);
    }

    #[test]
    fn day_index_orders_patients_then_dates() {
        let mut a = PatientRecord::new("a", 30.0, 12.0);
        a.templates.insert(d("2023-01-02"), DailyTemplate::empty(d("2023-01-02")));
        a.templates.insert(d("2023-01-01"), DailyTemplate::empty(d("2023-01-01")));
        let mut b = PatientRecord::new("b", 40.0, 16.0);
        b.templates.insert(d("2023-01-01"), DailyTemplate::empty(d("2023-01-01")));
        let cohort = Cohort { patients: vec![a, b] };
        let idx = cohort.day_index();
        assert_eq!(
            idx,
            vec![(0, d("2023-01-01")), (0, d("2023-01-02")), (1, d("2023-01-01"))]
        );
    }
}
