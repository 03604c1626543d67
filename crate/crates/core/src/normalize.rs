//! Per-patient min-max normalization of daily templates.

use crate::registry::{N_HOURS, N_MODALITIES};
use crate::template::Cohort;

/// Rescales every patient's observed template values to [0, 1] per modality,
/// using that patient's own min and max across all of their days and hours.
///
/// Masked cells are skipped when computing the extrema and keep their 0.0
/// value; a modality that is constant for a patient maps to 0.0 everywhere.
/// The operation is idempotent.
pub fn normalize_per_patient(cohort: &mut Cohort) {
    for patient in &mut cohort.patients {
        let mut lo = [f64::INFINITY; N_MODALITIES];
        let mut hi = [f64::NEG_INFINITY; N_MODALITIES];
        for template in patient.templates.values() {
            let mask = template.missing_mask();
            for m in 0..N_MODALITIES {
                for h in 0..N_HOURS {
                    if !mask[m][h] {
                        let v = template.values[m][h];
                        lo[m] = lo[m].min(v);
                        hi[m] = hi[m].max(v);
                    }
                }
            }
        }
        for template in patient.templates.values_mut() {
            let mask = template.missing_mask();
            for m in 0..N_MODALITIES {
                let range = hi[m] - lo[m];
                for h in 0..N_HOURS {
                    if mask[m][h] {
                        continue;
                    }
                    template.values[m][h] = if range > 0.0 {
                        (template.values[m][h] - lo[m]) / range
                    } else {
                        0.0
                    };
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::{DailyTemplate, PatientRecord};
    use chrono::NaiveDate;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn cohort_with_values(values: &[(usize, usize, f64)]) -> Cohort {
        let date = d("2023-01-01");
        let mut t = DailyTemplate::empty(date);
        for &(m, h, v) in values {
            t.values[m][h] = v;
            let flat = (m * N_HOURS + h) as u16;
            t.missing.retain(|&x| x != flat);
        }
        let mut p = PatientRecord::new("p1", 30.0, 12.0);
        p.templates.insert(date, t);
        Cohort { patients: vec![p] }
    }

    #[test]
    fn min_maps_to_zero_max_to_one() {
        let mut cohort = cohort_with_values(&[(0, 0, 2.0), (0, 1, 4.0), (0, 2, 3.0)]);
        normalize_per_patient(&mut cohort);
        let t = cohort.patients[0].templates.values().next().unwrap();
        assert_eq!(t.values[0][0], 0.0);
        assert_eq!(t.values[0][1], 1.0);
        assert_eq!(t.values[0][2], 0.5);
    }

    #[test]
    fn constant_modality_maps_to_zero() {
        let mut cohort = cohort_with_values(&[(1, 0, 5.0), (1, 5, 5.0)]);
        normalize_per_patient(&mut cohort);
        let t = cohort.patients[0].templates.values().next().unwrap();
        assert_eq!(t.values[1][0], 0.0);
        assert_eq!(t.values[1][5], 0.0);
    }

    #[test]
    fn masked_cells_stay_zero() {
        let mut cohort = cohort_with_values(&[(2, 3, -1.0), (2, 4, 1.0)]);
        normalize_per_patient(&mut cohort);
        let t = cohort.patients[0].templates.values().next().unwrap();
        assert!(t.is_missing(2, 5));
        assert_eq!(t.values[2][5], 0.0);
        // Negative minimum still maps onto [0, 1].
        assert_eq!(t.values[2][3], 0.0);
        assert_eq!(t.values[2][4], 1.0);
    }

    #[test]
    fn idempotent() {
        let mut cohort = cohort_with_values(&[(0, 0, 2.0), (0, 1, 4.0), (3, 7, 9.0)]);
        normalize_per_patient(&mut cohort);
        let once = cohort.clone();
        normalize_per_patient(&mut cohort);
        assert_eq!(cohort, once);
    }

    #[test]
    fn extrema_are_per_patient() {
        let date = d("2023-01-01");
        let mut cohort = cohort_with_values(&[(0, 0, 2.0), (0, 1, 4.0)]);
        let mut t2 = DailyTemplate::empty(date);
        t2.values[0][0] = 10.0;
        t2.values[0][1] = 20.0;
        t2.missing.retain(|&x| x != 0 && x != 1);
        let mut p2 = PatientRecord::new("p2", 40.0, 12.0);
        p2.templates.insert(date, t2);
        cohort.patients.push(p2);
        normalize_per_patient(&mut cohort);
        // Each patient spans the full unit interval despite different scales.
        assert_eq!(cohort.patients[0].templates[&date].values[0][1], 1.0);
        assert_eq!(cohort.patients[1].templates[&date].values[0][1], 1.0);
    }
}
