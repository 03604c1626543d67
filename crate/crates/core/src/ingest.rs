//! CSV ingestion: raw observation rows into per-day hourly templates, plus
//! loaders for the companion tables (GPS, EMA, demographics, relapses).
//!
//! Hourly semantics:
//! * observations within a single hour are averaged;
//! * an observation spanning several hours is divided equally across them
//!   when the modality is additive, or copied to each hour when it is an
//!   intensity;
//! * hours with no observation are masked and hold 0.0;
//! * a row spanning past midnight is truncated at the day boundary.
//!
//! When one hour receives several contributions they are averaged, including
//! fractions produced by the splitting rule. For additive modalities whose
//! observations do not collide within an hour, the hourly sum therefore
//! equals the sum of the input values.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::mobility;
use crate::registry::{ModalityKind, ModalityRegistry, N_HOURS, N_MODALITIES};
use crate::template::{Cohort, DailyTemplate, GpsFix, PatientRecord};
use crate::{Error, Result};

/// One raw sensing observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawObservation {
    pub patient_id: String,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub modality: String,
    pub value: f64,
}

/// A rejected input row and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    /// 0-based index in the input stream.
    pub row: usize,
    pub reason: String,
}

/// Diagnostics accumulated while ingesting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub rows_seen: usize,
    pub rejected: Vec<RejectedRow>,
    pub warnings: Vec<String>,
}


/// Observations grouped by patient and calendar day (the day of `start`),
/// sorted by start time within each group.
pub type ObservationGroups = BTreeMap<String, BTreeMap<NaiveDate, Vec<RawObservation>>>;

/// Groups raw rows by (patient, day). Rows may arrive in any order. Rows
/// with an unregistered modality, a non-finite value, or `end < start` are
/// rejected and reported; everything else is kept.
pub fn ingest_observations(
    rows: impl IntoIterator<Item = RawObservation>,
    registry: &ModalityRegistry,
) -> (ObservationGroups, IngestReport) {
    let mut groups: ObservationGroups = BTreeMap::new();
    let mut report = IngestReport::default();
    for (i, row) in rows.into_iter().enumerate() {
        report.rows_seen += 1;
        if registry.index_of(&row.modality).is_none() {
            report.rejected.push(RejectedRow {
                row: i,
                reason: format!("unknown modality {:?}", row.modality),
            });
            continue;
        }
        if !row.value.is_finite() {
            report.rejected.push(RejectedRow {
                row: i,
                reason: format!("non-finite value for {:?}", row.modality),
            });
            continue;
        }
        if row.end < row.start {
            report.rejected.push(RejectedRow {
                row: i,
                reason: format!("end precedes start ({} < {})", row.end, row.start),
            });
            continue;
        }
        groups
            .entry(row.patient_id.clone())
            .or_default()
            .entry(row.start.date())
            .or_default()
            .push(row);
    }
    for days in groups.values_mut() {
        for rows in days.values_mut() {
            rows.sort_by_key(|r| r.start);
        }
    }
    (groups, report)
}

/// Builds the 21 x 24 hourly template for one patient-day group.
///
/// Returns the template and any truncation warnings.
pub fn build_daily_template(
    date: NaiveDate,
    rows: &[RawObservation],
    registry: &ModalityRegistry,
) -> (DailyTemplate, Vec<String>) {
    let mut sums = vec![[0.0f64; N_HOURS]; N_MODALITIES];
    let mut counts = vec![[0u32; N_HOURS]; N_MODALITIES];
    let mut warnings = Vec::new();

    let day_start = date.and_hms_opt(0, 0, 0).expect("midnight exists");
    let next_midnight = day_start + chrono::Duration::days(1);

    for row in rows {
        debug_assert_eq!(row.start.date(), date);
        let m = registry
            .index_of(&row.modality)
            .expect("groups contain registered modalities only");
        let mut end = row.end;
        if end > next_midnight {
            warnings.push(format!(
                "{} {} observation at {} spans past midnight; truncated",
                row.patient_id, row.modality, row.start
            ));
            end = next_midnight;
        }
        let first_hour = row.start.hour() as usize;
        let last_hour = if end <= row.start {
            first_hour
        } else if end == next_midnight {
            N_HOURS - 1
        } else {
            // end is exclusive: an observation ending exactly on the hour
            // does not reach into that hour.
            let secs = end.signed_duration_since(day_start).num_seconds();
            (((secs - 1).max(0)) / 3600) as usize
        };
        let last_hour = last_hour.max(first_hour).min(N_HOURS - 1);
        let span = (last_hour - first_hour + 1) as f64;
        let contribution = match registry.kind(m) {
            ModalityKind::Additive => row.value / span,
            ModalityKind::Intensity => row.value,
        };
        for h in first_hour..=last_hour {
            sums[m][h] += contribution;
            counts[m][h] += 1;
        }
    }

    let mut values = vec![vec![0.0; N_HOURS]; N_MODALITIES];
    let mut mask = vec![[false; N_HOURS]; N_MODALITIES];
    for m in 0..N_MODALITIES {
        for h in 0..N_HOURS {
            if counts[m][h] == 0 {
                mask[m][h] = true;
            } else {
                values[m][h] = sums[m][h] / counts[m][h] as f64;
            }
        }
    }
    (DailyTemplate::from_parts(date, values, &mask), warnings)
}

/// GPS CSV row.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct GpsRow {
    pub patient_id: String,
    pub timestamp: NaiveDateTime,
    pub lat: f64,
    pub lon: f64,
}

/// EMA CSV row: ten items per response.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct EmaRow {
    pub patient_id: String,
    pub date: NaiveDate,
    pub item_1: f64,
    pub item_2: f64,
    pub item_3: f64,
    pub item_4: f64,
    pub item_5: f64,
    pub item_6: f64,
    pub item_7: f64,
    pub item_8: f64,
    pub item_9: f64,
    pub item_10: f64,
}

impl EmaRow {
    pub fn items(&self) -> [f64; 10] {
        [
            self.item_1, self.item_2, self.item_3, self.item_4, self.item_5, self.item_6,
            self.item_7, self.item_8, self.item_9, self.item_10,
        ]
    }

    pub fn from_items(patient_id: String, date: NaiveDate, it: [f64; 10]) -> Self {
        Self {
            patient_id,
            date,
            item_1: it[0],
            item_2: it[1],
            item_3: it[2],
            item_4: it[3],
            item_5: it[4],
            item_6: it[5],
            item_7: it[6],
            item_8: it[7],
            item_9: it[8],
            item_10: it[9],
        }
    }
}

/// Demographics CSV row.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct DemographicsRow {
    pub patient_id: String,
    pub age: f64,
    pub education_years: f64,
}

/// Relapse CSV row.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RelapseRow {
    pub patient_id: String,
    pub date: NaiveDate,
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

pub fn load_observations_csv(path: &Path) -> Result<Vec<RawObservation>> {
    read_csv(path)
}

pub fn load_gps_csv(path: &Path) -> Result<Vec<GpsRow>> {
    read_csv(path)
}

pub fn load_ema_csv(path: &Path) -> Result<Vec<EmaRow>> {
    read_csv(path)
}

pub fn load_demographics_csv(path: &Path) -> Result<Vec<DemographicsRow>> {
    read_csv(path)
}

pub fn load_relapses_csv(path: &Path) -> Result<Vec<RelapseRow>> {
    read_csv(path)
}

/// File names of a cohort directory.
pub mod files {
    pub const OBSERVATIONS: &str = "observations.csv";
    pub const GPS: &str = "gps.csv";
    pub const EMA: &str = "ema.csv";
    pub const DEMOGRAPHICS: &str = "demographics.csv";
    pub const RELAPSES: &str = "relapses.csv";
    pub const GROUND_TRUTH: &str = "ground_truth.csv";
    pub const META: &str = "cohort_meta.json";
}

/// Cohort directory metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortMeta {
    pub schema_version: u32,
}

/// Supported cohort directory schema version.
pub const COHORT_SCHEMA_VERSION: u32 = 1;

/// Reads a full cohort directory: observations (required), GPS, EMA,
/// demographics, and relapses (each optional but normally present), builds
/// daily templates, and derives mobility series.
///
/// Any parse failure aborts with an error; no partial cohort is returned.
pub fn load_cohort(dir: &Path, registry: &ModalityRegistry) -> Result<(Cohort, IngestReport)> {
    let meta_path = dir.join(files::META);
    if meta_path.exists() {
        let meta: CohortMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)
            .map_err(|e| Error::CorruptInput(format!("{}: {e}", meta_path.display())))?;
        if meta.schema_version != COHORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: meta.schema_version,
                supported: COHORT_SCHEMA_VERSION,
            });
        }
    }

    let observations = load_observations_csv(&dir.join(files::OBSERVATIONS))?;
    let (groups, mut report) = ingest_observations(observations, registry);

    let mut patients: BTreeMap<String, PatientRecord> = BTreeMap::new();
    for (pid, days) in &groups {
        let mut rec = PatientRecord::new(pid.clone(), 0.0, 0.0);
        for (date, rows) in days {
            let (template, warnings) = build_daily_template(*date, rows, registry);
            report.warnings.extend(warnings);
            rec.templates.insert(*date, template);
        }
        patients.insert(pid.clone(), rec);
    }

    let demographics_path = dir.join(files::DEMOGRAPHICS);
    if demographics_path.exists() {
        for row in load_demographics_csv(&demographics_path)? {
            match patients.get_mut(&row.patient_id) {
                Some(rec) => {
                    rec.age = row.age;
                    rec.education_years = row.education_years;
                }
                None => report
                    .warnings
                    .push(format!("demographics for unknown patient {:?}", row.patient_id)),
            }
        }
    }

    let ema_path = dir.join(files::EMA);
    if ema_path.exists() {
        for row in load_ema_csv(&ema_path)? {
            let items = row.items();
            if items.iter().any(|v| !v.is_finite()) {
                report
                    .warnings
                    .push(format!("non-finite EMA for {:?} on {}", row.patient_id, row.date));
                continue;
            }
            match patients.get_mut(&row.patient_id) {
                Some(rec) => {
                    rec.ema.insert(row.date, items);
                }
                None => report
                    .warnings
                    .push(format!("EMA for unknown patient {:?}", row.patient_id)),
            }
        }
    }

    let relapses_path = dir.join(files::RELAPSES);
    if relapses_path.exists() {
        for row in load_relapses_csv(&relapses_path)? {
            match patients.get_mut(&row.patient_id) {
                Some(rec) => rec.relapse_events.push(row.date),
                None => report
                    .warnings
                    .push(format!("relapse for unknown patient {:?}", row.patient_id)),
            }
        }
        for rec in patients.values_mut() {
            rec.relapse_events.sort();
            rec.relapse_events.dedup();
        }
    }

    let gps_path = dir.join(files::GPS);
    if gps_path.exists() {
        let mut by_patient: BTreeMap<String, Vec<GpsFix>> = BTreeMap::new();
        for row in load_gps_csv(&gps_path)? {
            by_patient.entry(row.patient_id).or_default().push(GpsFix {
                timestamp: row.timestamp,
                lat: row.lat,
                lon: row.lon,
            });
        }
        for (pid, mut fixes) in by_patient {
            fixes.sort_by_key(|f| f.timestamp);
            match patients.get_mut(&pid) {
                Some(rec) => {
                    let (series, warnings) = mobility::compute_mobility_modalities(&fixes);
                    for w in warnings {
                        report.warnings.push(format!("{pid}: {w}"));
                    }
                    rec.mobility = series;
                    rec.gps = fixes;
                }
                None => report.warnings.push(format!("GPS for unknown patient {pid:?}")),
            }
        }
    }

    let cohort = Cohort { patients: patients.into_values().collect() };
    Ok((cohort, report))
}
