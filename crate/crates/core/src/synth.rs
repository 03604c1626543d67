//! Deterministic synthetic cohorts: archetype daily routines, planted
//! pre-relapse anomalies, and a CSV archive that round-trips through the
//! ingest pipeline bit-exactly.

use std::path::Path;

use chrono::{Duration, NaiveDate};
use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::ingest::{self, files, CohortMeta, EmaRow, COHORT_SCHEMA_VERSION};
use crate::mobility;
use crate::registry::{ModalityRegistry, N_HOURS, N_MODALITIES};
use crate::template::{Cohort, DailyTemplate, GpsFix, PatientRecord};
use crate::{Error, Result};

/// Version tag of the hand-authored archetype shapes below. Tests freeze
/// against the shapes, so any edit must bump this.
pub const ARCHETYPE_VERSION: u32 = 1;

/// Number of authored archetypes available.
pub const MAX_ARCHETYPES: usize = 9;

/// Index of the inactive ("phone off") archetype used for planted
/// pre-relapse anomalies.
pub const INACTIVE_ARCHETYPE: usize = 2;

/// Generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub days_per_patient: usize,
    pub n_archetypes: usize,
    pub n_relapses: usize,
    /// Relapses are spread over at most this many patients.
    pub max_relapse_patients: usize,
    /// Probability of an inactive-archetype day at the relapse itself; the
    /// probability rises linearly from ~0 across the 28 preceding days.
    pub ramp: f64,
    /// Independent per-cell mask probability.
    pub missing_rate: f64,
    /// Noise std per cell is `noise_scale * (0.2 + 0.8 * mean)`.
    pub noise_scale: f64,
    /// Gamma shape of per-patient archetype preferences (1 = flat Dirichlet).
    pub preference_concentration: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_patients: 63,
            days_per_patient: 120,
            n_archetypes: 9,
            n_relapses: 27,
            max_relapse_patients: 20,
            ramp: 0.8,
            missing_rate: 0.05,
            noise_scale: 0.05,
            preference_concentration: 1.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ramp) {
            return Err(Error::InvalidArgument(format!("ramp {} outside [0,1]", self.ramp)));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidArgument(format!(
                "missing_rate {} outside [0,1]",
                self.missing_rate
            )));
        }
        if self.noise_scale < 0.0 || !self.noise_scale.is_finite() {
            return Err(Error::InvalidArgument("noise_scale must be finite and >= 0".into()));
        }
        if self.n_archetypes == 0 || self.n_archetypes > MAX_ARCHETYPES {
            return Err(Error::InvalidArgument(format!(
                "n_archetypes must be within 1..={MAX_ARCHETYPES}"
            )));
        }
        if self.n_archetypes <= INACTIVE_ARCHETYPE && self.ramp > 0.0 {
            return Err(Error::InvalidArgument(format!(
                "anomaly ramp needs the inactive archetype (index {INACTIVE_ARCHETYPE})"
            )));
        }
        if self.preference_concentration <= 0.0 {
            return Err(Error::InvalidArgument("preference_concentration must be > 0".into()));
        }
        if self.n_relapses > 0 && self.max_relapse_patients == 0 {
            return Err(Error::InvalidArgument(
                "relapses requested but max_relapse_patients is 0".into(),
            ));
        }
        Ok(())
    }
}

/// One ground-truth row: which archetype produced a patient-day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub patient_id: String,
    pub date: NaiveDate,
    pub archetype_id: usize,
}

const BASE_DATE: &str = "2023-01-01";
/// Days before a relapse (relapse day inclusive) over which the inactive
/// probability ramps up.
const RAMP_DAYS: i64 = 28;
/// Earliest permitted relapse: 1-based day number within the record.
const FIRST_RELAPSE_DAY: usize = 30;
/// Minimum day gap between two relapses of one patient.
const RELAPSE_GAP: usize = 29;

/// Compact description of one archetype's routine; expanded into a 21 x 24
/// mean template by [`archetype_mean`].
struct Routine {
    wake: usize,
    sleep_start: usize,
    accel: f64,
    light: f64,
    sound: f64,
    conversation: f64,
    distance: f64,
    night_sleep: f64,
    day_sleep: f64,
    screen: f64,
    screen_night: f64,
    calls: f64,
    sms: f64,
    apps: f64,
    /// Activity bleeding into the night hours (night-owl archetypes).
    night_activity: f64,
}

/// The authored archetype routines, qualitative sketches of the published
/// cluster profiles: 0 balanced weekday, 1 heavy-usage early riser,
/// 2 inactive/phone-off, 3 high-movement outdoors, 4 night owl, 5 late riser,
/// 6 daytime-active short sleeper, 7 quiet long sleeper, 8 sedentary with the
/// screen constantly on.
fn routine(archetype: usize) -> Routine {
    let base = Routine {
        wake: 7,
        sleep_start: 22,
        accel: 0.40,
        light: 0.50,
        sound: 0.40,
        conversation: 0.35,
        distance: 0.30,
        night_sleep: 0.85,
        day_sleep: 0.0,
        screen: 0.35,
        screen_night: 0.02,
        calls: 0.30,
        sms: 0.30,
        apps: 0.35,
        night_activity: 0.02,
    };
    match archetype {
        0 => base,
        1 => Routine {
            accel: 0.60,
            sound: 0.60,
            conversation: 0.70,
            distance: 0.55,
            screen: 0.70,
            calls: 0.85,
            sms: 0.85,
            apps: 0.90,
            sleep_start: 23,
            ..base
        },
        2 => Routine {
            wake: 9,
            sleep_start: 20,
            accel: 0.01,
            light: 0.01,
            sound: 0.01,
            conversation: 0.005,
            distance: 0.005,
            night_sleep: 0.01,
            day_sleep: 0.005,
            screen: 0.01,
            screen_night: 0.005,
            calls: 0.005,
            sms: 0.005,
            apps: 0.005,
            night_activity: 0.005,
        },
        3 => Routine {
            wake: 6,
            accel: 0.95,
            light: 0.70,
            sound: 0.50,
            distance: 0.85,
            calls: 0.10,
            sms: 0.15,
            apps: 0.25,
            ..base
        },
        4 => Routine {
            wake: 12,
            sleep_start: 23,
            accel: 0.50,
            sound: 0.65,
            calls: 0.75,
            sms: 0.80,
            night_activity: 0.65,
            screen_night: 0.55,
            night_sleep: 0.45,
            day_sleep: 0.25,
            ..base
        },
        5 => Routine {
            wake: 11,
            sound: 0.20,
            distance: 0.10,
            accel: 0.28,
            day_sleep: 0.40,
            apps: 0.30,
            ..base
        },
        6 => Routine {
            wake: 6,
            sleep_start: 23,
            accel: 0.55,
            calls: 0.90,
            screen: 0.60,
            night_sleep: 0.55,
            conversation: 0.55,
            ..base
        },
        7 => Routine {
            wake: 10,
            sleep_start: 20,
            apps: 0.02,
            conversation: 0.10,
            sms: 0.05,
            sound: 0.15,
            accel: 0.15,
            night_sleep: 0.95,
            day_sleep: 0.50,
            calls: 0.08,
            screen: 0.10,
            ..base
        },
        8 => Routine {
            accel: 0.02,
            apps: 0.10,
            conversation: 0.10,
            sound: 0.10,
            distance: 0.02,
            screen: 0.95,
            screen_night: 0.95,
            night_sleep: 0.90,
            day_sleep: 0.60,
            calls: 0.05,
            sms: 0.05,
            light: 0.25,
            ..base
        },
        _ => panic!("archetype {archetype} out of range"),
    }
}

/// Fills [wake, sleep_start) with `day` plus a mild circadian swell, the rest
/// with `night`. Values are clipped to [0,1].
fn day_curve(r: &Routine, day: f64, night: f64) -> Vec<f64> {
    (0..N_HOURS)
        .map(|h| {
            let v = if h >= r.wake && h < r.sleep_start {
                let span = (r.sleep_start - r.wake) as f64;
                let phase = (h - r.wake) as f64 / span;
                day * (1.0 + 0.15 * (std::f64::consts::PI * phase).sin())
            } else {
                night
            };
            v.clamp(0.0, 1.0)
        })
        .collect()
}

/// Sleep occupies the complement of the activity window.
fn sleep_curve(r: &Routine) -> Vec<f64> {
    (0..N_HOURS)
        .map(|h| {
            if h < r.wake || h >= r.sleep_start {
                r.night_sleep
            } else {
                r.day_sleep
            }
        })
        .collect()
}

/// Expands an archetype into its 21 x 24 mean template (registry order).
pub fn archetype_mean(archetype: usize) -> Vec<Vec<f64>> {
    let r = routine(archetype);
    let app_mult = [1.0, 0.9, 0.8, 0.5, 0.6, 0.4, 0.7, 0.3];
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(N_MODALITIES);
    rows.push(day_curve(&r, r.accel, r.night_activity)); // acceleration
    rows.push(day_curve(&r, r.light, 0.01)); // ambient_light
    rows.push(day_curve(&r, r.sound, r.night_activity * 0.8)); // ambient_sound
    rows.push(day_curve(&r, r.conversation, r.night_activity * 0.3)); // conversation_duration
    rows.push(day_curve(&r, r.distance, r.night_activity * 0.2)); // distance_traveled
    rows.push(sleep_curve(&r)); // sleep_duration
    rows.push(day_curve(&r, r.screen, r.screen_night)); // screen_unlock_duration
    rows.push(day_curve(&r, r.calls * 0.8, r.night_activity * 0.2)); // call_in_count
    rows.push(day_curve(&r, r.calls, r.night_activity * 0.2)); // call_out_count
    rows.push(day_curve(&r, r.calls * 0.3, 0.01)); // call_missed_count
    rows.push(day_curve(&r, r.calls, r.night_activity * 0.3)); // call_duration
    rows.push(day_curve(&r, r.sms * 0.9, r.night_activity * 0.2)); // sms_in_count
    rows.push(day_curve(&r, r.sms, r.night_activity * 0.2)); // sms_out_count
    for mult in app_mult {
        rows.push(day_curve(&r, r.apps * mult, r.night_activity * 0.4));
    }
    debug_assert_eq!(rows.len(), N_MODALITIES);
    rows
}

/// Assigns relapse counts to patients: a seeded shuffle picks the eligible
/// patients, each gets one relapse, and any remainder cycles over them.
fn relapse_counts(spec: &SynthSpec) -> Vec<usize> {
    let mut counts = vec![0usize; spec.n_patients];
    if spec.n_relapses == 0 || spec.n_patients == 0 {
        return counts;
    }
    let mut order: Vec<usize> = (0..spec.n_patients).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(spec.seed, &[1]));
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let eligible = spec.max_relapse_patients.min(spec.n_patients);
    for r in 0..spec.n_relapses {
        counts[order[r % eligible]] += 1;
    }
    counts
}

/// Places `k` relapse days in 1-based day numbers: the first lands on or
/// after day 30 and consecutive relapses sit at least 29 days apart. Errors
/// when the record is too short to hold them.
fn place_relapses(
    k: usize,
    days: usize,
    patient_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let need = FIRST_RELAPSE_DAY + (k - 1) * RELAPSE_GAP;
    if need > days {
        return Err(Error::InvalidArgument(format!(
            "patient {patient_id}: {k} relapses need {need} days but the record has {days}"
        )));
    }
    let slack = days - need;
    let mut offsets: Vec<usize> = (0..k).map(|_| rng.gen_range(0..=slack)).collect();
    offsets.sort_unstable();
    Ok(offsets
        .iter()
        .enumerate()
        .map(|(j, &o)| FIRST_RELAPSE_DAY + j * RELAPSE_GAP + o)
        .collect())
}

/// Generates the cohort plus per-day ground-truth archetype labels,
/// deterministic in `spec.seed` and independent of worker threads (each
/// patient derives its own random streams).
pub fn generate_cohort(spec: &SynthSpec) -> Result<(Cohort, Vec<GroundTruthRow>)> {
    spec.validate()?;
    let base: NaiveDate = BASE_DATE.parse().expect("valid base date");
    let archetypes: Vec<Vec<Vec<f64>>> = (0..spec.n_archetypes).map(archetype_mean).collect();
    let counts = relapse_counts(spec);

    let results: Vec<Result<(PatientRecord, Vec<GroundTruthRow>)>> =
        exec::map_indices(spec.n_patients, |pi| {
            generate_patient(spec, pi, counts[pi], base, &archetypes)
        });
    let mut patients = Vec::with_capacity(spec.n_patients);
    let mut truth = Vec::new();
    for r in results {
        let (record, labels) = r?;
        patients.push(record);
        truth.extend(labels);
    }
    Ok((Cohort { patients }, truth))
}

fn patient_id(pi: usize, n: usize) -> String {
    let width = n.max(1).to_string().len();
    format!("p{:0width$}", pi + 1)
}

fn generate_patient(
    spec: &SynthSpec,
    pi: usize,
    n_relapses: usize,
    base: NaiveDate,
    archetypes: &[Vec<Vec<f64>>],
) -> Result<(PatientRecord, Vec<GroundTruthRow>)> {
    let id = patient_id(pi, spec.n_patients);
    let seed = exec::derive_seed(spec.seed, &[2, pi as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let age = rng.gen_range(18..=65) as f64;
    let education = rng.gen_range(8..=20) as f64;
    let mut record = PatientRecord::new(id.clone(), age, education);
    let start = base + Duration::days((pi % 7) as i64);

    // Archetype preferences: Gamma draws normalized to a simplex point, with
    // the inactive archetype damped so quiet days stay the exception.
    let gamma = Gamma::new(spec.preference_concentration, 1.0)
        .map_err(|e| Error::InvalidArgument(format!("preference gamma: {e}")))?;
    let mut prefs: Vec<f64> = (0..spec.n_archetypes)
        .map(|_| gamma.sample(&mut rng).max(1e-6))
        .collect();
    if let Some(w) = prefs.get_mut(INACTIVE_ARCHETYPE) {
        *w *= 0.2;
    }
    let total: f64 = prefs.iter().sum();
    for w in &mut prefs {
        *w /= total;
    }

    let relapse_days = place_relapses(
        n_relapses,
        spec.days_per_patient,
        &id,
        &mut ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, &[3])),
    )?;
    record.relapse_events = relapse_days
        .iter()
        .map(|&d| start + Duration::days(d as i64 - 1))
        .collect();

    // Per-item EMA baselines.
    let ema_base: Vec<f64> = (0..10).map(|_| rng.gen_range(0.5..1.5)).collect();
    // Home and workplace for the GPS trace.
    let home = (42.0 + 0.05 * (pi % 10) as f64, -71.0 - 0.05 * (pi / 10) as f64);
    let work = (home.0 + 0.012, home.1 + 0.009);

    let mut truth = Vec::with_capacity(spec.days_per_patient);
    for d in 0..spec.days_per_patient {
        let date = start + Duration::days(d as i64);
        let day_number = d + 1;
        let mut day_rng = ChaCha8Rng::seed_from_u64(exec::derive_seed(seed, &[4, d as u64]));

        // Linear anomaly ramp toward each upcoming relapse.
        let ramp_frac = relapse_days
            .iter()
            .filter_map(|&r| {
                let lag = r as i64 - day_number as i64;
                (0..RAMP_DAYS).contains(&lag).then(|| (RAMP_DAYS - lag) as f64 / RAMP_DAYS as f64)
            })
            .fold(0.0f64, f64::max);
        let p_inactive = spec.ramp * ramp_frac;

        let archetype = if p_inactive > 0.0 && day_rng.gen_bool(p_inactive) {
            INACTIVE_ARCHETYPE
        } else {
            let mut u = day_rng.gen::<f64>();
            let mut chosen = spec.n_archetypes - 1;
            for (a, &w) in prefs.iter().enumerate() {
                if u < w {
                    chosen = a;
                    break;
                }
                u -= w;
            }
            chosen
        };
        truth.push(GroundTruthRow { patient_id: id.clone(), date, archetype_id: archetype });

        let mean = &archetypes[archetype];
        let mut values = vec![vec![0.0; N_HOURS]; N_MODALITIES];
        let mut mask = vec![[false; N_HOURS]; N_MODALITIES];
        for m in 0..N_MODALITIES {
            for h in 0..N_HOURS {
                let mu = mean[m][h];
                let sigma = spec.noise_scale * (0.2 + 0.8 * mu);
                let z: f64 = day_rng.sample(StandardNormal);
                values[m][h] = (mu + sigma * z).clamp(0.0, 1.0);
            }
        }
        for (m, row) in mask.iter_mut().enumerate() {
            for (h, cell) in row.iter_mut().enumerate() {
                *cell = spec.missing_rate > 0.0 && day_rng.gen_bool(spec.missing_rate);
                if *cell {
                    // Masked cells read 0, matching what ingest produces.
                    values[m][h] = 0.0;
                }
            }
        }
        record.templates.insert(date, DailyTemplate::from_parts(date, values, &mask));

        // EMA drifts upward as a relapse approaches.
        let mut items = [0.0; 10];
        for (i, item) in items.iter_mut().enumerate() {
            let z: f64 = day_rng.sample(StandardNormal);
            *item = (ema_base[i] + 0.15 * z + 1.2 * ramp_frac).clamp(0.0, 3.0);
        }
        record.ema.insert(date, items);

        // Hourly GPS fixes: home around the clock; on active days a midday
        // excursion to the workplace. Inactive days never leave home.
        let excursion = archetype != INACTIVE_ARCHETYPE;
        for h in 0..N_HOURS {
            let (lat, lon) = if excursion && (10..16).contains(&h) { work } else { home };
            record.gps.push(GpsFix {
                timestamp: date.and_hms_opt(h as u32, 0, 0).expect("valid time"),
                lat,
                lon,
            });
        }
    }

    let (series, _warnings) = mobility::compute_mobility_modalities(&record.gps);
    record.mobility = series;
    Ok((record, truth))
}

/// Writes the cohort as the CSV archive the ingest pipeline reads, plus
/// ground_truth.csv and a versioned meta file. Every unmasked cell becomes
/// one instantaneous observation at its hour, which re-ingests bit-exactly.
pub fn export_cohort(cohort: &Cohort, truth: &[GroundTruthRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let meta = CohortMeta { schema_version: COHORT_SCHEMA_VERSION };
    std::fs::write(dir.join(files::META), serde_json::to_string_pretty(&meta)?)?;

    let registry = ModalityRegistry::default_registry();
    let mut obs = csv::Writer::from_path(dir.join(files::OBSERVATIONS))?;
    for p in &cohort.patients {
        for t in p.templates.values() {
            for m in 0..N_MODALITIES {
                for h in 0..N_HOURS {
                    if t.is_missing(m, h) {
                        continue;
                    }
                    let stamp = t.date.and_hms_opt(h as u32, 0, 0).expect("valid time");
                    obs.serialize(ingest::RawObservation {
                        patient_id: p.patient_id.clone(),
                        start: stamp,
                        end: stamp,
                        modality: registry.name(m).to_string(),
                        value: t.values[m][h],
                    })?;
                }
            }
        }
    }
    obs.flush()?;

    let mut gps = csv::Writer::from_path(dir.join(files::GPS))?;
    for p in &cohort.patients {
        for fix in &p.gps {
            gps.serialize(ingest::GpsRow {
                patient_id: p.patient_id.clone(),
                timestamp: fix.timestamp,
                lat: fix.lat,
                lon: fix.lon,
            })?;
        }
    }
    gps.flush()?;

    let mut ema = csv::Writer::from_path(dir.join(files::EMA))?;
    for p in &cohort.patients {
        for (date, items) in &p.ema {
            ema.serialize(EmaRow::from_items(p.patient_id.clone(), *date, *items))?;
        }
    }
    ema.flush()?;

    let mut demo = csv::Writer::from_path(dir.join(files::DEMOGRAPHICS))?;
    for p in &cohort.patients {
        demo.serialize(ingest::DemographicsRow {
            patient_id: p.patient_id.clone(),
            age: p.age,
            education_years: p.education_years,
        })?;
    }
    demo.flush()?;

    let mut rel = csv::Writer::from_path(dir.join(files::RELAPSES))?;
    for p in &cohort.patients {
        for date in &p.relapse_events {
            rel.serialize(ingest::RelapseRow { patient_id: p.patient_id.clone(), date: *date })?;
        }
    }
    rel.flush()?;

    let mut gt = csv::Writer::from_path(dir.join(files::GROUND_TRUTH))?;
    for row in truth {
        gt.serialize(row)?;
    }
    gt.flush()?;
    Ok(())
}

/// Reads a cohort archive back. Inverse of [`export_cohort`].
pub fn import_cohort(dir: &Path) -> Result<(Cohort, Vec<GroundTruthRow>)> {
    let registry = ModalityRegistry::default_registry();
    let (cohort, report) = ingest::load_cohort(dir, &registry)?;
    if let Some(first) = report.rejected.first() {
        return Err(Error::CorruptInput(format!(
            "{} rejected rows; first: row {} ({})",
            report.rejected.len(),
            first.row,
            first.reason
        )));
    }
    let truth_path = dir.join(files::GROUND_TRUTH);
    let truth = if truth_path.exists() {
        let mut reader = csv::Reader::from_path(&truth_path)?;
        let mut rows = Vec::new();
        for row in reader.deserialize() {
            rows.push(row?);
        }
        rows
    } else {
        Vec::new()
    };
    Ok((cohort, truth))
}
