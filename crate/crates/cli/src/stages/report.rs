//! `report` stage: aggregate every upstream artifact into six flat report
//! tables, optional SVG plots rendered purely from those tables, and a
//! manifest hashing every emitted file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::artifacts::rows::{ClusterRow, NrSampleRow, NrSummaryRow, ProfileRow};
use crate::artifacts::{
    self, DatasetArtifact, EvaluationArtifact, FileEntry, Manifest, ScoresCsvRow,
    ARTIFACT_SCHEMA_VERSION, MANIFEST,
};
use crate::config::{
    AnalyticsSection, GmmSection, PamSection, PcaSection, PipelineConfig, PredictorSection,
    SynthSection,
};
use crate::error::{CliError, Result};
use crate::stages::Ctx;
use crate::svg::{Scale, Svg};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotFormat {
    Csv,
    Svg,
}

impl PlotFormat {
    pub fn parse(s: &str) -> Result<PlotFormat> {
        match s {
            "csv" => Ok(PlotFormat::Csv),
            "svg" => Ok(PlotFormat::Svg),
            other => Err(CliError::Config {
                key: "--plots".into(),
                message: format!("unknown plot format {other:?}; expected `csv` or `svg`"),
            }),
        }
    }
}

// The six report categories.
const CAT_CLUSTERS: &str = "cluster_summaries";
const CAT_TRACES: &str = "covariance_traces";
const CAT_PROFILES: &str = "cluster_profiles";
const CAT_TIMESERIES: &str = "score_timeseries";
const CAT_NEAR_RELAPSE: &str = "near_relapse";
const CAT_EVALUATION: &str = "evaluation";

#[derive(Serialize)]
struct CombinedClusterRow<'a> {
    model: &'a str,
    label: usize,
    size: usize,
    covariance_trace: f64,
    mean_assigned_score: f64,
    mean_weighted_score: f64,
}

#[derive(Serialize)]
struct TraceRow<'a> {
    model: &'a str,
    label: usize,
    covariance_trace: f64,
}

#[derive(Serialize)]
struct CombinedProfileRow<'a> {
    model: &'a str,
    label: usize,
    modality: &'a str,
    hour: usize,
    mean: f64,
}

#[derive(Serialize)]
struct TimeseriesRow {
    patient_id: String,
    date: NaiveDate,
    gmm_assigned_likelihood: Option<f64>,
    gmm_weighted_likelihood: Option<f64>,
    pam_assigned_distance: Option<f64>,
    pam_weighted_distance: Option<f64>,
    pam_dtw_prev_day: Option<f64>,
    relapse: u8,
}

#[derive(Serialize, Deserialize)]
struct BoxRow {
    score: String,
    x: u32,
    group: String,
    n: usize,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
}

#[derive(Serialize)]
struct EvalSummaryRow {
    feature_set: String,
    personalization: bool,
    windows: usize,
    positives: usize,
    tp: usize,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    tn: usize,
    precision: f64,
    recall: f64,
    f2: f64,
    random_mean_f2: f64,
    random_std_f2: f64,
    lift: f64,
}

/// Config digest view: only sections that shape results. Run-location
/// fields (output dir, threads, input paths) are excluded so identical
/// pipelines hash identically wherever they run.
#[derive(Serialize)]
struct DigestView<'a> {
    schema_version: u32,
    synth: &'a SynthSection,
    pca: &'a PcaSection,
    gmm: &'a GmmSection,
    pam: &'a PamSection,
    analytics: &'a AnalyticsSection,
    predictor: &'a PredictorSection,
}

pub fn config_digest(config: &PipelineConfig) -> String {
    let view = DigestView {
        schema_version: config.schema_version,
        synth: &config.synth,
        pca: &config.pca,
        gmm: &config.gmm,
        pam: &config.pam,
        analytics: &config.analytics,
        predictor: &config.predictor,
    };
    artifacts::sha256_str(&serde_json::to_string(&view).expect("config serializes"))
}

/// Quantile by linear interpolation at q * (n - 1) over a sorted slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0);
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Tracks report files as they are written so the manifest lists exactly
/// what this run produced.
struct Emitter<'a> {
    dir: &'a Path,
    written: Vec<(String, &'static str)>,
}

impl<'a> Emitter<'a> {
    fn csv<T: Serialize>(&mut self, name: &str, category: &'static str, rows: &[T]) -> Result<()> {
        artifacts::write_csv(&self.dir.join(name), rows)?;
        self.written.push((name.to_string(), category));
        Ok(())
    }

    fn svg(&mut self, name: &str, category: &'static str, doc: String) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, doc).map_err(|e| CliError::io(&path, e))?;
        self.written.push((name.to_string(), category));
        Ok(())
    }
}

pub fn run(ctx: &Ctx, plots: PlotFormat) -> Result<()> {
    let dataset: DatasetArtifact = artifacts::read_json(&ctx.layout.dataset(), "ingest")?;
    let analytics_dir = ctx.layout.analytics();
    let report_dir = ctx.layout.report();
    std::fs::create_dir_all(&report_dir).map_err(|e| CliError::io(&report_dir, e))?;
    let mut emit = Emitter { dir: &report_dir, written: Vec::new() };

    // Cluster summaries, covariance traces, profiles: gmm + pam side by side.
    let mut combined: Vec<CombinedClusterRow> = Vec::new();
    let mut traces: Vec<TraceRow> = Vec::new();
    let mut profiles: Vec<CombinedProfileRow> = Vec::new();
    let gmm_clusters: Vec<ClusterRow> =
        artifacts::read_csv(&analytics_dir.join("gmm_clusters.csv"), "analyze")?;
    let pam_clusters: Vec<ClusterRow> =
        artifacts::read_csv(&analytics_dir.join("pam_clusters.csv"), "analyze")?;
    let gmm_profiles: Vec<ProfileRow> =
        artifacts::read_csv(&analytics_dir.join("gmm_profiles.csv"), "analyze")?;
    let pam_profiles: Vec<ProfileRow> =
        artifacts::read_csv(&analytics_dir.join("pam_profiles.csv"), "analyze")?;
    for (model, clusters, model_profiles) in
        [("gmm", &gmm_clusters, &gmm_profiles), ("pam", &pam_clusters, &pam_profiles)]
    {
        for c in clusters {
            combined.push(CombinedClusterRow {
                model,
                label: c.label,
                size: c.size,
                covariance_trace: c.covariance_trace,
                mean_assigned_score: c.mean_assigned_score,
                mean_weighted_score: c.mean_weighted_score,
            });
            traces.push(TraceRow { model, label: c.label, covariance_trace: c.covariance_trace });
        }
        for p in model_profiles {
            profiles.push(CombinedProfileRow {
                model,
                label: p.label,
                modality: &p.modality,
                hour: p.hour,
                mean: p.mean,
            });
        }
    }
    emit.csv("cluster_summaries.csv", CAT_CLUSTERS, &combined)?;
    emit.csv("covariance_traces.csv", CAT_TRACES, &traces)?;
    emit.csv("cluster_profiles.csv", CAT_PROFILES, &profiles)?;

    // Score time series with relapse markers.
    let scores: Vec<ScoresCsvRow> = artifacts::read_csv(&ctx.layout.scores(), "score")?;
    let relapse_days: BTreeSet<(&str, NaiveDate)> = dataset
        .cohort
        .patients
        .iter()
        .flat_map(|p| p.relapse_events.iter().map(|&d| (p.patient_id.as_str(), d)))
        .collect();
    let timeseries: Vec<TimeseriesRow> = scores
        .iter()
        .map(|r| TimeseriesRow {
            patient_id: r.patient_id.clone(),
            date: r.date,
            gmm_assigned_likelihood: r.gmm_assigned_likelihood,
            gmm_weighted_likelihood: r.gmm_weighted_likelihood,
            pam_assigned_distance: r.pam_assigned_distance,
            pam_weighted_distance: r.pam_weighted_distance,
            pam_dtw_prev_day: r.pam_dtw_prev_day,
            relapse: u8::from(relapse_days.contains(&(r.patient_id.as_str(), r.date))),
        })
        .collect();
    emit.csv("score_timeseries.csv", CAT_TIMESERIES, &timeseries)?;

    // Near-relapse boxplot data + deltas.
    let samples: Vec<NrSampleRow> =
        artifacts::read_csv(&analytics_dir.join("nr_samples.csv"), "analyze")?;
    let mut groups: BTreeMap<(String, u32, String), Vec<f64>> = BTreeMap::new();
    for s in &samples {
        groups.entry((s.score.clone(), s.x, s.group.clone())).or_default().push(s.value);
    }
    let box_rows: Vec<BoxRow> = groups
        .into_iter()
        .map(|((score, x, group), mut values)| {
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            BoxRow {
                score,
                x,
                group,
                n: values.len(),
                min: values[0],
                q1: quantile(&values, 0.25),
                median: quantile(&values, 0.5),
                q3: quantile(&values, 0.75),
                max: *values.last().unwrap(),
            }
        })
        .collect();
    emit.csv("nr_boxplot.csv", CAT_NEAR_RELAPSE, &box_rows)?;
    let deltas: Vec<NrSummaryRow> =
        artifacts::read_csv(&analytics_dir.join("nr_summary.csv"), "analyze")?;
    emit.csv("nr_deltas.csv", CAT_NEAR_RELAPSE, &deltas)?;

    // Evaluation tables: one row per evaluated feature set.
    let eval_dir = ctx.layout.evaluation();
    artifacts::require(&eval_dir, "evaluate")?;
    let mut eval_files: Vec<std::path::PathBuf> = std::fs::read_dir(&eval_dir)
        .map_err(|e| CliError::io(&eval_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "json"))
        .collect();
    eval_files.sort();
    if eval_files.is_empty() {
        return Err(CliError::MissingArtifact {
            artifact: "evaluation/*.json".into(),
            stage: "evaluate".into(),
        });
    }
    let mut eval_rows: Vec<EvalSummaryRow> = Vec::new();
    for path in &eval_files {
        let artifact: EvaluationArtifact = artifacts::read_json(path, "evaluate")?;
        let r = &artifact.report;
        eval_rows.push(EvalSummaryRow {
            feature_set: r.feature_set.clone(),
            personalization: r.personalization,
            windows: r.predictions.len(),
            positives: r.predictions.iter().filter(|p| p.label).count(),
            tp: r.tp,
            fp: r.fp,
            fn_: r.fn_,
            tn: r.tn,
            precision: r.precision,
            recall: r.recall,
            f2: r.f2,
            random_mean_f2: artifact.random_baseline.mean_f2,
            random_std_f2: artifact.random_baseline.std_f2,
            lift: r.f2 - artifact.random_baseline.mean_f2,
        });
    }
    emit.csv("evaluation_summary.csv", CAT_EVALUATION, &eval_rows)?;

    if plots == PlotFormat::Svg {
        render_boxplots(&mut emit)?;
        render_timeseries(&mut emit)?;
        render_evaluation(&mut emit)?;
        render_cluster_sizes(&mut emit)?;
    }

    // Manifest: every file this run wrote, hashed.
    let mut files = BTreeMap::new();
    for (name, category) in &emit.written {
        let (bytes, sha256) = artifacts::sha256_file(&report_dir.join(name))?;
        files.insert(name.clone(), FileEntry { bytes, sha256, category: category.to_string() });
    }
    let manifest = Manifest {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        seed: ctx.seed,
        config_sha256: config_digest(&ctx.config),
        files,
    };
    artifacts::write_json(&report_dir.join(MANIFEST), &manifest)?;
    log::info!("report: {} files -> {}", manifest.files.len() + 1, report_dir.display());
    Ok(())
}

/// One boxplot panel per score series, boxes ordered by window length and
/// group. Rendered purely from nr_boxplot.csv; the quartile values ride
/// along as data-* attributes.
fn render_boxplots(emit: &mut Emitter) -> Result<()> {
    let rows: Vec<BoxRow> = artifacts::read_csv(&emit.dir.join("nr_boxplot.csv"), "report")?;
    let mut by_score: BTreeMap<String, Vec<&BoxRow>> = BTreeMap::new();
    for row in &rows {
        by_score.entry(row.score.clone()).or_default().push(row);
    }
    for (score, mut boxes) in by_score {
        boxes.sort_by(|a, b| (a.x, &a.group).cmp(&(b.x, &b.group)));
        let (width, height, margin) = (640.0, 360.0, 48.0);
        let lo = boxes.iter().map(|b| b.min).fold(f64::INFINITY, f64::min);
        let hi = boxes.iter().map(|b| b.max).fold(f64::NEG_INFINITY, f64::max);
        let y = Scale::new(lo, hi, height - margin, margin);
        let mut svg = Svg::new(width, height);
        svg.text(width / 2.0, margin / 2.0, 14.0, "middle", &score);
        svg.line(margin, height - margin, width - margin, height - margin, "#333", 1.0);
        let slot = (width - 2.0 * margin) / boxes.len() as f64;
        for (i, b) in boxes.iter().enumerate() {
            let cx = margin + slot * (i as f64 + 0.5);
            let half = slot * 0.3;
            svg.group(&[
                ("data-score", b.score.clone()),
                ("data-x", b.x.to_string()),
                ("data-group", b.group.clone()),
                ("data-n", b.n.to_string()),
                ("data-q1", b.q1.to_string()),
                ("data-median", b.median.to_string()),
                ("data-q3", b.q3.to_string()),
            ]);
            let fill = if b.group == "nr" { "#f4a582" } else { "#92c5de" };
            svg.line(cx, y.at(b.min), cx, y.at(b.q1), "#333", 1.0);
            svg.line(cx, y.at(b.q3), cx, y.at(b.max), "#333", 1.0);
            svg.rect(cx - half, y.at(b.q3), 2.0 * half, y.at(b.q1) - y.at(b.q3), fill, "#333");
            svg.line(cx - half, y.at(b.median), cx + half, y.at(b.median), "#000", 1.5);
            svg.end_group();
            svg.text(
                cx,
                height - margin + 16.0,
                10.0,
                "middle",
                &format!("{}{}", b.group, b.x),
            );
        }
        emit.svg(&format!("nr_boxplot_{score}.svg"), CAT_NEAR_RELAPSE, svg.finish())?;
    }
    Ok(())
}

/// Per-patient score traces with relapse markers, for patients that have
/// at least one relapse. Rendered purely from score_timeseries.csv.
fn render_timeseries(emit: &mut Emitter) -> Result<()> {
    #[derive(Deserialize)]
    struct Row {
        patient_id: String,
        gmm_weighted_likelihood: Option<f64>,
        pam_assigned_distance: Option<f64>,
        relapse: u8,
    }
    let rows: Vec<Row> = artifacts::read_csv(&emit.dir.join("score_timeseries.csv"), "report")?;
    let mut by_patient: BTreeMap<&str, Vec<&Row>> = BTreeMap::new();
    for row in &rows {
        by_patient.entry(&row.patient_id).or_default().push(row);
    }
    for (patient, days) in by_patient {
        if !days.iter().any(|d| d.relapse == 1) {
            continue;
        }
        let (width, height, margin) = (720.0, 240.0, 40.0);
        let x = Scale::new(0.0, (days.len() - 1).max(1) as f64, margin, width - margin);
        let mut svg = Svg::new(width, height);
        svg.text(width / 2.0, margin / 2.0, 13.0, "middle", patient);
        svg.line(margin, height - margin, width - margin, height - margin, "#333", 1.0);
        for (i, d) in days.iter().enumerate() {
            if d.relapse == 1 {
                svg.line(x.at(i as f64), margin, x.at(i as f64), height - margin, "#d62728", 1.0);
            }
        }
        for (extract, color) in [
            (
                (|d: &Row| d.gmm_weighted_likelihood) as fn(&Row) -> Option<f64>,
                "#1f77b4",
            ),
            (|d: &Row| d.pam_assigned_distance, "#ff7f0e"),
        ] {
            let present: Vec<(usize, f64)> =
                days.iter().enumerate().filter_map(|(i, d)| extract(d).map(|v| (i, v))).collect();
            if present.is_empty() {
                continue;
            }
            let lo = present.iter().map(|&(_, v)| v).fold(f64::INFINITY, f64::min);
            let hi = present.iter().map(|&(_, v)| v).fold(f64::NEG_INFINITY, f64::max);
            let y = Scale::new(lo, hi, height - margin, margin);
            let points: Vec<(f64, f64)> =
                present.iter().map(|&(i, v)| (x.at(i as f64), y.at(v))).collect();
            svg.polyline(&points, color);
        }
        emit.svg(&format!("score_timeseries_{patient}.svg"), CAT_TIMESERIES, svg.finish())?;
    }
    Ok(())
}

/// F2 per feature set against its random baseline, from
/// evaluation_summary.csv.
fn render_evaluation(emit: &mut Emitter) -> Result<()> {
    #[derive(Deserialize)]
    struct Row {
        feature_set: String,
        f2: f64,
        random_mean_f2: f64,
    }
    let rows: Vec<Row> = artifacts::read_csv(&emit.dir.join("evaluation_summary.csv"), "report")?;
    let (width, height, margin) = (560.0, 300.0, 48.0);
    let hi = rows.iter().map(|r| r.f2.max(r.random_mean_f2)).fold(0.1_f64, f64::max);
    let y = Scale::new(0.0, hi, height - margin, margin);
    let mut svg = Svg::new(width, height);
    svg.line(margin, height - margin, width - margin, height - margin, "#333", 1.0);
    let slot = (width - 2.0 * margin) / rows.len().max(1) as f64;
    for (i, row) in rows.iter().enumerate() {
        let cx = margin + slot * (i as f64 + 0.5);
        let half = slot * 0.35;
        svg.group(&[
            ("data-feature-set", row.feature_set.clone()),
            ("data-f2", row.f2.to_string()),
            ("data-random-mean", row.random_mean_f2.to_string()),
        ]);
        svg.rect(cx - half, y.at(row.f2), 2.0 * half, y.at(0.0) - y.at(row.f2), "#1f77b4", "none");
        svg.line(cx - half, y.at(row.random_mean_f2), cx + half, y.at(row.random_mean_f2), "#d62728", 1.5);
        svg.end_group();
        svg.text(cx, height - margin + 16.0, 9.0, "middle", &row.feature_set);
    }
    emit.svg("evaluation_summary.svg", CAT_EVALUATION, svg.finish())?;
    Ok(())
}

/// Cluster sizes per model, from cluster_summaries.csv.
fn render_cluster_sizes(emit: &mut Emitter) -> Result<()> {
    #[derive(Deserialize)]
    struct Row {
        model: String,
        label: usize,
        size: usize,
    }
    let rows: Vec<Row> = artifacts::read_csv(&emit.dir.join("cluster_summaries.csv"), "report")?;
    let (width, height, margin) = (640.0, 280.0, 48.0);
    let hi = rows.iter().map(|r| r.size).max().unwrap_or(1) as f64;
    let y = Scale::new(0.0, hi, height - margin, margin);
    let mut svg = Svg::new(width, height);
    svg.line(margin, height - margin, width - margin, height - margin, "#333", 1.0);
    let slot = (width - 2.0 * margin) / rows.len().max(1) as f64;
    for (i, row) in rows.iter().enumerate() {
        let cx = margin + slot * (i as f64 + 0.5);
        let half = slot * 0.35;
        let fill = if row.model == "gmm" { "#1f77b4" } else { "#ff7f0e" };
        svg.group(&[
            ("data-model", row.model.clone()),
            ("data-label", row.label.to_string()),
            ("data-size", row.size.to_string()),
        ]);
        svg.rect(cx - half, y.at(row.size as f64), 2.0 * half, y.at(0.0) - y.at(row.size as f64), fill, "none");
        svg.end_group();
        svg.text(
            cx,
            height - margin + 16.0,
            9.0,
            "middle",
            &format!("{}{}", &row.model[..1], row.label),
        );
    }
    emit.svg("cluster_sizes.svg", CAT_CLUSTERS, svg.finish())?;
    Ok(())
}
