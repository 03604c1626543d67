//! Black-box tests of the `routines` binary: flag resolution, error
//! records, stage ordering, and the report contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde::Deserialize;

const CONFIG: &str = r#"
schema_version = 1
allow_out_of_range = true

[run]
seed = 42

[synth]
n_patients = 8
days_per_patient = 70
n_relapses = 4
max_relapse_patients = 3
missing_rate = 0.02

[gmm]
k_min = 8
k_max = 8
cov_types = ["diagonal"]
restarts = 1

[pam]
k_min = 8
k_max = 8
inits = 1

[predictor]
n_bins = [3, 5]
subset_size = [30]
n_features = [5, 10]
random_trials = 200
"#;

const ALL_STAGES: [&str; 8] =
    ["synth", "ingest", "fit-gmm", "fit-pam", "score", "analyze", "evaluate", "report"];

fn routines(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_routines"));
    cmd.args(args);
    cmd.env_remove("ROUTINES_OUT");
    cmd.env("RUST_LOG", "error");
    for (key, value) in envs {
        cmd.env(key, value);
    }
    cmd.output().expect("binary runs")
}

fn run_ok(args: &[&str]) {
    let out = routines(args, &[]);
    assert!(
        out.status.success(),
        "stage {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Parses the machine-readable error record: the last stderr line.
fn error_record(out: &Output) -> serde_json::Value {
    assert!(!out.status.success(), "expected failure, got success");
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().rev().find(|l| !l.trim().is_empty()).expect("stderr has a record");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("bad error record {line:?}: {e}"))
}

fn write_config(dir: &Path) -> PathBuf {
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, CONFIG).unwrap();
    path
}

/// One completed pipeline run shared by the report-contract tests.
fn fixture() -> &'static Path {
    static FIXTURE: OnceLock<PathBuf> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let config = write_config(&dir);
        let out = dir.join("out");
        for stage in ALL_STAGES {
            run_ok(&["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), stage]);
        }
        dir
    })
}

fn fixture_out() -> PathBuf {
    fixture().join("out")
}

#[test]
fn evaluate_before_score_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("out");
    let base = ["--config", config.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
    run_ok(&[&base[..], &["synth"]].concat());
    run_ok(&[&base[..], &["ingest"]].concat());
    let out = routines(&[&base[..], &["evaluate"]].concat(), &[]);
    let record = error_record(&out);
    assert_eq!(record["error"]["kind"], "missing_artifact");
    assert_eq!(record["error"]["artifact"], "scores.csv");
    assert_eq!(record["error"]["run_stage"], "score");
}

#[test]
fn invalid_config_key_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "schema_version = 1\n[run]\nseed = 1\n[gmm]\nrestartz = 5\n").unwrap();
    let out = routines(&["--config", config.to_str().unwrap(), "--out", "/tmp/x", "synth"], &[]);
    let record = error_record(&out);
    assert_eq!(record["error"]["kind"], "config");
    assert_eq!(record["error"]["key"], "gmm.restartz");
}

#[test]
fn missing_seed_is_a_config_error_naming_run_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("no_seed.toml");
    std::fs::write(&config, "schema_version = 1\n").unwrap();
    let out = routines(&["--config", config.to_str().unwrap(), "--out", "/tmp/x", "synth"], &[]);
    let record = error_record(&out);
    assert_eq!(record["error"]["kind"], "config");
    assert_eq!(record["error"]["key"], "run.seed");
}

#[test]
fn missing_out_dir_is_a_config_error() {
    let out = routines(&["--seed", "1", "synth"], &[]);
    let record = error_record(&out);
    assert_eq!(record["error"]["kind"], "config");
    assert_eq!(record["error"]["key"], "run.out_dir");
}

#[test]
fn out_env_var_supplies_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out_dir = dir.path().join("from_env");
    let out = routines(
        &["--config", config.to_str().unwrap(), "synth"],
        &[("ROUTINES_OUT", out_dir.to_str().unwrap())],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("cohort").join("observations.csv").exists());
}

#[test]
fn unknown_feature_set_is_rejected_with_a_record() {
    let out = routines(&["--seed", "1", "--out", "/tmp/x", "--feature-set", "bogus", "evaluate"], &[]);
    let record = error_record(&out);
    assert_eq!(record["error"]["kind"], "config");
    assert_eq!(record["error"]["key"], "--feature-set");
}

#[test]
fn unknown_plot_format_is_rejected_with_a_record() {
    let out = routines(&["--seed", "1", "--out", "/tmp/x", "report", "--plots", "pdf"], &[]);
    let record = error_record(&out);
    assert_eq!(record["error"]["kind"], "config");
    assert_eq!(record["error"]["key"], "--plots");
}

#[test]
fn synth_is_deterministic_across_output_directories() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    for sub in ["a", "b"] {
        run_ok(&[
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.path().join(sub).to_str().unwrap(),
            "synth",
        ]);
    }
    let read = |sub: &str| std::fs::read(dir.path().join(sub).join("cohort/observations.csv")).unwrap();
    assert_eq!(read("a"), read("b"), "same config + seed must produce identical archives");
}

#[derive(Deserialize)]
struct Manifest {
    schema_version: u32,
    seed: u64,
    config_sha256: String,
    files: std::collections::BTreeMap<String, FileEntry>,
}

#[derive(Deserialize)]
struct FileEntry {
    bytes: u64,
    sha256: String,
    category: String,
}

fn load_manifest(out: &Path) -> Manifest {
    let text = std::fs::read_to_string(out.join("report/manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn report_manifest_covers_all_six_categories_and_every_file() {
    let out = fixture_out();
    let manifest = load_manifest(&out);
    assert_eq!(manifest.schema_version, 1);
    assert_eq!(manifest.seed, 42);
    assert_eq!(manifest.config_sha256.len(), 64);

    let categories: std::collections::BTreeSet<&str> =
        manifest.files.values().map(|f| f.category.as_str()).collect();
    for expected in [
        "cluster_summaries",
        "covariance_traces",
        "cluster_profiles",
        "score_timeseries",
        "near_relapse",
        "evaluation",
    ] {
        assert!(categories.contains(expected), "missing category {expected}");
    }

    // Every listed file exists with the recorded size; every file in the
    // report directory except the manifest itself is listed.
    for (name, entry) in &manifest.files {
        let meta = std::fs::metadata(out.join("report").join(name)).unwrap();
        assert_eq!(meta.len(), entry.bytes, "{name} size drifted");
        assert_eq!(entry.sha256.len(), 64);
    }
    let mut on_disk: Vec<String> = std::fs::read_dir(out.join("report"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    on_disk.sort();
    let listed: Vec<String> = manifest.files.keys().cloned().collect();
    assert_eq!(on_disk, listed);
}

/// Minimal well-formedness scanner for the SVGs this binary emits.
fn check_xml(text: &str) -> Result<(), String> {
    let mut stack: Vec<String> = Vec::new();
    let mut roots = 0usize;
    let mut rest = text;
    while let Some(open) = rest.find('<') {
        let tail = &rest[open + 1..];
        let close = tail.find('>').ok_or("unclosed tag bracket")?;
        let tag = &tail[..close];
        if tag.matches('"').count() % 2 != 0 {
            return Err(format!("odd quote count in <{tag}>"));
        }
        if let Some(name) = tag.strip_prefix('/') {
            let top = stack.pop().ok_or_else(|| format!("</{name}> without opener"))?;
            if top != name.trim() {
                return Err(format!("</{name}> closes <{top}>"));
            }
            if stack.is_empty() {
                roots += 1;
            }
        } else if tag.ends_with('/') {
            if stack.is_empty() {
                roots += 1;
            }
        } else if !tag.starts_with('?') && !tag.starts_with('!') {
            let name = tag.split_whitespace().next().ok_or("empty tag")?;
            stack.push(name.to_string());
        }
        rest = &tail[close + 1..];
    }
    if let Some(unclosed) = stack.last() {
        return Err(format!("unclosed <{unclosed}>"));
    }
    if roots != 1 {
        return Err(format!("expected one root element, found {roots}"));
    }
    Ok(())
}

#[test]
fn every_emitted_svg_is_well_formed_xml() {
    let out = fixture_out();
    let mut checked = 0;
    for entry in std::fs::read_dir(out.join("report")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "svg") {
            let text = std::fs::read_to_string(&path).unwrap();
            check_xml(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            checked += 1;
        }
    }
    assert!(checked >= 7, "expected boxplot + timeseries + summary SVGs, found {checked}");
}

fn svg_attr<'a>(tag: &'a str, name: &str) -> Option<&'a str> {
    let pat = format!("{name}=\"");
    let start = tag.find(&pat)? + pat.len();
    let end = tag[start..].find('"')? + start;
    Some(&tag[start..end])
}

/// Quantile by linear interpolation at q * (n - 1): the documented method.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[test]
fn boxplot_svg_quartiles_match_recomputation_from_raw_samples() {
    let out = fixture_out();

    #[derive(Deserialize)]
    struct Sample {
        score: String,
        x: u32,
        group: String,
        value: f64,
    }
    let mut samples: std::collections::BTreeMap<(String, u32, String), Vec<f64>> =
        std::collections::BTreeMap::new();
    let mut reader = csv::Reader::from_path(out.join("analytics/nr_samples.csv")).unwrap();
    for row in reader.deserialize::<Sample>() {
        let row = row.unwrap();
        samples.entry((row.score, row.x, row.group)).or_default().push(row.value);
    }
    assert!(!samples.is_empty());

    let mut boxes_checked = 0;
    for entry in std::fs::read_dir(out.join("report")).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        let Some(score) = name.strip_prefix("nr_boxplot_").and_then(|n| n.strip_suffix(".svg"))
        else {
            continue;
        };
        let text = std::fs::read_to_string(&path).unwrap();
        let mut rest = text.as_str();
        while let Some(at) = rest.find("<g ") {
            let tail = &rest[at..];
            let end = tail.find('>').unwrap();
            let tag = &tail[..end];
            let x: u32 = svg_attr(tag, "data-x").unwrap().parse().unwrap();
            let group = svg_attr(tag, "data-group").unwrap().to_string();
            let key = (score.to_string(), x, group);
            let mut values = samples.get(&key).unwrap_or_else(|| panic!("no samples {key:?}")).clone();
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (attr, q) in [("data-q1", 0.25), ("data-median", 0.5), ("data-q3", 0.75)] {
                let got: f64 = svg_attr(tag, attr).unwrap().parse().unwrap();
                let want = quantile(&values, q);
                assert_eq!(got, want, "{name} {key:?} {attr}");
            }
            let n: usize = svg_attr(tag, "data-n").unwrap().parse().unwrap();
            assert_eq!(n, values.len());
            boxes_checked += 1;
            rest = &tail[end..];
        }
    }
    assert!(boxes_checked >= 10, "checked only {boxes_checked} boxes");
}

#[test]
fn rerunning_report_reproduces_the_manifest_byte_for_byte() {
    let out = fixture_out();
    let manifest_path = out.join("report/manifest.json");
    let before = std::fs::read(&manifest_path).unwrap();
    let config = fixture().join("pipeline.toml");
    run_ok(&["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "report"]);
    let after = std::fs::read(&manifest_path).unwrap();
    assert_eq!(before, after, "report must be a pure function of its inputs");
}

#[test]
fn csv_plots_mode_emits_tables_but_no_svgs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let src = fixture_out();
    let out_dir = dir.path().join("out");
    // Reuse the fixture's upstream artifacts; only re-run report.
    copy_tree(&src, &out_dir, &["report"]);
    run_ok(&[
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "report",
        "--plots",
        "csv",
    ]);
    let names: Vec<String> = std::fs::read_dir(out_dir.join("report"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.iter().any(|n| n.ends_with(".csv")));
    assert!(!names.iter().any(|n| n.ends_with(".svg")), "csv mode must not render plots");
    let manifest = load_manifest(&out_dir);
    assert!(manifest.files.keys().all(|n| !n.ends_with(".svg")));
}

fn copy_tree(src: &Path, dst: &Path, skip: &[&str]) {
    std::fs::create_dir_all(dst).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().into_string().unwrap();
        if skip.contains(&name.as_str()) {
            continue;
        }
        let to = dst.join(&name);
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &to, &[]);
        } else {
            std::fs::copy(entry.path(), &to).unwrap();
        }
    }
}
