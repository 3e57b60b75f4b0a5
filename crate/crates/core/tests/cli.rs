use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;
use wacal::calibrate::CalibReport;
use wacal::catalog;
use wacal::cli::{EXIT_ERROR, EXIT_FAILED, EXIT_OK};
use wacal::evaluate::{RunScore, StudySummary};
use wacal::io;
use wacal::simulate::Truth;
use wacal::TargetConfig;

fn wacal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wacal"))
        .args(args)
        .env("WACAL_JOBS", "1")
        .output()
        .expect("binary runs")
}

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["wacal"];
    full.extend_from_slice(args);
    wacal::cli::run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let ws = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        io::write_json(&ws.path("target.json"), &TargetConfig::default_aprilgrid()).unwrap();
        io::write_json(&ws.path("radtan.json"), &catalog::s04525()).unwrap();
        io::write_json(&ws.path("mei.json"), &catalog::bt2120_mei()).unwrap();
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn simulate(&self, truth: &str, seed: &str, out: &str, extra: &[&str]) -> PathBuf {
        let out = self.path(out);
        let mut args = vec![
            "simulate",
            "--truth",
            s(&self.path(truth)).to_owned().leak(),
            "--target",
            s(&self.path("target.json")).to_owned().leak(),
            "--seed",
            seed,
            "--out",
            s(&out).to_owned().leak(),
        ];
        args.extend_from_slice(extra);
        assert_eq!(run(&args), EXIT_OK);
        out
    }
}

#[test]
fn simulate_is_reproducible_and_uses_default_noise() {
    let ws = Workspace::new();
    let a = ws.simulate("radtan.json", "7", "a", &["--frames", "3"]);
    let b = ws.simulate("radtan.json", "7", "b", &["--frames", "3"]);
    for f in ["observations.jsonl", "truth.json", "sim_config.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let truth: Truth = io::read_json(&a.join("truth.json")).unwrap();
    assert_eq!(truth.noise_sigma, 0.7);
    assert_eq!(truth.poses.len(), 3);
    let obs = io::read_observations(&a.join("observations.jsonl")).unwrap();
    assert_eq!(
        io::observations_to_string(&obs),
        fs::read_to_string(a.join("observations.jsonl")).unwrap()
    );
}

#[test]
fn calibrate_writes_a_report_that_round_trips() {
    let ws = Workspace::new();
    let sim = ws.simulate("radtan.json", "1", "sim", &["--frames", "12"]);
    let report = ws.path("report.json");
    let code = run(&[
        "calibrate",
        "--model",
        "radtan",
        "--target",
        s(&ws.path("target.json")),
        "--obs",
        s(&sim.join("observations.jsonl")),
        "--out",
        s(&report),
        "--image-size",
        "1600x1200",
    ]);
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(&report).unwrap();
    let parsed: CalibReport = serde_json::from_str(&text).unwrap();
    assert!(parsed.converged);
    assert_eq!(parsed.config.image_size, Some([1600, 1200]));
    let again = serde_json::to_string_pretty(&parsed).unwrap() + "\n";
    assert_eq!(again, text);

    let score = ws.path("score.json");
    let code = run(&[
        "evaluate",
        "--report",
        s(&report),
        "--truth",
        s(&sim.join("truth.json")),
        "--out",
        s(&score),
    ]);
    assert_eq!(code, EXIT_OK);
    let score: RunScore = io::read_json(&score).unwrap();
    assert!(!score.failed);
    assert!(score.error("fx").unwrap().abs() < 5.0);

    let mut bad = parsed.clone();
    bad.spec.params[0] += 100.0;
    io::write_json(&ws.path("bad.json"), &bad).unwrap();
    let code = run(&[
        "evaluate",
        "--report",
        s(&ws.path("bad.json")),
        "--truth",
        s(&sim.join("truth.json")),
    ]);
    assert_eq!(code, EXIT_FAILED);
}

#[test]
fn missing_target_is_an_input_error() {
    let ws = Workspace::new();
    let missing = ws.path("nope.json");
    let out = wacal(&[
        "calibrate",
        "--model",
        "kb8",
        "--target",
        s(&missing),
        "--obs",
        s(&ws.path("obs.jsonl")),
        "--out",
        s(&ws.path("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_ERROR));
    assert!(String::from_utf8_lossy(&out.stderr).contains(s(&missing)));
}

#[test]
fn malformed_observation_line_is_named() {
    let ws = Workspace::new();
    let obs = ws.path("obs.jsonl");
    fs::write(
        &obs,
        "{\"frame\":0,\"corners\":[[0,1.0,2.0]]}\n{\"frame\":1,\"corners\":[[0,1.0]]}\n",
    )
    .unwrap();
    let out = wacal(&[
        "calibrate",
        "--model",
        "radtan",
        "--target",
        s(&ws.path("target.json")),
        "--obs",
        s(&obs),
        "--out",
        s(&ws.path("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_ERROR));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("obs.jsonl:2:"), "{err}");
}

#[test]
fn non_convergence_exits_two_with_report() {
    let ws = Workspace::new();
    let sim = ws.simulate("mei.json", "3", "sim", &["--frames", "8"]);
    let report = ws.path("report.json");
    let out = wacal(&[
        "calibrate",
        "--model",
        "mei",
        "--target",
        s(&ws.path("target.json")),
        "--obs",
        s(&sim.join("observations.jsonl")),
        "--out",
        s(&report),
        "--max-iterations",
        "1",
        "--trim-rounds",
        "0",
    ]);
    assert_eq!(out.status.code(), Some(EXIT_FAILED));
    let r: CalibReport = io::read_json(&report).unwrap();
    assert!(!r.converged);
    assert!(String::from_utf8_lossy(&out.stdout).contains("rms"));
}

#[test]
fn flags_override_config_file() {
    let ws = Workspace::new();
    let sim = ws.simulate("radtan.json", "2", "sim", &["--frames", "6"]);
    let manifest = ws.path("manifest.json");
    fs::write(
        &manifest,
        format!(
            "{{\"target\": {:?}, \"observations\": {:?}, \"calib\": {{\"model_kind\": \"RadTan\", \"trim_threshold\": 3.0, \"loss\": {{\"kind\": \"cauchy\"}}}}}}",
            s(&ws.path("target.json")),
            s(&sim.join("observations.jsonl"))
        ),
    )
    .unwrap();
    let report = ws.path("report.json");
    let code = run(&[
        "calibrate",
        "--config",
        s(&manifest),
        "--out",
        s(&report),
        "--trim",
        "4",
    ]);
    assert_eq!(code, EXIT_OK);
    let r: CalibReport = io::read_json(&report).unwrap();
    assert_eq!(r.config.trim_threshold, 4.0);
    assert_eq!(r.config.loss.kind, wacal::calibrate::LossKind::Cauchy);
    assert_eq!(r.config.loss.scale, 1.0);
    assert_eq!(r.config.trim_rounds, 2);
}

#[test]
fn study_of_a_narrow_lens_has_no_failures() {
    let ws = Workspace::new();
    let out = ws.path("study");
    let code = run(&[
        "study",
        "--truth",
        s(&ws.path("radtan.json")),
        "--models",
        "radtan",
        "--seeds",
        "9",
        "--group",
        "S04525",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let text = fs::read_to_string(out.join("summary.csv")).unwrap();
    let summary: StudySummary = text.parse().unwrap();
    assert_eq!(summary.to_csv(), text);
    let g = &summary.groups[0];
    assert_eq!((g.failures, g.runs), (0, 9));
    // Header, five statistics for eight parameters plus RMS, two counts.
    assert_eq!(text.lines().count(), 1 + 5 * (8 + 1) + 2);
    let table = fs::read_to_string(out.join("failures.tsv")).unwrap();
    assert_eq!(table, "model\tS04525\nRadTan\t0/9\n");
    assert_eq!(fs::read_to_string(out.join("runs.jsonl")).unwrap().lines().count(), 9);
}

#[test]
fn bad_initial_focal_trips_the_failure_rule() {
    let ws = Workspace::new();
    let out = ws.path("study");
    let code = run(&[
        "study",
        "--truth",
        s(&ws.path("radtan.json")),
        "--seeds",
        "3",
        "--frames",
        "10",
        "--init-focal-scale",
        "3",
        "--max-iterations",
        "3",
        "--trim-rounds",
        "0",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_OK);
    let summary: StudySummary = fs::read_to_string(out.join("summary.csv")).unwrap().parse().unwrap();
    assert!(summary.groups[0].failures > 0);
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = wacal(&["calibrat"]);
    assert_eq!(out.status.code(), Some(EXIT_ERROR));
    assert_eq!(wacal(&["--help"]).status.code(), Some(EXIT_OK));
}
