use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mfband::conformal::PredictionBand;
use mfband::simgen::{Scenario, ScenarioSpec};
use mfband_cli::bundle::ModelBundle;
use mfband_cli::commands;
use mfband_cli::io::read_curves;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

fn mfband(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfband"))
        .args(args)
        .env_remove(commands::THREADS_ENV)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `curve_id,component,t,value` rows for constant one-component curves on
/// three points.
fn constant_curves(values: &[(&str, f64)]) -> String {
    let mut out = String::from("curve_id,component,t,value\n");
    for (id, v) in values {
        for t in ["0", "0.5", "1"] {
            out += &format!("{id},1,{t},{v}\n");
        }
    }
    out
}

fn band_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn generated(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    let d = dir.join("data");
    ok(&mfband(&[
        "generate", "--study", "1", "--scenario", "1", "--n", &n.to_string(),
        "--coef-seed", "2", "--seed", "9", "--grid-points", "12", "--out-dir", s(&d),
    ]));
    (d.join("curves.csv"), d.join("covariates.csv"))
}

const SET2: &str = r#""regressor": {"terms": [["w"], ["w2"]]}"#;

#[test]
fn toy_two_curve_example() {
    let dir = TempDir::new().unwrap();
    let curves = write(dir.path(), "y.csv", &constant_curves(&[("a", 0.0), ("b", 1.0)]));
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"alpha": 0.5, "modulation": "s0", "split": {"kind": "explicit", "train": ["a"], "calib": ["b"]}}"#,
    );
    let bundle = dir.path().join("m.json");
    let stdout = ok(&mfband(&["calibrate", "--curves", s(&curves), "--config", s(&cfg), "--out", s(&bundle)]));
    assert!(stdout.contains("k = 1\n"), "{stdout}");
    assert!(stdout.contains("l = 1\n"), "{stdout}");
    assert!(stdout.contains("theoretical coverage = 0.5"), "{stdout}");

    let out = dir.path().join("band.csv");
    ok(&mfband(&["band", "--bundle", s(&bundle), "--out", s(&out)]));
    let rows = band_rows(&out);
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r[0], "new");
        assert_eq!(r[1], "1");
        let v: Vec<f64> = r[3..6].iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(v, [0.0, -1.0, 1.0]);
        assert_eq!(r[6], "closed");
    }

    ok(&mfband(&["band", "--bundle", s(&bundle), "--truncate-at-zero", "--out", s(&out)]));
    for r in band_rows(&out) {
        let v: Vec<f64> = r[3..6].iter().map(|x| x.parse().unwrap()).collect();
        assert_eq!(v, [0.0, 0.0, 1.0]);
    }
}

#[test]
fn zero_radius_bundle_round_trips() {
    let dir = TempDir::new().unwrap();
    let curves = write(dir.path(), "y.csv", &constant_curves(&[("a", 2.0), ("b", 2.0), ("c", 2.0)]));
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"alpha": 0.5, "modulation": "s0", "split": {"kind": "explicit", "train": ["a"], "calib": ["b", "c"]}}"#,
    );
    let bundle = dir.path().join("m.json");
    let stdout = ok(&mfband(&["calibrate", "--curves", s(&curves), "--config", s(&cfg), "--out", s(&bundle)]));
    assert!(stdout.contains("k = 0\n"), "{stdout}");
    let loaded = ModelBundle::load(&bundle).unwrap();
    assert_eq!(loaded.predictor.calibration().radius(), Some(0.0));
    let bands = commands::band(&loaded, &[], false).unwrap();
    let b = bands[0].band.bounded().unwrap();
    assert_eq!(b.lower, b.upper);
    assert_eq!(b.lower, bands[0].fit);
}

#[test]
fn parity_split_of_41_curves() {
    let dir = TempDir::new().unwrap();
    let (curves, cov) = generated(dir.path(), 40);
    let cfg = write(
        dir.path(),
        "c.json",
        &format!(r#"{{"alpha": 0.25, "modulation": "sigma", {SET2}, "split": {{"kind": "parity", "force_train": [20]}}}}"#),
    );
    let bundle = dir.path().join("m.json");
    let stdout = ok(&mfband(&[
        "calibrate", "--curves", s(&curves), "--covariates", s(&cov), "--config", s(&cfg), "--out", s(&bundle),
    ]));
    assert!(stdout.contains("m = 22\n"), "{stdout}");
    assert!(stdout.contains("l = 19\n"), "{stdout}");
    assert!(stdout.contains("theoretical coverage = 0.75"), "{stdout}");
    let meta = ModelBundle::load(&bundle).unwrap().metadata;
    assert!(meta.train_ids.contains(&"20".to_string()));
    assert!(meta.calib_ids.iter().all(|id| id.parse::<usize>().unwrap() % 2 == 0));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let (curves, cov) = generated(dir.path(), 30);
    let cfg = write(
        dir.path(),
        "c.json",
        &format!(
            r#"{{"alpha": 0.2, "mode": {{"kind": "smoothed", "seed": 5}}, "modulation": "sbar", {SET2}, "split": {{"kind": "random", "l": 14, "seed": 3}}}}"#
        ),
    );
    let run = |tag: &str| {
        let bundle = dir.path().join(format!("m{tag}.json"));
        let band = dir.path().join(format!("b{tag}.csv"));
        ok(&mfband(&[
            "calibrate", "--curves", s(&curves), "--covariates", s(&cov), "--config", s(&cfg), "--out", s(&bundle),
        ]));
        ok(&mfband(&["band", "--bundle", s(&bundle), "--covariates", s(&cov), "--out", s(&band)]));
        (std::fs::read(bundle).unwrap(), std::fs::read(band).unwrap())
    };
    assert_eq!(run("1"), run("2"));
}

#[test]
fn csv_round_trip() {
    let dir = TempDir::new().unwrap();
    let (curves, cov) = generated(dir.path(), 20);
    let mut spec = ScenarioSpec::new(1, 1, 20, 2);
    spec.grid_points = 12;
    let data = Scenario::new(spec).unwrap().generate(&mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let table = read_curves(&curves).unwrap();
    assert_eq!(table.grid, *data.grid());
    for (read, o) in table.curves.iter().zip(data.observations()) {
        for (a, b) in read.values().iter().flatten().zip(o.y.values().iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    let cfg = write(
        dir.path(),
        "c.json",
        &format!(r#"{{"alpha": 0.1, "modulation": "sigma", {SET2}, "split": {{"kind": "random", "l": 10, "seed": 1}}}}"#),
    );
    let bundle = dir.path().join("m.json");
    let band = dir.path().join("b.csv");
    ok(&mfband(&[
        "calibrate", "--curves", s(&curves), "--covariates", s(&cov), "--config", s(&cfg), "--out", s(&bundle),
    ]));
    ok(&mfband(&["band", "--bundle", s(&bundle), "--covariates", s(&cov), "--out", s(&band)]));
    let loaded = ModelBundle::load(&bundle).unwrap();
    let direct = commands::band(&loaded, &[cov], false).unwrap();
    let rows = band_rows(&band);
    assert_eq!(rows.len(), 21 * 2 * 12);
    let mut it = rows.iter();
    for bc in &direct {
        let b = bc.band.bounded().unwrap();
        for j in 0..2 {
            for g in 0..12 {
                let r = it.next().unwrap();
                assert_eq!(r[0], bc.id);
                let v: Vec<f64> = r[3..6].iter().map(|x| x.parse().unwrap()).collect();
                let want = [bc.fit.component(j)[g], b.lower.component(j)[g], b.upper.component(j)[g]];
                for (a, w) in v.iter().zip(want) {
                    assert!((a - w).abs() <= 1e-12 * w.abs().max(1.0));
                }
            }
        }
    }
}

#[test]
fn bundle_version_mismatch_is_rejected() {
    let dir = TempDir::new().unwrap();
    let curves = write(dir.path(), "y.csv", &constant_curves(&[("a", 0.0), ("b", 1.0)]));
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"alpha": 0.5, "modulation": "s0", "split": {"kind": "explicit", "train": ["a"], "calib": ["b"]}}"#,
    );
    let bundle = dir.path().join("m.json");
    ok(&mfband(&["calibrate", "--curves", s(&curves), "--config", s(&cfg), "--out", s(&bundle)]));
    let text = std::fs::read_to_string(&bundle).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
    std::fs::write(&bundle, text).unwrap();
    let out = mfband(&["band", "--bundle", s(&bundle), "--out", s(&dir.path().join("b.csv"))]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("format version 2"));
}

#[test]
fn bad_inputs_exit_codes() {
    let dir = TempDir::new().unwrap();
    let curves = write(dir.path(), "y.csv", &constant_curves(&[("a", 0.0), ("b", 1.0), ("c", 3.0)]));
    let bundle = dir.path().join("m.json");
    let cal = |cfg: &Path, curves: &Path| mfband(&["calibrate", "--curves", s(curves), "--config", s(cfg), "--out", s(&bundle)]);

    let infeasible = write(
        dir.path(),
        "inf.json",
        r#"{"alpha": 0.2, "modulation": "s0", "split": {"kind": "explicit", "train": ["a"], "calib": ["b", "c"]}}"#,
    );
    let out = cal(&infeasible, &curves);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("0.3333333333333333"));

    let unknown = write(dir.path(), "u.json", r#"{"alpha": 0.5, "modulation": "s0", "colour": 1, "split": {"kind": "parity"}}"#);
    assert_eq!(code(&cal(&unknown, &curves)), 2);

    let ok_cfg = write(
        dir.path(),
        "ok.json",
        r#"{"alpha": 0.5, "modulation": "s0", "split": {"kind": "explicit", "train": ["a"], "calib": ["b", "c"]}}"#,
    );
    let bad_header = write(dir.path(), "h.csv", "id,component,t,value\na,1,0,1\n");
    assert_eq!(code(&cal(&ok_cfg, &bad_header)), 2);
    let bad_value = write(dir.path(), "v.csv", "curve_id,component,t,value\na,1,0,x\n");
    assert_eq!(code(&cal(&ok_cfg, &bad_value)), 2);
    assert_eq!(code(&cal(&ok_cfg, &dir.path().join("missing.csv"))), 2);

    ok(&cal(&ok_cfg, &curves));
    let cov = write(dir.path(), "x.csv", "curve_id,w\nq,1\n");
    let out = mfband(&["band", "--bundle", s(&bundle), "--covariates", s(&cov), "--out", s(&dir.path().join("b.csv"))]);
    assert_eq!(code(&out), 2);
}

const SMOKE: &str = r#"{"studies": [
  {"scenario": {"study": 1, "scenario": 1, "n": 20, "coef_seed": 1}, "modulation": "sigma", "mode": "split",
   "method": "mpb", "alpha": 0.1, "l": 9, "replications": 50, "master_seed": 11},
  {"scenario": {"study": 2, "scenario": 3, "n": 20, "coef_seed": 1}, "modulation": "sbar", "mode": "smoothed",
   "method": "mpb", "alpha": 0.1, "l": 9, "replications": 50, "master_seed": 12},
  {"scenario": {"study": 3, "scenario": 3, "n": 20, "coef_seed": 1}, "modulation": "s0", "mode": "split",
   "method": "cub", "alpha": 0.1, "l": 9, "replications": 50, "master_seed": 13}
]}"#;

#[test]
fn study_smoke_matches_golden_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.json", SMOKE);
    let report = dir.path().join("r.json");
    let table = dir.path().join("t.csv");
    ok(&mfband(&["study", "--config", s(&cfg), "--report", s(&report), "--table", s(&table)]));

    let got: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/study_smoke.json");
    if std::env::var_os("MFBAND_BLESS").is_some() {
        std::fs::copy(&report, &golden_path).unwrap();
    }
    let golden: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(golden_path).unwrap()).unwrap();
    assert_close(&got, &golden);

    let reports = got["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    assert_eq!(reports[0]["theoretical_coverage"], 0.9);
    assert_eq!(reports[1]["theoretical_coverage"], 0.9);
    assert!(reports[2]["theoretical_coverage"].is_null());
    for r in reports {
        assert_eq!(r["replications"], 50);
    }
    assert_eq!(band_rows(&table).len(), 3);
}

fn assert_close(a: &serde_json::Value, b: &serde_json::Value) {
    use serde_json::Value as V;
    match (a, b) {
        (V::Number(x), V::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
        (V::Array(x), V::Array(y)) => {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).for_each(|(x, y)| assert_close(x, y));
        }
        (V::Object(x), V::Object(y)) => {
            assert_eq!(x.keys().collect::<Vec<_>>(), y.keys().collect::<Vec<_>>());
            x.iter().for_each(|(k, v)| assert_close(v, &y[k]));
        }
        _ => assert_eq!(a, b),
    }
}

#[test]
fn study_report_does_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.json", SMOKE);
    let run = |threads: &str| {
        let report = dir.path().join(format!("r{threads}.json"));
        let out = Command::new(env!("CARGO_BIN_EXE_mfband"))
            .args(["study", "--config", s(&cfg), "--report", s(&report)])
            .env(commands::THREADS_ENV, threads)
            .output()
            .unwrap();
        ok(&out);
        std::fs::read(report).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn study_rejects_infeasible_level() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "s.json",
        r#"{"scenario": {"study": 1, "scenario": 1, "n": 20, "coef_seed": 1}, "modulation": "sigma", "mode": "split",
            "method": "mpb", "alpha": 0.05, "l": 9, "replications": 10, "master_seed": 1}"#,
    );
    let out = mfband(&["study", "--config", s(&cfg), "--report", s(&dir.path().join("r.json"))]);
    assert_eq!(code(&out), 3);
}

#[test]
fn unbounded_band_is_written_as_infinite() {
    let bundle = {
        let dir = TempDir::new().unwrap();
        let curves = write(dir.path(), "y.csv", &constant_curves(&[("a", 0.0), ("b", 1.0)]));
        let cfg = write(
            dir.path(),
            "c.json",
            r#"{"alpha": 0.5, "modulation": "s0", "split": {"kind": "explicit", "train": ["a"], "calib": ["b"]}}"#,
        );
        let (b, _) = commands::calibrate(&curves, &[], &cfg).unwrap();
        b
    };
    let dir = TempDir::new().unwrap();
    let grid = bundle.predictor.grid().clone();
    let bands = vec![commands::BandCurve {
        id: "u".into(),
        fit: commands::band(&bundle, &[], false).unwrap().remove(0).fit,
        band: PredictionBand::Unbounded,
    }];
    let out = dir.path().join("b.csv");
    commands::write_band(&out, &grid, &bands).unwrap();
    for r in band_rows(&out) {
        assert_eq!(r[4].parse::<f64>().unwrap(), f64::NEG_INFINITY);
        assert_eq!(r[5].parse::<f64>().unwrap(), f64::INFINITY);
        assert_eq!(r[6], "unbounded");
    }
}
