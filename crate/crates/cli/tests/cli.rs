use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mobrisk"))
}

fn mini_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/mini")
}

/// Copies the mini dataset into a scratch directory so inputs can be edited.
fn mini_copy(dir: &Path) -> PathBuf {
    for f in ["od.csv", "cases.csv", "demographics.csv", "mini.json"] {
        fs::copy(mini_dir().join(f), dir.join(f)).unwrap();
    }
    dir.join("mini.json")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn synth_config(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let cfg = format!(
        r#"{{
        "calendar": {{"start": "2020-03-02", "end": "2020-04-24", "holidays": []}},
        "synth": {{
            "world": {{"n_counties": {n}, "seed": {seed}}},
            "gravity": {{"k": 1e-6}},
            "stage_multipliers": true,
            "cases": {{"model": "epidemic"}}
        }}
    }}"#
    );
    let p = dir.join("synth.json");
    fs::write(&p, cfg).unwrap();
    p
}

#[test]
fn validate_accepts_mini_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = run(&["validate"], &mini_dir().join("mini.json"), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = read_json(&out.join("validation.json"));
    let fatal = v["issues"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|i| i["severity"] == "fatal")
        .count();
    assert_eq!(fatal, 0);
    assert!(out.join("manifest.json").exists());
}

#[test]
fn self_loop_row_is_fatal_and_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mini_copy(tmp.path());
    let od = tmp.path().join("od.csv");
    let mut text = fs::read_to_string(&od).unwrap();
    text.push_str("2020-03-16,09001,09001,5\n");
    let line = text.lines().count();
    fs::write(&od, text).unwrap();
    let o = run(&["validate"], &cfg, &tmp.path().join("v"));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains(&format!("od.csv:{line}")), "{err}");
}

#[test]
fn missing_demographics_is_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mini_copy(tmp.path());
    fs::remove_file(tmp.path().join("demographics.csv")).unwrap();
    let out = tmp.path().join("v");
    let o = run(&["validate"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("demographics.csv"));
    assert!(out.join("validation.json").exists());
}

#[test]
fn fit_on_invalid_inputs_writes_no_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = mini_copy(tmp.path());
    fs::remove_file(tmp.path().join("demographics.csv")).unwrap();
    let out = tmp.path().join("f");
    let o = run(&["fit"], &cfg, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.join("fits.csv").exists());
}

#[test]
fn malformed_config_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"trips": ["od.csv"], "unknown_key": 1}"#).unwrap();
    let o = run(&["validate"], &cfg, &tmp.path().join("v"));
    assert_eq!(o.status.code(), Some(3));

    fs::write(&cfg, "{ not json").unwrap();
    let o = run(&["validate"], &cfg, &tmp.path().join("v"));
    assert_eq!(o.status.code(), Some(3));

    let o = run(&["validate"], &tmp.path().join("absent.json"), &tmp.path().join("v"));
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn bad_flags_exit_3() {
    let o = bin().arg("frobnicate").output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    let o = bin().args(["validate", "--seed", "4"]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    let o = bin().args(["validate", "--jobs", "0"]).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn synth_is_reproducible_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = synth_config(tmp.path(), 10, 3);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for (out, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        let o = run(&["synth", "--seed", seed], &cfg, out);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let outputs = |p: &Path| read_json(&p.join("manifest.json"))["outputs"].clone();
    assert_eq!(outputs(&a), outputs(&b));
    assert_ne!(outputs(&a), outputs(&c));
    assert_eq!(read_json(&a.join("synth_params.json"))["world"]["seed"], 1);

    let demo = fs::read_to_string(a.join("demographics.csv")).unwrap();
    assert_eq!(demo.lines().count(), 11);
}

#[test]
fn two_county_gravity_flow_reaches_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "calendar": {"start": "2020-03-02", "end": "2020-04-24", "holidays": []},
        "synth": {
            "world": {"n_counties": 2, "seed": 5},
            "gravity": {"k": 1e-4, "pop_exponent_origin": 0.0, "pop_exponent_dest": 0.0, "distance_exponent": 0.0},
            "cases": {"model": "epidemic"}
        }
    }"#;
    let p = tmp.path().join("synth.json");
    fs::write(&p, cfg).unwrap();
    let out = tmp.path().join("s");
    let o = run(&["synth"], &p, &out);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(out.join("od.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let days: std::collections::BTreeSet<&str> = rows.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(days.len(), 40);
    assert_eq!(rows.len(), 2 * days.len());
    for r in &rows {
        let trips: f64 = r[3].parse().unwrap();
        assert!((trips - 1e-4).abs() < 1e-15, "{trips}");
    }
}

#[test]
fn correlate_writes_one_file_per_lag() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c");
    let o = run(&["correlate"], &mini_dir().join("mini.json"), &out);
    assert!(o.status.success(), "{}", stderr(&o));
    for lag in 0..4 {
        assert!(out.join(format!("correlations_lag{lag}.csv")).exists());
    }
    let summary = fs::read_to_string(out.join("correlation_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 4 * 2);
}

#[test]
fn rerun_replaces_previous_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let cfg = mini_dir().join("mini.json");
    assert!(run(&["analyze"], &cfg, &out).status.success());
    assert!(out.join("trend.csv").exists());
    assert!(run(&["validate"], &cfg, &out).status.success());
    assert!(!out.join("trend.csv").exists());

    let foreign = tmp.path().join("foreign");
    fs::create_dir(&foreign).unwrap();
    fs::write(foreign.join("keep.txt"), "x").unwrap();
    let o = run(&["validate"], &cfg, &foreign);
    assert_eq!(o.status.code(), Some(3));
    assert!(foreign.join("keep.txt").exists());
}
