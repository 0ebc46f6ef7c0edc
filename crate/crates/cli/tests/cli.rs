use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn oipm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oipm"))
        .args(args)
        .env_remove("OIPM_LOG")
        .output()
        .expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("oipm-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn data(file: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/data")
        .join(file)
        .to_string_lossy()
        .into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = oipm(&["check", "everything"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown suite"));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(oipm(&[]).status.code(), Some(2));
}

#[test]
fn bad_config_is_a_usage_error() {
    let dir = scratch("badcfg");
    let cfg = write_config(&dir, r#"{"algorithm":"oipm_tec","T":3,"seed":1,"colour":"red"}"#);
    assert_eq!(oipm(&["run", "--config", &cfg]).status.code(), Some(2));
}

#[test]
fn opf_build_reports_two_bus_dimensions() {
    let dir = scratch("build");
    let out = oipm(&["opf", "build", "--case", &data("case2.json"), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let dims: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("dimensions.json")).unwrap()).unwrap();
    assert_eq!(dims["n"], 7);
    let problem: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("problem.json")).unwrap()).unwrap();
    assert_eq!(problem["c"].as_array().unwrap().len(), 7);
}

#[test]
fn stream_gen_writes_one_row_per_round() {
    let out = oipm(&["stream", "gen", "--case", &data("case6.json"), "--seed", "4", "-T", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 7);
    assert!(lines[0].starts_with("t,p_"));
    let again = oipm(&["stream", "gen", "--case", &data("case6.json"), "--seed", "4", "-T", "5"]);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn zero_horizon_run_writes_empty_ledger() {
    let dir = scratch("t0");
    let cfg = write_config(
        &dir,
        r#"{"algorithm":"oipm_tec","T":0,"seed":1,
            "problem":{"synthetic":{"spec":{"kind":"lp","n":6,"p":2}}}}"#,
    );
    let out_dir = dir.join("out");
    let out = oipm(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let ledger = fs::read_to_string(out_dir.join("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 1);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    for key in ["regret", "eps_regret", "violation", "b_variation", "opt_variation"] {
        assert_eq!(summary["totals"][key], 0.0, "{key}");
    }
}

#[test]
fn repeated_runs_write_identical_ledgers() {
    let dir = scratch("replay");
    let body = format!(
        r#"{{"algorithm":"eps_oipm_tec","T":30,"seed":9,"epsilon":0.05,
            "problem":{{"case":{{"path":"{}"}}}}}}"#,
        data("case2.json")
    );
    let cfg = write_config(&dir, &body);
    let mut ledgers = Vec::new();
    for k in 0..2 {
        let out_dir = dir.join(format!("run{k}"));
        let out = oipm(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        ledgers.push(fs::read(out_dir.join("ledger.csv")).unwrap());
    }
    assert_eq!(ledgers[0], ledgers[1]);
    assert_eq!(String::from_utf8_lossy(&ledgers[0]).lines().count(), 31);
}

#[test]
fn check_barriers_passes() {
    let out = oipm(&["check", "barriers", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["passed"], true);
}
