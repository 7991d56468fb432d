use std::path::Path;
use std::process::{Command, Output};

fn dmdc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmdc")).args(args).output().expect("binary runs")
}

fn synth(dir: &Path, experiments: &str, extra: &[&str]) {
    let mut args = vec!["synth", "--out", dir.to_str().unwrap(), "--experiments", experiments, "--tracks", "6"];
    args.extend_from_slice(extra);
    let out = dmdc(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn payload(path: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["data"].clone()
}

#[test]
fn synth_writes_a_runnable_directory() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "4", &["--gcode", "--dropout", "0.1"]);
    for f in ["manifest.json", "schema.json", "plant.json", "run_config.json", "exp_00.csv", "exp_03.gcode"] {
        assert!(tmp.path().join(f).is_file(), "{f} missing");
    }
    let cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["imputation"][0]["channel"], "working_distance");
    assert_eq!(cfg["cv"]["p"], 3);
}

#[test]
fn stage_commands_write_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "5", &[]);
    let cfg = tmp.path().join("run_config.json");
    let cfg = cfg.to_str().unwrap();
    let out = tmp.path().join("stage_out");
    let out_s = out.to_str().unwrap();
    for (cmd, file) in [
        ("ingest", "ingest_report.json"),
        ("select-features", "vif_report.json"),
        ("dist-report", "dist_report.json"),
        ("fit", "model.json"),
        ("cv", "envelope.json"),
        ("freq-study", "freq_study.csv"),
    ] {
        let o = dmdc(&[cmd, "--config", cfg, "--out", out_s, "--repeats", "3"]);
        assert!(o.status.success(), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(file).is_file(), "{cmd} did not write {file}");
    }
    let model = out.join("model.json");
    let envelope = out.join("envelope.json");
    let o = dmdc(&[
        "predict",
        "--config",
        cfg,
        "--out",
        out_s,
        "--model",
        model.to_str().unwrap(),
        "--envelope",
        envelope.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("bounded_predictions.csv").is_file());
    let o = dmdc(&["spectrogram", "--config", cfg, "--out", out_s, "--model", model.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let sg = std::fs::read_to_string(out.join("spectrogram.json")).unwrap();
    assert!(sg.contains("\"similarity\""));
}

#[test]
fn artifacts_carry_provenance() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "4", &["--seed", "5"]);
    let cfg = tmp.path().join("run_config.json");
    let out = tmp.path().join("o");
    let o = dmdc(&["cv", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--repeats", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("cv_report.json")).unwrap()).unwrap();
    assert_eq!(v["provenance"]["seed"], 5);
    assert_eq!(v["provenance"]["config_hash"].as_str().unwrap().len(), 64);
    let csv = std::fs::read_to_string(out.join("cv_report.csv")).unwrap();
    assert!(csv.starts_with("# tool_version="));
    assert_eq!(payload(&out.join("envelope.json"))["entries"].as_array().unwrap().len(), 3);
}

#[test]
fn p_not_below_experiment_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "3", &[]);
    let cfg = tmp.path().join("run_config.json");
    let out = tmp.path().join("never");
    let o = dmdc(&["cv", "--config", cfg.to_str().unwrap(), "--p", "3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists(), "no output directory before validation passes");
}

#[test]
fn missing_config_is_a_config_error() {
    let o = dmdc(&["pipeline", "--config", "/nonexistent/run_config.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn malformed_data_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "4", &[]);
    std::fs::write(tmp.path().join("exp_01.csv"), "time_s,x\n0,abc\n").unwrap();
    let o = dmdc(&["ingest", "--config", tmp.path().join("run_config.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn bench_reports_json() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bench.json");
    let o = dmdc(&["bench", "--points", "20000", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    assert_eq!(v["points"], 20000);
    assert!(v["fit_us_per_point"].as_f64().unwrap() > 0.0);
}
