use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fusionest(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fusionest"));
    cmd.args(args).env("FUSIONEST_THREADS", "1");
    if let Some(dir) = out {
        cmd.arg("--out").arg(dir);
    }
    cmd.output().expect("binary runs")
}

fn csv_files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .filter(|n| n.ends_with(".csv"))
        .collect();
    names.sort();
    names
}

#[test]
fn tracking_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let o = fusionest(&["tracking", "--noise-type", "3", "--horizon", "100", "--seed", "42"], Some(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let steps = fs::read_to_string(out.join("steps.csv")).unwrap();
    let mut lines = steps.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,se_lse_1,se_lse_2,se_dfe,obj_local_1,obj_local_2,obj_fusion,jd_1,jd_2,infeasible_flags"
    );
    assert_eq!(lines.count(), 100);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["seed"], 42);
    assert_eq!(manifest["config"]["noise"], "type_iii");
    assert!(manifest["version"].as_str().unwrap().starts_with('v'));
    let plot = fs::read_to_string(out.join("plot.gp")).unwrap();
    assert!(plot.contains("steps.csv"));
}

#[test]
fn manifest_config_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let o = fusionest(
        &["tracking", "--noise-type", "2", "--horizon", "30", "--runs", "8", "--seed", "9"],
        Some(&first),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let config = first.join("config.toml");
    let o = fusionest(&["tracking", "--config", config.to_str().unwrap()], Some(&second));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let names = csv_files(&first);
    assert!(names.contains(&"pmse.csv".to_string()));
    assert_eq!(names, csv_files(&second));
    for name in names {
        assert_eq!(
            fs::read(first.join(&name)).unwrap(),
            fs::read(second.join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn robot_run_writes_pmse_and_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("robot");
    let o = fusionest(&["robot", "--horizon", "6", "--runs", "2", "--seed", "1"], Some(&out));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let pmse = fs::read_to_string(out.join("pmse.csv")).unwrap();
    assert_eq!(pmse.lines().next().unwrap(), "t,pmse_lse_1,pmse_lse_2,pmse_dfe,pmse_ekf_1,pmse_ukf_1");
    assert_eq!(pmse.lines().count(), 7);
    let traj = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("t,x1,x2,x3,lse_1_x1"));
    assert!(fs::read_to_string(out.join("plot.gp")).unwrap().contains("trajectory.csv"));
}

#[test]
fn invalid_noise_type_exits_with_config_error() {
    let o = fusionest(&["tracking", "--noise-type", "9"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--noise-type"));
}

#[test]
fn unknown_flag_prints_usage() {
    let o = fusionest(&["robot", "--noise-type", "1"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "experiment = \"tracking\"\nhorizon = \"long\"\n").unwrap();
    let o = fusionest(&["tracking", "--config", path.to_str().unwrap()], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    fs::write(&path, "experiment = \"robot\"\n").unwrap();
    let o = fusionest(&["tracking", "--config", path.to_str().unwrap()], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    let o = fusionest(&["tracking", "--horizon", "0"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn selftest_passes() {
    let o = fusionest(&["selftest"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8_lossy(&o.stdout);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 4);
}
