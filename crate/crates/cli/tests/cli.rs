use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn relaycap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relaycap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn tiny_run_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = relaycap(&["--rounds", "2", "--lambda", "200", "--seed", "1", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["rounds.csv", "summary.json", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 60);
}

#[test]
fn unwritable_output_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let out = blocker.join("run");
    let o = relaycap(&["--rounds", "1", "--lambda", "100", "--out", path_str(&out)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
    assert!(!out.join("summary.json").exists());
}

#[test]
fn manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let o = relaycap(&[
        "--rounds", "3", "--lambda", "300", "--seed", "9", "--method", "diprober-o", "--underloaded", "--noise",
        "--out", path_str(&a),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = a.join("manifest.json");
    let o = relaycap(&["--config", path_str(&manifest), "--out", path_str(&b)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["rounds.csv", "summary.json", "manifest.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn relay_file_digest_is_checked() {
    let dir = tempfile::tempdir().unwrap();
    let relays = dir.path().join("relays.csv");
    fs::write(&relays, "relay_id,class,capacity_kbps\n0,guard,500\n1,middle,400\n2,exit,300\n").unwrap();
    let out = dir.path().join("a");
    let o = relaycap(&["--relays", path_str(&relays), "--rounds", "2", "--lambda", "20", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"relays\": \""));

    fs::write(&relays, "relay_id,class,capacity_kbps\n0,guard,501\n1,middle,400\n2,exit,300\n").unwrap();
    let o = relaycap(&["--config", path_str(&out.join("manifest.json")), "--out", path_str(&dir.path().join("b"))]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("digest"));
}

#[test]
fn trials_switch_to_monte_carlo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    let o = relaycap(&["--rounds", "2", "--lambda", "100", "--trials", "3", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("mc_summary.json")).unwrap()).unwrap();
    assert_eq!(mc["trials"], 3);
    assert_eq!(mc["moments"].as_array().unwrap().len(), 2);
    assert!(!out.join("rounds.csv").exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"lambda_s": 1000000, "rounds": 1, "class_counts": {"guard": 2, "middle": 2, "exit": 2}}"#).unwrap();
    let out = dir.path().join("o");
    let o = relaycap(&["--config", path_str(&cfg), "--lambda", "50", "--out", path_str(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["lambda_s"], 50.0);
}

#[test]
fn bad_inputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"lambda_s": 10, "bogus": 1}"#).unwrap();
    let o = relaycap(&["--config", path_str(&cfg)]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    let o = relaycap(&["--method", "pid"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("diprober-wh"));

    let o = relaycap(&["--rounds", "0", "--out", path_str(&dir.path().join("x"))]);
    assert!(!o.status.success());
}
