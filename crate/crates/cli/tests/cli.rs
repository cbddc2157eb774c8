use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qread(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qread")).args(args).output().expect("run qread")
}

fn recipe(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../recipes").join(format!("{name}.toml"));
    p.to_str().unwrap().to_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn sweep_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let cfg = recipe("fig4a");
    for (out, threads) in [(&a, "1"), (&b, "2")] {
        let o = qread(&["--threads", threads, "sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 25);
}

#[test]
fn seed_override_changes_monte_carlo_rows() {
    let cfg = recipe("fig4a");
    let a = qread(&["sweep", "--config", &cfg, "--seed", "7"]).stdout;
    let b = qread(&["sweep", "--config", &cfg, "--seed", "8"]).stdout;
    assert_ne!(a, b);
    assert_eq!(a, qread(&["sweep", "--config", &cfg, "--seed", "7"]).stdout);
}

#[test]
fn point_prints_one_row() {
    let o = qread(&["point", "--tau0", "0.8", "--N", "10"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("tau0,tau1,N,"));
    assert!(lines[1].ends_with(",ok"));
    // ½ e^{-2}
    let p: f64 = lines[1].split(',').nth(7).unwrap().parse().unwrap();
    assert!((p - 0.067_667_641_618_306_35).abs() < 1e-12);
}

#[test]
fn json_format_by_flag_and_extension() {
    let o = qread(&["point", "--tau0", "0.5", "--N", "4", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v[0]["status"], "ok");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p.json");
    assert!(qread(&["point", "--tau0", "0.5", "--N", "4", "--out", out.to_str().unwrap()]).status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 1);
}

#[test]
fn strict_flag_fails_on_bad_points() {
    let dir = tempfile::tempdir().unwrap();
    // normal approximation is refused at small means
    let cfg = write_config(dir.path(), "mode = \"gaussian\"\ntau0 = { values = [0.5] }\nN = { values = [3] }\n");
    let lax = qread(&["sweep", "--config", &cfg]);
    assert!(lax.status.success());
    assert!(String::from_utf8(lax.stdout).unwrap().contains("invalid_parameter"));
    let strict = qread(&["sweep", "--config", &cfg, "--strict"]);
    assert_eq!(strict.status.code(), Some(2));
    assert!(qread(&["sweep", "--config", &cfg, "--strict", "--mode", "exact"]).status.success());
}

#[test]
fn bad_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "tau0 = { values = [1.5] }\nN = { values = [3] }\n");
    let o = qread(&["sweep", "--config", &cfg]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau0"));
    assert!(!qread(&["sweep", "--config", "/nonexistent.toml"]).status.success());
}

#[test]
fn simulate_writes_a_frame_dump() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("frames.csv");
    let args = ["simulate", "--tau0", "0.9", "--N", "200", "--eta-s", "0.8", "--frames", "50", "--seed", "3"];
    let o = qread(&[&args[..], &["--out", out.to_str().unwrap()]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next(), Some("frame_index,n_s,n_i,true_bit"));
    assert_eq!(text.lines().count(), 101);
    assert_eq!(text.lines().filter(|l| l.ends_with(",1")).count(), 50);
}

#[test]
fn validate_passes() {
    let o = qread(&["validate"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().count() >= 5);
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
