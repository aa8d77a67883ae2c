use std::process::Command;

fn mbjcas(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_mbjcas")).args(args).output().unwrap()
}

#[test]
fn capacity_writes_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbjcas(&["capacity", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let sweep = std::fs::read_to_string(dir.path().join("capacity/sweep.csv")).unwrap();
    assert!(sweep.starts_with("a,snr,c_mb,c_td,ratio\n"));
    assert!(dir.path().join("capacity_report.json").exists());
    assert!(String::from_utf8_lossy(&out.stdout).contains("min_ratio="));
}

#[test]
fn validation_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{ "combine": { "rho": 2.0 } }"#).unwrap();
    let out = mbjcas(&["beams", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("combine.rho"));

    std::fs::write(&cfg, "{ \"combine\": { \"rho\": 0.5, } }").unwrap();
    let out = mbjcas(&["beams", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    assert_eq!(mbjcas(&["beams", "--method", "3"]).status.code(), Some(2));
    assert_eq!(mbjcas(&["beams", "--config", "/nonexistent/config.json"]).status.code(), Some(2));
}

#[test]
fn beams_accepts_plots() {
    let dir = tempfile::tempdir().unwrap();
    let out = mbjcas(&["beams", "--plots", "--seed", "3", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("beams/reference.csv").exists());
    assert!(dir.path().join("beams/method1/packet_1.csv").exists());
    let report = std::fs::read_to_string(dir.path().join("beams_report.json")).unwrap();
    assert!(report.contains("\"seed\": 3"));
}
