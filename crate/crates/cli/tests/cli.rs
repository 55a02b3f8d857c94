//! Contract tests for the experiment runner: exit codes, output shapes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_emden")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("emden_cli_{}_{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let out = Command::new(bin())
        .args(["solve", "--config", "/no/such/config.json"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("/no/such/config.json"), "stderr: {stderr}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = scratch("unknown_key");
    let cfg = dir.join("bad.json");
    std::fs::write(
        &cfg,
        r#"{ "domain": { "kind": "disk", "radius": 1.0 }, "h": 0.25, "frobnicate": true }"#,
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["solve", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("frobnicate"));
}

#[test]
fn oracle_rejects_non_increasing_list() {
    let dir = scratch("oracle_bad");
    let out = Command::new(bin())
        .args(["oracle", "--p-list", "50,20", "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn oracle_single_p_writes_degenerate_extrapolation() {
    let dir = scratch("oracle_single");
    let out = Command::new(bin())
        .args(["oracle", "--p-list", "10", "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.join("oracle.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "header + data + extrapolated: {csv}");
    assert!(lines[0].starts_with("p,u0,r0,energy"));
    assert!(lines[2].starts_with("extrapolated,"));
    assert!(lines[2].ends_with("degenerate"));
}

#[test]
fn solve_single_target_writes_one_row_and_dump() {
    let dir = scratch("solve_single");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "domain": { "kind": "rectangle", "width": 1.0, "height": 1.0 },
  "h": 0.0625,
  "solve": { "p_start": 3.0, "p_targets": [3.0] }
}"#,
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["solve", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("solutions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(dir.join("u_p3.dat").exists());
    // Peak at the center by symmetry.
    let row = csv.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    let px: f64 = cols[3].parse().unwrap();
    let py: f64 = cols[4].parse().unwrap();
    assert!((px - 0.5).abs() < 1e-12 && (py - 0.5).abs() < 1e-12);
}

#[test]
fn bubble_unresolved_on_rectangle_high_p_exits_1() {
    let dir = scratch("bubble_unresolved");
    let cfg = dir.join("cfg.json");
    // Rectangle has no radial oracle; at p = 12 and h = 1/32 the bubble
    // scale sits far below the grid and the run must flag Unresolved.
    std::fs::write(
        &cfg,
        r#"{
  "domain": { "kind": "rectangle", "width": 1.0, "height": 1.0 },
  "h": 0.03125,
  "solve": { "p_targets": [12.0], "continuation_ratio": 1.5 }
}"#,
    )
    .unwrap();
    let out = Command::new(bin())
        .args(["bubble", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("quantization.csv")).unwrap();
    assert!(csv.contains("unresolved"), "csv: {csv}");
}

#[test]
fn bubble_oracle_disk_reports_single_peak() {
    let dir = scratch("bubble_disk");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "domain": { "kind": "disk", "radius": 1.0 },
  "h": 0.03125,
  "solve": { "continuation_ratio": 1.5 }
}"#,
    )
    .unwrap();
    let out = Command::new(bin())
        .args([
            "bubble",
            "--config",
            cfg.to_str().unwrap(),
            "--p",
            "500",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("quantization.csv")).unwrap();
    let row = csv.lines().nth(1).unwrap();
    let cols: Vec<&str> = row.split(',').collect();
    assert_eq!(cols[3], "1", "n_peaks: {row}");
    let tau_dev: f64 = cols[6].parse().unwrap();
    assert!(tau_dev <= 0.05, "tau_dev {tau_dev}");
    assert!(dir.join("bubble_p500.dat").exists());
}

#[test]
fn solve_honors_h_and_p_target_overrides() {
    let dir = scratch("overrides");
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "domain": { "kind": "rectangle", "width": 1.0, "height": 1.0 },
  "h": 0.25,
  "solve": { "p_targets": [5.0, 8.0] }
}"#,
    )
    .unwrap();
    let out = Command::new(bin())
        .args([
            "solve",
            "--config",
            cfg.to_str().unwrap(),
            "--p-targets",
            "3",
            "--h",
            "0.0625",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("solutions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "one target expected: {csv}");
    assert!(dir.join("u_p3.dat").exists());
    // The dump header carries the overridden spacing: 17 nodes per side.
    let dump = std::fs::read_to_string(dir.join("u_p3.dat")).unwrap();
    assert!(dump.starts_with("17 17 6.25"), "header: {}", dump.lines().next().unwrap());
}

#[test]
fn csv_floats_have_15_significant_digits() {
    let dir = scratch("fmt");
    let out = Command::new(bin())
        .args(["oracle", "--p-list", "10,20,30", "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.join("oracle.csv")).unwrap();
    let first_value = csv.lines().nth(1).unwrap().split(',').next().unwrap();
    // Mantissa: one leading digit plus 14 decimals.
    let mantissa = first_value.split('e').next().unwrap();
    let digits: usize = mantissa.chars().filter(|c| c.is_ascii_digit()).count();
    assert_eq!(digits, 15, "value {first_value}");
    assert!(!csv.contains(','.to_string().repeat(40).as_str()));
}
