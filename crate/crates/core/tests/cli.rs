use std::path::Path;
use std::process::{Command, Output};

use mimo_pac::perantenna::SolveReportJson;
use mimo_pac::{ChannelMatrix, InputCovariance};
use num_complex::Complex64;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mimo-pac"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_reference_channel(dir: &Path) -> String {
    let c = Complex64::new;
    let ch = ChannelMatrix::from_row_slice(
        2,
        2,
        &[c(0.0541, -0.4066), c(-0.4339, 0.0033), c(-1.3200, -0.1872), c(0.8269, -0.0279)],
    )
    .unwrap();
    let path = dir.join("channel.json");
    std::fs::write(&path, ch.to_json_string().unwrap()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn solve_reference_channel() {
    let dir = TempDir::new().unwrap();
    let channel = write_reference_channel(dir.path());
    let out = run(&["solve", "--channel", &channel, "--power", "0.5,0.5", "--bits"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let rate = doc["rate_nats"].as_f64().unwrap();
    let mac = doc["baselines"]["mac_rate_nats"].as_f64().unwrap();
    let sum = doc["baselines"]["sum_rate_nats"].as_f64().unwrap();
    assert!(mac < rate && rate < sum);
    assert!((doc["rate_bits"].as_f64().unwrap() - rate / std::f64::consts::LN_2).abs() < 1e-12);
    assert_eq!(doc["converged"], true);
    assert!(doc["kkt"]["slackness"].as_f64().unwrap() < 1e-6);

    let report: SolveReportJson = serde_json::from_value(doc).unwrap();
    let q = InputCovariance::from_pairs(2, &report.q).unwrap();
    assert!((q.diagonal()[0] - 0.5).abs() < 1e-6);
    assert_eq!(report.d_check.len(), 2);
}

#[test]
fn solve_writes_output_file() {
    let dir = TempDir::new().unwrap();
    let channel = write_reference_channel(dir.path());
    let target = dir.path().join("report.json");
    let out = run(&[
        "solve",
        "--channel",
        &channel,
        "--power",
        "0.3,0.7",
        "--output",
        target.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    let text = std::fs::read_to_string(target).unwrap();
    assert!(text.contains("\"D_check\""));
}

#[test]
fn solve_is_bit_reproducible() {
    let dir = TempDir::new().unwrap();
    let channel = write_reference_channel(dir.path());
    let a = run(&["solve", "--channel", &channel, "--power", "0.9,0.1"]);
    let b = run(&["solve", "--channel", &channel, "--power", "0.9,0.1"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn solve_input_errors() {
    let dir = TempDir::new().unwrap();
    let channel = write_reference_channel(dir.path());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = run(&["solve", "--channel", bad.to_str().unwrap(), "--power", "1,1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
    assert!(out.stdout.is_empty());

    let out = run(&["solve", "--channel", &channel, "--power", "1,1,1"]);
    assert_eq!(out.status.code(), Some(1));

    let singular = dir.path().join("singular.json");
    std::fs::write(&singular, r#"{"m": 2, "n": 2, "entries": [[1,0],[2,0],[2,0],[4,0]]}"#).unwrap();
    let out = run(&["solve", "--channel", singular.to_str().unwrap(), "--power", "1,1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("singular value"));

    let out = run(&["solve", "--channel", "/nonexistent/channel.json", "--power", "1,1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn solve_reports_non_convergence() {
    let dir = TempDir::new().unwrap();
    let channel = write_reference_channel(dir.path());
    let out = run(&[
        "solve", "--channel", &channel, "--power", "0.9,0.1", "--eps", "1e-15", "--max-iter", "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(doc["converged"], false);
}

#[test]
fn sweep_split_grid() {
    let dir = TempDir::new().unwrap();
    let channel = write_reference_channel(dir.path());
    let out = run(&["sweep-split", "--channel", &channel, "--grid", "101"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 101);
    assert!(rows.iter().all(|r| r[1] == rows[0][1]));
    assert!(text.lines().last().unwrap().starts_with("# meeting point"));

    let out = run(&["sweep-split", "--channel", &channel, "--grid", "3", "--total-power", "2"]);
    let p1: Vec<f64> = stdout(&out)
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(p1, vec![0.5, 1.0, 1.5]);
}

#[test]
fn sweep_split_rejects_wide_input() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("three.json");
    std::fs::write(&path, r#"{"m": 1, "n": 3, "entries": [[1,0],[0,1],[1,1]]}"#).unwrap();
    let out = run(&["sweep-split", "--channel", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ergodic_is_reproducible() {
    let args = ["ergodic", "--m", "2", "--n", "4", "--profile", "equal", "--snr", "-5:5:20", "--samples", "50", "--seed", "7"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(text.lines().count(), 7);
    assert!(text.starts_with("snr_db,c_sum,c_pa,c_mac,c_forced,se_sum,se_pa,se_mac,se_forced,infeasible_frac,nonconverged"));
}

#[test]
fn ergodic_k_squared_has_infeasible_samples() {
    let out = run(&["ergodic", "--m", "3", "--n", "3", "--profile", "k2", "--snr", "0:10:20", "--samples", "100"]);
    for line in stdout(&out).lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        assert!(cols[9].parse::<f64>().unwrap() > 0.0);
        assert_eq!(cols[10], "0");
    }
}

#[test]
fn ergodic_flag_validation() {
    assert_eq!(run(&["ergodic", "--m", "2", "--n", "2", "--samples", "0"]).status.code(), Some(1));
    assert_eq!(run(&["ergodic", "--m", "2", "--n", "2", "--snr", "5:0:1"]).status.code(), Some(1));
    assert_eq!(
        run(&["ergodic", "--m", "2", "--n", "2", "--profile", "weights", "--weights", "1,2,3"]).status.code(),
        Some(1)
    );
    let out = run(&["ergodic", "--m", "2", "--n", "2", "--profile", "weights", "--weights", "1,3", "--samples", "3", "--snr", "0:1:0"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn usage_exit_codes() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["solve"]).status.code(), Some(1));
    let help = run(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    assert!(stdout(&help).contains("sweep-split"));
}

#[test]
fn verify_fault_injection_exits_nonzero() {
    let out = run(&["verify", "--quick", "--inject-fault"]);
    assert_ne!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("[FAIL]"));
}
