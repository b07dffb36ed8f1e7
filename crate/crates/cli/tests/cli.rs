use std::path::Path;
use std::process::{Command, Output};

use lqgbc::lqg::two_receiver_power;
use num_complex::Complex64;

fn lqgbc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqgbc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_rows(out: &Output) -> Vec<Vec<String>> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn num(s: &str) -> f64 {
    s.parse().unwrap()
}

fn solve_power(args: &[&str]) -> f64 {
    let out = lqgbc(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let rows = stdout_rows(&out);
    num(&rows.iter().find(|r| r[0] == "power").unwrap()[3])
}

#[test]
fn solve_headline_powers() {
    assert!(
        (solve_power(&["solve", "--k", "1", "--a", "1.4142135623730951"]) - 1.0).abs() <= 1e-12
    );
    assert!((solve_power(&["solve", "--k", "2"]) - 2.25).abs() <= 1e-10);
    let closed =
        two_receiver_power(Complex64::new(1.2, 0.0), Complex64::new(-1.2, 0.0), 0.5).unwrap();
    let solved = solve_power(&["solve", "--modes", "1.2+0j,-1.2+0j", "--cov", "rho=0.5"]);
    assert!((solved - closed).abs() <= 1e-8 * closed);
}

#[test]
fn resolved_config_is_logged() {
    let out = lqgbc(&["phi", "--k", "3"]);
    let log = String::from_utf8(out.stderr).unwrap();
    for key in [
        "k = 3",
        "cov = identity",
        "seed = 1",
        "units = nats",
        "trials = 1000",
    ] {
        assert!(log.contains(key), "missing `{key}` in\n{log}");
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# two receivers\nk = 2\na = 2\n").unwrap();
    let from_file = solve_power(&["solve", "--config", cfg.to_str().unwrap()]);
    assert!((from_file - 3.0 * 25.0 / 8.0).abs() <= 1e-9);
    let overridden = solve_power(&[
        "solve",
        "--config",
        cfg.to_str().unwrap(),
        "--a",
        "1.4142135623730951",
    ]);
    assert!((overridden - 2.25).abs() <= 1e-10);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never.csv");
    let bad = dir.path().join("bad.cov");
    std::fs::write(&bad, "2\n1 0j 0.5\n").unwrap();
    let cov = format!("file={}", bad.display());

    let r = lqgbc(&["solve", "--cov", &cov, "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);

    let missing = format!("file={}", dir.path().join("absent.cov").display());
    assert_eq!(lqgbc(&["solve", "--cov", &missing]).status.code(), Some(4));
    assert_eq!(lqgbc(&["solve", "--a", "0.5"]).status.code(), Some(2));
    assert_eq!(
        lqgbc(&["solve", "--modes", "1.5+0j,1.5+0j"]).status.code(),
        Some(2)
    );
    assert_eq!(
        lqgbc(&["simulate", "--k", "1", "--a", "2", "--n", "500"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(lqgbc(&["bogus"]).status.code(), Some(2));
    assert_eq!(
        lqgbc(&["solve", "--out", "/nonexistent/dir/x.csv"])
            .status
            .code(),
        Some(4)
    );
}

#[test]
fn covariance_file_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("k.cov");
    std::fs::write(&path, "2\n1 0j 0.5 0j\n0.5 0j 1 0j\n").unwrap();
    let cov = format!("file={}", path.display());
    let from_file = solve_power(&["solve", "--modes", "1.2+0j,-1.2+0j", "--cov", &cov]);
    let inline = solve_power(&["solve", "--modes", "1.2+0j,-1.2+0j", "--cov", "rho=0.5"]);
    assert!((from_file - inline).abs() <= 1e-12);
}

#[test]
fn sweep_rows() {
    let out = lqgbc(&["sweep", "--k", "2", "--powers", "0.5,1,2,8"]);
    let rows = stdout_rows(&out);
    assert_eq!(
        rows[0],
        ["power", "phi", "rate_nats", "rate_no_feedback_nats", "gain"]
    );
    assert!((num(&rows[2][1]) - 1.194).abs() <= 1e-3);
    let rates: Vec<f64> = rows[1..].iter().map(|r| num(&r[2])).collect();
    assert!(rates.windows(2).all(|w| w[1] > w[0]));

    let single = stdout_rows(&lqgbc(&["sweep", "--k", "1", "--powers", "0.5,3"]));
    for row in &single[1..] {
        assert_eq!(num(&row[1]), 1.0);
        assert_eq!(row[2], row[3]);
    }
}

#[test]
fn bits_divide_rates_by_ln2() {
    let nats = stdout_rows(&lqgbc(&["phi", "--k", "2", "--power", "3"]));
    let bits = stdout_rows(&lqgbc(&[
        "phi", "--k", "2", "--power", "3", "--units", "bits",
    ]));
    assert_eq!(bits[0][3], "rate_bits");
    assert!((num(&nats[1][3]) / std::f64::consts::LN_2 - num(&bits[1][3])).abs() <= 1e-15);
    assert_eq!(nats[1][2], bits[1][2]);
}

#[test]
fn prelog_headline() {
    let rows = stdout_rows(&lqgbc(&[
        "prelog", "--k", "3", "--cov", "rank1", "--a", "10",
    ]));
    assert!((num(&rows[1][7]) - 2.9935).abs() <= 1e-4);
    let out = lqgbc(&["prelog", "--k", "3", "--cov", "rho=0.1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn compare_ol_orders_powers() {
    let rows = stdout_rows(&lqgbc(&["compare-ol", "--n", "200", "--trials", "300"]));
    let (lqg, ol) = (num(&rows[1][3]), num(&rows[1][5]));
    assert!(ol > lqg, "OL {ol} vs LQG {lqg}");
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn simulate_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let args = [
        "simulate",
        "--n",
        "60",
        "--trials",
        "200",
        "--grid-fraction",
        "0.5",
        "--seed",
        "3",
    ];
    for path in [&a, &b] {
        let mut full = args.to_vec();
        full.extend(["--out", path.to_str().unwrap()]);
        assert!(lqgbc(&full).status.success());
    }
    assert_eq!(read(&a), read(&b));
    // The summaries differ only in the recorded output path.
    let sa = String::from_utf8(read(&dir.path().join("a.json"))).unwrap();
    let sb = String::from_utf8(read(&dir.path().join("b.json"))).unwrap();
    assert_eq!(sa, sb.replace("b.csv", "a.csv"));

    let csv = String::from_utf8(read(&a)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    let width = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == width));

    let summary: serde_json::Value =
        serde_json::from_slice(&read(&dir.path().join("a.json"))).unwrap();
    assert_eq!(summary["command"], "simulate");
    assert_eq!(summary["config"]["seed"], "3");
    assert_eq!(summary["trials"], 200);
    assert!(summary["max_identity_residual"].as_f64().unwrap() <= 1e-9);
}
