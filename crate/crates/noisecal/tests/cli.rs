use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use noisecal::io::{read_data_dir, read_json, ReportFile};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_noisecal"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn simulate(dir: &Path) {
    let out = run(dir, &["simulate"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_reproducible_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let out = run(dir, &["simulate", "--out", "nested/a"]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&run(dir, &["simulate", "--out", "nested/b"])), 0);
    for name in [
        "calibration.csv",
        "test.csv",
        "supervisory.json",
        "manifest.json",
    ] {
        let a = fs::read(dir.join("nested/a").join(name)).unwrap();
        let b = fs::read(dir.join("nested/b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
    let data = read_data_dir(&dir.join("nested/a")).unwrap();
    assert_eq!(data.calib.1.len(), 100);
    assert_eq!(data.test.1.len(), 600);
    assert!(!data.spec.is_empty());
    let csv = fs::read_to_string(dir.join("nested/a/calibration.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);

    assert_eq!(
        code(&run(dir, &["simulate", "--out", "c", "--seed", "5"])),
        0
    );
    assert_ne!(
        fs::read(dir.join("c/calibration.csv")).unwrap(),
        fs::read(dir.join("nested/a/calibration.csv")).unwrap()
    );
}

#[test]
fn calibrate_and_evaluate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    let out = run(dir, &["calibrate"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep: ReportFile = read_json(&dir.join("out/report.json")).unwrap();
    assert_eq!(rep.param, noisecal::config::ParamKind::Cholesky);
    assert_eq!(rep.mode, noisecal::config::Mode::Reverse);
    assert_eq!(rep.iterations.len(), 20);
    assert!(rep.iterations.windows(2).all(|w| w[1].loss <= w[0].loss));
    let history = fs::read_to_string(dir.join("out/loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 21);

    let out = run(dir, &["evaluate"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    let rmse: f64 = text.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(rmse > 0.5 && rmse < 2.9, "{text}");

    let out = run(
        dir,
        &[
            "calibrate",
            "--param",
            "diagonal",
            "--loss",
            "primary-only",
            "--out",
            "diag",
        ],
    );
    assert_eq!(code(&out), 0);
    let rep: ReportFile = read_json(&dir.join("diag/report.json")).unwrap();
    assert_eq!(rep.mode, noisecal::config::Mode::Forward);
    assert!(rep
        .iterations
        .iter()
        .all(|r| r.ell_s == 0.0 || r.loss == r.ell_o));
}

#[test]
fn modes_agree_with_fixed_step() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    let common = [
        "calibrate",
        "--param",
        "cholesky",
        "--fixed-step",
        "1e-4",
        "--itermax",
        "5",
    ];
    let f = run(
        dir,
        &[&common[..], &["--mode", "forward", "--out", "f"]].concat(),
    );
    let r = run(
        dir,
        &[&common[..], &["--mode", "reverse", "--out", "r"]].concat(),
    );
    assert_eq!((code(&f), code(&r)), (0, 0));
    let f: ReportFile = read_json(&dir.join("f/report.json")).unwrap();
    let r: ReportFile = read_json(&dir.join("r/report.json")).unwrap();
    for (a, b) in f.theta_hat.iter().zip(&r.theta_hat) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn gradcheck_passes_and_catches_a_broken_adjoint() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    let ok = run(dir, &["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stdout));
    let text = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(text.matches(" ok").count(), 6, "{text}");

    let bad = run(dir, &["gradcheck", "--corrupt-adjoint"]);
    assert_eq!(code(&bad), 4);
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));

    // no supervision within reach: supervised checks are skipped
    fs::write(
        dir.join("sparse.json"),
        r#"{"supervisory": {"threshold": 1e-9}}"#,
    )
    .unwrap();
    assert_eq!(
        code(&run(
            dir,
            &["simulate", "--config", "sparse.json", "--out", "bare"]
        )),
        0
    );
    let out = run(
        dir,
        &["gradcheck", "--data", "bare", "--param", "isotropic"],
    );
    assert_eq!(code(&out), 0);
    assert_eq!(
        String::from_utf8_lossy(&out.stdout)
            .matches("skipped")
            .count(),
        3
    );
}

#[test]
fn configuration_errors_exit_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("bad.json"),
        "{\n \"optimizer\": {\"itermax\": 0}\n}",
    )
    .unwrap();
    let out = run(dir, &["simulate", "--config", "bad.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("itermax"));
    fs::write(
        dir.join("typo.json"),
        "{\n \"simulation\": {\"trails\": 3}\n}",
    )
    .unwrap();
    let out = run(dir, &["simulate", "--config", "typo.json"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(code(&run(dir, &["calibrate", "--data", "missing"])), 2);
    assert_eq!(code(&run(dir, &["calibrate", "--mode", "sideways"])), 2);
}

#[test]
fn numerical_failure_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    simulate(dir);
    let path = dir.join("data/calibration.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut cells: Vec<String> = lines[5].split(',').map(str::to_owned).collect();
    cells[10] = "NaN".into();
    lines[5] = cells.join(",");
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let out = run(dir, &["calibrate", "--param", "isotropic"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn montecarlo_and_bench_write_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("small.json"),
        r#"{"simulation": {"n_calib": 40, "n_test": 60}, "optimizer": {"itermax": 3}}"#,
    )
    .unwrap();
    let out = run(
        dir,
        &[
            "montecarlo",
            "--config",
            "small.json",
            "--trials",
            "2",
            "--out",
            "mc",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary = fs::read_to_string(dir.join("mc/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 11);
    let trials = fs::read_to_string(dir.join("mc/trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 2 * 10);

    let out = run(
        dir,
        &[
            "bench",
            "--horizons",
            "20,40",
            "--repeats",
            "1",
            "--out",
            "b",
        ],
    );
    assert_eq!(code(&out), 0);
    let bench = fs::read_to_string(dir.join("b/bench.csv")).unwrap();
    assert_eq!(bench.lines().count(), 1 + 2 * 4 * 2);
}
