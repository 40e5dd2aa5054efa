use std::path::Path;
use std::process::{Command, Output};

fn cmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmix")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trace.csv");
    let json = dir.path().join("report.json");
    let out = cmix(&["run", "--steps", "500", "--output-csv", s(&csv), "--report-json", s(&json)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("t,y,yhat1,yhat2,lambda,yhat,e,cum_loss,cum_loss_beta_star,clipped")
    );
    assert_eq!(lines.count(), 500);

    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    for key in ["constants", "hindsight", "max_slack_violation", "regret_gap_by_n", "clip_events"] {
        assert!(report.get(key).is_some(), "missing key {key}");
    }
    assert_eq!(report["violation_detected"], false);
}

#[test]
fn same_seed_gives_identical_trace() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let out = cmix(&["run", "--signal", "piecewise-ar", "--steps", "300", "--seed", "9", "--output-csv", s(p)]);
        assert_eq!(code(&out), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn replaying_a_trace_reproduces_it() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.csv");
    let second = dir.path().join("second.csv");
    assert_eq!(code(&cmix(&["run", "--steps", "400", "--output-csv", s(&first)])), 0);
    assert_eq!(code(&cmix(&["run", "--input-csv", s(&first), "--output-csv", s(&second)])), 0);
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());

    let verify = cmix(&["verify", "--input-csv", s(&first), "--epsilon", "1"]);
    assert_eq!(code(&verify), 0, "{}", String::from_utf8_lossy(&verify.stdout));
}

#[test]
fn tampered_trace_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    assert_eq!(code(&cmix(&["run", "--steps", "50", "--output-csv", s(&trace)])), 0);
    let text = std::fs::read_to_string(&trace).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
    let mut cols: Vec<String> = lines[10].split(',').map(str::to_owned).collect();
    cols[4] = "0.7".into();
    lines[10] = cols.join(",");
    std::fs::write(&trace, lines.join("\n") + "\n").unwrap();
    assert_ne!(code(&cmix(&["verify", "--input-csv", s(&trace), "--epsilon", "1"])), 0);
}

#[test]
fn signal_csv_input() {
    let dir = tempfile::tempdir().unwrap();
    let signal = dir.path().join("signal.csv");
    let body: String = (0..200).map(|i| format!("{}\n", (i as f64 * 0.1).sin() * 0.9)).collect();
    std::fs::write(&signal, body).unwrap();
    let out = cmix(&["run", "--input-csv", s(&signal)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    assert_eq!(code(&cmix(&["run", "--lambda-plus", "0.7"])), 1);
    assert_eq!(code(&cmix(&["run", "--epsilon", "-1"])), 1);
    assert_eq!(code(&cmix(&["run", "--epsilon", "1", "--mu", "1"])), 1);
    assert_eq!(code(&cmix(&["run", "--filters", "lms:0.1"])), 1);
    assert_eq!(code(&cmix(&["run", "--input-csv", "/nonexistent/signal.csv"])), 2);
    assert_eq!(code(&cmix(&["lemma", "--epsilon", "1", "--b", "0.2"])), 3);
    assert_eq!(code(&cmix(&["lemma", "--epsilon", "1"])), 0);
    assert_eq!(code(&cmix(&["--help"])), 0);
}

#[test]
fn sweep_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    let out = cmix(&["sweep", "--steps", "300", "--output-csv", s(&csv)]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("epsilon,lambda_plus,mu,final_regret_gap,bound_rhs,clip_events")
    );
    assert_eq!(lines.count(), 9);
}

#[test]
fn multiplicative_rule_matches_gradient_rule() {
    let dir = tempfile::tempdir().unwrap();
    let g = dir.path().join("g.csv");
    let m = dir.path().join("m.csv");
    assert_eq!(code(&cmix(&["run", "--steps", "300", "--output-csv", s(&g)])), 0);
    assert_eq!(code(&cmix(&["run", "--steps", "300", "--rule", "multiplicative", "--output-csv", s(&m)])), 0);
    let lambdas = |p: &Path| -> Vec<f64> {
        std::fs::read_to_string(p)
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
            .collect()
    };
    for (x, y) in lambdas(&g).iter().zip(lambdas(&m)) {
        assert!((x - y).abs() < 1e-9);
    }
}
