use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DVector;
use nsqp::analysis::fit_trace_rate;
use nsqp::driver::{solve, SolverConfig};
use nsqp::library;
use nsqp::trace::read_trace;
use tempfile::TempDir;

fn nsqp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsqp"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn reported(out: &Output, key: &str) -> f64 {
    stdout(out)
        .lines()
        .find_map(|l| l.strip_prefix(key).map(|v| v.trim().parse().unwrap()))
        .unwrap_or_else(|| panic!("no '{key}' line in {}", stdout(out)))
}

fn load(path: &Path) -> Vec<nsqp::trace::TraceRow> {
    read_trace(std::fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_a_converged_trace() {
    let dir = TempDir::new().unwrap();
    let out = nsqp(dir.path(), &["solve", "dc1d", "--eps", "1e-8", "--eps-c", "1e-8"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("Converged"));
    let rows = load(&dir.path().join("dc1d.csv"));
    assert!(!rows.is_empty());
    assert!(rows.last().unwrap().step_norm <= 1e-8);
}

#[test]
fn unknown_problem_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let out = nsqp(dir.path(), &["solve", "nosuch"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown problem"));
}

#[test]
fn config_file_rejects_unknown_keys() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "problem = dc1d\nepsilon = 1e-8\n").unwrap();
    let out = nsqp(dir.path(), &["solve", "--config", "run.cfg"]);
    assert_eq!(code(&out), 1);
    std::fs::write(dir.path().join("run.cfg"), "problem = dc1d\neta = 2\n").unwrap();
    assert_eq!(code(&nsqp(dir.path(), &["solve", "--config", "run.cfg"])), 1);
}

#[test]
fn flags_override_the_config_file() {
    let dir = TempDir::new().unwrap();
    std::fs::write(
        dir.path().join("run.cfg"),
        "# dc1d from the left\nproblem = dc1d\nx0 = -1.5\nmax_iter = 2\noutput = left.csv\n",
    )
    .unwrap();
    let out = nsqp(dir.path(), &["solve", "--config", "run.cfg"]);
    assert_eq!(code(&out), 2, "max-iter exit code");
    let out = nsqp(dir.path(), &["solve", "--config", "run.cfg", "--max-iter", "500"]);
    assert_eq!(code(&out), 0);
    let rows = load(&dir.path().join("left.csv"));
    assert_eq!(rows[0].x[0], -1.5);
    assert!((rows.last().unwrap().x[0] + 0.5).abs() <= 1e-7);
}

#[test]
fn identical_runs_write_identical_csv() {
    let dir = TempDir::new().unwrap();
    for name in ["a.csv", "b.csv"] {
        assert_eq!(code(&nsqp(dir.path(), &["solve", "infeasible-lin", "-o", name])), 0);
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn validate_accepts_declared_and_catches_wrong_rho() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&nsqp(dir.path(), &["validate", "dc1d"])), 0);
    let out = nsqp(dir.path(), &["validate", "dc1d", "--rho", "0.1"]);
    assert_eq!(code(&out), 4);
    assert!(stdout(&out).contains("worst pair"));
}

#[test]
fn validate_is_deterministic_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let args = ["validate", "minq2", "--samples", "5000", "--seed", "7"];
    let a = nsqp(dir.path(), &args);
    let b = nsqp(dir.path(), &args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

fn synthetic_csv(xs: &[f64]) -> String {
    let mut s = String::from("k,alpha,theta,f,v,merit,step_norm,lambda_inf,kkt_stationarity,kkt_comp,x_0\n");
    for (k, x) in xs.iter().enumerate() {
        s.push_str(&format!("{k},1,1,0,0,0,0,0,0,0,{}\n", nsqp::trace::format_float(*x)));
    }
    s
}

#[test]
fn rate_recovers_a_geometric_sequence() {
    let dir = TempDir::new().unwrap();
    // x_k = 1 + 0.5^k for k < 30, then the limit itself
    let mut xs: Vec<f64> = (0..30).map(|k| 1.0 + 0.5_f64.powi(k)).collect();
    xs.push(1.0);
    std::fs::write(dir.path().join("geo.csv"), synthetic_csv(&xs)).unwrap();
    let out = nsqp(dir.path(), &["rate", "geo.csv"]);
    assert_eq!(code(&out), 0);
    assert!((reported(&out, "q0") - 0.5).abs() <= 1e-12);
    assert!((reported(&out, "q1") - 1.0).abs() <= 1e-12);
    let log = std::fs::read_to_string(dir.path().join("geo.rate.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("k,log_error"));
    assert_eq!(lines.count(), 30);
}

#[test]
fn rate_warns_on_a_constant_trace_and_rejects_short_ones() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("flat.csv"), synthetic_csv(&[0.7; 6])).unwrap();
    let out = nsqp(dir.path(), &["rate", "flat.csv"]);
    assert_eq!(code(&out), 0);
    assert_eq!(reported(&out, "q0"), 1.0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    std::fs::write(dir.path().join("short.csv"), synthetic_csv(&[1.0, 0.5])).unwrap();
    assert_eq!(code(&nsqp(dir.path(), &["rate", "short.csv"])), 5);
}

#[test]
fn rate_round_trips_the_in_memory_fit() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&nsqp(dir.path(), &["solve", "dc1d"])), 0);
    let out = nsqp(dir.path(), &["rate", "dc1d.csv"]);
    assert_eq!(code(&out), 0);

    let p = library::build("dc1d").unwrap();
    let run = solve(&p.spec, &p.x0, &SolverConfig::for_problem(&p.spec)).unwrap();
    let xs: Vec<DVector<f64>> = run.trace.iter().map(|r| r.x.clone()).collect();
    let fit = fit_trace_rate(&xs).unwrap();
    assert!((reported(&out, "q0") - fit.q0).abs() <= 1e-12);
    assert!((reported(&out, "q1") - fit.q1).abs() <= 1e-12);
    assert!((reported(&out, "r_squared") - fit.r_squared).abs() <= 1e-12);
    assert!(fit.q0 < 1.0 && fit.r_squared >= 0.9);
}

#[test]
fn monitor_suite_passes_on_dc1d() {
    let dir = TempDir::new().unwrap();
    let out = nsqp(dir.path(), &["monitor", "dc1d", "--all"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(!stdout(&out).contains("FAIL"));
}

#[test]
fn full_step_holds_on_affine_eq() {
    let dir = TempDir::new().unwrap();
    let out = nsqp(dir.path(), &["monitor", "affine-eq", "--full-step"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("full-step            PASS"));
}

#[test]
fn potential_monitor_with_valid_premises() {
    let dir = TempDir::new().unwrap();
    let out = nsqp(dir.path(), &["monitor", "dc1d", "--potential", "--sigma", "3", "--ell", "2", "--b", "4"]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(stdout(&out).contains("potential-descent    PASS"));
}

#[test]
fn premise_violations_exit_six() {
    let dir = TempDir::new().unwrap();
    let out = nsqp(dir.path(), &["monitor", "dc1d", "--potential", "--sigma", "3", "--ell", "2", "--b", "2"]);
    assert_eq!(code(&out), 6);
    assert!(stdout(&out).contains("2b ≥ σ + l"));
}
