mod config;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use nsqp::analysis::{self, AnalysisError, MonitorResult};
use nsqp::driver::{solve, SolveOutcome, SolveStatus, SolverConfig};
use nsqp::library::{self, NamedProblem, Tag};
use nsqp::trace;

use config::RunConfig;

const EXIT_BAD_INPUT: u8 = 1;
const EXIT_MAX_ITER: u8 = 2;
const EXIT_SOLVER: u8 = 3;
const EXIT_CHECK_FAILED: u8 = 4;
const EXIT_SHORT_TRACE: u8 = 5;
const EXIT_PREMISE: u8 = 6;

#[derive(Parser)]
#[command(name = "nsqp", version, about = "Line-search SQP for nonsmooth upper-C² problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a catalog problem and write the iteration trace as CSV.
    Solve(SolveArgs),
    /// Check the problem oracles against their declared constants.
    Validate(ValidateArgs),
    /// Fit a linear rate to a trace CSV, using the last row as the limit.
    Rate(RateArgs),
    /// Solve and run convergence monitors on the trace.
    Monitor(MonitorArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Catalog problem name.
    problem: Option<String>,
    /// Config file of key = value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    tau_alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    alpha_min: Option<f64>,
    /// Step-norm tolerance.
    #[arg(long)]
    eps: Option<f64>,
    /// Constraint-violation tolerance.
    #[arg(long)]
    eps_c: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Scale of B = b·I (the late scale when b-early is set).
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    b_early: Option<f64>,
    #[arg(long)]
    b_switch: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Trace CSV path; defaults to <problem>.csv.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    problem: String,
    /// Checks this ρ instead of the declared one.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 2000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
}

#[derive(Args)]
struct RateArgs {
    /// Trace CSV written by `solve`.
    trace: PathBuf,
    /// Output for the k,log_error columns; defaults to <trace>.rate.csv.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Rows skipped before the fit.
    #[arg(long, default_value_t = 0)]
    skip: usize,
}

#[derive(Args)]
struct MonitorArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Every monitor that applies to the problem.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    multiplier_bounds: bool,
    #[arg(long)]
    line_search: bool,
    #[arg(long)]
    merit: bool,
    #[arg(long)]
    theta_tail: bool,
    #[arg(long)]
    slack_tail: bool,
    #[arg(long)]
    full_step: bool,
    #[arg(long)]
    step_vanishing: bool,
    #[arg(long)]
    step_size: bool,
    #[arg(long)]
    mfcq: bool,
    #[arg(long)]
    potential: bool,
    #[arg(long)]
    subgradient: bool,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    ell: Option<f64>,
    /// Coarse conjugate grid points per dimension.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Window of the slack-tail monitor.
    #[arg(long, default_value_t = 20)]
    window: usize,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type CmdResult = Result<u8, Failure>;

impl RunArgs {
    fn to_config(&self) -> Result<RunConfig, Failure> {
        let bad = |e: String| Failure::new(EXIT_BAD_INPUT, e);
        let file = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
                RunConfig::parse(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        let flags = RunConfig {
            problem: self.problem.clone(),
            x0: self.x0.as_deref().map(config::parse_vector).transpose().map_err(bad)?,
            eta: self.eta,
            tau_alpha: self.tau_alpha,
            gamma: self.gamma,
            theta0: self.theta0,
            alpha_min: self.alpha_min,
            eps: self.eps,
            eps_c: self.eps_c,
            max_iter: self.max_iter,
            b: self.b,
            b_early: self.b_early,
            b_switch: self.b_switch,
            ..RunConfig::default()
        };
        Ok(file.overridden_by(flags))
    }
}

struct Prepared {
    problem: NamedProblem,
    config: SolverConfig,
    x0: DVector<f64>,
    run: RunConfig,
}

fn prepare(run: RunConfig) -> Result<Prepared, Failure> {
    let bad = |e: String| Failure::new(EXIT_BAD_INPUT, e);
    let name = run.problem.clone().ok_or_else(|| bad("no problem given".into()))?;
    let problem = library::build(&name).map_err(|e| bad(e.to_string()))?;
    let config = run.solver_config(&problem.spec).map_err(|e| bad(format!("bad config: {e}")))?;
    let x0 = run.start(&problem.x0).map_err(bad)?;
    Ok(Prepared {
        problem,
        config,
        x0,
        run,
    })
}

fn run_solve(p: &Prepared) -> Result<SolveOutcome, Failure> {
    solve(&p.problem.spec, &p.x0, &p.config).map_err(|e| match e {
        nsqp::driver::SolveError::Config(_) => Failure::new(EXIT_BAD_INPUT, e.to_string()),
        _ => Failure::new(EXIT_SOLVER, e.to_string()),
    })
}

fn status_code(status: SolveStatus) -> u8 {
    match status {
        SolveStatus::Converged => 0,
        SolveStatus::MaxIterations => EXIT_MAX_ITER,
        _ => EXIT_SOLVER,
    }
}

fn print_summary(outcome: &SolveOutcome) {
    println!("status      {:?}", outcome.status);
    if let Some(msg) = &outcome.message {
        println!("message     {msg}");
    }
    let Some(last) = outcome.final_record() else {
        return;
    };
    println!("iterations  {}", last.k);
    println!("f           {:.12e}", last.f);
    println!("v           {:.3e}", last.v);
    println!("step norm   {:.3e}", last.step_norm);
    println!("theta       {}", last.theta);
    println!(
        "kkt         stationarity {:.3e}  eq {:.3e}  ineq {:.3e}  comp {:.3e}  sign {:.3e}",
        last.kkt.stationarity, last.kkt.primal_eq, last.kkt.primal_ineq, last.kkt.complementarity, last.kkt.dual_sign
    );
    let x: Vec<String> = last.x.iter().map(|v| format!("{v:.12}")).collect();
    println!("x           [{}]", x.join(", "));
}

fn write_csv(path: &Path, outcome: &SolveOutcome, n: usize) -> Result<(), Failure> {
    let io = |e: String| Failure::new(EXIT_SOLVER, format!("cannot write {}: {e}", path.display()));
    let file = File::create(path).map_err(|e| io(e.to_string()))?;
    let mut w = BufWriter::new(file);
    trace::write_records(&outcome.trace, n, &mut w).map_err(|e| io(e.to_string()))?;
    w.flush().map_err(|e| io(e.to_string()))
}

fn cmd_solve(args: SolveArgs) -> CmdResult {
    let mut run = args.run.to_config()?;
    if args.out.is_some() {
        run.output = args.out;
    }
    let p = prepare(run)?;
    let outcome = run_solve(&p)?;
    let path = p
        .run
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.csv", p.problem.name)));
    write_csv(&path, &outcome, p.problem.spec.n())?;
    print_summary(&outcome);
    println!("trace       {}", path.display());
    Ok(status_code(outcome.status))
}

fn show_pair(pair: &Option<(DVector<f64>, DVector<f64>)>) -> String {
    match pair {
        Some((a, b)) => format!("{:?} / {:?}", a.as_slice(), b.as_slice()),
        None => "none".into(),
    }
}

fn cmd_validate(args: ValidateArgs) -> CmdResult {
    if args.samples == 0 {
        return Err(Failure::new(EXIT_BAD_INPUT, "samples must be positive"));
    }
    let mut spec = library::build(&args.problem)
        .map_err(|e| Failure::new(EXIT_BAD_INPUT, e.to_string()))?
        .spec;
    if let Some(rho) = args.rho {
        spec = spec.with_rho(rho);
    }
    let solver = |e: nsqp::problem::ProblemError| Failure::new(EXIT_SOLVER, e.to_string());
    let upper = spec.validate_upper_c2(args.samples, args.seed).map_err(solver)?;
    let lin = spec.validate_linearization(args.samples, args.seed).map_err(solver)?;
    let upper_ok = upper.passes(args.tol);
    let lin_ok = lin.passes(args.tol);
    println!(
        "upper-c2       {}  rho {} ({})  max violation {:e}  rho estimate {:.6}",
        verdict(upper_ok),
        upper.rho_checked,
        if upper.rho_declared { "declared" } else { "estimated" },
        upper.max_violation,
        upper.rho_estimate
    );
    if !upper_ok {
        println!("  worst pair   {}", show_pair(&upper.worst_pair));
    }
    println!(
        "linearization  {}  H {} ({})  max violation {:e}  H estimate {:.6}",
        verdict(lin_ok),
        lin.h_checked,
        if lin.h_declared { "declared" } else { "estimated" },
        lin.max_violation,
        lin.h_estimate
    );
    if !lin_ok {
        println!("  worst pair   {}  row {:?}", show_pair(&lin.worst_pair), lin.worst_row);
    }
    Ok(if upper_ok && lin_ok { 0 } else { EXIT_CHECK_FAILED })
}

fn cmd_rate(args: RateArgs) -> CmdResult {
    let file = File::open(&args.trace)
        .map_err(|e| Failure::new(EXIT_BAD_INPUT, format!("cannot read {}: {e}", args.trace.display())))?;
    let rows = trace::read_trace(BufReader::new(file)).map_err(|e| Failure::new(EXIT_BAD_INPUT, e.to_string()))?;
    let xs: Vec<DVector<f64>> = rows.into_iter().skip(args.skip).map(|r| r.x).collect();
    if xs.len() < 4 {
        return Err(Failure::new(
            EXIT_SHORT_TRACE,
            format!("trace has {} usable rows, the fit needs at least 4", xs.len()),
        ));
    }
    let (ks, errors) = analysis::errors_to_last(&xs);
    let fit = if errors.is_empty() {
        eprintln!("warning: the trace is constant; reporting q0 = 1");
        analysis::RateFit {
            q0: 1.0,
            q1: 0.0,
            r_squared: 1.0,
            points: 0,
        }
    } else {
        let fit = analysis::fit_rate_points(&ks, &errors).map_err(|e| match e {
            AnalysisError::InsufficientData(_) => Failure::new(EXIT_SHORT_TRACE, e.to_string()),
            _ => Failure::new(EXIT_BAD_INPUT, e.to_string()),
        })?;
        if fit.q0 == 1.0 {
            eprintln!("warning: the error sequence is constant; no contraction");
        }
        fit
    };
    let out = args.out.unwrap_or_else(|| args.trace.with_extension("rate.csv"));
    let io = |e: std::io::Error| Failure::new(EXIT_BAD_INPUT, format!("cannot write {}: {e}", out.display()));
    let mut w = BufWriter::new(File::create(&out).map_err(io)?);
    writeln!(w, "k,log_error").map_err(io)?;
    for (k, e) in ks.iter().zip(&errors) {
        writeln!(w, "{},{}", *k as usize + args.skip, trace::format_float(e.ln())).map_err(io)?;
    }
    w.flush().map_err(io)?;
    println!("q0        {}", trace::format_float(fit.q0));
    println!("q1        {}", trace::format_float(fit.q1));
    println!("r_squared {}", trace::format_float(fit.r_squared));
    println!("points    {}", fit.points);
    println!("log error {}", out.display());
    Ok(0)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

enum Check {
    Done(MonitorResult),
    Skipped(&'static str, String),
}

fn cmd_monitor(args: MonitorArgs) -> CmdResult {
    let mut run = args.run.to_config()?;
    run.sigma = args.sigma.or(run.sigma);
    run.ell = args.ell.or(run.ell);
    run.grid_points = args.grid_points.or(run.grid_points);
    let p = prepare(run)?;
    let spec = &p.problem.spec;
    let outcome = run_solve(&p)?;
    let trace = &outcome.trace;
    println!("{}: {:?} after {} iterations", p.problem.name, outcome.status, trace.len().saturating_sub(1));

    let any = args.multiplier_bounds
        || args.line_search
        || args.merit
        || args.theta_tail
        || args.slack_tail
        || args.full_step
        || args.step_vanishing
        || args.step_size
        || args.mfcq
        || args.potential
        || args.subgradient;
    let all = args.all || !any;
    let affine = p.problem.has_tag(Tag::Affine);
    let b = p.config.b_rule.tail_scale();
    let params = p.run.potential_params(spec, b);

    let mut checks = Vec::new();
    let mut premise_failures = Vec::new();
    let analysis_err = |e: AnalysisError| Failure::new(EXIT_SOLVER, e.to_string());
    let optional = |r: Result<MonitorResult, AnalysisError>, name| match r {
        Ok(m) => Ok(Check::Done(m)),
        Err(e @ (AnalysisError::MissingConstant(_) | AnalysisError::MissingHessians)) => {
            Ok(Check::Skipped(name, e.to_string()))
        }
        Err(e) => Err(Failure::new(EXIT_SOLVER, e.to_string())),
    };

    if all || args.multiplier_bounds {
        checks.push(Check::Done(analysis::multiplier_bounds(trace)));
    }
    if all || args.line_search {
        checks.push(Check::Done(analysis::line_search_contract(spec, trace, &p.config).map_err(analysis_err)?));
    }
    if all || args.merit {
        checks.push(Check::Done(analysis::merit_telescoping(trace, &p.config)));
    }
    if all || args.theta_tail {
        checks.push(Check::Done(analysis::theta_tail(trace)));
    }
    if all || args.slack_tail {
        checks.push(Check::Done(analysis::slack_tail(trace, args.window)));
    }
    if args.full_step || (all && affine) {
        checks.push(Check::Done(analysis::full_step(trace)));
    }
    if all || args.step_vanishing {
        checks.push(Check::Done(analysis::step_vanishing(trace, p.config.eps)));
    }
    if all || args.step_size {
        checks.push(optional(analysis::step_size_bound(spec, trace, &p.config), "step-size-bound")?);
    }
    if all || args.mfcq {
        let last = &trace.last().expect("solve records at least one iteration").x;
        let report = analysis::check_mfcq(spec, last, 1e-8).map_err(analysis_err)?;
        checks.push(Check::Done(MonitorResult {
            name: "mfcq",
            passed: report.holds,
            margin: if report.holds { 0.0 } else { -1.0 },
            detail: format!("equality rank {}, active inequalities {:?}", report.equality_rank, report.active),
        }));
    }
    if all || args.potential || args.subgradient {
        let mut premises = params.validate(spec).err().map(|e| vec![e.to_string()]).unwrap_or_default();
        if premises.is_empty() {
            premises = analysis::descent_premises(spec, &params, b);
        }
        let explicit = args.potential || args.subgradient;
        if !premises.is_empty() {
            if explicit {
                premise_failures = premises;
            } else {
                checks.push(Check::Skipped("potential-descent", premises.join("; ")));
            }
        } else {
            if all || args.potential {
                checks.push(match analysis::potential_descent_check(trace, spec, &params) {
                    Ok(report) => Check::Done(analysis::potential_monitor(&report)),
                    Err(AnalysisError::Premise(v)) if explicit => {
                        premise_failures = v;
                        Check::Skipped("potential-descent", "premises violated".into())
                    }
                    Err(e @ (AnalysisError::EmptyTail | AnalysisError::Premise(_))) => {
                        Check::Skipped("potential-descent", e.to_string())
                    }
                    Err(e) => return Err(analysis_err(e)),
                });
            }
            if all || args.subgradient {
                checks.push(optional(analysis::subgradient_monitor(spec, trace, &params), "subgradient-bound")?);
            }
        }
    }

    let mut failed = false;
    for check in &checks {
        match check {
            Check::Done(m) => {
                failed |= !m.passed;
                println!("{:<20} {}  margin {:+.3e}  {}", m.name, verdict(m.passed), m.margin, m.detail);
            }
            Check::Skipped(name, why) => println!("{name:<20} SKIP  {why}"),
        }
    }
    if !premise_failures.is_empty() {
        for v in &premise_failures {
            println!("premise violated: {v}");
        }
        return Ok(EXIT_PREMISE);
    }
    Ok(if failed { EXIT_CHECK_FAILED } else { 0 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Rate(a) => cmd_rate(a),
        Command::Monitor(a) => cmd_monitor(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
