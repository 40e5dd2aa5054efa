use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use convex_mixture::bound::{
    default_audit_betas, derive_constants, epsilon_for_learning_rate, lemma_necessity_check, LemmaReport,
    TheoremConstants,
};
use convex_mixture::experiment::{
    is_trace_csv, run_experiment, sweep, verify_trace, write_json, write_sweep_csv, write_trace_csv,
    ExperimentConfig, RateChoice,
};
use convex_mixture::filters::FilterKind;
use convex_mixture::mixture::UpdateRule;
use convex_mixture::signals::SignalKind;
use convex_mixture::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "cmix", version, about = "Adaptive convex mixture runs and regret-bound audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one mixture experiment, write its trace and audit report.
    Run(RunArgs),
    /// Run a grid of (epsilon, lambda_plus) cells and summarize the trade-off.
    Sweep(SweepArgs),
    /// Evaluate the two necessity instances for given constants.
    Lemma(LemmaArgs),
    /// Re-audit a trace CSV written by `run`.
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct RateArgs {
    /// Derive the learning rate and all constants from epsilon.
    #[arg(long, conflicts_with = "mu")]
    epsilon: Option<f64>,
    /// Use this learning rate directly.
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// JSON experiment config; other flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// logistic-chaotic[:rate] | piecewise-ar[:c1/c2/..[:segment]] | sine-drift[:freq[:drift]] | adversarial-flip[:period]
    #[arg(long)]
    signal: Option<String>,
    /// Signal CSV (one sample per row) or a trace CSV whose y,yhat1,yhat2 columns are replayed.
    #[arg(long)]
    input_csv: Option<PathBuf>,
    /// Two comma-separated filters, e.g. `nlms:0.5:4,delayed-copy`.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    filters: Option<Vec<String>>,
    #[command(flatten)]
    rate: RateArgs,
    #[arg(long)]
    lambda_plus: Option<f64>,
    #[arg(long)]
    y_bound: Option<f64>,
    #[arg(long)]
    amplitude: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    initial_lambda: Option<f64>,
    /// gradient | multiplicative
    #[arg(long)]
    rule: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    audit_betas: Option<Vec<f64>>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long)]
    output_csv: Option<PathBuf>,
    #[arg(long)]
    report_json: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0.1,1,10")]
    epsilons: Vec<f64>,
    #[arg(long, value_delimiter = ',', num_args = 1.., default_value = "0.05,0.25,0.4")]
    lambda_pluses: Vec<f64>,
    #[arg(long)]
    output_csv: Option<PathBuf>,
    #[arg(long)]
    report_json: Option<PathBuf>,
}

#[derive(Args)]
struct LemmaArgs {
    /// Start from the derived constants for this epsilon; --a/--b/--mu override.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, default_value_t = 0.25)]
    lambda_plus: f64,
    #[arg(long, default_value_t = 1.0)]
    y_bound: f64,
    #[arg(long)]
    report_json: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    input_csv: PathBuf,
    #[command(flatten)]
    rate: RateArgs,
    #[arg(long, default_value_t = 0.25)]
    lambda_plus: f64,
    #[arg(long, default_value_t = 1.0)]
    y_bound: f64,
    #[arg(long)]
    rule: Option<String>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    audit_betas: Option<Vec<f64>>,
    #[arg(long)]
    report_json: Option<PathBuf>,
}

fn parse_rule(rule: &str) -> Result<UpdateRule, Error> {
    match rule {
        "gradient" => Ok(UpdateRule::Gradient),
        "multiplicative" => Ok(UpdateRule::Multiplicative),
        other => Err(Error::Validation {
            field: "rule",
            reason: format!("expected `gradient` or `multiplicative`, got `{other}`"),
        }),
    }
}

fn build_config(args: &ExperimentArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(y) = args.y_bound {
        cfg.y_bound = y;
        if args.amplitude.is_none() && args.config.is_none() {
            cfg.signal.amplitude = y;
        }
    }
    if let Some(amp) = args.amplitude {
        cfg.signal.amplitude = amp;
    }
    if let Some(lp) = args.lambda_plus {
        cfg.lambda_plus = lp;
    }
    if let Some(eps) = args.rate.epsilon {
        cfg.rate = RateChoice::Epsilon(eps);
    }
    if let Some(mu) = args.rate.mu {
        cfg.rate = RateChoice::Mu(mu);
    }
    if let Some(kind) = &args.signal {
        cfg.signal.kind = kind.parse::<SignalKind>()?;
    }
    if let Some(path) = &args.input_csv {
        if is_trace_csv(path)? {
            cfg.replay = Some(path.clone());
        } else {
            cfg.signal.kind = SignalKind::Csv { path: path.clone() };
        }
    }
    match args.steps {
        Some(n) => cfg.signal.length = n,
        // Imported data runs to the end of the file unless --steps says otherwise.
        None if args.input_csv.is_some() => cfg.signal.length = 0,
        None => {}
    }
    if let Some(seed) = args.seed {
        cfg.signal.seed = seed;
    }
    if let Some(filters) = &args.filters {
        let kinds = filters
            .iter()
            .map(|s| s.parse::<FilterKind>())
            .collect::<Result<Vec<_>, _>>()?;
        cfg.filters = <[FilterKind; 2]>::try_from(kinds).map_err(|k| Error::Validation {
            field: "filters",
            reason: format!("expected exactly two filters, got {}", k.len()),
        })?;
    }
    if let Some(l) = args.initial_lambda {
        cfg.initial_lambda = l;
    }
    if let Some(rule) = &args.rule {
        cfg.rule = parse_rule(rule)?;
    }
    if let Some(betas) = &args.audit_betas {
        cfg.audit_betas = betas.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_constants(c: &TheoremConstants) {
    println!(
        "constants: epsilon={} Y={} lambda_plus={} z={:.9} a={:.9} b={:.9} mu={:.9} slope={:.9}",
        c.epsilon, c.y_bound, c.lambda_plus, c.z, c.a, c.b, c.mu, c.regret_slope
    );
}

fn cmd_run(args: RunArgs) -> Result<u8, Error> {
    let cfg = build_config(&args.experiment)?;
    let exp = run_experiment(&cfg)?;
    if let Some(path) = &args.output_csv {
        write_trace_csv(path, &exp)?;
    }
    let report = exp.report();
    if let Some(path) = &args.report_json {
        write_json(path, &report)?;
    }
    println!("steps: {}  clip events: {}", report.n, report.clip_events);
    println!(
        "hindsight: beta*={:.6}  L_n(mixture)={:.6}  L_n(beta*)={:.6}",
        exp.hindsight.beta_star,
        exp.hindsight.loss_mixture.unwrap_or(f64::NAN),
        exp.hindsight.loss_best_convex
    );
    match (&exp.constants, &exp.audit, &exp.regret) {
        (Some(c), Some(audit), Some(regret)) => {
            print_constants(c);
            println!(
                "per-step audit: {} checks, {} violations, max slack violation {:.3e}",
                audit.checks, audit.violations, audit.max_slack_violation
            );
            println!(
                "regret bound: max violation {:.3e} ({})",
                regret.max_violation,
                if regret.holds { "holds" } else if regret.clip_events > 0 { "clipped run, not covered" } else { "VIOLATED" }
            );
        }
        _ => println!("learning rate exceeds every derived rate; no guarantee to audit"),
    }
    Ok(if exp.violation_detected() { EXIT_VIOLATION } else { 0 })
}

fn cmd_sweep(args: SweepArgs) -> Result<u8, Error> {
    let cfg = build_config(&args.experiment)?;
    let rows = sweep(&cfg, &args.epsilons, &args.lambda_pluses)?;
    if let Some(path) = &args.output_csv {
        write_sweep_csv(path, &rows)?;
    }
    if let Some(path) = &args.report_json {
        write_json(path, &rows)?;
    }
    println!("epsilon,lambda_plus,mu,slope,final_regret_gap,bound_rhs,clip_events,step_violations");
    for r in &rows {
        println!(
            "{},{},{:.6},{:.6},{:.6e},{:.6e},{},{}",
            r.epsilon, r.lambda_plus, r.mu, r.slope, r.final_regret_gap, r.bound_rhs, r.clip_events, r.step_violations
        );
    }
    let violated = rows.iter().any(|r| r.step_violations > 0);
    Ok(if violated { EXIT_VIOLATION } else { 0 })
}

fn print_lemma(r: &LemmaReport) {
    println!("a={} b={} mu={} lambda_plus={} Y={}", r.a, r.b, r.mu, r.lambda_plus, r.y_bound);
    for (name, inst) in [("instance 1", &r.instance1), ("instance 2", &r.instance2)] {
        println!(
            "{name}: y={} yhat1={} yhat2={} beta={} lambda={} -> lhs={:.9} rhs={:.9} (jensen bound {:.9}) {}",
            inst.y,
            inst.yhat1,
            inst.yhat2,
            inst.beta,
            inst.lambda,
            inst.lhs,
            inst.rhs,
            inst.rhs_jensen_bound,
            if inst.holds { "ok" } else { "VIOLATION" }
        );
    }
    println!("mu >= a/(lp(1-lp)): {}", r.rate_condition);
    println!("b >= a/4 + mu/16: {}", r.margin_condition);
    println!("b >= a/4 + a/(16 lp(1-lp)): {}", r.combined_condition);
    println!("b >= a/4 + 1/(16 lp(1-lp)): {}", r.unscaled_condition);
    println!("{}", if r.consistent() { "consistent" } else { "inconsistent" });
}

fn cmd_lemma(args: LemmaArgs) -> Result<u8, Error> {
    let derived = args
        .epsilon
        .map(|eps| derive_constants(eps, args.y_bound, args.lambda_plus))
        .transpose()?;
    let pick = |given: Option<f64>, from: fn(&TheoremConstants) -> f64, field: &'static str| {
        given.or(derived.as_ref().map(from)).ok_or(Error::Validation {
            field,
            reason: "required unless --epsilon is given".into(),
        })
    };
    let a = pick(args.a, |c| c.a, "a")?;
    let b = pick(args.b, |c| c.b, "b")?;
    let mu = pick(args.mu, |c| c.mu, "mu")?;
    let report = lemma_necessity_check(a, b, mu, args.lambda_plus, args.y_bound)?;
    print_lemma(&report);
    if let Some(path) = &args.report_json {
        write_json(path, &report)?;
    }
    Ok(if report.consistent() { 0 } else { EXIT_VIOLATION })
}

fn cmd_verify(args: VerifyArgs) -> Result<u8, Error> {
    let epsilon = match (args.rate.epsilon, args.rate.mu) {
        (Some(eps), _) => eps,
        (None, Some(mu)) => epsilon_for_learning_rate(mu, args.y_bound, args.lambda_plus).ok_or(Error::Validation {
            field: "mu",
            reason: "no epsilon yields this learning rate".into(),
        })?,
        (None, None) => {
            return Err(Error::Validation {
                field: "epsilon",
                reason: "one of --epsilon or --mu is required".into(),
            })
        }
    };
    let constants = derive_constants(epsilon, args.y_bound, args.lambda_plus)?;
    let rule = args.rule.as_deref().map(parse_rule).transpose()?.unwrap_or_default();
    let betas = args.audit_betas.unwrap_or_else(default_audit_betas);
    let report = verify_trace(&args.input_csv, &constants, rule, &betas)?;
    if let Some(path) = &args.report_json {
        write_json(path, &report)?;
    }
    print_constants(&constants);
    println!(
        "steps: {}  clip events: {}  per-step violations: {}  max slack violation {:.3e}  regret max violation {:.3e}",
        report.n, report.clip_events, report.audit.violations, report.max_slack_violation, report.regret.max_violation
    );
    Ok(if report.violation_detected { EXIT_VIOLATION } else { 0 })
}

fn exit_for(err: &Error) -> u8 {
    if err.is_io() {
        EXIT_IO
    } else {
        EXIT_VALIDATION
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_VALIDATION } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Lemma(args) => cmd_lemma(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_for(&err))
        }
    }
}
