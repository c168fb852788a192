//! `lipbound`: certified Lipschitz bounds for ReLU networks.
//!
//! Exit codes: 0 success, 1 error (including usage errors), 2 empty input
//! domain, 3 assignment check found violations.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use lipbound::bounds::{self, format_eps, BoundsError, BoundsOptions, BoundsReport, Mode};
use lipbound::miqcqp::{self, Assignment, ModelError, ModelOptions};
use lipbound::region::RegionError;
use lipbound::{InputDomain, MlpNetwork, NormKind};

const EXIT_ERROR: u8 = 1;
const EXIT_EMPTY_DOMAIN: u8 = 2;
const EXIT_VIOLATIONS: u8 = 3;

#[derive(Parser)]
#[command(name = "lipbound", version, about = "Certified Lipschitz bounds for ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Upper, strict lower and per-eps bounds.
    Bounds(BoundsArgs),
    /// Exact piecewise-constant eps -> L_eps curve.
    Curve(CurveArgs),
    /// Write the mixed-integer model for a norm and level.
    Emit(EmitArgs),
    /// Check an assignment against a model.
    Check(CheckArgs),
    /// Monte-Carlo lower estimates.
    Sample(SampleArgs),
}

#[derive(Args)]
struct Problem {
    /// Network JSON file.
    #[arg(long)]
    net: PathBuf,
    /// Domain JSON file; all of R^n when omitted.
    #[arg(long)]
    domain: Option<PathBuf>,
    /// Norm: 1, 2 or inf.
    #[arg(long, default_value = "2", value_parser = parse_norm)]
    p: NormKind,
}

#[derive(Args)]
struct EngineArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Bnb)]
    mode: ModeArg,
    /// Replace an L2-ball domain by its bounding box (lower bounds are then
    /// no longer certified for the ball).
    #[arg(long)]
    relax_ball_to_box: bool,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "LIPBOUND_THREADS", default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
}

#[derive(Args)]
struct BoundsArgs {
    #[command(flatten)]
    problem: Problem,
    #[command(flatten)]
    engine: EngineArgs,
    /// Margin level; repeat for several.
    #[arg(long, allow_negative_numbers = true, value_parser = parse_eps)]
    eps: Vec<f64>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a model assignment realizing the bound at `--witness-eps`.
    #[arg(long)]
    emit_witness: Option<PathBuf>,
    /// Write the matching model next to the witness.
    #[arg(long, requires = "emit_witness")]
    witness_model: Option<PathBuf>,
    /// Level of the witness (0 gives the upper bound's witness).
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true, value_parser = parse_eps)]
    witness_eps: f64,
    #[arg(long)]
    linearize_inf_objective: bool,
}

#[derive(Args)]
struct CurveArgs {
    #[command(flatten)]
    problem: Problem,
    #[command(flatten)]
    engine: EngineArgs,
    /// Curve JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Step-plot CSV with columns eps,value.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Bnb,
    Oracle,
}

#[derive(Clone, Copy, ValueEnum, PartialEq)]
enum Format {
    Json,
    Lp,
    Both,
}

#[derive(Args)]
struct EmitArgs {
    #[command(flatten)]
    problem: Problem,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true, value_parser = parse_eps)]
    eps: f64,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Output path; with `--format both` the text goes to the same path with
    /// extension `.lp`. Printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    linearize_inf_objective: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Model JSON file.
    #[arg(long)]
    model: PathBuf,
    /// Assignment JSON: an object mapping variable names to values.
    #[arg(long)]
    assignment: PathBuf,
    #[arg(long, default_value_t = miqcqp::DEFAULT_CHECK_TOL)]
    tol: f64,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    problem: Problem,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of samples, and of pairs for the quotient estimate.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    samples: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_norm(s: &str) -> Result<NormKind, String> {
    s.parse().map_err(|e: lipbound::norms::NormError| e.to_string())
}

fn parse_eps(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("eps must be finite and >= 0, got {s}"));
    }
    Ok(v)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_ERROR) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Bounds(a) => cmd_bounds(a),
        Command::Curve(a) => cmd_curve(a),
        Command::Emit(a) => cmd_emit(a),
        Command::Check(a) => cmd_check(a),
        Command::Sample(a) => cmd_sample(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            if is_empty_domain(&e) {
                ExitCode::from(EXIT_EMPTY_DOMAIN)
            } else {
                ExitCode::from(EXIT_ERROR)
            }
        }
    }
}

fn is_empty_domain(e: &anyhow::Error) -> bool {
    e.chain().any(|cause| {
        matches!(cause.downcast_ref::<RegionError>(), Some(RegionError::EmptyDomain))
            || cause.downcast_ref::<BoundsError>().is_some_and(BoundsError::is_empty_domain)
            || matches!(cause.downcast_ref::<ModelError>(), Some(ModelError::Region(RegionError::EmptyDomain)))
    })
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, &text)
}

fn load(problem: &Problem) -> Result<(MlpNetwork, InputDomain)> {
    let net = MlpNetwork::from_json(&read(&problem.net)?)
        .with_context(|| format!("invalid network in {}", problem.net.display()))?;
    let domain = match &problem.domain {
        Some(path) => InputDomain::from_json(&read(path)?)
            .with_context(|| format!("invalid domain in {}", path.display()))?,
        None => InputDomain::AllSpace,
    };
    domain
        .validate(net.input_dim())
        .context("domain does not fit the network")?;
    Ok((net, domain))
}

fn problem_config(problem: &Problem) -> Value {
    json!({
        "net": problem.net.display().to_string(),
        "domain": problem.domain.as_ref().map(|d| d.display().to_string()),
        "p": problem.p,
    })
}

fn header(command: &str, config: Value) -> Value {
    json!({
        "tool": "lipbound",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Some(b), Value::Object(e)) = (base.as_object_mut(), extra) {
        b.extend(e);
    }
    base
}

fn options(engine: &EngineArgs) -> BoundsOptions {
    BoundsOptions {
        mode: match engine.mode {
            ModeArg::Bnb => Mode::BranchAndBound,
            ModeArg::Oracle => Mode::Oracle,
        },
        relax_ball_to_box: engine.relax_ball_to_box,
        threads: engine.threads as usize,
    }
}

fn run_engine(net: &MlpNetwork, domain: &InputDomain, p: NormKind, eps: &[f64], engine: &EngineArgs) -> Result<BoundsReport> {
    if !domain.is_polyhedral() && !engine.relax_ball_to_box {
        bail!("L2-ball domains need --relax-ball-to-box for bound computation");
    }
    Ok(bounds::compute_bounds(net, domain, p, eps, options(engine))?)
}

fn cmd_bounds(args: BoundsArgs) -> Result<u8> {
    let (net, domain) = load(&args.problem)?;
    let p = args.problem.p;
    let mut levels = args.eps.clone();
    if args.emit_witness.is_some() && args.witness_eps > 0.0 && !levels.contains(&args.witness_eps) {
        levels.push(args.witness_eps);
    }
    let report = run_engine(&net, &domain, p, &levels, &args.engine)?;
    let mut line = format!("upper={} lower={}", report.upper.value, report.lower.value);
    for e in report.eps.iter().filter(|e| args.eps.contains(&e.eps)) {
        line.push_str(&format!(" L_{}={}", format_eps(e.eps), e.bound.value));
        if e.bound.is_empty() {
            line.push_str("(empty)");
        }
    }
    println!("{line}");
    if report.lower.is_empty() {
        println!("note: no activation region with interior; lower bound reported as 0");
    }
    if report.domain_relaxed {
        println!("note: L2 ball relaxed to its bounding box; only the upper bound is certified");
    }
    println!("time_ms={:.3}", report.wall_time_ms);

    if let Some(out) = &args.out {
        let mut config = problem_config(&args.problem);
        config["eps"] = json!(args.eps);
        config["relax_ball_to_box"] = json!(args.engine.relax_ball_to_box);
        let mut body = report.to_json();
        if let Some(map) = body["eps_values"].as_object_mut() {
            map.retain(|k, _| args.eps.iter().any(|e| format_eps(*e) == *k));
        }
        if let Some(list) = body["eps_details"].as_array_mut() {
            list.retain(|d| d["eps"].as_f64().is_some_and(|e| args.eps.contains(&e)));
        }
        write_json(out, &merge(header("bounds", config), body))?;
    }

    if let Some(path) = &args.emit_witness {
        let model = miqcqp::build_model(
            &net,
            &domain,
            p,
            args.witness_eps,
            ModelOptions { linearize_inf_objective: args.linearize_inf_objective },
        )?;
        let assignment = miqcqp::witness_from_bounds(&model, &net, &domain, &report)?;
        write_json(path, &serde_json::to_value(&assignment)?)?;
        if let Some(model_path) = &args.witness_model {
            write(model_path, &miqcqp::emit_json(&model))?;
        }
        let check = miqcqp::check_assignment(&model, &assignment, miqcqp::DEFAULT_CHECK_TOL)?;
        println!(
            "witness: {} ({} violations, objective {})",
            path.display(),
            check.violations.len(),
            check.objective
        );
    }
    Ok(0)
}

fn cmd_curve(args: CurveArgs) -> Result<u8> {
    let (net, domain) = load(&args.problem)?;
    let report = run_engine(&net, &domain, args.problem.p, &[], &args.engine)?;
    let mut prev = 0.0;
    for c in &report.curve {
        let note = if c.empty { " (empty)" } else { "" };
        println!("({}, {}] -> {}{note}", format_eps(prev), format_eps(c.eps), c.value);
        prev = c.eps;
    }
    if let Some(out) = &args.out {
        let mut config = problem_config(&args.problem);
        config["relax_ball_to_box"] = json!(args.engine.relax_ball_to_box);
        let body = report.to_json();
        let body = json!({
            "p": body["p"],
            "lower": body["lower"],
            "curve": body["curve"],
            "domain_relaxed": body["domain_relaxed"],
            "stats": body["stats"],
        });
        write_json(out, &merge(header("curve", config), body))?;
    }
    if let Some(csv) = &args.csv {
        write(csv, &curve_csv(&report))?;
    }
    Ok(0)
}

/// Step rendering: each breakpoint appears once with the value on its left
/// and once with the value on its right.
fn curve_csv(report: &BoundsReport) -> String {
    let mut out = String::from("eps,value\n");
    let mut prev = 0.0;
    for c in &report.curve {
        out.push_str(&format!("{},{}\n", format_eps(prev), c.value));
        out.push_str(&format!("{},{}\n", format_eps(c.eps), c.value));
        prev = c.eps;
    }
    out
}

fn cmd_emit(args: EmitArgs) -> Result<u8> {
    let (net, domain) = load(&args.problem)?;
    let model = miqcqp::build_model(
        &net,
        &domain,
        args.problem.p,
        args.eps,
        ModelOptions { linearize_inf_objective: args.linearize_inf_objective },
    )?;
    let summary = format!(
        "variables={} binaries={} linear={} quadratic={} big_m={}",
        model.variables.len(),
        model.num_binaries(),
        model.linear.len(),
        model.quadratic.len(),
        model.metadata.big_m.map_or("none".to_string(), |c| c.to_string())
    );
    let json_text = miqcqp::emit_json(&model) + "\n";
    let lp_text = miqcqp::emit_lp_text(&model);
    match &args.out {
        Some(out) => {
            match args.format {
                Format::Json => write(out, &json_text)?,
                Format::Lp => write(out, &lp_text)?,
                Format::Both => {
                    write(out, &json_text)?;
                    write(&out.with_extension("lp"), &lp_text)?;
                }
            }
            println!("{summary}");
        }
        None => {
            if args.format != Format::Lp {
                print!("{json_text}");
            }
            if args.format != Format::Json {
                print!("{lp_text}");
            }
            eprintln!("{summary}");
        }
    }
    Ok(0)
}

fn cmd_check(args: CheckArgs) -> Result<u8> {
    let model = miqcqp::parse_json(&read(&args.model)?)
        .with_context(|| format!("invalid model in {}", args.model.display()))?;
    let assignment: Assignment = serde_json::from_str(&read(&args.assignment)?)
        .with_context(|| format!("invalid assignment in {}", args.assignment.display()))?;
    let report = miqcqp::check_assignment(&model, &assignment, args.tol)?;
    for v in &report.violations {
        println!("violated {}: lhs={} rhs={} slack={}", v.constraint, v.lhs, v.rhs, v.slack);
    }
    println!("objective={}", report.objective);
    if report.is_feasible() {
        println!("feasible");
        Ok(0)
    } else {
        println!("{} violations", report.violations.len());
        Ok(EXIT_VIOLATIONS)
    }
}

fn cmd_sample(args: SampleArgs) -> Result<u8> {
    let (net, domain) = load(&args.problem)?;
    let p = args.problem.p;
    let n = args.samples as usize;
    let est = bounds::sampled_lower_bound(&net, &domain, p, n, args.seed)?;
    let quotient = bounds::pairwise_quotient_estimate(&net, &domain, p, n, args.seed)?;
    println!("sampled_lower_bound={} valid_samples={}", est.value, est.valid_samples);
    println!("pairwise_quotient_estimate={quotient}");
    println!("note: heuristic lower estimates from random samples, not certified bounds");
    if est.valid_samples == 0 {
        println!("note: every sample was within {} of a region boundary", bounds::SAMPLE_MARGIN);
    }
    if let Some(out) = &args.out {
        let mut config = problem_config(&args.problem);
        config["seed"] = json!(args.seed);
        config["samples"] = json!(args.samples);
        let body = json!({
            "sampled_lower_bound": est.value,
            "valid_samples": est.valid_samples,
            "best_x": est.best_x,
            "best_pattern": est.best_pattern,
            "pairwise_quotient_estimate": quotient,
        });
        write_json(out, &merge(header("sample", config), body))?;
    }
    Ok(0)
}
