//! Command-line front end: `solve`, `compare`, `check` and `plot`.

pub mod config;
pub mod io;
pub mod svg;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::baselines::run_baseline;
use crate::dynamics::{default_step_budget, solve_stonr, TerminalStatus, Trajectory};
use crate::objectives::{PerturbationKind, PerturbationSpec};
use crate::verify::{
    check_assumptions, parity_diagnostics, random_ridge_samples, samples_from_trajectory, AssumptionReport,
    AssumptionTolerances, ParityReport,
};
use crate::vi::{vi_gap, ViProblem};

pub use config::{Method, ProblemSelector, ProblemSpec, RunConfig};
pub use io::{read_trajectory, write_trajectory, TrajectoryIoError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_BUDGET: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "ridge-solver", version, about = "Ridge-following min-max solver on a box")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one method on one problem.
    Solve(SolveArgs),
    /// Run every method on one problem from several starting points.
    Compare(CompareArgs),
    /// Run the ridge solver and report assumption and parity checks.
    Check(CheckArgs),
    /// Render a trajectory CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Clone, Default)]
struct RunArgs {
    /// Built-in problem: f1, f2, bilinear, neg_square.
    #[arg(long)]
    problem: Option<String>,
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Euler step of the ridge solver (unit box).
    #[arg(long)]
    gamma: Option<f64>,
    /// Exit band of the ridge solver.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Target VI gap.
    #[arg(long)]
    alpha: Option<f64>,
    /// Baseline step size (problem units).
    #[arg(long)]
    eta: Option<f64>,
    /// Follow-the-ridge damping.
    #[arg(long)]
    lambda: Option<f64>,
    /// Step budget: per epoch for the ridge solver, total for baselines.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    no_ridge_correction: bool,
    /// Keep every k-th step in the trajectory.
    #[arg(long)]
    record_every: Option<u64>,
    /// Perturb the problem, e.g. `linear_map:1e-3`.
    #[arg(long)]
    perturb: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct SolveArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    method: Option<String>,
    /// Baseline starting point in problem units, e.g. `0.5,0.5`.
    #[arg(long, allow_hyphen_values = true)]
    init: Option<String>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Starting point for the baselines; repeat for several.
    #[arg(long, allow_hyphen_values = true)]
    init: Vec<String>,
    /// Number of random starting points when no `--init` is given.
    #[arg(long, default_value_t = 3)]
    inits: usize,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Random ridge points added to the assumption samples.
    #[arg(long, default_value_t = 50)]
    ridge_samples: usize,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Trajectory CSV.
    input: PathBuf,
    /// Output SVG; defaults to the input with an `.svg` extension.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Draw the box of this built-in instead of the data bounds.
    #[arg(long)]
    problem: Option<String>,
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: EXIT_USAGE, message: message.into() }
    }

    fn violation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VIOLATION, message: message.into() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn parse_point(s: &str) -> std::result::Result<Vec<f64>, String> {
    s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("bad coordinate '{t}' in '{s}': {e}"))).collect()
}

fn parse_perturbation(s: &str, seed: u64) -> std::result::Result<PerturbationSpec, String> {
    let (kind, mag) = s.split_once(':').ok_or_else(|| format!("expected kind:magnitude, got '{s}'"))?;
    let kind = match kind {
        "sinusoidal_bias" => PerturbationKind::SinusoidalBias,
        "linear_map" => PerturbationKind::LinearMap,
        "boundary_shrink" => PerturbationKind::BoundaryShrink,
        other => return Err(format!("unknown perturbation '{other}'")),
    };
    let magnitude = mag.parse::<f64>().map_err(|e| format!("bad magnitude '{mag}': {e}"))?;
    Ok(PerturbationSpec { kind, magnitude, seed })
}

pub fn exit_code(status: TerminalStatus) -> i32 {
    match status {
        TerminalStatus::Solved => EXIT_OK,
        TerminalStatus::MaxEpochs | TerminalStatus::MaxSteps => EXIT_BUDGET,
        TerminalStatus::AssumptionViolation => EXIT_VIOLATION,
    }
}

fn build_config(a: &RunArgs, method: Option<&str>, init: Option<&str>) -> CliResult<RunConfig> {
    let mut cfg = match (&a.config, &a.problem) {
        (Some(path), _) => RunConfig::load(path).map_err(CliError::usage)?,
        (None, Some(name)) => RunConfig::new(name),
        (None, None) => return Err(CliError::usage("either --problem or --config is required")),
    };
    if let (Some(_), Some(name)) = (&a.config, &a.problem) {
        cfg.problem = ProblemSelector::Builtin(name.clone());
    }
    if let Some(m) = method {
        cfg.method = m.parse().map_err(CliError::usage)?;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(g) = a.gamma {
        cfg.solver.step_size = g;
        if g > 0.0 && g.is_finite() {
            cfg.solver.max_steps_per_epoch = default_step_budget(g);
        }
    }
    if let Some(e) = a.epsilon {
        cfg.solver.exit_tol = e;
    }
    if let Some(al) = a.alpha {
        cfg.solver.gap_tol = al;
        cfg.baseline.gap_tol = al;
    }
    if let Some(eta) = a.eta {
        cfg.baseline.eta = eta;
    }
    if let Some(l) = a.lambda {
        cfg.baseline.lambda = l;
    }
    if let Some(n) = a.steps {
        cfg.solver.max_steps_per_epoch = n;
        cfg.baseline.steps = n;
    }
    if a.no_ridge_correction {
        cfg.solver.ridge_correction = false;
    }
    if let Some(k) = a.record_every {
        cfg.solver.record_every = k;
    }
    if let Some(p) = &a.perturb {
        let spec = parse_perturbation(p, cfg.seed).map_err(|e| CliError::usage(format!("--perturb: {e}")))?;
        let name = cfg.problem_name();
        cfg.problem =
            ProblemSelector::Spec(ProblemSpec { builtin: Some(name), affine: None, perturbation: Some(spec) });
    }
    if let Some(o) = &a.out {
        cfg.out = Some(o.clone());
    }
    if let Some(i) = init {
        cfg.init = Some(parse_point(i).map_err(|e| CliError::usage(format!("--init: {e}")))?);
    }
    cfg.validate().map_err(|e| CliError::usage(e.to_string()))?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let dir = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    fs::write(path, text + "\n").map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn save_trajectory(traj: &Trajectory, path: &Path) -> CliResult<()> {
    write_trajectory(traj, path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct RunSummary {
    problem: String,
    method: Method,
    status: TerminalStatus,
    steps: u64,
    epochs: Option<u64>,
    init: Option<Vec<f64>>,
    /// Problem units.
    final_point: Vec<f64>,
    final_gap: f64,
    warnings: Vec<String>,
    failure: Option<String>,
    trajectory: String,
}

struct Outcome {
    trajectory: Trajectory,
    summary: RunSummary,
}

fn run_method(
    p: &ViProblem,
    cfg: &RunConfig,
    method: Method,
    init: Option<DVector<f64>>,
    file: &str,
) -> CliResult<Outcome> {
    let problem = cfg.problem_name();
    match method.baseline() {
        None => {
            let run = solve_stonr(p, &cfg.solver).map_err(|e| CliError::usage(e.to_string()))?;
            let summary = RunSummary {
                problem,
                method,
                status: run.trajectory.status,
                steps: run.steps,
                epochs: Some(run.epochs),
                init: None,
                final_point: p.domain().from_unit(&run.final_point).iter().copied().collect(),
                final_gap: run.final_gap,
                warnings: run.warnings,
                failure: run.failure,
                trajectory: file.to_string(),
            };
            Ok(Outcome { trajectory: run.trajectory, summary })
        }
        Some(kind) => {
            let init = match init {
                Some(x) => x,
                None => cfg.init_point(p).map_err(|e| CliError::usage(e.to_string()))?,
            };
            let m = cfg.baseline_method(kind);
            let traj = run_baseline(p, &m, &init).map_err(|e| CliError::violation(format!("{method}: {e}")))?;
            let last = traj.final_point().unwrap_or_else(|| init.clone());
            let summary = RunSummary {
                problem,
                method,
                status: traj.status,
                steps: traj.last().map_or(0, |r| r.step),
                epochs: None,
                init: Some(init.iter().copied().collect()),
                final_gap: vi_gap(p, &p.domain().to_unit(&last)),
                final_point: last.iter().copied().collect(),
                warnings: Vec::new(),
                failure: None,
                trajectory: file.to_string(),
            };
            Ok(Outcome { trajectory: traj, summary })
        }
    }
}

fn build_problem(cfg: &RunConfig) -> CliResult<ViProblem> {
    cfg.build_problem().map_err(|e| CliError::usage(e.to_string()))
}

fn cmd_solve(args: SolveArgs) -> CliResult<i32> {
    let cfg = build_config(&args.run, args.method.as_deref(), args.init.as_deref())?;
    let p = build_problem(&cfg)?;
    if cfg.method.baseline().is_some() {
        cfg.init_point(&p).map_err(|e| CliError::usage(e.to_string()))?;
    }
    let dir = out_dir(&cfg)?;
    let stem = format!("{}_{}", cfg.problem_name(), cfg.method);
    let csv = format!("{stem}.csv");
    let out = run_method(&p, &cfg, cfg.method, None, &csv)?;
    save_trajectory(&out.trajectory, &dir.join(&csv))?;
    write_json(&dir.join(format!("{stem}.json")), &out.summary)?;
    let s = &out.summary;
    println!(
        "{} {}: {} after {} steps, gap {:.3e}, final point {:?}",
        s.problem, s.method, s.status, s.steps, s.final_gap, s.final_point
    );
    if let Some(f) = &s.failure {
        println!("failure: {f}");
    }
    Ok(exit_code(s.status))
}

fn random_inits(p: &ViProblem, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let u = DVector::from_fn(p.dim(), |_, _| rng.gen_range(0.05..0.95));
            p.domain().from_unit(&u)
        })
        .collect()
}

#[derive(Serialize)]
struct CompareEntry {
    label: String,
    #[serde(flatten)]
    summary: Option<RunSummary>,
    error: Option<String>,
}

fn cmd_compare(args: CompareArgs) -> CliResult<i32> {
    let cfg = build_config(&args.run, None, None)?;
    let p = build_problem(&cfg)?;
    if p.dim() != 2 {
        return Err(CliError::usage(format!(
            "compare draws an SVG, which needs a 2-dimensional problem (got {})",
            p.dim()
        )));
    }
    let inits: Vec<DVector<f64>> = if !args.init.is_empty() {
        args.init
            .iter()
            .map(|s| parse_point(s).map(DVector::from_vec).map_err(|e| CliError::usage(format!("--init: {e}"))))
            .collect::<CliResult<_>>()?
    } else if cfg.init.is_some() {
        vec![cfg.init_point(&p).map_err(|e| CliError::usage(e.to_string()))?]
    } else {
        random_inits(&p, args.inits.max(1), cfg.seed)
    };
    for x in &inits {
        let mut probe = cfg.clone();
        probe.init = Some(x.iter().copied().collect());
        probe.init_point(&p).map_err(|e| CliError::usage(e.to_string()))?;
    }
    let dir = out_dir(&cfg)?;
    let name = cfg.problem_name();

    let mut jobs: Vec<(String, Method, Option<DVector<f64>>, String)> =
        vec![("stonr".into(), Method::Stonr, None, format!("{name}_stonr.csv"))];
    for m in Method::ALL.into_iter().filter(|m| m.baseline().is_some()) {
        for (k, x) in inits.iter().enumerate() {
            jobs.push((format!("{m} #{}", k + 1), m, Some(x.clone()), format!("{name}_{m}_{}.csv", k + 1)));
        }
    }

    let results: Vec<CliResult<Outcome>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(_, m, init, file)| {
                let (p, cfg) = (&p, &cfg);
                scope.spawn(move || run_method(p, cfg, *m, init.clone(), file))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("run thread panicked")).collect()
    });

    let mut code = EXIT_OK;
    let mut entries = Vec::new();
    let mut series = Vec::new();
    for ((label, _, _, file), res) in jobs.iter().zip(results) {
        match res {
            Ok(out) => {
                save_trajectory(&out.trajectory, &dir.join(file))?;
                println!(
                    "{label}: {} after {} steps, gap {:.3e}",
                    out.summary.status, out.summary.steps, out.summary.final_gap
                );
                if out.summary.status == TerminalStatus::AssumptionViolation {
                    code = EXIT_VIOLATION;
                }
                series.push(svg::Series {
                    label: label.clone(),
                    points: out.trajectory.records.iter().map(|r| [r.point[0], r.point[1]]).collect(),
                });
                entries.push(CompareEntry { label: label.clone(), summary: Some(out.summary), error: None });
            }
            Err(err) => {
                println!("{label}: error: {}", err.message);
                code = EXIT_VIOLATION;
                entries.push(CompareEntry { label: label.clone(), summary: None, error: Some(err.message) });
            }
        }
    }
    let lo = p.domain().lower();
    let hi = p.domain().upper();
    let picture = svg::render(&series, [lo[0], lo[1]], [hi[0], hi[1]], &format!("{name}: all methods"));
    fs::write(dir.join(format!("{name}_compare.svg")), picture).map_err(|e| CliError::usage(e.to_string()))?;
    write_json(&dir.join(format!("{name}_compare.json")), &entries)?;
    Ok(code)
}

#[derive(Serialize)]
struct CheckReport {
    problem: String,
    status: TerminalStatus,
    final_gap: f64,
    assumptions: AssumptionReport,
    parity: ParityReport,
}

fn cmd_check(args: CheckArgs) -> CliResult<i32> {
    let cfg = build_config(&args.run, None, None)?;
    let p = build_problem(&cfg)?;
    let dir = out_dir(&cfg)?;
    let run = solve_stonr(&p, &cfg.solver).map_err(|e| CliError::usage(e.to_string()))?;
    let mut samples = samples_from_trajectory(&p, &run.trajectory);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    samples.extend(random_ridge_samples(&p, args.ridge_samples, &cfg.solver, &mut rng));
    let tol = AssumptionTolerances {
        point: cfg.solver.tolerances(),
        sigma: cfg.solver.rank_tol,
        ..AssumptionTolerances::default()
    };
    let assumptions = check_assumptions(&p, &samples, &tol);
    let parity = parity_diagnostics(&p, &run.trajectory, &cfg.solver);

    println!("run: {} after {} steps, gap {:.3e}", run.trajectory.status, run.steps, run.final_gap);
    for (name, c) in [
        ("A1 (square block)", &assumptions.a1_square),
        ("A1 (restricted matrix)", &assumptions.a1_restricted),
        ("A2", &assumptions.a2),
        ("A3", &assumptions.a3),
    ] {
        println!("{name}: {:?} over {} samples", c.status, c.checked);
    }
    for c in parity.checks() {
        println!("{}: {} ({} checked)", c.name, if c.passed { "pass" } else { "FAIL" }, c.checked);
        for w in &c.witnesses {
            println!("  {w}");
        }
    }
    let pass = parity.all_passed() && assumptions.operative_pass();
    let status = run.trajectory.status;
    let report = CheckReport { problem: cfg.problem_name(), status, final_gap: run.final_gap, assumptions, parity };
    write_json(&dir.join(format!("{}_check.json", report.problem)), &report)?;
    Ok(match status {
        TerminalStatus::MaxEpochs | TerminalStatus::MaxSteps => EXIT_BUDGET,
        _ if pass && status == TerminalStatus::Solved => EXIT_OK,
        _ => EXIT_VIOLATION,
    })
}

fn cmd_plot(args: PlotArgs) -> CliResult<i32> {
    let traj = read_trajectory(&args.input).map_err(|e| CliError::usage(format!("{}: {e}", args.input.display())))?;
    if traj.records.is_empty() {
        return Err(CliError::usage(format!("{}: trajectory has no records", args.input.display())));
    }
    if traj.dim != 2 {
        return Err(CliError::usage(format!("SVG plots need a 2-dimensional trajectory (got {})", traj.dim)));
    }
    let (lo, hi) = match &args.problem {
        Some(name) => {
            let p = crate::objectives::builtin_problem(name).map_err(|e| CliError::usage(e.to_string()))?;
            let (l, h) = (p.domain().lower(), p.domain().upper());
            ([l[0], l[1]], [h[0], h[1]])
        }
        None => {
            let mut lo = [f64::INFINITY; 2];
            let mut hi = [f64::NEG_INFINITY; 2];
            for r in &traj.records {
                for k in 0..2 {
                    lo[k] = lo[k].min(r.point[k]);
                    hi[k] = hi[k].max(r.point[k]);
                }
            }
            for k in 0..2 {
                let pad = ((hi[k] - lo[k]) * 0.05).max(1e-6);
                lo[k] -= pad;
                hi[k] += pad;
            }
            (lo, hi)
        }
    };
    let label = args.input.file_stem().map_or("trajectory".into(), |s| s.to_string_lossy().into_owned());
    let series =
        [svg::Series { label: label.clone(), points: traj.records.iter().map(|r| [r.point[0], r.point[1]]).collect() }];
    let picture = svg::render(&series, lo, hi, &format!("{label} ({})", traj.status));
    let out = args.out.unwrap_or_else(|| args.input.with_extension("svg"));
    fs::write(&out, picture).map_err(|e| CliError::usage(format!("{}: {e}", out.display())))?;
    info!("wrote {}", out.display());
    Ok(EXIT_OK)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let res = match cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Check(a) => cmd_check(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("0.5,-0.25").unwrap(), vec![0.5, -0.25]);
        assert!(parse_point("0.5,x").is_err());
    }

    #[test]
    fn perturbation_flag_parses() {
        let s = parse_perturbation("linear_map:1e-3", 9).unwrap();
        assert_eq!(s, PerturbationSpec { kind: PerturbationKind::LinearMap, magnitude: 1e-3, seed: 9 });
        assert!(parse_perturbation("warp:1", 0).is_err());
    }

    #[test]
    fn flags_override_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"schema": 1, "problem": "f2", "method": "eg", "baseline": {"eta": 0.5}}"#).unwrap();
        let args = RunArgs { config: Some(path), eta: Some(0.02), gamma: Some(1e-2), ..RunArgs::default() };
        let cfg = build_config(&args, None, Some("0.1,0.2")).unwrap();
        assert_eq!(cfg.method, Method::Eg);
        assert_eq!(cfg.baseline.eta, 0.02);
        assert_eq!(cfg.solver.step_size, 1e-2);
        assert_eq!(cfg.solver.max_steps_per_epoch, default_step_budget(1e-2));
        assert_eq!(cfg.init, Some(vec![0.1, 0.2]));
    }

    #[test]
    fn missing_problem_is_a_usage_error() {
        let err = build_config(&RunArgs::default(), None, None).unwrap_err();
        assert_eq!(err.code, EXIT_USAGE);
    }

    #[test]
    fn negative_gamma_is_rejected_before_running() {
        let args = RunArgs { problem: Some("f1".into()), gamma: Some(-1.0), ..RunArgs::default() };
        assert_eq!(build_config(&args, None, None).unwrap_err().code, EXIT_USAGE);
    }

    #[test]
    fn status_codes() {
        assert_eq!(exit_code(TerminalStatus::Solved), 0);
        assert_eq!(exit_code(TerminalStatus::MaxSteps), 2);
        assert_eq!(exit_code(TerminalStatus::MaxEpochs), 2);
        assert_eq!(exit_code(TerminalStatus::AssumptionViolation), 3);
    }
}
