//! `splinesep` command-line front end.
//!
//! Exit codes: 0 certified success, 1 input error, 2 solver failure,
//! 3 certification failure.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use splinesep::bench::{
    self, generate_suite, report, run_benchmark, summarize, summary_table, BenchConfig, EnvironmentSpec, ReportFormat,
    RowsFile, DEFAULT_SEED, DEFAULT_TRIALS, MAX_OBSTACLES, SCHEMA_VERSION,
};
use splinesep::geometry::Vec2;
use splinesep::planner::{certify, plan_timed, CertificationReport, PlanResult, PlanStatus, PlannerConfig};
use splinesep::transcription::{Variant, DEFAULT_N};

const EXIT_OK: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_CERTIFICATION: u8 = 3;

pub const THREADS_ENV: &str = "SPLINESEP_THREADS";

#[derive(Parser, Debug)]
#[command(name = "splinesep", version, about = "Continuously collision-free trajectory planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Plan one trajectory.
    Plan(PlanArgs),
    /// Run the benchmark sweep.
    Bench(BenchArgs),
    /// Re-certify a stored plan.
    Certify(CertifyArgs),
    /// Render a plan or benchmark results as SVG.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Method {
    Decoupled,
    Coupled,
}

impl From<Method> for Variant {
    fn from(m: Method) -> Self {
        match m {
            Method::Decoupled => Variant::Decoupled,
            Method::Coupled => Variant::Coupled,
        }
    }
}

fn parse_point(s: &str) -> Result<Vec2, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [x, y] => {
            let x: f64 = x.parse().map_err(|e| format!("bad x in {s:?}: {e}"))?;
            let y: f64 = y.parse().map_err(|e| format!("bad y in {s:?}: {e}"))?;
            if x.is_finite() && y.is_finite() {
                Ok(Vec2::new(x, y))
            } else {
                Err(format!("non-finite point {s:?}"))
            }
        }
        _ => Err(format!("expected x,y but got {s:?}")),
    }
}

/// Obstacle counts as `a..b`, `a..=b`, a single count or a comma list.
/// Obstacle counts of a sweep, each in `1..=MAX_OBSTACLES`.
#[derive(Clone, Debug, PartialEq)]
struct Counts(Vec<usize>);

fn parse_counts(s: &str) -> Result<Counts, String> {
    let num = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("bad count {t:?}: {e}"));
    let counts: Vec<usize> = if let Some((a, b)) = s.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        (num(a)?..=num(b)?).collect()
    } else {
        s.split(',').map(num).collect::<Result<_, _>>()?
    };
    if counts.is_empty() || counts.iter().any(|c| !(1..=MAX_OBSTACLES).contains(c)) {
        return Err(format!("obstacle counts must lie in 1..={MAX_OBSTACLES}, got {s:?}"));
    }
    Ok(Counts(counts))
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Environment JSON file.
    env: PathBuf,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    start: Vec2,
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    goal: Vec2,
    #[arg(long, value_enum, default_value = "decoupled")]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_N)]
    n_intervals: usize,
    /// Safety margin; defaults to the environment's robot margin.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Result JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Optional trajectory SVG path.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "1..8", value_parser = parse_counts)]
    obstacles: Counts,
    #[arg(long, default_value_t = DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Worker threads; overridden by SPLINESEP_THREADS.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug)]
struct CertifyArgs {
    /// Plan result JSON written by `plan`.
    result: PathBuf,
    /// Environment JSON file.
    env: PathBuf,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// Plan result JSON or benchmark `results.json`.
    input: PathBuf,
    /// Environment file, required for plan results.
    #[arg(long)]
    env: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

/// Stored plan: the request and the result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    pub schema_version: u32,
    pub seed: u64,
    pub start: Vec2,
    pub goal: Vec2,
    pub eps: f64,
    pub n_intervals: usize,
    pub result: PlanResult,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<bench::BenchError> for Failure {
    fn from(e: bench::BenchError) -> Self {
        Failure::input(e.to_string())
    }
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure::input(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, body).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn load_plan_file(path: &Path) -> Result<PlanFile, Failure> {
    let raw: serde_json::Value = read_json(path)?;
    let version = raw.get("schema_version").and_then(serde_json::Value::as_u64);
    if version != Some(SCHEMA_VERSION as u64) {
        return Err(Failure::input(format!(
            "{}: schema_version {version:?} does not match {SCHEMA_VERSION}",
            path.display()
        )));
    }
    serde_json::from_value(raw).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

fn in_arena(env: &EnvironmentSpec, p: Vec2) -> bool {
    (0.0..=env.arena[0]).contains(&p.x) && (0.0..=env.arena[1]).contains(&p.y)
}

fn print_certification(rep: &CertificationReport) {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3e}"));
    println!(
        "certification: coefficients {} (min {}), sampling {} (min margin {} over {} samples/interval)",
        if rep.coefficients_pass { "pass" } else { "FAIL" },
        fmt(rep.min_coefficient),
        if rep.sampling_pass { "pass" } else { "FAIL" },
        fmt(rep.min_sampled_margin),
        rep.samples_per_interval
    );
    for v in &rep.violations {
        println!(
            "violation: {:?} check, interval {}, obstacle {}, value {:.3e}",
            v.check, v.interval, v.obstacle, v.value
        );
    }
}

fn cmd_plan(a: PlanArgs) -> Result<u8, Failure> {
    let env = EnvironmentSpec::load(&a.env).map_err(|e| Failure::input(e.to_string()))?;
    for (name, p) in [("start", a.start), ("goal", a.goal)] {
        if !in_arena(&env, p) {
            return Err(Failure::input(format!("{name} ({}, {}) outside the arena", p.x, p.y)));
        }
    }
    let mut env = env;
    if let Some(eps) = a.eps {
        env.robot.eps = eps;
    }
    let problem = env.problem(a.start, a.goal);
    let config = PlannerConfig {
        variant: a.method.into(),
        eps: env.robot.eps,
        n_intervals: a.n_intervals,
        ..PlannerConfig::default()
    };
    let result = plan_timed(&problem, &config).map_err(|e| Failure::input(format!("rejected problem: {e}")))?;
    println!(
        "status: {:?}, T = {:.4} s, iterations = {}, t_wall = {:.1} ms",
        result.status,
        result.t_final,
        result.iterations(),
        result.timings.wall_ms
    );
    print_certification(&result.certification);
    if let Some(svg) = &a.svg {
        write_file(svg, &plot::trajectory_svg(&result, &env))?;
    }
    let code = match result.status {
        PlanStatus::Success => EXIT_OK,
        PlanStatus::CertificationFailure => EXIT_CERTIFICATION,
        PlanStatus::Infeasible | PlanStatus::SolverFailure => EXIT_SOLVER,
    };
    let file = PlanFile {
        schema_version: SCHEMA_VERSION,
        seed: a.seed,
        start: a.start,
        goal: a.goal,
        eps: env.robot.eps,
        n_intervals: a.n_intervals,
        result,
    };
    write_file(&a.out, &serde_json::to_string_pretty(&file).expect("plan serializes"))?;
    Ok(code)
}

fn threads(flag: usize) -> Result<usize, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Failure::input(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        Err(_) => Ok(flag.max(1)),
    }
}

fn cmd_bench(a: BenchArgs) -> Result<u8, Failure> {
    if a.trials == 0 {
        return Err(Failure::input("--trials must be positive"));
    }
    let parallelism = threads(a.parallel)?;
    let suite = generate_suite(a.seed, &a.obstacles.0, a.trials)?;
    for env in &suite.environments {
        let path = a.out_dir.join(format!("env_{}.json", env.n_obstacles()));
        write_file(&path, &env.to_json())?;
    }
    let config = BenchConfig {
        parallelism,
        ..BenchConfig::default()
    };
    let records = run_benchmark(&suite, &config)?;
    let rows: Vec<_> = records.into_iter().map(|r| r.row).collect();
    report(
        &rows,
        &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg],
        &a.out_dir,
        a.seed,
        parallelism,
    )?;
    let failed = rows.iter().filter(|r| !r.success).count();
    println!("{} runs, {failed} unsuccessful, parallelism {parallelism}", rows.len());
    print!("{}", summary_table(&summarize(&rows, a.seed, parallelism)));
    Ok(EXIT_OK)
}

fn cmd_certify(a: CertifyArgs) -> Result<u8, Failure> {
    let file = load_plan_file(&a.result)?;
    let mut env = EnvironmentSpec::load(&a.env).map_err(|e| Failure::input(e.to_string()))?;
    env.robot.eps = file.eps;
    let mut problem = env.problem(file.start, file.goal);
    problem.n_intervals = file.n_intervals;
    if file.result.position_bernstein.len() != file.n_intervals {
        return Err(Failure::input(format!(
            "{}: {} intervals stored, header says {}",
            a.result.display(),
            file.result.position_bernstein.len(),
            file.n_intervals
        )));
    }
    let rep = certify(&file.result, &problem);
    print_certification(&rep);
    Ok(if rep.passed() { EXIT_OK } else { EXIT_CERTIFICATION })
}

fn cmd_plot(a: PlotArgs) -> Result<u8, Failure> {
    let raw: serde_json::Value = read_json(&a.input)?;
    let svg = if raw.get("rows").is_some() {
        let rows: RowsFile =
            serde_json::from_value(raw).map_err(|e| Failure::input(format!("{}: {e}", a.input.display())))?;
        bench::box_plot_svg(&rows.rows, "t_wall (ms)", |r| Some(r.t_wall_ms))
    } else {
        let file = load_plan_file(&a.input)?;
        let env_path = a.env.ok_or_else(|| Failure::input("--env is required to plot a plan"))?;
        let env = EnvironmentSpec::load(&env_path).map_err(|e| Failure::input(e.to_string()))?;
        plot::trajectory_svg(&file.result, &env)
    };
    write_file(&a.out, &svg)?;
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Certify(a) => cmd_certify(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_parse() {
        assert_eq!(parse_point("1.5, -2").unwrap(), Vec2::new(1.5, -2.0));
        assert!(parse_point("1").is_err());
        assert!(parse_point("a,b").is_err());
        assert!(parse_point("inf,0").is_err());
    }

    #[test]
    fn counts_parse() {
        assert_eq!(parse_counts("1..8").unwrap().0, (1..=8).collect::<Vec<_>>());
        assert_eq!(parse_counts("2..=3").unwrap().0, vec![2, 3]);
        assert_eq!(parse_counts("1,4").unwrap().0, vec![1, 4]);
        assert_eq!(parse_counts("5").unwrap().0, vec![5]);
        assert!(parse_counts("0..3").is_err());
        assert!(parse_counts("11").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
