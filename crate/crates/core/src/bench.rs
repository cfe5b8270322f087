//! Benchmark suite: seeded rectangular environments, perimeter start/goal
//! sweeps, paired runs of both variants and report generation.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::RobotState;
use crate::geometry::{ConvexPolytope, Vec2};
use crate::planner::{plan_timed, PlanResult, PlanStatus, PlannerConfig};
use crate::transcription::{PlanningProblem, Variant, DEFAULT_EPS, DEFAULT_ROBOT_RADIUS};

pub const SCHEMA_VERSION: u32 = 1;
pub const ARENA_SIZE: f64 = 10.0;
pub const MIN_SIDE: f64 = 0.8;
pub const MAX_SIDE: f64 = 2.0;
pub const OBSTACLE_CLEARANCE: f64 = 0.5;
pub const BOUNDARY_CLEARANCE: f64 = 0.7;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
pub const MAX_OBSTACLES: usize = 10;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_TRIALS: usize = 200;

pub const CSV_HEADER: &str = "n_obstacles,method,trial,t_wall_ms,iters,T_s,eps_move_pct,success,t_ls_ms,t_qp_ms";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("obstacle count {0} outside 1..={MAX_OBSTACLES}")]
    ObstacleCount(usize),
    #[error("could not place {count} obstacles after {MAX_PLACEMENT_ATTEMPTS} attempts (seed {seed})")]
    Placement { count: usize, seed: u64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("no rows to report")]
    Empty,
    #[error("worker pool: {0}")]
    Pool(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub radius: f64,
    pub eps: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            radius: DEFAULT_ROBOT_RADIUS,
            eps: DEFAULT_EPS,
        }
    }
}

/// Environment file contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub schema_version: u32,
    pub arena: [f64; 2],
    pub obstacles: Vec<ConvexPolytope>,
    pub robot: RobotSpec,
    pub seed: u64,
}

impl EnvironmentSpec {
    pub fn empty() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            arena: [ARENA_SIZE; 2],
            obstacles: Vec::new(),
            robot: RobotSpec::default(),
            seed: 0,
        }
    }

    pub fn n_obstacles(&self) -> usize {
        self.obstacles.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("environment serializes")
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let env: Self = serde_json::from_str(&text).map_err(|e| format_err(path, e))?;
        if env.schema_version != SCHEMA_VERSION {
            return Err(format_err(path, format!("unsupported schema_version {}", env.schema_version)));
        }
        Ok(env)
    }

    /// Planning problem from `start` to `goal` with straight-line headings.
    pub fn problem(&self, start: Vec2, goal: Vec2) -> PlanningProblem {
        let heading = (goal.y - start.y).atan2(goal.x - start.x);
        let mut p = PlanningProblem::in_arena(
            RobotState::new(start.x, start.y, heading),
            RobotState::new(goal.x, goal.y, heading),
            self.obstacles.clone(),
        );
        p.state_upper[0] = self.arena[0];
        p.state_upper[1] = self.arena[1];
        p.robot_radius = self.robot.radius;
        p.eps = self.robot.eps;
        p
    }
}

/// Axis-aligned rectangle as `(x0, y0, x1, y1)`.
type Rect = (f64, f64, f64, f64);

fn rect_gap(a: Rect, b: Rect) -> f64 {
    let dx = (a.0 - b.2).max(b.0 - a.2).max(0.0);
    let dy = (a.1 - b.3).max(b.1 - a.3).max(0.0);
    dx.hypot(dy)
}

/// Seeded rejection sampling of `count` rectangles.
pub fn generate_environment(seed: u64, count: usize) -> Result<EnvironmentSpec, BenchError> {
    if !(1..=MAX_OBSTACLES).contains(&count) {
        return Err(BenchError::ObstacleCount(count));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(count as u64);
    let mut rects: Vec<Rect> = Vec::with_capacity(count);
    let mut attempts = 0;
    while rects.len() < count {
        if attempts == MAX_PLACEMENT_ATTEMPTS {
            return Err(BenchError::Placement { count, seed });
        }
        attempts += 1;
        let w = rng.gen_range(MIN_SIDE..=MAX_SIDE);
        let h = rng.gen_range(MIN_SIDE..=MAX_SIDE);
        let x0 = rng.gen_range(BOUNDARY_CLEARANCE..=ARENA_SIZE - BOUNDARY_CLEARANCE - w);
        let y0 = rng.gen_range(BOUNDARY_CLEARANCE..=ARENA_SIZE - BOUNDARY_CLEARANCE - h);
        let r = (x0, y0, x0 + w, y0 + h);
        if rects.iter().all(|&o| rect_gap(o, r) >= OBSTACLE_CLEARANCE) {
            rects.push(r);
        }
    }
    let obstacles = rects
        .into_iter()
        .map(|(x0, y0, x1, y1)| ConvexPolytope::rectangle(x0, y0, x1, y1).expect("positive sides"))
        .collect();
    Ok(EnvironmentSpec {
        schema_version: SCHEMA_VERSION,
        arena: [ARENA_SIZE; 2],
        obstacles,
        robot: RobotSpec::default(),
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub index: usize,
    pub start: Vec2,
    pub goal: Vec2,
}

/// Point at arc length `s` clockwise from `(0, 0)` on the arena perimeter.
fn clockwise_from_origin(s: f64) -> Vec2 {
    let l = ARENA_SIZE;
    let s = s.rem_euclid(4.0 * l);
    match s {
        s if s <= l => Vec2::new(0.0, s),
        s if s <= 2.0 * l => Vec2::new(s - l, l),
        s if s <= 3.0 * l => Vec2::new(l, 3.0 * l - s),
        s => Vec2::new(4.0 * l - s, 0.0),
    }
}

/// Point at arc length `s` counter-clockwise from `(10, 10)`.
fn counter_clockwise_from_corner(s: f64) -> Vec2 {
    let l = ARENA_SIZE;
    let s = s.rem_euclid(4.0 * l);
    match s {
        s if s <= l => Vec2::new(l - s, l),
        s if s <= 2.0 * l => Vec2::new(0.0, 2.0 * l - s),
        s if s <= 3.0 * l => Vec2::new(s - 2.0 * l, 0.0),
        s => Vec2::new(l, s - 3.0 * l),
    }
}

/// Trial `index` of `n_trials`: start and goal at the same arc length
/// `20·index/(n_trials − 1)` from their respective corners.
pub fn trial(index: usize, n_trials: usize) -> TrialSpec {
    let s = if n_trials > 1 {
        2.0 * ARENA_SIZE * index as f64 / (n_trials - 1) as f64
    } else {
        0.0
    };
    TrialSpec {
        index,
        start: clockwise_from_origin(s),
        goal: counter_clockwise_from_corner(s),
    }
}

/// Trials whose start and goal coincide are dropped.
pub fn trials(n_trials: usize) -> Vec<TrialSpec> {
    (0..n_trials)
        .map(|i| trial(i, n_trials))
        .filter(|t| (t.start - t.goal).norm() > 1e-9)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suite {
    pub seed: u64,
    pub n_trials: usize,
    pub environments: Vec<EnvironmentSpec>,
    pub trials: Vec<TrialSpec>,
}

pub fn generate_suite(seed: u64, obstacle_counts: &[usize], n_trials: usize) -> Result<Suite, BenchError> {
    let environments = obstacle_counts
        .iter()
        .map(|&c| generate_environment(seed, c))
        .collect::<Result<_, _>>()?;
    Ok(Suite {
        seed,
        n_trials,
        environments,
        trials: trials(n_trials),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub n_obstacles: usize,
    pub method: Variant,
    pub trial: usize,
    pub t_wall_ms: f64,
    pub iters: usize,
    #[serde(rename = "T_s")]
    pub t_s: Option<f64>,
    pub eps_move_pct: Option<f64>,
    pub success: bool,
    pub t_ls_ms: f64,
    pub t_qp_ms: f64,
}

/// Per-run data kept alongside the row for auditing: the full plan, or the
/// error that prevented planning.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialDiagnostics {
    pub error: Option<String>,
    pub plan: Option<PlanResult>,
}

impl TrialDiagnostics {
    pub fn status(&self) -> Option<PlanStatus> {
        self.plan.as_ref().map(|p| p.status)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub row: MetricsRow,
    pub diagnostics: TrialDiagnostics,
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub methods: Vec<Variant>,
    pub parallelism: usize,
    pub planner: PlannerConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: vec![Variant::Decoupled, Variant::Coupled],
            parallelism: 1,
            planner: PlannerConfig::default(),
        }
    }
}

fn run_one(env: &EnvironmentSpec, t: &TrialSpec, method: Variant, base: &PlannerConfig) -> TrialRecord {
    let mut config = base.clone();
    config.variant = method;
    config.eps = env.robot.eps;
    let problem = env.problem(t.start, t.goal);
    let clock = std::time::Instant::now();
    let outcome = plan_timed(&problem, &config);
    let elapsed = clock.elapsed().as_secs_f64() * 1e3;
    let mut row = MetricsRow {
        n_obstacles: env.n_obstacles(),
        method,
        trial: t.index,
        t_wall_ms: elapsed,
        iters: 0,
        t_s: None,
        eps_move_pct: None,
        success: false,
        t_ls_ms: 0.0,
        t_qp_ms: 0.0,
    };
    let diagnostics = match outcome {
        Ok(r) => {
            row.t_wall_ms = r.timings.wall_ms;
            row.iters = r.iterations();
            row.t_s = Some(r.t_final);
            row.success = r.success();
            row.t_ls_ms = r.timings.ls_ms;
            row.t_qp_ms = r.timings.qp_ms;
            TrialDiagnostics {
                error: None,
                plan: Some(r),
            }
        }
        Err(e) => TrialDiagnostics {
            error: Some(e.to_string()),
            plan: None,
        },
    };
    TrialRecord { row, diagnostics }
}

/// Signed relative motion-time error of `t` against `baseline`, in percent.
pub fn eps_move_pct(t: f64, baseline: f64) -> f64 {
    100.0 * (t - baseline) / baseline
}

/// Run every `(environment, trial, method)` job on a bounded pool. Records
/// are ordered by obstacle count, trial and method.
pub fn run_benchmark(suite: &Suite, config: &BenchConfig) -> Result<Vec<TrialRecord>, BenchError> {
    let jobs: Vec<(&EnvironmentSpec, &TrialSpec, Variant)> = suite
        .environments
        .iter()
        .flat_map(|e| suite.trials.iter().flat_map(move |t| config.methods.iter().map(move |&m| (e, t, m))))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism.max(1))
        .build()
        .map_err(|e| BenchError::Pool(e.to_string()))?;
    let mut records: Vec<TrialRecord> =
        pool.install(|| jobs.par_iter().map(|&(e, t, m)| run_one(e, t, m, &config.planner)).collect());
    fill_eps_move(&mut records);
    Ok(records)
}

/// Fill `eps_move_pct` against the coupled run of the same trial. Defined
/// only when the baseline succeeded and the row itself succeeded.
pub fn fill_eps_move(records: &mut [TrialRecord]) {
    let baselines: Vec<((usize, usize), f64)> = records
        .iter()
        .filter(|r| r.row.method == Variant::Coupled && r.row.success)
        .filter_map(|r| r.row.t_s.map(|t| ((r.row.n_obstacles, r.row.trial), t)))
        .collect();
    for r in records.iter_mut() {
        let key = (r.row.n_obstacles, r.row.trial);
        r.row.eps_move_pct = match (r.row.success, r.row.t_s, baselines.iter().find(|(k, _)| *k == key)) {
            (true, Some(t), Some(&(_, base))) => Some(eps_move_pct(t, base)),
            _ => None,
        };
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn std_dev(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let m = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    Some(var.sqrt())
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Statistics over the successful rows of one `(N_o, method)` group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub n_obstacles: usize,
    pub method: Variant,
    pub n_trials: usize,
    pub n_success: usize,
    pub success_rate_pct: f64,
    pub median_t_wall_ms: Option<f64>,
    pub median_t_wall_per_iter_ms: Option<f64>,
    pub median_iters: Option<f64>,
    pub median_eps_move_pct: Option<f64>,
    pub std_eps_move_pct: Option<f64>,
    pub max_t_ls_ms: Option<f64>,
    pub max_t_qp_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub n_obstacles: usize,
    pub reduction_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub seed: u64,
    pub parallelism: usize,
    pub methods: Vec<MethodSummary>,
    pub reduction: Vec<ReductionRow>,
}

fn groups(rows: &[MetricsRow]) -> Vec<(usize, Variant)> {
    let mut g: Vec<(usize, Variant)> = Vec::new();
    for r in rows {
        if !g.contains(&(r.n_obstacles, r.method)) {
            g.push((r.n_obstacles, r.method));
        }
    }
    g.sort_by_key(|&(n, m)| (n, m.name()));
    g
}

pub fn summarize(rows: &[MetricsRow], seed: u64, parallelism: usize) -> Summary {
    let methods: Vec<MethodSummary> = groups(rows)
        .into_iter()
        .map(|(n, m)| {
            let all: Vec<&MetricsRow> = rows.iter().filter(|r| r.n_obstacles == n && r.method == m).collect();
            let ok: Vec<&MetricsRow> = all.iter().copied().filter(|r| r.success).collect();
            let col = |f: &dyn Fn(&MetricsRow) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
            let max = |v: Vec<f64>| v.into_iter().reduce(f64::max);
            let eps = col(&|r| r.eps_move_pct);
            MethodSummary {
                n_obstacles: n,
                method: m,
                n_trials: all.len(),
                n_success: ok.len(),
                success_rate_pct: 100.0 * ok.len() as f64 / all.len().max(1) as f64,
                median_t_wall_ms: median(&col(&|r| Some(r.t_wall_ms))),
                median_t_wall_per_iter_ms: median(&col(&|r| (r.iters > 0).then(|| r.t_wall_ms / r.iters as f64))),
                median_iters: median(&col(&|r| Some(r.iters as f64))),
                median_eps_move_pct: median(&eps),
                std_eps_move_pct: std_dev(&eps),
                max_t_ls_ms: max(col(&|r| Some(r.t_ls_ms))),
                max_t_qp_ms: max(col(&|r| Some(r.t_qp_ms))),
            }
        })
        .collect();
    let mut counts: Vec<usize> = methods.iter().map(|s| s.n_obstacles).collect();
    counts.dedup();
    let reduction = counts
        .into_iter()
        .map(|n| {
            let get = |v: Variant| {
                methods
                    .iter()
                    .find(|s| s.n_obstacles == n && s.method == v)
                    .and_then(|s| s.median_t_wall_ms)
            };
            let reduction_pct = match (get(Variant::Coupled), get(Variant::Decoupled)) {
                (Some(c), Some(d)) => Some(100.0 * (c - d) / c),
                _ => None,
            };
            ReductionRow {
                n_obstacles: n,
                reduction_pct,
            }
        })
        .collect();
    Summary {
        schema_version: SCHEMA_VERSION,
        seed,
        parallelism,
        methods,
        reduction,
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.digits$}"))
}

/// Plain-text table of a summary, one column per obstacle count.
pub fn summary_table(s: &Summary) -> String {
    let mut counts: Vec<usize> = s.methods.iter().map(|m| m.n_obstacles).collect();
    counts.dedup();
    let mut out = String::new();
    let _ = write!(out, "{:<26}", "N_o");
    for n in &counts {
        let _ = write!(out, "{n:>10}");
    }
    out.push('\n');
    type Field = fn(&MethodSummary) -> Option<f64>;
    let fields: [(&str, Field, usize); 7] = [
        ("t_LS max (ms)", |m| m.max_t_ls_ms, 2),
        ("t_QP max (ms)", |m| m.max_t_qp_ms, 2),
        ("t_wall median (ms)", |m| m.median_t_wall_ms, 1),
        ("iterations median", |m| m.median_iters, 1),
        ("eps_move median (%)", |m| m.median_eps_move_pct, 2),
        ("eps_move std (%)", |m| m.std_eps_move_pct, 2),
        ("success (%)", |m| Some(m.success_rate_pct), 1),
    ];
    for (label, f, digits) in fields {
        for v in [Variant::Decoupled, Variant::Coupled] {
            let _ = write!(out, "{:<26}", format!("{label} {}", v.name()));
            for n in &counts {
                let m = s.methods.iter().find(|m| m.n_obstacles == *n && m.method == v);
                let _ = write!(out, "{:>10}", fmt_opt(m.and_then(f), digits));
            }
            out.push('\n');
        }
    }
    let _ = write!(out, "{:<26}", "Reduction (%)");
    for n in &counts {
        let r = s.reduction.iter().find(|r| r.n_obstacles == *n).and_then(|r| r.reduction_pct);
        let _ = write!(out, "{:>10}", fmt_opt(r, 2));
    }
    out.push('\n');
    out
}

pub fn rows_to_csv(rows: &[MetricsRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

pub fn rows_from_csv(text: &str) -> Result<Vec<MetricsRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

/// Rows file: the metrics rows with run metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowsFile {
    pub schema_version: u32,
    pub seed: u64,
    pub parallelism: usize,
    pub rows: Vec<MetricsRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

/// Write the requested artifacts into `dir`; returns the written paths.
pub fn report(
    rows: &[MetricsRow],
    formats: &[ReportFormat],
    dir: &Path,
    seed: u64,
    parallelism: usize,
) -> Result<Vec<PathBuf>, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::Empty);
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<(), BenchError> {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
        written.push(path);
        Ok(())
    };
    for f in formats {
        match f {
            ReportFormat::Csv => put("results.csv", rows_to_csv(rows))?,
            ReportFormat::Json => {
                let file = RowsFile {
                    schema_version: SCHEMA_VERSION,
                    seed,
                    parallelism,
                    rows: rows.to_vec(),
                };
                put("results.json", serde_json::to_string_pretty(&file).expect("rows serialize"))?;
                let summary = summarize(rows, seed, parallelism);
                put("summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
            }
            ReportFormat::Svg => {
                put("t_wall.svg", box_plot_svg(rows, "t_wall (ms)", |r| Some(r.t_wall_ms)))?;
                put(
                    "t_wall_per_iter.svg",
                    box_plot_svg(rows, "t_wall per iteration (ms)", |r| {
                        (r.iters > 0).then(|| r.t_wall_ms / r.iters as f64)
                    }),
                )?;
            }
        }
    }
    Ok(written)
}

pub fn load_rows_json(path: &Path) -> Result<RowsFile, BenchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

/// Box plot over successful rows, one box per `(N_o, method)`. Whiskers
/// span the data range.
pub fn box_plot_svg(rows: &[MetricsRow], ylabel: &str, value: impl Fn(&MetricsRow) -> Option<f64>) -> String {
    let gs = groups(rows);
    let data: Vec<(usize, Variant, Vec<f64>)> = gs
        .iter()
        .map(|&(n, m)| {
            let mut v: Vec<f64> = rows
                .iter()
                .filter(|r| r.n_obstacles == n && r.method == m && r.success)
                .filter_map(&value)
                .collect();
            v.sort_by(f64::total_cmp);
            (n, m, v)
        })
        .collect();
    let vmax = data
        .iter()
        .flat_map(|(_, _, v)| v.last().copied())
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let (w, h, left, bottom, top) = (120.0 + 40.0 * gs.len() as f64, 360.0, 70.0, 50.0, 20.0);
    let plot_h = h - bottom - top;
    let y = |v: f64| top + plot_h * (1.0 - v / vmax);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-schema-version="{SCHEMA_VERSION}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        h - bottom
    );
    for i in 0..=4 {
        let v = vmax * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" font-size="10" text-anchor="end">{v:.2}</text>"#,
            left - 4.0,
            y(v) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">{ylabel}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    for (i, (n, m, v)) in data.iter().enumerate() {
        let cx = left + 30.0 + 40.0 * i as f64;
        let color = match m {
            Variant::Decoupled => "#1f77b4",
            Variant::Coupled => "#d62728",
        };
        let _ = writeln!(s, r#"<g class="box" data-n-obstacles="{n}" data-method="{}">"#, m.name());
        if !v.is_empty() {
            let (lo, q1, med, q3, hi) = (v[0], quantile(v, 0.25), quantile(v, 0.5), quantile(v, 0.75), v[v.len() - 1]);
            let _ = writeln!(
                s,
                r#"<line x1="{cx}" y1="{:.1}" x2="{cx}" y2="{:.1}" stroke="{color}"/>"#,
                y(hi),
                y(lo)
            );
            let _ = writeln!(
                s,
                r#"<rect x="{:.1}" y="{:.1}" width="24" height="{:.1}" fill="white" stroke="{color}"/>"#,
                cx - 12.0,
                y(q3),
                (y(q1) - y(q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-width="2"/>"#,
                cx - 12.0,
                y(med),
                cx + 12.0,
                y(med)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx}" y="{:.1}" font-size="9" text-anchor="middle">{n} {}</text>"#,
            h - bottom + 14.0,
            &m.name()[..1]
        );
        let _ = writeln!(s, "</g>");
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">N_o (d = decoupled, c = coupled)</text>"#,
        left + (w - left) / 2.0,
        h - 12.0
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn environment_placement_constraints() {
        for count in 1..=MAX_OBSTACLES {
            let env = generate_environment(DEFAULT_SEED, count).unwrap();
            assert_eq!(env.n_obstacles(), count);
            let rects: Vec<Rect> = env
                .obstacles
                .iter()
                .map(|o| {
                    let xs = o.vertices().iter().map(|v| v.x);
                    let ys = o.vertices().iter().map(|v| v.y);
                    (
                        xs.clone().fold(f64::INFINITY, f64::min),
                        ys.clone().fold(f64::INFINITY, f64::min),
                        xs.fold(f64::NEG_INFINITY, f64::max),
                        ys.fold(f64::NEG_INFINITY, f64::max),
                    )
                })
                .collect();
            for (i, a) in rects.iter().enumerate() {
                let (w, h) = (a.2 - a.0, a.3 - a.1);
                assert!((MIN_SIDE..=MAX_SIDE).contains(&w) && (MIN_SIDE..=MAX_SIDE).contains(&h));
                assert!(a.0 >= BOUNDARY_CLEARANCE && a.2 <= ARENA_SIZE - BOUNDARY_CLEARANCE);
                assert!(a.1 >= BOUNDARY_CLEARANCE && a.3 <= ARENA_SIZE - BOUNDARY_CLEARANCE);
                for b in &rects[i + 1..] {
                    // brute-force corner/edge distance between the two boxes
                    let pa: Vec<Vec2> = (0..=20)
                        .flat_map(|u| (0..=20).map(move |v| (u, v)))
                        .map(|(u, v)| Vec2::new(a.0 + w * u as f64 / 20.0, a.1 + h * v as f64 / 20.0))
                        .collect();
                    let dmin = pa
                        .iter()
                        .map(|p| {
                            let dx = (b.0 - p.x).max(p.x - b.2).max(0.0);
                            let dy = (b.1 - p.y).max(p.y - b.3).max(0.0);
                            dx.hypot(dy)
                        })
                        .fold(f64::INFINITY, f64::min);
                    assert!(dmin >= OBSTACLE_CLEARANCE - 1e-12);
                }
            }
        }
    }

    #[test]
    fn suite_is_deterministic() {
        let a = generate_suite(DEFAULT_SEED, &[1, 3], 20).unwrap();
        let b = generate_suite(DEFAULT_SEED, &[1, 3], 20).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.environments[1].to_json(), b.environments[1].to_json());
        assert_ne!(generate_suite(7, &[3], 20).unwrap().environments, b.environments[1..]);
    }

    #[test]
    fn bad_obstacle_count_rejected() {
        assert!(matches!(generate_environment(1, 0), Err(BenchError::ObstacleCount(0))));
        assert!(matches!(generate_environment(1, 11), Err(BenchError::ObstacleCount(11))));
    }

    #[test]
    fn trial_geometry() {
        let t0 = trial(0, DEFAULT_TRIALS);
        assert_eq!((t0.start, t0.goal), (Vec2::new(0.0, 0.0), Vec2::new(10.0, 10.0)));
        let ts = trials(DEFAULT_TRIALS);
        assert_eq!(ts.len(), DEFAULT_TRIALS);
        let perim = |p: Vec2| {
            let on = |c: f64| c.abs() < 1e-12 || (c - ARENA_SIZE).abs() < 1e-12;
            on(p.x) || on(p.y)
        };
        for (i, t) in ts.iter().enumerate() {
            assert!(perim(t.start) && perim(t.goal));
            assert!((t.start - t.goal).norm() > 0.05);
            if i > 0 {
                // equal arc-length spacing between consecutive starts
                let s = 20.0 / 199.0;
                let d = t.start - ts[i - 1].start;
                assert!(d.x.abs() + d.y.abs() <= s + 1e-9);
            }
        }
        assert_eq!(ts[199].start, Vec2::new(10.0, 10.0));
        assert_eq!(ts[199].goal, Vec2::new(0.0, 0.0));
    }

    #[test]
    fn environment_json_round_trip() {
        let env = generate_environment(3, 4).unwrap();
        let back: EnvironmentSpec = serde_json::from_str(&env.to_json()).unwrap();
        assert_eq!(back, env);
        let v: serde_json::Value = serde_json::from_str(&env.to_json()).unwrap();
        assert!(v["obstacles"][0]["vertices"][0].is_array());
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
    }

    fn row(n: usize, m: Variant, trial: usize, t: f64, ok: bool) -> MetricsRow {
        MetricsRow {
            n_obstacles: n,
            method: m,
            trial,
            t_wall_ms: t,
            iters: 10,
            t_s: Some(12.0 + trial as f64),
            eps_move_pct: None,
            success: ok,
            t_ls_ms: 0.1,
            t_qp_ms: 0.2,
        }
    }

    #[test]
    fn summary_reduction_and_medians() {
        let rows = vec![
            row(2, Variant::Coupled, 0, 100.0, true),
            row(2, Variant::Coupled, 1, 300.0, true),
            row(2, Variant::Coupled, 2, 5000.0, false),
            row(2, Variant::Decoupled, 0, 50.0, true),
            row(2, Variant::Decoupled, 1, 70.0, true),
        ];
        let s = summarize(&rows, 1, 1);
        let c = s.methods.iter().find(|m| m.method == Variant::Coupled).unwrap();
        assert_eq!(c.median_t_wall_ms, Some(200.0));
        assert!((c.success_rate_pct - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.reduction[0].reduction_pct, Some(70.0));
        assert!(summary_table(&s).contains("Reduction (%)"));
    }

    #[test]
    fn eps_move_requires_successful_baseline() {
        let mk = |row: MetricsRow| TrialRecord {
            row,
            diagnostics: TrialDiagnostics { error: None, plan: None },
        };
        let mut c0 = row(1, Variant::Coupled, 0, 1.0, true);
        c0.t_s = Some(10.0);
        let mut d0 = row(1, Variant::Decoupled, 0, 1.0, true);
        d0.t_s = Some(10.5);
        let c1 = row(1, Variant::Coupled, 1, 1.0, false);
        let d1 = row(1, Variant::Decoupled, 1, 1.0, true);
        let mut recs: Vec<TrialRecord> = [c0, d0, c1, d1].into_iter().map(mk).collect();
        fill_eps_move(&mut recs);
        assert_eq!(recs[0].row.eps_move_pct, Some(0.0));
        assert!((recs[1].row.eps_move_pct.unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(recs[2].row.eps_move_pct, None);
        assert_eq!(recs[3].row.eps_move_pct, None);
    }

    #[test]
    fn csv_header_and_round_trip() {
        let mut rows = vec![row(1, Variant::Decoupled, 0, 12.5, true), row(1, Variant::Coupled, 0, 20.0, false)];
        rows[0].eps_move_pct = Some(0.25);
        rows[1].t_s = None;
        let text = rows_to_csv(&rows);
        assert_eq!(text.lines().next(), Some(CSV_HEADER));
        assert_eq!(rows_from_csv(&text).unwrap(), rows);
    }

    #[test]
    fn report_files_and_boxes() {
        let rows = vec![
            row(1, Variant::Decoupled, 0, 10.0, true),
            row(1, Variant::Coupled, 0, 20.0, true),
            row(2, Variant::Decoupled, 0, 11.0, true),
            row(2, Variant::Coupled, 0, 25.0, true),
        ];
        let dir = tempfile::tempdir().unwrap();
        let paths = report(&rows, &[ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg], dir.path(), 1, 1).unwrap();
        assert_eq!(paths.len(), 5);
        let svg = fs::read_to_string(dir.path().join("t_wall.svg")).unwrap();
        assert_eq!(svg.matches(r#"class="box""#).count(), 4);
        for (n, m) in [(1, "decoupled"), (1, "coupled"), (2, "decoupled"), (2, "coupled")] {
            assert!(svg.contains(&format!(r#"data-n-obstacles="{n}" data-method="{m}""#)));
        }
        let f = load_rows_json(&dir.path().join("results.json")).unwrap();
        assert_eq!(f.rows, rows);
        let again = serde_json::to_string_pretty(&f).unwrap();
        assert_eq!(serde_json::from_str::<RowsFile>(&again).unwrap(), f);
        assert!(matches!(report(&[], &[ReportFormat::Csv], dir.path(), 1, 1), Err(BenchError::Empty)));
    }
}
