//! Library side of the `smm-placer` command: run configuration, the four
//! commands and their output files.
//!
//! Every command writes a `manifest.toml` into its output directory holding
//! the complete configuration (including command inputs) plus a `[run]`
//! summary. Passing that manifest back through `--config` reruns the command
//! and reproduces its outputs byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use smm_placer::dualarm::{dual_task_metric, DesignParams};
use smm_placer::kinematics::robot::{load_chain, xarm7_approx, RobotConfigError};
use smm_placer::kinematics::KinematicChain;
use smm_placer::metrics::Criterion;
use smm_placer::optimizer::{
    evaluate_design, pso_optimize, DesignEvaluation, GridSpec, MemoizedObjective, OptimizerError,
    Preset, PsoParams, PsoResult,
};
use smm_placer::scenario::{
    generate_task, held_out_seeds, load_task, save_task, task_id, CanopyConfig, ScenarioError, Task,
};
use smm_placer::smm::SmmParams;

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    /// 1 usage, 2 input parse or I/O, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<RobotConfigError> for CliError {
    fn from(e: RobotConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<OptimizerError> for CliError {
    fn from(e: OptimizerError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Design as written in files and on the command line: angles in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignRecord {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub theta_deg: f64,
    pub xi_deg: f64,
}

impl DesignRecord {
    pub fn to_params(&self) -> Result<DesignParams, CliError> {
        DesignParams::new(self.x, self.y, self.z, self.theta_deg.to_radians(), self.xi_deg.to_radians())
            .map_err(|e| CliError::Input(format!("invalid design: {e}")))
    }
}

impl From<&DesignParams> for DesignRecord {
    fn from(d: &DesignParams) -> Self {
        Self {
            x: d.x,
            y: d.y,
            z: d.z,
            theta_deg: d.theta.to_degrees(),
            xi_deg: d.xi.to_degrees(),
        }
    }
}

impl std::str::FromStr for DesignRecord {
    type Err = String;

    /// `x,y,z,theta_deg,xi_deg`
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| format!("design `{s}`: {e}"))?;
        match v.as_slice() {
            [x, y, z, theta_deg, xi_deg] => Ok(Self {
                x: *x,
                y: *y,
                z: *z,
                theta_deg: *theta_deg,
                xi_deg: *xi_deg,
            }),
            _ => Err(format!("design `{s}` must have 5 comma-separated values")),
        }
    }
}

/// Command inputs, recorded so a manifest can replay the command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design: Option<DesignRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub preset: Preset,
    pub criterion: Criterion,
    pub out: PathBuf,
    /// Robot description file; the shipped approximate xArm7 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robot: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub inputs: Inputs,
    pub grid: GridSpec,
    pub pso: PsoParams,
    pub smm: SmmParams,
    pub canopy: CanopyConfig,
}

impl RunConfig {
    pub fn from_preset(preset: Preset, seed: u64) -> Self {
        Self {
            seed,
            preset,
            criterion: Criterion::Density,
            out: PathBuf::from("out"),
            robot: None,
            threads: None,
            inputs: Inputs::default(),
            grid: GridSpec::default(),
            pso: preset.pso(seed),
            smm: preset.smm(),
            canopy: CanopyConfig {
                n_targets: preset.n_targets(),
                ..CanopyConfig::default()
            },
        }
    }

    /// Parses a config or manifest; a `[run]` table is ignored.
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Input(format!("{origin}: {e}")))?;
        table.remove("run");
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e| CliError::Input(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.grid.validate()?;
        self.pso.validate()?;
        self.smm
            .validate()
            .map_err(|e| CliError::Input(e.to_string()))?;
        self.canopy.validate()?;
        if self.threads == Some(0) {
            return Err(CliError::Usage("--threads must be >= 1".into()));
        }
        Ok(())
    }

    /// Sets the master seed and everything derived from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.pso.seed = seed;
    }

    pub fn chain(&self) -> Result<KinematicChain, CliError> {
        match &self.robot {
            Some(p) => Ok(load_chain(p)?),
            None => Ok(xarm7_approx()),
        }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

/// `[run]` summary appended to the manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub command: String,
    pub version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_design: Option<DesignRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_hits: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub no_feasible_design: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub designs: Vec<LabeledDesign>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledDesign {
    pub label: String,
    pub design: DesignRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl RunSummary {
    fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..Self::default()
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    config: &'a RunConfig,
    run: &'a RunSummary,
}

fn write_manifest(cfg: &RunConfig, run: &RunSummary) -> Result<PathBuf, CliError> {
    let path = cfg.out.join(MANIFEST_FILE);
    let text = toml::to_string(&Manifest { config: cfg, run }).expect("manifest serializes");
    write_file(&path, &text)?;
    Ok(path)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

// ---------------------------------------------------------------------------
// generate-tasks
// ---------------------------------------------------------------------------

pub fn task_file_name(seed: u64) -> String {
    format!("{}.toml", task_id(seed))
}

/// Writes `count` tasks with seeds `seed, seed + 1, …`.
pub fn cmd_generate_tasks(cfg: &RunConfig, count: u64) -> Result<Vec<PathBuf>, CliError> {
    let mut cfg = cfg.clone();
    cfg.inputs.count = Some(count);
    create_dir(&cfg.out)?;
    let mut paths = Vec::new();
    for k in 0..count {
        let seed = cfg.seed.wrapping_add(k);
        let task = generate_task(&cfg.canopy, seed, task_id(seed))?;
        let path = cfg.out.join(task_file_name(seed));
        save_task(&task, &path)?;
        paths.push(path);
    }
    let mut run = RunSummary::new("generate-tasks");
    run.outputs = paths.iter().map(|p| file_name(p)).collect();
    write_manifest(&cfg, &run)?;
    log::info!("wrote {count} task files to {}", cfg.out.display());
    Ok(paths)
}

// ---------------------------------------------------------------------------
// optimize
// ---------------------------------------------------------------------------

pub struct Optimization {
    pub result: PsoResult,
    /// (grid index, design, score, cache hits) in first-evaluated order.
    pub designs: Vec<([usize; 5], DesignParams, f64, usize)>,
}

/// PSO over the memoized dual-arm metric on one task.
pub fn optimize_on_task(
    cfg: &RunConfig,
    chain: &KinematicChain,
    task: &Task,
    criterion: Criterion,
) -> Result<Optimization, CliError> {
    let objective = |rho: &DesignParams| Ok::<f64, String>(dual_task_metric(rho, task, chain, criterion, &cfg.smm));
    let memo = MemoizedObjective::new(objective, cfg.grid.clone());
    let result = pso_optimize(&memo, &cfg.pso)?;
    if !result.score.is_finite() {
        return Err(CliError::Numerical(format!("best score is {}", result.score)));
    }
    let designs = memo
        .entries()
        .into_iter()
        .map(|(idx, e)| (idx, cfg.grid.design_at(&idx), e.value, e.hits))
        .collect();
    Ok(Optimization { result, designs })
}

pub fn trace_csv(trace: &[f64]) -> String {
    let mut s = String::from("iteration,best_score\n");
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(s, "{i},{v}");
    }
    s
}

pub fn designs_csv(rows: &[([usize; 5], DesignParams, f64, usize)]) -> String {
    let mut s = String::from("ix,iy,iz,itheta,ixi,x,y,z,theta_deg,xi_deg,score,cache_hits\n");
    for (idx, d, score, hits) in rows {
        let r = DesignRecord::from(d);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            idx[0], idx[1], idx[2], idx[3], idx[4], r.x, r.y, r.z, r.theta_deg, r.xi_deg, score, hits
        );
    }
    s
}

fn load_or_generate_task(cfg: &RunConfig) -> Result<(Task, Option<PathBuf>), CliError> {
    match &cfg.inputs.task {
        Some(p) => Ok((load_task(p)?, None)),
        None => {
            let task = generate_task(&cfg.canopy, cfg.seed, task_id(cfg.seed))?;
            let path = cfg.out.join(task_file_name(cfg.seed));
            save_task(&task, &path)?;
            Ok((task, Some(path)))
        }
    }
}

pub struct OptimizeOutcome {
    pub best: DesignParams,
    pub score: f64,
    pub trace: Vec<f64>,
    pub manifest: PathBuf,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BestDesignFile {
    criterion: Criterion,
    score: f64,
    design: DesignRecord,
}

/// Reads a design from a `best_design.toml` or a bare design record.
pub fn load_design(path: &Path) -> Result<DesignRecord, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    if let Ok(f) = toml::from_str::<BestDesignFile>(&text) {
        return Ok(f.design);
    }
    toml::from_str::<DesignRecord>(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn cmd_optimize(cfg: &RunConfig) -> Result<OptimizeOutcome, CliError> {
    create_dir(&cfg.out)?;
    let chain = cfg.chain()?;
    let (task, generated) = load_or_generate_task(cfg)?;
    let opt = optimize_on_task(cfg, &chain, &task, cfg.criterion)?;
    let r = &opt.result;

    let mut outputs = Vec::new();
    if let Some(p) = &generated {
        outputs.push(file_name(p));
    }
    let best_path = cfg.out.join("best_design.toml");
    let best = BestDesignFile {
        criterion: cfg.criterion,
        score: r.score,
        design: DesignRecord::from(&r.best),
    };
    write_file(&best_path, &toml::to_string(&best).expect("design serializes"))?;
    write_file(&cfg.out.join("trace.csv"), &trace_csv(&r.trace))?;
    write_file(&cfg.out.join("designs.csv"), &designs_csv(&opt.designs))?;
    outputs.extend(["best_design.toml", "trace.csv", "designs.csv"].map(String::from));

    let mut run = RunSummary::new("optimize");
    run.outputs = outputs;
    run.best_design = Some(DesignRecord::from(&r.best));
    run.best_score = Some(r.score);
    run.evaluations = Some(r.evaluations);
    run.cache_hits = Some(r.cache_hits);
    run.no_feasible_design = Some(r.score <= 0.0);
    let manifest = write_manifest(cfg, &run)?;
    if r.score <= 0.0 {
        log::warn!("no feasible design found: every evaluated design scored 0");
    }
    Ok(OptimizeOutcome {
        best: r.best,
        score: r.score,
        trace: r.trace.clone(),
        manifest,
    })
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

pub const EVALUATION_HEADER: &str = "design,task_id,md,sr,md_star,sr_star";
pub const BENCHMARK_HEADER: &str = "design,task_id,sr,md";

/// Per-task rows plus one `aggregate` row: (md, sr) on the first task and
/// (md*, sr*) averaged over the remaining, held-out tasks.
pub fn evaluation_rows(label: &str, eval: &DesignEvaluation) -> String {
    let mut s = String::new();
    for r in &eval.per_task {
        let _ = writeln!(s, "{label},{},{},{},,", r.task_id, r.mean_density, r.success_rate);
    }
    if let Some(first) = eval.per_task.first() {
        let star = eval
            .mean_over(1)
            .map(|(md, sr)| (md.to_string(), sr.to_string()))
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{label},aggregate,{},{},{},{}",
            first.mean_density, first.success_rate, star.0, star.1
        );
    }
    s
}

fn load_tasks(paths: &[PathBuf]) -> Result<Vec<Task>, CliError> {
    paths.iter().map(|p| load_task(p).map_err(CliError::from)).collect()
}

/// Evaluation reports always score with density: the md column is the
/// manipulability density regardless of the optimization criterion.
pub fn cmd_evaluate(cfg: &RunConfig, label: &str) -> Result<DesignEvaluation, CliError> {
    let design = cfg
        .inputs
        .design
        .ok_or_else(|| CliError::Usage("evaluate needs a design (--design or --design-file)".into()))?
        .to_params()?;
    let tasks = load_tasks(&cfg.inputs.tasks)?;
    create_dir(&cfg.out)?;
    let chain = cfg.chain()?;
    let eval = evaluate_design(&design, &tasks, &chain, Criterion::Density, &cfg.smm, false);
    let mut csv = format!("{EVALUATION_HEADER}\n");
    csv.push_str(&evaluation_rows(label, &eval));
    write_file(&cfg.out.join("evaluation.csv"), &csv)?;
    let mut run = RunSummary::new("evaluate");
    run.outputs = vec!["evaluation.csv".into()];
    run.designs = vec![LabeledDesign {
        label: label.to_string(),
        design: DesignRecord::from(&design),
        score: None,
    }];
    write_manifest(cfg, &run)?;
    Ok(eval)
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

pub struct BenchmarkEntry {
    pub label: &'static str,
    pub design: DesignParams,
    pub optimized_score: Option<f64>,
    pub evaluation: DesignEvaluation,
}

impl BenchmarkEntry {
    /// Held-out (md*, sr*).
    pub fn held_out(&self) -> (f64, f64) {
        self.evaluation.mean_over(1).unwrap_or((0.0, 0.0))
    }
}

pub struct BenchmarkOutcome {
    pub entries: Vec<BenchmarkEntry>,
    pub tasks: Vec<Task>,
}

impl BenchmarkOutcome {
    pub fn entry(&self, label: &str) -> Option<&BenchmarkEntry> {
        self.entries.iter().find(|e| e.label == label)
    }
}

/// Optimization task plus held-out tasks for the master seed.
pub fn benchmark_tasks(cfg: &RunConfig) -> Result<Vec<Task>, CliError> {
    std::iter::once(cfg.seed)
        .chain(held_out_seeds(cfg.seed))
        .map(|s| generate_task(&cfg.canopy, s, task_id(s)).map_err(CliError::from))
        .collect()
}

/// Optimizes under both criteria on the first task, then evaluates both
/// optimized designs and the expert design over all tasks. Writes outputs
/// when `write` is set.
pub fn run_benchmark(cfg: &RunConfig, write: bool) -> Result<BenchmarkOutcome, CliError> {
    let chain = cfg.chain()?;
    let tasks = benchmark_tasks(cfg)?;
    if write {
        create_dir(&cfg.out.join("tasks"))?;
        for t in &tasks {
            save_task(t, &cfg.out.join("tasks").join(task_file_name(t.seed)))?;
        }
    }
    let mut entries = Vec::new();
    for (label, criterion) in [("MD", Criterion::Density), ("M", Criterion::Max)] {
        log::info!("optimizing with criterion {}", criterion.label());
        let opt = optimize_on_task(cfg, &chain, &tasks[0], criterion)?;
        if write {
            let tag = criterion.label();
            write_file(&cfg.out.join(format!("trace_{tag}.csv")), &trace_csv(&opt.result.trace))?;
            write_file(&cfg.out.join(format!("designs_{tag}.csv")), &designs_csv(&opt.designs))?;
        }
        let evaluation = evaluate_design(&opt.result.best, &tasks, &chain, Criterion::Density, &cfg.smm, false);
        entries.push(BenchmarkEntry {
            label,
            design: opt.result.best,
            optimized_score: Some(opt.result.score),
            evaluation,
        });
    }
    let expert = DesignParams::expert();
    entries.push(BenchmarkEntry {
        label: "E",
        design: expert,
        optimized_score: None,
        evaluation: evaluate_design(&expert, &tasks, &chain, Criterion::Density, &cfg.smm, false),
    });

    if write {
        let mut bench = format!("{BENCHMARK_HEADER}\n");
        let mut summary = format!("{EVALUATION_HEADER}\n");
        for e in &entries {
            for r in &e.evaluation.per_task {
                let _ = writeln!(bench, "{},{},{},{}", e.label, r.task_id, r.success_rate, r.mean_density);
            }
            summary.push_str(&evaluation_rows(e.label, &e.evaluation));
        }
        write_file(&cfg.out.join("benchmark.csv"), &bench)?;
        write_file(&cfg.out.join("evaluation.csv"), &summary)?;
        let mut run = RunSummary::new("benchmark");
        run.outputs = ["benchmark.csv", "evaluation.csv", "trace_md.csv", "designs_md.csv", "trace_m.csv", "designs_m.csv"]
            .map(String::from)
            .to_vec();
        run.designs = entries
            .iter()
            .map(|e| LabeledDesign {
                label: e.label.to_string(),
                design: DesignRecord::from(&e.design),
                score: e.optimized_score,
            })
            .collect();
        write_manifest(cfg, &run)?;
    }
    Ok(BenchmarkOutcome { entries, tasks })
}
