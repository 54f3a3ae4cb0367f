use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smm_placer::dualarm::DesignParams;
use smm_placer::metrics::Criterion;
use smm_placer::optimizer::Preset;
use smm_placer_cli::{
    cmd_evaluate, cmd_generate_tasks, cmd_optimize, load_design, run_benchmark, CliError, DesignRecord, RunConfig,
};

#[derive(Parser)]
#[command(name = "smm-placer", version, about = "Base placement optimization for mirrored dual-arm robots")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Run configuration or a previous manifest.toml.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// desk or paper
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// md (density) or m (max)
    #[arg(long, global = true)]
    criterion: Option<Criterion>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Robot description file.
    #[arg(long, global = true)]
    robot: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample canopy tasks and write them as task files.
    GenerateTasks {
        #[arg(long)]
        count: Option<u64>,
    },
    /// Optimize the base placement on one task.
    Optimize {
        /// Task file; generated from the seed when absent.
        #[arg(long)]
        task: Option<PathBuf>,
    },
    /// Evaluate one design on task files.
    Evaluate {
        /// x,y,z,theta_deg,xi_deg
        #[arg(long, conflicts_with = "design_file")]
        design: Option<DesignRecord>,
        #[arg(long)]
        design_file: Option<PathBuf>,
        /// Task files; the first is the optimization task, the rest are held out.
        tasks: Vec<PathBuf>,
    },
    /// Optimize under both criteria and compare against the expert design.
    Benchmark,
}

fn build_config(g: &GlobalArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_preset(g.preset.unwrap_or_default(), g.seed.unwrap_or(0)),
    };
    if let (Some(preset), Some(_)) = (g.preset, &g.config) {
        let fresh = RunConfig::from_preset(preset, cfg.seed);
        cfg.preset = preset;
        cfg.pso = fresh.pso;
        cfg.smm = fresh.smm;
        cfg.canopy.n_targets = fresh.canopy.n_targets;
    }
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(c) = g.criterion {
        cfg.criterion = c;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    if let Some(r) = &g.robot {
        cfg.robot = Some(r.clone());
    }
    if g.threads.is_some() {
        cfg.threads = g.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = build_config(&cli.global)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenerateTasks { count } => {
            let count = count.or(cfg.inputs.count).unwrap_or(1);
            let paths = cmd_generate_tasks(&cfg, count)?;
            println!("wrote {} task files to {}", paths.len(), cfg.out.display());
        }
        Command::Optimize { task } => {
            if task.is_some() {
                cfg.inputs.task = task;
            }
            let o = cmd_optimize(&cfg)?;
            println!("best design {} score {}", o.best, o.score);
        }
        Command::Evaluate {
            design,
            design_file,
            tasks,
        } => {
            if let Some(d) = design {
                cfg.inputs.design = Some(d);
            } else if let Some(p) = design_file {
                cfg.inputs.design = Some(load_design(&p)?);
            }
            let record = *cfg
                .inputs
                .design
                .get_or_insert_with(|| DesignRecord::from(&DesignParams::expert()));
            if !tasks.is_empty() {
                cfg.inputs.tasks = tasks;
            }
            let label = if record.to_params()? == DesignParams::expert() {
                "E"
            } else {
                "design"
            };
            let eval = cmd_evaluate(&cfg, label)?;
            match eval.aggregate {
                Some((md, sr)) => println!("mean density {md} success rate {sr}%"),
                None => println!("no tasks given"),
            }
        }
        Command::Benchmark => {
            let b = run_benchmark(&cfg, true)?;
            for e in &b.entries {
                let (md, sr) = e.held_out();
                println!("{:>2} {}  md* {md}  sr* {sr}%", e.label, e.design);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SMM_PLACER_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
