use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use nslqr::harness::{
    build_controller, build_instance, calibrate, instance_seed, pilot_instance, regret_decomposition_audit, run_sweep,
    simulate, write_audit_csv, write_trace_csv, ControllerKind, ExperimentConfig,
};
use nslqr::instances::{stabilizability_margin, total_variation, DynamicsSeq, InstanceFile};
use nslqr::SimOutput;

#[derive(Parser)]
#[command(name = "nslqr", version, about = "Online control of non-stationary LQR systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate or inspect instance files.
    #[command(subcommand)]
    Instance(InstanceCmd),
    /// Run one controller on one instance.
    Simulate(RunArgs),
    /// Run the Cartesian product declared in `[sweep]`.
    Sweep(SweepArgs),
    /// Simulate and check the per-step regret decomposition.
    Audit(RunArgs),
    /// Pick `c_test` from stationary pilot runs.
    Calibrate(CalibrateArgs),
}

#[derive(Subcommand)]
enum InstanceCmd {
    /// Write `instance.json` for the configured family.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print T, V_T, S and stabilizability margins.
    Info { path: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "dynlqr")]
    controller: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `sweep.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces the controller axis.
    #[arg(long)]
    controller: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    pilots: usize,
    #[arg(long, default_value_t = 0.95)]
    quantile: f64,
    #[arg(long)]
    threads: Option<usize>,
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path).with_context(|| format!("reading config {}", path.display()))
}

fn make_instance(cfg: &ExperimentConfig, seed: u64) -> Result<DynamicsSeq> {
    let spec = &cfg.instance;
    Ok(build_instance(spec, spec.horizon, spec.budget, instance_seed(spec, seed, 0))?)
}

fn run_one(args: &RunArgs) -> Result<(ExperimentConfig, DynamicsSeq, SimOutput)> {
    let cfg = load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.sweep.master_seed);
    let seq = make_instance(&cfg, seed)?;
    let kind: ControllerKind = args.controller.parse()?;
    let mut ctrl = build_controller(kind, &cfg.controller, &seq, seed, 0)?;
    let sim = simulate(&seq, ctrl.as_mut(), seed, 0)?;
    Ok((cfg, seq, sim))
}

fn create_in(dir: &Path, name: &str) -> Result<fs::File> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::File::create(&path).with_context(|| format!("creating {}", path.display()))
}

fn instance_info(path: &Path) -> Result<()> {
    let seq = InstanceFile::read(path).with_context(|| format!("reading instance {}", path.display()))?;
    let var = total_variation(&seq);
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for s in seq.segments() {
        let m = stabilizability_margin(&s.theta, seq.cost())?;
        lo = lo.min(m);
        hi = hi.max(m);
    }
    println!("n = {}, d = {}", seq.n(), seq.d());
    println!("T = {}", seq.horizon());
    println!("V_T = {:.6}", var.total);
    println!("S = {}", seq.segments().len());
    println!("switches = {}", var.switches);
    println!("closed-loop radius under K* in [{lo:.4}, {hi:.4}]");
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().cmd {
        Cmd::Instance(InstanceCmd::Gen { config, seed, out }) => {
            let cfg = load(&config)?;
            let seq = make_instance(&cfg, seed.unwrap_or(cfg.sweep.master_seed))?;
            fs::create_dir_all(&out)?;
            let path = out.join("instance.json");
            InstanceFile::write(&seq, &path)?;
            println!("{}", path.display());
        }
        Cmd::Instance(InstanceCmd::Info { path }) => instance_info(&path)?,
        Cmd::Simulate(args) => {
            let (_, _, sim) = run_one(&args)?;
            let r = &sim.report;
            println!("regret = {:.6}", r.regret());
            println!("restarts = {}", r.restarts);
            println!("stab_steps = {}", r.stab_steps);
            if let Some(dir) = &args.out {
                write_trace_csv(&sim, create_in(dir, "trace_0.csv")?)?;
            }
        }
        Cmd::Audit(args) => {
            let (_, seq, sim) = run_one(&args)?;
            let a = regret_decomposition_audit(&seq, &sim)?;
            println!("audited = {}", a.rows.len());
            println!("not_auditable = {}", a.not_auditable);
            println!("max_residual = {:.3e}", a.max_residual);
            println!("max_relative_residual = {:.3e}", a.max_relative_residual);
            for (i, s) in a.sums.iter().enumerate() {
                println!("term{} = {s:.6}", i + 1);
            }
            if let Some(dir) = &args.out {
                write_audit_csv(&a, create_in(dir, "audit_0.csv")?)?;
            }
        }
        Cmd::Sweep(args) => {
            let mut cfg = load(&args.config)?;
            if let Some(s) = args.seed {
                cfg.sweep.master_seed = s;
            }
            if !args.controller.is_empty() {
                cfg.sweep.controllers = args.controller.clone();
            }
            let out = run_sweep(&cfg, Some(&args.out), args.threads)?;
            let failed = out.rows.iter().filter(|r| r.status != "ok").count();
            info!("{} cells, {failed} failed", out.rows.len());
            println!("{}", args.out.join("results.csv").display());
            if failed > 0 {
                eprintln!("{failed} of {} cells failed", out.rows.len());
            }
        }
        Cmd::Calibrate(args) => {
            if args.pilots == 0 {
                bail!("--pilots must be positive");
            }
            let cfg = load(&args.config)?;
            let seed = args.seed.unwrap_or(cfg.sweep.master_seed);
            let spec = &cfg.instance;
            let pilots = (0..args.pilots as u64)
                .map(|r| pilot_instance(spec, spec.horizon, spec.budget, instance_seed(spec, seed, r)))
                .collect::<nslqr::Result<Vec<_>>>()?;
            let stab = cfg.controller.stabilizing_mode()?;
            let run = || calibrate(&pilots, &cfg.controller.dynlqr, stab, seed, args.quantile);
            let rep = match args.threads {
                Some(k) => rayon::ThreadPoolBuilder::new().num_threads(k).build()?.install(run)?,
                None => run()?,
            };
            println!("c_test = {}", rep.c_test);
            println!("quantile = {}", rep.quantile);
            println!("false_restart_rate = {}", rep.false_restart_rate(rep.c_test));
        }
    }
    Ok(())
}
