use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use surfch::config::RunConfig;
use surfch::experiments::{run_convergence, run_phase_separation, Problem};

#[derive(Parser)]
#[command(name = "surfch", version, about = "Cahn-Hilliard phase separation on implicit surfaces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Override a configuration entry, e.g. `--override level=4`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Time-dependent run; writes the energy history and snapshots.
    Solve(ConfigArgs),
    /// Manufactured-solution convergence study over `levels`.
    Converge(ConfigArgs),
    /// Mesh statistics for the configured surface and level.
    MeshInfo(ConfigArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Solve(args) => {
            let cfg = load(&args)?;
            let summary = run_phase_separation(&cfg)?;
            let last = summary.reports.last().context("run produced no states")?;
            println!(
                "t = {:.6} steps = {} rejected = {} E = {:.9e} mass = {:.12e} DOFs = {}",
                last.t,
                summary.reports.len() - 1,
                summary.rejections.len(),
                last.modified_energy,
                last.mass,
                summary.num_dofs
            );
            println!("energy history: {}", cfg.output.csv_path().display());
        }
        Command::Converge(args) => {
            let cfg = load(&args)?;
            let rows = run_convergence(&cfg)?;
            std::fs::create_dir_all(&cfg.output.dir)?;
            let path = cfg.output.dir.join("convergence.csv");
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "level,dt,dofs,l2_error,rate")?;
            println!("{:>5} {:>9} {:>8} {:>12} {:>6}", "level", "dt", "DOFs", "L2 error", "rate");
            for r in &rows {
                let rate = r.rate.map_or(String::new(), |v| format!("{v:.2}"));
                println!("{:>5} {:>9} {:>8} {:>12.4e} {:>6}", r.level, r.dt, r.num_dofs, r.l2_error, rate);
                writeln!(f, "{},{},{},{:.10e},{}", r.level, r.dt, r.num_dofs, r.l2_error, rate)?;
            }
            println!("table: {}", path.display());
        }
        Command::MeshInfo(args) => {
            let cfg = load(&args)?;
            let p = Problem::build(&cfg)?;
            println!("surface          {:?}", cfg.surface);
            println!("level            {}", cfg.level);
            println!("h                {:.6}", p.active.h);
            println!("background nodes {}", p.background.nodes.len());
            println!("background tets  {}", p.background.tets.len());
            println!("cut elements     {}", p.active.elements.len());
            println!("active DOFs      {}", p.active.num_dofs());
            println!("surface area     {:.10}", p.active.surface_area());
        }
    }
    Ok(())
}

fn load(args: &ConfigArgs) -> anyhow::Result<RunConfig> {
    RunConfig::load(&args.config, &args.overrides).with_context(|| format!("loading {}", args.config.display()))
}
