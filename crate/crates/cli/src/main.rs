use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ftlnet::bridge::{fmt_sig, write_profiles_csv, DensityProfile};
use ftlnet::config::{ExperimentConfig, Rung};
use ftlnet::experiment::{write_convergence_csv, write_l1_csv, Experiment, MicroRun, Snapshot};
use ftlnet::macroscopic::macro_dt_bound;
use ftlnet::Execution;

#[derive(Parser)]
#[command(name = "ftlnet", version, about = "Micro and macro traffic simulation on road networks")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Seed vehicles, run the follow-the-leader model and write the cell-averaged profile
    RunMicro {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        micro: MicroFlags,
        /// also write every vehicle at every step to trajectories.csv
        #[arg(long)]
        trajectories: bool,
    },
    /// Run the multi-path Godunov scheme and write total densities per road
    RunMacro {
        #[command(flatten)]
        common: Common,
    },
    /// Run both models and write the per-road L1 distance
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        micro: MicroFlags,
    },
    /// Run the comparison over the config's ladder of vehicle lengths
    Converge {
        #[command(flatten)]
        common: Common,
        /// replicas per rung on networks with random routes
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Check a config and print what a run would do
    Validate {
        #[arg(short, long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(short, long)]
    config: PathBuf,
    /// output directory, defaults to the config's `output_dir`
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long, env = "FTLNET_SEED")]
    seed: Option<u64>,
    /// comma-separated times for intermediate profiles
    #[arg(long, value_delimiter = ',')]
    snapshots: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    execution: Option<ExecArg>,
}

#[derive(Args)]
struct MicroFlags {
    /// vehicle length, overriding the config
    #[arg(long)]
    ell: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExecArg {
    Sequential,
    Parallel,
}

impl From<ExecArg> for Execution {
    fn from(e: ExecArg) -> Self {
        match e {
            ExecArg::Sequential => Execution::Sequential,
            ExecArg::Parallel => Execution::Parallel,
        }
    }
}

struct Loaded {
    exp: Experiment,
    out: PathBuf,
    seed: Option<u64>,
}

fn load(common: &Common) -> Result<Loaded> {
    let mut cfg = ExperimentConfig::load(&common.config)
        .with_context(|| format!("reading {}", common.config.display()))?;
    if let Some(s) = &common.snapshots {
        cfg.snapshots = s.clone();
    }
    if let Some(e) = common.execution {
        cfg.execution = e.into();
    }
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir));
    let exp = Experiment::from_config(cfg).with_context(|| format!("invalid config {}", common.config.display()))?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok(Loaded { exp, out, seed: common.seed })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_profiles(path: &Path, profiles: &[DensityProfile]) -> Result<()> {
    let mut w = create(path)?;
    write_profiles_csv(&mut w, profiles)?;
    w.flush()?;
    Ok(())
}

fn write_snapshots(dir: &Path, prefix: &str, snaps: &[Snapshot]) -> Result<()> {
    for s in snaps {
        write_profiles(&dir.join(format!("{prefix}_t{}.csv", fmt_sig(s.time))), &s.profiles)?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn micro_run(seed: Option<u64>, flags: &MicroFlags) -> MicroRun {
    MicroRun { ell: flags.ell, dt: flags.dt, seed }
}

fn run(cli: Cli) -> Result<()> {
    match cli.verb {
        Verb::RunMicro { common, micro, trajectories } => {
            let l = load(&common)?;
            let mut traj = if trajectories { Some(create(&l.out.join("trajectories.csv"))?) } else { None };
            let out = l.exp.run_micro(micro_run(l.seed, &micro), traj.as_mut().map(|w| w as &mut dyn Write))?;
            if let Some(mut w) = traj {
                w.flush()?;
            }
            write_profiles(&l.out.join("micro_profile.csv"), &out.profiles)?;
            write_snapshots(&l.out, "micro_profile", &out.snapshots)?;
            write_json(&l.out.join("micro_summary.json"), &out.summary)?;
            let s = &out.summary;
            println!(
                "vehicles {}  active {}  arrived {}  steps {}  max overlaps {}  stray overlaps {}  wall {:.2}s",
                s.vehicles, s.active, s.arrived, s.steps, s.max_overlaps, s.stray_overlaps, s.wall_seconds
            );
        }
        Verb::RunMacro { common } => {
            let l = load(&common)?;
            let out = l.exp.run_macro()?;
            write_profiles(&l.out.join("macro_profile.csv"), &out.profiles)?;
            write_snapshots(&l.out, "macro_profile", &out.snapshots)?;
            write_json(&l.out.join("macro_summary.json"), &out.summary)?;
            let s = &out.summary;
            println!(
                "steps {}  mass {}  outflow {}  max step drift {:e}  max total {}  wall {:.2}s",
                s.steps,
                fmt_sig(s.final_mass),
                fmt_sig(s.outflow),
                s.max_step_drift,
                fmt_sig(s.max_total),
                s.wall_seconds
            );
        }
        Verb::Compare { common, micro } => {
            let l = load(&common)?;
            let out = l.exp.run_compare(micro_run(l.seed, &micro))?;
            write_profiles(&l.out.join("micro_profile.csv"), &out.micro.profiles)?;
            write_profiles(&l.out.join("macro_profile.csv"), &out.macro_.profiles)?;
            write_snapshots(&l.out, "micro_profile", &out.micro.snapshots)?;
            write_snapshots(&l.out, "macro_profile", &out.macro_.snapshots)?;
            write_json(&l.out.join("micro_summary.json"), &out.micro.summary)?;
            write_json(&l.out.join("macro_summary.json"), &out.macro_.summary)?;
            let mut w = create(&l.out.join("l1.csv"))?;
            write_l1_csv(&mut w, &out.table)?;
            w.flush()?;
            write_l1_csv(std::io::stdout().lock(), &out.table)?;
        }
        Verb::Converge { common, seeds } => {
            let l = load(&common)?;
            let cfg = l.exp.config();
            let conv = cfg.convergence.as_ref().context("config has no [convergence] section")?;
            let ladder: Vec<Rung> = conv.ladder.clone();
            let seeds = seeds.unwrap_or(conv.seeds);
            let base = l.seed.unwrap_or(cfg.micro.seed);
            let rows = l.exp.run_convergence(&ladder, seeds, base)?;
            let mut w = create(&l.out.join("convergence.csv"))?;
            write_convergence_csv(&mut w, &rows)?;
            w.flush()?;
            write_convergence_csv(std::io::stdout().lock(), &rows)?;
        }
        Verb::Validate { config } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("reading {}", config.display()))?;
            let exp = Experiment::from_config(cfg).with_context(|| format!("invalid config {}", config.display()))?;
            let cfg = exp.config();
            let net = exp.network();
            println!("{}: {} roads, {} paths", cfg.name, net.road_count(), exp.paths().len());
            for p in exp.paths() {
                let roads: Vec<String> = p.roads().iter().map(u32::to_string).collect();
                println!("  path {}: {}", p.id, roads.join(" -> "));
            }
            let bound = macro_dt_bound(net, &exp.diagram(), exp.dx());
            println!("macro: dx {}  dt {}  stable dt bound {}", fmt_sig(exp.dx()), fmt_sig(cfg.macro_.dt), fmt_sig(bound));
            let (state, report) = exp.micro_state(MicroRun::default())?;
            println!(
                "micro: ell {}  dt {}  vehicles {}  initial stable dt {}",
                fmt_sig(state.params().ell),
                fmt_sig(state.params().dt),
                state.vehicles().len(),
                fmt_sig(state.cfl_timestep())
            );
            for (road, dm) in &report.mass_adjustments {
                println!("  road {road}: initial mass adjusted by {}", fmt_sig(*dm));
            }
            println!("ok");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
