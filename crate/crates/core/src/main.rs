use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use noisy_cg::config::{apply_overrides, load_map, parse_override, resolve, to_kv};
use noisy_cg::experiments::Family;
use noisy_cg::report::run_to_dir;
use noisy_cg::Error;

#[derive(Parser)]
#[command(name = "noisy-cg", version, about = "Conjugate gradient with noisy oracles: experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-iteration trajectories and plateau estimates
    Trajectory(RunArgs),
    /// Plateau error as a function of delta_a or delta_b
    SweepDelta(RunArgs),
    /// Plateau error as a function of the solution size R
    SweepR(RunArgs),
    /// CG against Nesterov's accelerated gradient on the same problem
    Compare(RunArgs),
    /// Parse a config, print the resolved parameters and exit
    ValidateConfig {
        path: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args)]
struct CommonArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set noise.delta_b=0`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

fn load(
    path: Option<&PathBuf>,
    common: &CommonArgs,
    family: Option<Family>,
) -> noisy_cg::Result<noisy_cg::experiments::ExperimentConfig> {
    let path = path.ok_or_else(|| Error::config("--config", "no config file given"))?;
    let mut map = load_map(path)?;
    if let Some(f) = family {
        match map.get("experiment.family").map(|s| Family::parse(s)) {
            Some(Some(g)) if g != f => {
                return Err(Error::config(
                    "experiment.family",
                    format!("config is a {} experiment, not {}", g.as_str(), f.as_str()),
                ))
            }
            _ => {}
        }
        map.entry("experiment.family".into()).or_insert_with(|| f.as_str().into());
    }
    let overrides = common
        .overrides
        .iter()
        .map(|s| parse_override(s))
        .collect::<noisy_cg::Result<Vec<_>>>()?;
    apply_overrides(&mut map, &overrides)?;
    resolve(&map)
}

fn run(cli: Cli) -> noisy_cg::Result<()> {
    let (family, args) = match cli.command {
        Command::ValidateConfig { path, common } => {
            let cfg = load(path.as_ref().or(common.config.as_ref()), &common, None)?;
            print!("{}", to_kv(&cfg));
            return Ok(());
        }
        Command::Trajectory(a) => (Family::Trajectory, a),
        Command::SweepDelta(a) => (Family::DeltaSweep, a),
        Command::SweepR(a) => (Family::RSweep, a),
        Command::Compare(a) => (Family::CompareNesterov, a),
    };
    let mut cfg = load(args.common.config.as_ref(), &args.common, Some(family))?;
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    if args.common.verbose > 0 {
        eprint!("{}", to_kv(&cfg));
    }
    let start = Instant::now();
    let out = run_to_dir(&cfg, &cfg.output_dir)?;
    print!("{}", out.summary);
    if args.common.verbose > 0 {
        eprintln!("finished in {:.1?}", start.elapsed());
    }
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
