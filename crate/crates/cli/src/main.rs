use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use lwr_vsl::{load_config, preset, preset_names, run_checks, simulate, ControllerMode, ScenarioConfig};

#[derive(Parser)]
#[command(name = "lwr-vsl", version, about = "Ring-road LWR simulation with speed-limit control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write density.csv, speedlimit.csv and scalars.csv.
    Run(RunArgs),
    /// List the bundled presets.
    Presets,
    /// Print the fully resolved config of a scenario.
    Show(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Config file in `key = value` format.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,

    /// Bundled preset name (see `lwr-vsl presets`).
    #[arg(long)]
    preset: Option<String>,

    /// Overrides the controller mode of the config.
    #[arg(long)]
    mode: Option<ControllerMode>,

    /// Output directory; defaults to `output_dir` from the config, then `out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Run the invariant suite instead of writing traces.
    #[arg(long)]
    seed_check: bool,

    /// Extra `key=value` assignments applied after the config.
    overrides: Vec<String>,
}

impl RunArgs {
    fn resolve(&self) -> Result<ScenarioConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), _) => load_config(path)?,
            (None, Some(name)) => preset(name)?,
            (None, None) => ScenarioConfig::default(),
        };
        for (i, kv) in self.overrides.iter().enumerate() {
            if !kv.contains('=') {
                bail!("override `{kv}` is not of the form key=value");
            }
            cfg.apply_text(kv, &format!("override {}", i + 1))?;
        }
        if let Some(mode) = self.mode {
            cfg.mode = mode;
        }
        cfg.validate().map_err(|e| e.in_scenario(&cfg.name))?;
        Ok(cfg)
    }
}

fn run(args: &RunArgs) -> Result<bool> {
    let cfg = args.resolve()?;
    if args.seed_check {
        let mut ok = true;
        for check in run_checks(&cfg)? {
            println!("{check}");
            ok &= check.passed;
        }
        return Ok(ok);
    }
    let trace = simulate(&cfg)?;
    let dir = args
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
    trace.write_csv(&dir)?;
    info!("wrote traces to {}", dir.display());
    println!(
        "{} [{}]: final V = {:.6e}, min h = {:.4} veh/km, max |delta| = {:.6e}",
        cfg.name,
        cfg.mode,
        trace.final_v(),
        trace.min_h() * 1000.0,
        trace.max_abs_delta()
    );
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Presets => {
            for name in preset_names() {
                println!("{name}");
            }
            Ok(true)
        }
        Command::Show(args) => args.resolve().map(|cfg| {
            print!("{}", cfg.to_text());
            true
        }),
    };
    match result.context("lwr-vsl") {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
