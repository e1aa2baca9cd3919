use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qfes_cli::{parse_config, run_to_dir, CliError, ConfigError, Kind};

/// Runs one qfes experiment and writes CSV data plus a manifest.
#[derive(Debug, Parser)]
#[command(name = "qfes", version)]
struct Args {
    /// Experiment kind, e.g. ghz, sawtooth-echo, embed-kvn.
    kind: String,
    /// TOML config; parameters at top level or under [params].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a parameter, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

fn run(args: &Args) -> Result<(), CliError> {
    let kind = Kind::parse(&args.kind)?;
    let text = match &args.config {
        Some(path) => Some(std::fs::read_to_string(path).map_err(|e| {
            ConfigError::Parse(format!("cannot read {}: {e}", path.display()))
        })?),
        None => None,
    };
    let cfg = parse_config(kind, text.as_deref(), &args.set, args.seed)?;
    for key in &cfg.defaulted {
        eprintln!("default: {key} = {}", cfg.params[key]);
    }
    for note in &cfg.notices {
        eprintln!("notice: {note}");
    }
    let manifest = run_to_dir(&cfg, &args.out)?;
    for o in &manifest.outputs {
        println!("{}  {}", o.sha256, args.out.join(&o.file).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
