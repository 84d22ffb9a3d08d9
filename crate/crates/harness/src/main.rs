use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shortcut_probe_harness::{
    cmd_evaluate, cmd_inject, cmd_report, cmd_run_all, cmd_train, cmd_verify, HarnessError,
    RunConfig,
};

#[derive(Parser)]
#[command(
    name = "shortcut-probe",
    version,
    about = "Evaluate salience methods against injected shortcuts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run config, or a manifest.json from an earlier run. Defaults to
    /// the reference configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Comma-separated method-id prefixes, e.g. `grad-logit,ig,lime-unk`.
    #[arg(long, global = true)]
    methods: Option<String>,

    /// Also write per-example salience maps.
    #[arg(long, global = true)]
    dump_salience: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write the base and shortcut corpora plus the manifest.
    Inject,
    /// Train clean and shortcut models.
    Train,
    /// Run both verification tests.
    Verify,
    /// Run the salience methods and score them.
    Evaluate,
    /// All stages in order.
    RunAll,
    /// Summarize verification and evaluation results.
    Report,
    /// Print the effective configuration as TOML.
    ShowConfig,
}

fn build_config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::reference("runs/reference"),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(filter) = &cli.methods {
        cfg.evaluation.methods_filter = filter.clone();
    }
    if cli.dump_salience {
        cfg.evaluation.dump_salience = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = build_config(cli)?;
    match cli.command {
        Command::Inject => cmd_inject(&cfg).map(drop),
        Command::Train => cmd_train(&cfg).map(drop),
        Command::Verify => cmd_verify(&cfg).map(drop),
        Command::Evaluate => cmd_evaluate(&cfg).map(drop),
        Command::RunAll => cmd_run_all(&cfg).map(drop),
        Command::Report => cmd_report(&cfg).map(|p| println!("{}", p.display())),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml_string());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(&e)
        }
    }
}
