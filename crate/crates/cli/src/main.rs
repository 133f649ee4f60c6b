use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod error;
mod output;

use error::CliError;

#[derive(Parser)]
#[command(name = "robust-consensus", version, about = "Consensus protocol design and verification over noisy channels")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, Default, ValueEnum)]
enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Graph spectrum, Mahler measure, noise level and the consensus condition.
    Analyze {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t)]
        format: Format,
    },
    /// Design the protocol gain and write it as JSON.
    Synthesize {
        file: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run the Monte Carlo ensemble and write trajectory and summary CSVs.
    Simulate {
        file: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Mean-square stability verdict from the exact second-moment operator.
    Verify { file: PathBuf },
    /// Run every stage on the built-in six-agent example and write a manifest.
    ReproducePaper {
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze { file, format } => {
            let report = commands::analyze(&commands::load(&file)?)?;
            match format {
                Format::Text => print!("{}", output::analysis_text(&report)),
                Format::Json => println!("{}", output::to_json(&report)?),
            }
        }
        Command::Synthesize { file, output: out } => {
            let artifact = commands::synthesize(&commands::load(&file)?)?;
            let json = output::to_json(&artifact)?;
            match out {
                Some(path) => output::write_file(&path, &json)?,
                None => println!("{json}"),
            }
        }
        Command::Simulate { file, output: dir, trials, horizon, seed } => {
            let mut scenario = commands::load(&file)?;
            let overrides = commands::SimulationOverrides { trials, horizon, seed };
            overrides.apply(&mut scenario);
            let ens = commands::simulate(&scenario)?;
            output::write_ensemble(&dir, &ens)?;
            println!("final msd: {}", ens.msd[ens.horizon]);
        }
        Command::Verify { file } => {
            let verdict = commands::verify(&commands::load(&file)?)?;
            println!("{}", output::to_json(&verdict)?);
        }
        Command::ReproducePaper { output: dir } => {
            let manifest = commands::reproduce(&dir)?;
            println!("{}", output::manifest_text(&manifest));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let CliError::Core(robust_consensus::Error::ConditionFails(report)) = &e {
                if let Ok(json) = output::to_json(report.as_ref()) {
                    println!("{json}");
                }
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
