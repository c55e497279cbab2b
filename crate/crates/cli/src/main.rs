use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vitatlas_cli::{server, stages, Context, RunConfig};

#[derive(Parser)]
#[command(name = "vitatlas", version, about = "Class visualizations and activation atlases for vision transformers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the linear head and save a checkpoint.
    Train(Args),
    /// Capture per-layer activations and attributions.
    Capture(Args),
    /// Render one class visualization per class.
    Cv(Args),
    /// Build, render and export the activation atlas.
    Atlas(Args),
    /// Assign surrogate labels to every atlas cell.
    Metrics(Args),
    /// Compute agreement statistics over annotation CSVs.
    Agreement(Args),
    /// Serve the atlas and collect annotations over HTTP.
    Serve(Args),
    /// Summarize all stage outputs into report.md.
    Report(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Run configuration (TOML).
    #[arg(short, long, env = "VITATLAS_CONFIG")]
    config: PathBuf,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let args = match &cli.command {
        Command::Train(a)
        | Command::Capture(a)
        | Command::Cv(a)
        | Command::Atlas(a)
        | Command::Metrics(a)
        | Command::Agreement(a)
        | Command::Serve(a)
        | Command::Report(a) => a,
    };
    let ctx = Context::new(RunConfig::load(&args.config)?);
    match cli.command {
        Command::Train(_) => {
            let m = stages::train(&ctx)?;
            println!("{}", serde_json::to_string_pretty(&m.summary["validation"])?);
        }
        Command::Capture(_) => {
            stages::capture(&ctx)?;
        }
        Command::Cv(_) => {
            stages::cv(&ctx)?;
        }
        Command::Atlas(_) => {
            let atlas = stages::atlas(&ctx)?;
            println!(
                "{} occupied cells, mean purity {:.3}",
                atlas.non_empty().count(),
                atlas.mean_purity()
            );
        }
        Command::Metrics(_) => {
            stages::metrics(&ctx)?;
        }
        Command::Agreement(_) => print!("{}", stages::agreement(&ctx)?.to_text()),
        Command::Serve(_) => tokio::runtime::Runtime::new()?.block_on(server::serve(&ctx))?,
        Command::Report(_) => print!("{}", stages::report(&ctx)?),
    }
    Ok(())
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
