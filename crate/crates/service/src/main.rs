use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lensbox_core::io::load_config;
use lensbox_core::toy::TrainConfig;
use lensbox_service::cli::{self, VisualizeOptions};
use lensbox_service::start_service;

#[derive(Parser)]
#[command(name = "lensbox", version, about = "CNN visualization service and tools")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render visualizations for images without starting the service.
    Visualize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        viz: String,
        /// Setting override, repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Number of top classes to render.
        #[arg(short = 'k')]
        top_k: Option<usize>,
        /// One label per line; overrides labels stored in the checkpoint.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Train the bundled 28x28 two-class toy model.
    TrainToy {
        #[arg(short = 'o', long = "output")]
        output: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
}

fn serve(config: PathBuf) -> anyhow::Result<()> {
    let config = load_config(&config)?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let handle = start_service(&config).await?;
        println!("lensbox listening on http://{}", handle.addr);
        tokio::select! {
            r = tokio::signal::ctrl_c() => {
                r?;
                log::info!("shutting down");
                handle.shutdown().await?;
            }
        }
        Ok(())
    })
}

fn run(args: Args) -> anyhow::Result<()> {
    match args.command {
        Command::Serve { config } => serve(config),
        Command::Visualize {
            model,
            viz,
            set,
            top_k,
            labels,
            output,
            images,
        } => {
            let report = cli::visualize(&VisualizeOptions {
                model,
                labels,
                visualizer: viz,
                set,
                top_k,
                output: output.clone(),
                images,
            })?;
            let maps: usize = report.entries.iter().map(|e| e.classes.len()).sum();
            println!("wrote {maps} map(s) and {} to {}", cli::REPORT_FILE, output.display());
            Ok(())
        }
        Command::TrainToy {
            output,
            seed,
            epochs,
            samples,
        } => {
            let mut config = TrainConfig::default();
            config.seed = seed.unwrap_or(config.seed);
            config.epochs = epochs.unwrap_or(config.epochs);
            config.samples = samples.unwrap_or(config.samples);
            let report = cli::train_toy(&config, &output)?;
            println!(
                "trained toy model: {} samples, {} epochs, final loss {:.4}, train accuracy {:.2}%, {:.1}s -> {}",
                config.samples,
                config.epochs,
                report.epoch_losses.last().copied().unwrap_or(f64::NAN),
                report.train_accuracy * 100.0,
                report.elapsed.as_secs_f64(),
                output.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
