use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mongegap_cli::{cmd_bench, cmd_sweep, cmd_train, example_config, output_dir, RunConfig, Status, EXIT_CONFIG, EXIT_RUN_FAILED};

#[derive(Parser)]
#[command(name = "mongegap", version, about = "Train and benchmark Monge-gap regularized transport maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed, overriding `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Parallel runs for sweep and bench.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train one map and evaluate it on the test split.
    Train(RunArgs),
    /// Train over a grid of λ values.
    Sweep(RunArgs),
    /// Compare estimators across dimensions on Gaussian pairs.
    Bench(RunArgs),
    /// Print an example config with every default filled in.
    PrintConfig {
        #[arg(default_value = "train", value_parser = ["train", "sweep", "bench"])]
        kind: String,
    },
}

fn code(c: i32) -> ExitCode {
    ExitCode::from(c as u8)
}

fn load(args: &RunArgs) -> Result<(RunConfig, PathBuf), anyhow::Error> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.workers == 0 {
        anyhow::bail!("--workers must be at least 1");
    }
    let out = output_dir(&cfg, args.out.as_deref())?;
    Ok((cfg, out))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (args, kind) = match &cli.command {
        Command::PrintConfig { kind } => {
            return match example_config(kind) {
                Ok(cfg) => {
                    print!("{}", cfg.to_pretty_json());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    code(EXIT_CONFIG)
                }
            };
        }
        Command::Train(a) => (a, "train"),
        Command::Sweep(a) => (a, "sweep"),
        Command::Bench(a) => (a, "bench"),
    };
    let (cfg, out) = match load(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return code(EXIT_CONFIG);
        }
    };
    let result = match kind {
        "train" => cmd_train(&cfg, &out).map(|r| {
            println!("{}", serde_json::to_string(&r.metrics).expect("metrics serialize"));
            Status::Complete
        }),
        "sweep" => cmd_sweep(&cfg, &out, args.workers),
        _ => cmd_bench(&cfg, &out, args.workers),
    };
    match result {
        Ok(status) => {
            if status == Status::PartialFailure {
                eprintln!("some runs failed; see {}", out.display());
            }
            code(status.exit_code())
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            code(EXIT_RUN_FAILED)
        }
    }
}
