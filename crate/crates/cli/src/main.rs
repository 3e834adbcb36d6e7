use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use radsurr_cli::{commands, Context, RunConfig};
use radsurr_core::CoreError;

/// Radiative heat transfer solver and neural surrogates.
#[derive(Debug, Parser)]
#[command(name = "radsurr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration, or `builtin:desk`. Defaults to the full-scale furnace.
    #[arg(long, global = true)]
    config: Option<String>,

    /// Override one configuration field, e.g. `--set mesh.nx=30`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Worker threads for the solver and data generation.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Single worker and no wall-clock fields in artifacts.
    #[arg(long, global = true)]
    deterministic: bool,

    /// Seed for sampling, initialization, shuffling and tuning.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Progress on stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one case file and write its wall irradiation.
    Solve {
        #[arg(long)]
        case: PathBuf,
    },
    /// Sample cases, solve them and store a dataset.
    GenDataset,
    /// Train the configured network on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Random search over architectures with a resumable ledger.
    Tune {
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to `<out>/ledger.jsonl`.
        #[arg(long)]
        ledger: Option<PathBuf>,
    },
    /// Relative error of a model on a dataset's test split.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Solver against surrogate timing.
    Bench {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Analytic physics checks of the solver.
    Validate,
}

fn error_report(e: &CoreError) -> Value {
    let field = match e {
        CoreError::Config { field, .. } => Some(field.clone()),
        _ => None,
    };
    json!({ "error": { "kind": e.kind(), "field": field, "message": e.to_string() } })
}

fn run(cli: Cli) -> Result<(Value, bool), CoreError> {
    let mut config = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        config.set_seed(seed);
    }
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CoreError::config("--threads", "must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CoreError::config("--threads", e.to_string()))?;
    }
    let mut ctx = Context::new(config, cli.out, cli.deterministic);
    ctx.verbose = cli.verbose;
    let ok = |v| Ok((v, true));
    match cli.command {
        Command::Solve { case } => ok(commands::solve(&ctx, &case)?),
        Command::GenDataset => ok(commands::gen_dataset(&ctx)?),
        Command::Train { dataset } => ok(commands::train(&ctx, &dataset)?),
        Command::Tune { dataset, ledger } => ok(commands::tune(&ctx, &dataset, ledger.as_deref())?),
        Command::Eval { dataset, model } => ok(commands::eval(&ctx, &dataset, &model)?),
        Command::Bench { dataset, model } => ok(commands::bench(&ctx, &dataset, &model)?),
        Command::Validate => commands::validate(&ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok((summary, passed)) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("{}", error_report(&e));
            ExitCode::from(if matches!(e, CoreError::Config { .. }) { 2 } else { 1 })
        }
    }
}
