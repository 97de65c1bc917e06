use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lipgraph::experiment::{run_eval, run_gen_data, run_robustify, run_train, Outcome, RunConfig};

/// Lipschitz-constrained learning on k-NN graphs.
#[derive(Debug, Parser)]
#[command(name = "lipgraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the constrained problem for every alpha and write train_sweep.csv
    /// plus one model file per alpha.
    Train(Common),
    /// Sweep the loss margin and write robustify_ladder.csv and tradeoff.csv.
    Robustify(Common),
    /// Evaluate a saved model and write metrics.json and sensitivity.json.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model file; overrides `experiment.model` in the config.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Write the train/test sets, vertices and edges as CSV.
    GenData(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

struct Loaded {
    config: RunConfig,
    out: PathBuf,
    quiet: bool,
}

fn load(common: &Common) -> Result<Loaded, String> {
    let mut config =
        RunConfig::load(&common.config).map_err(|e| format!("{}: {e}", common.config.display()))?;
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    let out = common
        .out
        .clone()
        .or_else(|| config.out.clone())
        .ok_or("no output directory: pass --out or set `out` in the config")?;
    Ok(Loaded {
        config,
        out,
        quiet: common.quiet,
    })
}

fn run(cli: Cli) -> Result<Outcome, String> {
    let (common, model) = match &cli.command {
        Command::Train(c) | Command::Robustify(c) | Command::GenData(c) => (c, None),
        Command::Eval { common, model } => (common, model.clone()),
    };
    let Loaded { config, out, quiet } = load(common)?;
    let log = move |msg: &str| {
        if !quiet {
            eprintln!("{msg}");
        }
    };
    let result = match cli.command {
        Command::Train(_) => run_train(&config, &out, &log),
        Command::Robustify(_) => run_robustify(&config, &out, &log),
        Command::GenData(_) => run_gen_data(&config, &out, &log),
        Command::Eval { .. } => {
            let model = model
                .or_else(|| config.experiment.model.clone())
                .ok_or("no model: pass --model or set `experiment.model` in the config")?;
            if !Path::new(&model).exists() {
                return Err(format!("{} does not exist", model.display()));
            }
            run_eval(&config, &model, &out, &log)
        }
    };
    result.map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(outcome) if outcome.certified => ExitCode::SUCCESS,
        Ok(_) => {
            eprintln!("some solves did not converge with a passing KKT certificate");
            ExitCode::from(2)
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
