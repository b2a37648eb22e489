use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use vfl_cli::{run_experiment, verify_trees, ExperimentConfig};

#[derive(Parser)]
#[command(name = "vfl", version, about = "Asynchronous vertical federated SGD/SVRG/SAGA simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment: `vfl run [CONFIG] [--key value ...]`
    Run {
        /// Optional config path followed by `--key value` overrides.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true, num_args = 0..)]
        args: Vec<String>,
    },
    /// Generate the masking tree pair for q workers and check it
    VerifyTrees {
        #[arg(long)]
        q: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(args: &[String]) -> Result<()> {
    let (path, overrides) = match args.first() {
        Some(first) if !first.starts_with("--") => (Some(PathBuf::from(first)), &args[1..]),
        _ => (None, args),
    };
    let config = ExperimentConfig::load(path.as_deref(), overrides)?;
    let report = run_experiment(&config)?;
    for b in &report.best {
        println!(
            "{} {}: gamma {} final sub-optimality {:e}",
            b.algorithm,
            b.mode,
            b.gamma,
            b.final_suboptimality()
        );
    }
    for (alg, target, s) in &report.speedups {
        match s {
            Ok(v) => println!("{alg} speedup at {target:e}: {v:.3}"),
            Err(e) => println!("{alg} speedup at {target:e}: n/a ({e})"),
        }
    }
    println!("wrote {}", config.out.join("summary.txt").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { args } => run(&args).map(|()| true),
        Command::VerifyTrees { q, seed } => verify_trees(q, seed).map(|(text, ok)| {
            print!("{text}");
            ok
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
