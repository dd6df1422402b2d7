use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dccdi::cli::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dccdi", version, about = "Cross-domain few-shot experiments with correlation-aligned text features")]
struct Args {
    /// TOML experiment config; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `threads` in the config.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write source and target datasets with ground-truth sidecars.
    GenData,
    /// Meta-train on the source domain; writes model.json and trace.jsonl.
    Train,
    /// Evaluate every configured method and shot; writes eval.csv and eval.json.
    Eval {
        /// Defaults to OUT/model.json.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// DCCDI over a grid of output widths; writes ablate.csv and ablate.json.
    AblateDim {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated widths; defaults to `eval.dims` from the config.
        #[arg(long, value_delimiter = ',')]
        dims: Option<Vec<usize>>,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck,
}

fn run(args: Args) -> dccdi::Result<bool> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(t) = args.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    let out = &args.out;
    let checkpoint = |c: Option<PathBuf>| c.unwrap_or_else(|| out.join("model.json"));
    match args.cmd {
        Command::GenData => {
            let f = cli::gen_data(&cfg, out)?;
            println!("wrote {} and {}", f.source.display(), f.target.display());
        }
        Command::Train => {
            let t = cli::train(&cfg, out)?;
            println!("wrote {} ({} trace records)", t.checkpoint.display(), t.records.len());
        }
        Command::Eval { checkpoint: c } => {
            let e = cli::eval(&cfg, &checkpoint(c), out)?;
            print!("{}", std::fs::read_to_string(&e.csv)?);
        }
        Command::AblateDim { checkpoint: c, dims } => {
            let dims = dims.unwrap_or_else(|| cfg.eval.dims.clone());
            let e = cli::ablate_dim(&cfg, &checkpoint(c), &dims, out)?;
            print!("{}", std::fs::read_to_string(&e.csv)?);
        }
        Command::Gradcheck => {
            let (_, report) = cli::gradcheck(cfg.seed, out)?;
            print!("{}", report.to_text());
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("gradient check failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
