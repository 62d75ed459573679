use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qbcmr::{load_config, studies, HarnessError, Study};

#[derive(Debug, Parser)]
#[command(name = "qbcmr", version, about = "Quasi-Bayes estimation and inference for conditional moment models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Base seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (overrides the config).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a dataset from a catalog design.
    Simulate(Common),
    /// Fit one dataset and write draws and diagnostics.
    Fit(Common),
    /// Frequentist coverage of credible intervals.
    Coverage(Common),
    /// Posterior-mean error across sample sizes.
    RateStudy(Common),
    /// Sample paths of the series prior.
    PriorDraw(Common),
}

fn run(cli: Cli) -> Result<String, HarnessError> {
    let (study, common) = match cli.command {
        Command::Simulate(c) => (Study::Simulate, c),
        Command::Fit(c) => (Study::Fit, c),
        Command::Coverage(c) => (Study::Coverage, c),
        Command::RateStudy(c) => (Study::RateStudy, c),
        Command::PriorDraw(c) => (Study::PriorDraw, c),
    };
    let mut cfg = load_config(&common.config)?;
    if cfg.study != study {
        return Err(HarnessError::Config(format!(
            "config is for study `{}`, command was `{}`",
            cfg.study.name(),
            study.name()
        )));
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    let out = common.out.or_else(|| cfg.output.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cfg.workers {
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let outcome = pool.install(|| studies::run_study(&cfg, &out))?;
    let files: Vec<String> = outcome.files.iter().map(|f| f.display().to_string()).collect();
    Ok(format!("{}\nwrote {}", outcome.summary, files.join(", ")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
