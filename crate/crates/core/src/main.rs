use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use zerosense::config::Config;
use zerosense::harness::DatasetTag;
use zerosense::pipeline::{self, ReportSources};

#[derive(Parser)]
#[command(name = "zerosense", version, about = "Semantics-free OCR benchmarks and decoupled evaluation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve font size, capacity and language for every block of a corpus.
    Analyze { corpus: PathBuf },
    /// Generate zero-information replacement text for an analyzed corpus.
    Generate { analyzed: PathBuf },
    /// Typeset an analyzed corpus, with generated text when given replacements.
    Render {
        analyzed: PathBuf,
        #[arg(long)]
        replacements: Option<PathBuf>,
    },
    /// Build original and word-shuffled variants of a word-level corpus.
    Perturb { corpus: PathBuf },
    /// Run the configured model clients on a rendered corpus.
    Evaluate {
        corpus: PathBuf,
        #[arg(long, default_value = "original")]
        dataset: DatasetTag,
    },
    /// Fit OCR_raw from records files or a ratio,precision CSV.
    Calibrate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Split natural-text accuracy into visual and prior contributions.
    Decouple {
        #[arg(long, required = true)]
        full: Vec<PathBuf>,
        #[arg(long, required = true)]
        zero: Vec<PathBuf>,
        #[arg(long)]
        calibration: PathBuf,
    },
    /// Write CSV tables and a summary from decoupled points and records.
    Report {
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        original: Vec<PathBuf>,
        #[arg(long)]
        zerosense: Vec<PathBuf>,
        #[arg(long)]
        shuffled: Vec<PathBuf>,
        /// Records on the unshuffled counterparts of the shuffled pages.
        #[arg(long)]
        baseline: Vec<PathBuf>,
    },
    /// Score generated text under the audit oracle.
    Audit { replacements: PathBuf },
}

fn run(cli: Cli) -> zerosense::Result<()> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(jobs) = cli.jobs {
        config.jobs = Some(jobs);
    }
    let out = &cli.out;
    match cli.command {
        Command::Analyze { corpus } => {
            let c = pipeline::analyze_dir(&corpus, out, &config)?;
            println!("analyzed {} pages", c.pages.len());
        }
        Command::Generate { analyzed } => {
            let records = pipeline::generate_dir(&analyzed, out, &config)?;
            let max_tau = records.iter().map(|r| r.max_tau).fold(0.0, f64::max);
            println!("generated {} pages, max tau {max_tau:e}", records.len());
        }
        Command::Render { analyzed, replacements } => {
            let c = pipeline::render_dir(&analyzed, replacements.as_deref(), out, &config)?;
            println!("rendered {} pages", c.pages.len());
        }
        Command::Perturb { corpus } => {
            let p = pipeline::perturb_dir(&corpus, out, &config)?;
            println!("{} original and {} shuffled pages", p.original.pages.len(), p.shuffled.pages.len());
        }
        Command::Evaluate { corpus, dataset } => {
            let records = pipeline::evaluate_dir(&corpus, dataset, out, &config)?;
            let failed = records.iter().filter(|r| r.error.is_some()).count();
            println!("{} records ({failed} failed)", records.len());
        }
        Command::Calibrate { inputs } => {
            let c = pipeline::calibrate(&inputs, out)?;
            println!("OCR_raw(rho) = {:.5} * rho + {:.5}", c.slope, c.intercept);
        }
        Command::Decouple { full, zero, calibration } => {
            let points = pipeline::decouple_files(&full, &zero, &calibration, out, &config)?;
            println!("{} decoupled points", points.len());
        }
        Command::Report {
            points,
            original,
            zerosense,
            shuffled,
            baseline,
        } => {
            let sources = ReportSources {
                points,
                original,
                zerosense,
                shuffled,
                shuffle_baseline: baseline,
            };
            if let Some(score) = pipeline::report_files(&sources, out, &config)? {
                println!("S(theta) = {:.4}", score.s_theta);
            }
            println!("report written to {}", out.display());
        }
        Command::Audit { replacements } => {
            let a = pipeline::audit_replacements(&replacements, out, &config)?;
            println!(
                "{} tokens, max posterior {:e}, {:.4} below 1e-5",
                a.tokens, a.max_posterior, a.fraction_below_1e5
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
