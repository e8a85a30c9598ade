//! Runs every stage on a small synthetic corpus with the echo client:
//! analyze, generate, render, evaluate, calibrate, decouple, report, audit.
//!
//! Usage: cargo run --release --example desk_pipeline [WORK_DIR]

use std::path::PathBuf;

use zerosense::config::{Config, OracleConfig};
use zerosense::corpus::SourceStyle;
use zerosense::harness::DatasetTag;
use zerosense::pipeline::{self, ReportSources, REPLACEMENTS_FILE};
use zerosense::synth::{english_like_text, write_synthetic_corpus};
use zerosense::zerotext::Tokenization;

fn main() -> zerosense::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let root = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("zerosense-desk"), PathBuf::from);
    let dir = |name: &str| root.join(name);
    std::fs::create_dir_all(&root).map_err(|e| zerosense::Error::InvalidArgument(e.to_string()))?;

    let train = dir("train.txt");
    std::fs::write(&train, english_like_text(300_000, 1)?).map_err(|e| zerosense::Error::InvalidArgument(e.to_string()))?;
    let mut config = Config::default();
    config.zerotext.oracle = OracleConfig::Ngram {
        corpus: train,
        order: 3,
        tokenization: Tokenization::Word,
    };
    write_synthetic_corpus(dir("corpus"), "desk", SourceStyle::FoxLike, 6, 1)?;

    pipeline::analyze_dir(&dir("corpus"), &dir("analyzed"), &config)?;
    pipeline::generate_dir(&dir("analyzed"), &dir("generated"), &config)?;
    let audit = pipeline::audit_replacements(&dir("generated"), &dir("audit"), &config)?;
    println!("audit: {} tokens, max posterior {:.2e}", audit.tokens, audit.max_posterior);

    let replacements = dir("generated").join(REPLACEMENTS_FILE);
    pipeline::render_dir(&dir("analyzed"), Some(&replacements), &dir("zerosense"), &config)?;
    pipeline::render_dir(&dir("analyzed"), None, &dir("full"), &config)?;
    pipeline::evaluate_dir(&dir("full"), DatasetTag::Original, &dir("eval_full"), &config)?;
    pipeline::evaluate_dir(&dir("zerosense"), DatasetTag::Zerosense, &dir("eval_zero"), &config)?;
    pipeline::calibrate(&[dir("eval_full")], &dir("calibration"))?;
    pipeline::decouple_files(&[dir("eval_full")], &[dir("eval_zero")], &dir("calibration"), &dir("decoupled"), &config)?;
    pipeline::report_files(
        &ReportSources {
            points: Some(dir("decoupled")),
            original: vec![dir("eval_full")],
            zerosense: vec![dir("eval_zero")],
            ..ReportSources::default()
        },
        &dir("report"),
        &config,
    )?;
    let summary = std::fs::read_to_string(dir("report").join("summary.txt")).unwrap_or_default();
    println!("{summary}");
    println!("outputs under {}", root.display());
    Ok(())
}
