//! Decouples published bin means into prior and visual contributions and
//! writes the report tables.
//!
//! Usage: cargo run --example decouple_tables [OUT_DIR]

use std::collections::BTreeMap;
use std::path::PathBuf;

use zerosense::harness::{write_report, ReportInputs, SweepConfig};
use zerosense::metrics::{fit_ocr_raw, DecoupledPoint};
use zerosense::render::default_visual_tokens;

fn main() -> zerosense::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("zerosense-tables"), PathBuf::from);
    let ratios = [7.5, 10.0, 12.5, 15.0, 17.5];
    let fox_full = [0.955, 0.934, 0.906, 0.830, 0.813];
    let fox_zero = [0.717, 0.519, 0.366, 0.195, 0.133];
    let fox_raw = [0.761, 0.686, 0.610, 0.535, 0.460];

    let calibration = fit_ocr_raw(&ratios.iter().copied().zip(fox_raw).collect::<Vec<_>>(), Vec::new())?;
    println!(
        "OCR_raw(rho) = {:.5} * rho + {:.4} (max residual {:.5})",
        calibration.slope, calibration.intercept, calibration.fit_residual_max
    );

    let points = (0..5)
        .map(|i| DecoupledPoint::from_means(ratios[i], "fox", fox_full[i], fox_zero[i], fox_raw[i]))
        .collect::<zerosense::Result<Vec<_>>>()?;
    println!("{:>6} {:>7} {:>7} {:>7} {:>7}", "rho", "F_full", "F_prior", "OCR_raw", "K");
    for p in &points {
        println!(
            "{:>6.1} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
            p.compression_bin, p.f_full, p.f_prior, p.ocr_raw, p.k_quality
        );
    }

    let visual_tokens: BTreeMap<_, _> = default_visual_tokens();
    write_report(
        &ReportInputs {
            points: &points,
            original: &[],
            zerosense: &[],
            shuffled: &[],
            shuffle_baseline: &[],
            sweep: &SweepConfig::default(),
            visual_tokens: &visual_tokens,
            histogram_width: 100,
            text_reference: 1.0,
            epsilon: 0.01,
        },
        &out,
    )?;
    println!("wrote {}", out.display());
    Ok(())
}
