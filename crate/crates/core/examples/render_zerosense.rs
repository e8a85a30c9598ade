//! Builds one ZeroSense page: analyze a synthetic source page, replace its
//! text with low-posterior words, and typeset over the inpainted source.
//!
//! Usage: cargo run --example render_zerosense [OUT_DIR]

use std::path::PathBuf;

use zerosense::corpus::{LanguageClass, SourceStyle};
use zerosense::font::FontFace;
use zerosense::layout::{extract_theta, ThetaOptions};
use zerosense::render::{render_zerosense_page, Background, RenderTheta, ResolutionMode};
use zerosense::synth::{english_like_text, synth_page, PageStyle, TextGenerator};
use zerosense::zerotext::{generate_page_replacements, NgramModel, OracleSet, Tokenization};

fn main() -> zerosense::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("zerosense-render"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| zerosense::Error::InvalidArgument(e.to_string()))?;

    let font = FontFace::bundled();
    let generator = TextGenerator::new(TextGenerator::DEFAULT_VOCAB, 4)?;
    let source = synth_page("page", 1, &PageStyle::for_source(SourceStyle::FoxLike), &generator, &font, 4)?;
    let analyzed = extract_theta(&source.annotation, &font, &ThetaOptions::default())?;

    let model = NgramModel::train(&english_like_text(300_000, 4)?, 3, Tokenization::Word)?;
    let oracles = OracleSet::new().with(LanguageClass::Latin, &model)?;
    let replacements: Vec<String> = generate_page_replacements(&analyzed, &oracles, 1e-6, 4)?
        .into_iter()
        .map(|r| r.text)
        .collect();

    let theta = RenderTheta {
        background: Background::InpaintedSource,
        ..RenderTheta::default()
    };
    for mode in [ResolutionMode::Tiny, ResolutionMode::Base] {
        let page = render_zerosense_page(&analyzed, &replacements, &theta.with_mode(mode), &font, Some(&source.image), 4)?;
        let meta = page.meta();
        println!(
            "{}: {} text tokens / {} visual tokens = {:.2}x",
            mode.name(),
            meta.text_tokens,
            meta.visual_tokens,
            meta.compression_ratio()
        );
    }
    let page = render_zerosense_page(&analyzed, &replacements, &theta, &font, Some(&source.image), 4)?;
    source.image.save(out.join("source.png"))?;
    page.image.save(out.join("zerosense.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
