//! Writes word-shuffled variants of a synthetic page.
//!
//! Usage: cargo run --example shuffle_words [OUT_DIR]

use std::path::PathBuf;

use zerosense::corpus::SourceStyle;
use zerosense::font::FontFace;
use zerosense::perturb::{build_shuffled_set, PerturbOptions};
use zerosense::synth::{synth_page, PageStyle, TextGenerator};

fn main() -> zerosense::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("zerosense-shuffle"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| zerosense::Error::InvalidArgument(e.to_string()))?;

    let generator = TextGenerator::new(TextGenerator::DEFAULT_VOCAB, 9)?;
    let page = synth_page("page", 2, &PageStyle::for_source(SourceStyle::FoxLike), &generator, &FontFace::bundled(), 9)?;
    page.image.save(out.join("original.png"))?;
    println!("original: {}", preview(&page.annotation.ground_truth()));

    for (k, v) in build_shuffled_set(&page.annotation, &page.image, 3, 9, &PerturbOptions::default())?
        .into_iter()
        .enumerate()
    {
        v.image.save(out.join(format!("shuffled-{k}.png")))?;
        println!("variant {k}: {}", preview(&v.perturbation.page.ground_truth()));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn preview(text: &str) -> String {
    text.split_whitespace().take(12).collect::<Vec<_>>().join(" ")
}
