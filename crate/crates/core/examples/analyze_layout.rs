//! Reconstructs paragraphs from a synthetic word-level page and solves the
//! font size and capacity of each block.

use zerosense::corpus::SourceStyle;
use zerosense::font::FontFace;
use zerosense::layout::{extract_theta, reconstruct_layout, MergeRule, ThetaOptions};
use zerosense::synth::{synth_page, PageStyle, TextGenerator};

fn main() -> zerosense::Result<()> {
    let generator = TextGenerator::new(TextGenerator::DEFAULT_VOCAB, 1)?;
    let font = FontFace::bundled();
    let style = PageStyle::for_source(SourceStyle::FoxLike);
    let page = synth_page("demo", 2, &style, &generator, &font, 1)?;
    let words = &page.annotation.blocks;

    let r = reconstruct_layout(words, page.annotation.page_w, MergeRule::EdgeGap)?;
    println!(
        "{} words -> {} paragraphs in {} columns (H = {:.1}px)",
        words.len(),
        r.paragraphs.len(),
        r.columns,
        r.params.unified_line_height
    );

    let analyzed = extract_theta(&page.annotation, &font, &ThetaOptions::default())?;
    for b in &analyzed.blocks {
        let preview: String = b.text.chars().take(40).collect();
        println!(
            "{:>4},{:>4} {:>3}x{:<3} size {:>2} capacity {:>3}  {preview}...",
            b.bbox.x,
            b.bbox.y,
            b.bbox.w,
            b.bbox.h,
            b.font_size.unwrap_or_default(),
            b.capacity.unwrap_or_default()
        );
    }
    Ok(())
}
