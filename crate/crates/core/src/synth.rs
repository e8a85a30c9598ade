//! Synthetic fixtures: English-like text with a Zipfian vocabulary and
//! word-level document pages with known paragraph layouts.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};

use crate::corpus::{save_corpus, BBox, Corpus, Granularity, PageAnnotation, SourceStyle, TextBlock};
use crate::error::{Error, IoContext, Result};
use crate::font::{FontFace, FontMetricsModel};
use crate::render::{INK, WHITE};
use crate::rng::stream_id;

const FUNCTION_WORDS: &[&str] = &[
    "the", "of", "and", "to", "a", "in", "is", "that", "it", "was", "for", "on", "are", "as", "with", "his", "they",
    "at", "be", "this", "from", "have", "or", "by", "one", "had", "not", "but", "what", "all", "were", "when", "we",
    "there", "can", "an", "your", "which", "their", "said", "if", "do", "will", "each", "about", "how", "up", "out",
    "them", "then", "she", "many", "some", "so", "these", "would", "other", "into", "has", "more", "her", "two",
    "like", "him", "see", "time", "could", "no", "make", "than", "first", "been", "its", "who", "now", "people",
    "my", "made", "over", "did", "down", "only", "way", "find", "use", "may", "long", "very", "after", "where",
];

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z", "br", "cl", "st", "tr",
    "sh", "ch", "th", "pl", "gr", "fr", "sp", "dr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou", "io", "y"];
const CODAS: &[&str] = &["", "", "", "n", "r", "s", "t", "l", "m", "nd", "st", "ck", "ng"];

/// Sentences mixing frequent function words with Zipf-distributed content words.
#[derive(Debug, Clone)]
pub struct TextGenerator {
    content: Vec<String>,
    content_zipf: Zipf<f64>,
    function_zipf: Zipf<f64>,
}

impl TextGenerator {
    pub const DEFAULT_VOCAB: usize = 20_000;

    pub fn new(vocab_size: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("vocabulary size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reserved: BTreeSet<&str> = FUNCTION_WORDS.iter().copied().collect();
        let mut seen = BTreeSet::new();
        let mut content = Vec::with_capacity(vocab_size);
        while content.len() < vocab_size {
            let syllables = rng.random_range(1..=4);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS.choose(&mut rng).expect("onsets"));
                w.push_str(VOWELS.choose(&mut rng).expect("vowels"));
            }
            w.push_str(CODAS.choose(&mut rng).expect("codas"));
            if !reserved.contains(w.as_str()) && seen.insert(w.clone()) {
                content.push(w);
            }
        }
        Ok(Self {
            content_zipf: Zipf::new(vocab_size as f64, 1.07).map_err(|e| Error::InvalidArgument(e.to_string()))?,
            function_zipf: Zipf::new(FUNCTION_WORDS.len() as f64, 1.0)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?,
            content,
        })
    }

    pub fn word<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        if rng.random_bool(0.42) {
            FUNCTION_WORDS[self.function_zipf.sample(rng) as usize - 1]
        } else {
            &self.content[self.content_zipf.sample(rng) as usize - 1]
        }
    }

    /// A capitalised sentence ending in a full stop.
    pub fn sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let n = rng.random_range(6..=18);
        let mut words: Vec<String> = (0..n).map(|_| self.word(rng).to_string()).collect();
        if let Some(first) = words.first_mut() {
            let mut c = first.chars();
            if let Some(h) = c.next() {
                *first = h.to_uppercase().chain(c).collect();
            }
        }
        let mut s = words.join(" ");
        s.push('.');
        s
    }

    /// Whitespace-separated words of consecutive sentences.
    pub fn words<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<String> {
        let mut out = Vec::with_capacity(n + 20);
        while out.len() < n {
            out.extend(self.sentence(rng).split(' ').map(str::to_string));
        }
        out.truncate(n);
        out
    }
}

/// Paragraphs of English-like text totalling at least `min_bytes`.
pub fn english_like_text(min_bytes: usize, seed: u64) -> Result<String> {
    let generator = TextGenerator::new(TextGenerator::DEFAULT_VOCAB, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut text = String::with_capacity(min_bytes + 1024);
    while text.len() < min_bytes {
        let sentences = rng.random_range(3..=8);
        for i in 0..sentences {
            if i > 0 {
                text.push(' ');
            }
            text.push_str(&generator.sentence(&mut rng));
        }
        text.push('\n');
    }
    Ok(text)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PageStyle {
    pub page_w: u32,
    pub page_h: u32,
    pub margin: u32,
    pub font_sizes: (u32, u32),
    /// Share of the available height that is filled with text.
    pub fill: (f64, f64),
}

impl PageStyle {
    pub fn for_source(style: SourceStyle) -> Self {
        match style {
            SourceStyle::OmniLike => Self {
                page_w: 1000,
                page_h: 1300,
                margin: 50,
                font_sizes: (12, 26),
                fill: (0.25, 1.0),
            },
            _ => Self {
                page_w: 1000,
                page_h: 1300,
                margin: 50,
                font_sizes: (14, 18),
                fill: (0.85, 1.0),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPage {
    /// Word-level annotation.
    pub annotation: PageAnnotation,
    /// Ground-truth paragraph boxes and texts, column by column.
    pub paragraphs: Vec<TextBlock>,
    pub columns: usize,
    pub image: RgbImage,
}

/// Lays out justified paragraphs in `columns` equal columns and draws them.
pub fn synth_page(
    id: &str,
    columns: usize,
    style: &PageStyle,
    generator: &TextGenerator,
    font: &FontFace,
    seed: u64,
) -> Result<SyntheticPage> {
    if !(1..=4).contains(&columns) {
        return Err(Error::InvalidArgument(format!("{columns} columns not supported")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(&[id.as_bytes()]));
    let size = rng.random_range(style.font_sizes.0..=style.font_sizes.1);
    let h = (1.2 * size as f64).ceil() as u32;
    let lead = (0.25 * h as f64).round() as u32;
    let para_gap = h + lead;
    let gutter = (2.5 * h as f64).ceil() as u32;
    let space = font.text_width(" ", size).ceil().max(2.0) as u32;
    let max_gap = (1.2 * h as f64) as u32;

    let usable_w = style.page_w - 2 * style.margin;
    let col_w = (usable_w - (columns as u32 - 1) * gutter) / columns as u32;
    let fill = rng.random_range(style.fill.0..=style.fill.1);
    let bottom_limit = style.margin + ((style.page_h - 2 * style.margin) as f64 * fill) as u32;

    let mut words_out: Vec<TextBlock> = Vec::new();
    let mut paragraphs = Vec::new();
    for col in 0..columns as u32 {
        let x0 = style.margin + col * (col_w + gutter);
        let mut y = style.margin;
        let mut placed_paras = 0;
        loop {
            let n_lines = rng.random_range(3..=6);
            let needed = n_lines * (h + lead);
            if y + needed > bottom_limit && placed_paras >= 2 {
                break;
            }
            if y + needed > style.page_h - style.margin {
                break;
            }
            let pool = generator.words(&mut rng, n_lines as usize * 14);
            let mut pool = pool.into_iter().peekable();
            let mut para_words: Vec<TextBlock> = Vec::new();
            for line in 0..n_lines {
                let last = line + 1 == n_lines;
                let mut line_words: Vec<(String, u32)> = Vec::new();
                let mut used = 0u32;
                while let Some(w) = pool.peek() {
                    let ww = font.text_width(w, size).ceil() as u32;
                    if ww > col_w {
                        pool.next();
                        continue;
                    }
                    let extra = if line_words.is_empty() { ww } else { space + ww };
                    if used + extra > col_w {
                        break;
                    }
                    used += extra;
                    line_words.push((pool.next().expect("peeked"), ww));
                    if last && line_words.len() >= 3 && rng.random_bool(0.25) {
                        break;
                    }
                }
                if line_words.is_empty() {
                    break;
                }
                let gaps = line_words.len() as u32 - 1;
                let slack = col_w - used;
                let justify = !last && gaps > 0 && space + slack / gaps <= max_gap;
                let mut x = x0;
                for (k, (w, ww)) in line_words.into_iter().enumerate() {
                    para_words.push(TextBlock::new(BBox::new(x, y, ww, h)?, w));
                    let mut g = space;
                    if justify {
                        g += slack / gaps + u32::from((k as u32) < slack % gaps);
                    }
                    x += ww + g;
                }
                y += h + lead;
            }
            if para_words.is_empty() {
                break;
            }
            let bbox = para_words[1..].iter().fold(para_words[0].bbox, |a, w| a.union(&w.bbox));
            let text = para_words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>().join(" ");
            paragraphs.push(TextBlock::new(bbox, text));
            words_out.extend(para_words);
            placed_paras += 1;
            y += para_gap - lead;
        }
    }

    let mut image = RgbImage::from_pixel(style.page_w, style.page_h, WHITE);
    let ascent = font.ascent(size);
    let half_leading = (h as f32 - size as f32) / 2.0;
    for w in &words_out {
        let b = w.bbox;
        font.draw_line(&mut image, &w.text, size, b.x as f32, b.y as f32 + half_leading + ascent, b, INK);
    }

    Ok(SyntheticPage {
        annotation: PageAnnotation {
            id: id.to_string(),
            image: format!("images/{id}.png").into(),
            page_w: style.page_w,
            page_h: style.page_h,
            granularity: Granularity::Word,
            blocks: words_out,
        },
        paragraphs,
        columns,
        image: with_paper_tone(image, &mut rng),
    })
}

/// Adds a faint deterministic tint so backgrounds are not perfectly flat.
fn with_paper_tone(mut image: RgbImage, rng: &mut ChaCha8Rng) -> RgbImage {
    let tone: [u8; 3] = [rng.random_range(0..6), rng.random_range(0..6), rng.random_range(0..10)];
    for p in image.pixels_mut() {
        if *p == WHITE {
            *p = Rgb([255 - tone[0], 255 - tone[1], 255 - tone[2]]);
        }
    }
    image
}

/// Writes `n_pages` synthetic word-level pages (1 to 3 columns, cycling)
/// with images and manifest into `dir`.
pub fn write_synthetic_corpus(
    dir: impl AsRef<Path>,
    name: &str,
    style: SourceStyle,
    n_pages: usize,
    seed: u64,
) -> Result<(Corpus, Vec<SyntheticPage>)> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    fs::create_dir_all(&images).at(&images)?;
    let generator = TextGenerator::new(TextGenerator::DEFAULT_VOCAB, seed)?;
    let font = FontFace::bundled();
    let page_style = PageStyle::for_source(style);
    let mut pages = Vec::with_capacity(n_pages);
    for i in 0..n_pages {
        let id = format!("{name}-{i:04}");
        let page = synth_page(&id, 1 + i % 3, &page_style, &generator, &font, seed)?;
        let path = dir.join(&page.annotation.image);
        page.image.save(&path)?;
        pages.push(page);
    }
    let corpus = Corpus {
        name: name.to_string(),
        source_style: style,
        pages: pages.iter().map(|p| p.annotation.clone()).collect(),
    };
    save_corpus(&corpus, dir)?;
    Ok((corpus, pages))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::reconstruct_layout;
    use crate::layout::MergeRule;

    #[test]
    fn text_is_deterministic_and_sized() {
        let a = english_like_text(20_000, 3).unwrap();
        let b = english_like_text(20_000, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.len() >= 20_000);
        assert!(a.contains(" the "));
    }

    #[test]
    fn pages_reconstruct_to_their_paragraphs() {
        let generator = TextGenerator::new(2000, 1).unwrap();
        let font = FontFace::bundled();
        let style = PageStyle::for_source(SourceStyle::FoxLike);
        for columns in 1..=3 {
            let page = synth_page(&format!("p{columns}"), columns, &style, &generator, &font, 9).unwrap();
            assert!(page.paragraphs.len() >= 2 * columns);
            let rec = reconstruct_layout(&page.annotation.blocks, style.page_w, MergeRule::EdgeGap).unwrap();
            assert_eq!(rec.columns, columns);
            assert_eq!(rec.paragraphs.len(), page.paragraphs.len());
            for (got, want) in rec.paragraphs.iter().zip(&page.paragraphs) {
                assert_eq!(got.bbox, want.bbox);
                assert_eq!(got.text, want.text);
            }
        }
    }
}
