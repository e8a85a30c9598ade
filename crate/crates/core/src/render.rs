//! ZeroSense page composition.
//!
//! A page is rendered by preparing a background (blank, or the source image
//! with its text regions filled in), typesetting each replacement block at
//! its solved font size, and padding the result onto the fixed canvas.

use std::collections::BTreeMap;

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use log::debug;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{count_units, BBox, LanguageClass, PageAnnotation, TextBlock};
use crate::error::{Error, Result};
use crate::font::{FontFace, FontMetricsModel, BUNDLED_FONT_ID, DEFAULT_LINE_HEIGHT_FACTOR};

pub const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
pub const INK: Rgb<u8> = Rgb([0, 0, 0]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResolutionMode {
    Tiny,
    Small,
    Base,
    Large,
}

impl ResolutionMode {
    pub const ALL: [ResolutionMode; 4] = [Self::Tiny, Self::Small, Self::Base, Self::Large];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tiny => "tiny",
            Self::Small => "small",
            Self::Base => "base",
            Self::Large => "large",
        }
    }
}

impl std::str::FromStr for ResolutionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown resolution mode {s:?}")))
    }
}

/// Assumed visual tokens per page for each mode. These are configuration,
/// not measured values; every report records the table it used.
pub fn default_visual_tokens() -> BTreeMap<ResolutionMode, u32> {
    BTreeMap::from([
        (ResolutionMode::Tiny, 64),
        (ResolutionMode::Small, 100),
        (ResolutionMode::Base, 256),
        (ResolutionMode::Large, 400),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Background {
    #[default]
    Blank,
    InpaintedSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderTheta {
    pub canvas_w: u32,
    pub canvas_h: u32,
    pub resolution_mode: ResolutionMode,
    pub visual_tokens_per_mode: BTreeMap<ResolutionMode, u32>,
    pub font_face: String,
    pub line_height_factor: f64,
    pub background: Background,
}

impl Default for RenderTheta {
    fn default() -> Self {
        Self {
            canvas_w: 1280,
            canvas_h: 1280,
            resolution_mode: ResolutionMode::Base,
            visual_tokens_per_mode: default_visual_tokens(),
            font_face: BUNDLED_FONT_ID.to_string(),
            line_height_factor: DEFAULT_LINE_HEIGHT_FACTOR,
            background: Background::Blank,
        }
    }
}

impl RenderTheta {
    pub fn validate(&self) -> Result<()> {
        if self.canvas_w == 0 || self.canvas_h == 0 {
            return Err(Error::InvalidArgument("canvas dimensions must be positive".into()));
        }
        for mode in ResolutionMode::ALL {
            match self.visual_tokens_per_mode.get(&mode) {
                Some(&n) if n > 0 => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "mode {} needs a positive visual token count",
                        mode.name()
                    )))
                }
            }
        }
        if self.line_height_factor <= 0.0 {
            return Err(Error::InvalidArgument("line_height_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn visual_tokens(&self) -> u32 {
        self.visual_tokens_per_mode[&self.resolution_mode]
    }

    pub fn with_mode(&self, mode: ResolutionMode) -> Self {
        Self {
            resolution_mode: mode,
            ..self.clone()
        }
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("theta serializes");
        let digest = Sha256::digest(&json);
        hex::encode(&digest[..8])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub page_id: String,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RenderedPage {
    pub image: RgbImage,
    pub theta: RenderTheta,
    pub text_token_count: u32,
    pub visual_token_count: u32,
    pub provenance: Provenance,
    /// Blocks with replacement text, in canvas coordinates.
    pub blocks: Vec<TextBlock>,
}

impl RenderedPage {
    pub fn meta(&self) -> RenderMeta {
        RenderMeta {
            id: self.provenance.page_id.clone(),
            mode: self.theta.resolution_mode,
            visual_tokens: self.visual_token_count,
            text_tokens: self.text_token_count,
            seed: self.provenance.seed,
            theta_hash: self.theta.hash(),
        }
    }
}

/// One line of `render_meta.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderMeta {
    pub id: String,
    pub mode: ResolutionMode,
    pub visual_tokens: u32,
    pub text_tokens: u32,
    pub seed: u64,
    pub theta_hash: String,
}

impl RenderMeta {
    pub fn compression_ratio(&self) -> f64 {
        self.text_tokens as f64 / self.visual_tokens as f64
    }
}

/// Fills masked pixels by linear interpolation between the nearest unmasked
/// pixels on the same row. A row with unmasked pixels on one side only is
/// filled with that constant; fully masked rows are then filled the same
/// way along columns.
pub fn inpaint_regions(image: &RgbImage, masks: &[BBox]) -> Result<RgbImage> {
    let (w, h) = image.dimensions();
    let mut masked = vec![false; w as usize * h as usize];
    for m in masks {
        if !m.fits_page(w, h) {
            return Err(Error::InvalidArgument(format!(
                "mask {:?} outside {w}x{h} image",
                <[u32; 4]>::from(*m)
            )));
        }
        for y in m.y..m.bottom() {
            let row = y as usize * w as usize;
            masked[row + m.x as usize..row + m.right() as usize].fill(true);
        }
    }
    if masked.iter().all(|&m| m) {
        return Err(Error::InvalidArgument("mask covers the whole image; nothing to interpolate from".into()));
    }

    let mut out = image.clone();
    let mut known = masked.iter().map(|m| !m).collect::<Vec<_>>();
    let idx = |x: u32, y: u32| y as usize * w as usize + x as usize;

    let mut unresolved_rows = Vec::new();
    for y in 0..h {
        let line: Vec<bool> = (0..w).map(|x| known[idx(x, y)]).collect();
        if !line.iter().any(|&k| k) {
            unresolved_rows.push(y);
            continue;
        }
        let pixels: Vec<Rgb<u8>> = (0..w).map(|x| *out.get_pixel(x, y)).collect();
        for (x, p) in fill_line(&line, &pixels) {
            out.put_pixel(x as u32, y, p);
        }
    }
    for &y in &unresolved_rows {
        for x in 0..w {
            known[idx(x, y)] = false;
        }
    }
    for y in 0..h {
        if !unresolved_rows.contains(&y) {
            for x in 0..w {
                known[idx(x, y)] = true;
            }
        }
    }
    if !unresolved_rows.is_empty() {
        for x in 0..w {
            let line: Vec<bool> = (0..h).map(|y| known[idx(x, y)]).collect();
            let pixels: Vec<Rgb<u8>> = (0..h).map(|y| *out.get_pixel(x, y)).collect();
            for (y, p) in fill_line(&line, &pixels) {
                out.put_pixel(x, y as u32, p);
            }
        }
    }
    Ok(out)
}

/// Interpolated values for the unknown entries of one scanline.
fn fill_line(known: &[bool], pixels: &[Rgb<u8>]) -> Vec<(usize, Rgb<u8>)> {
    let n = known.len();
    let mut filled = Vec::new();
    let mut i = 0;
    while i < n {
        if known[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !known[i] {
            i += 1;
        }
        let left = start.checked_sub(1);
        let right = (i < n).then_some(i);
        for j in start..i {
            let p = match (left, right) {
                (Some(l), Some(r)) => {
                    let t = (j - l) as f64 / (r - l) as f64;
                    let a = pixels[l].0;
                    let b = pixels[r].0;
                    Rgb(std::array::from_fn(|c| {
                        (a[c] as f64 + (b[c] as f64 - a[c] as f64) * t).round() as u8
                    }))
                }
                (Some(l), None) => pixels[l],
                (None, Some(r)) => pixels[r],
                (None, None) => unreachable!("line has a known pixel"),
            };
            filled.push((j, p));
        }
    }
    filled
}

/// Greedy line breaking at `size`: whole words for Latin text (over-long
/// words are split by character), characters for logographic text.
pub fn wrap_text(
    text: &str,
    size: u32,
    max_width: f64,
    metrics: &dyn FontMetricsModel,
    language: LanguageClass,
) -> Vec<String> {
    let mut lines: Vec<String> = Vec::new();
    let mut current = String::new();
    let push_char_split = |piece: &str, lines: &mut Vec<String>, current: &mut String| {
        for c in piece.chars() {
            let mut candidate = current.clone();
            candidate.push(c);
            if !current.is_empty() && metrics.text_width(&candidate, size) > max_width {
                lines.push(std::mem::take(current));
                current.push(c);
            } else {
                *current = candidate;
            }
        }
    };
    match language {
        LanguageClass::Latin => {
            for word in text.split_whitespace() {
                let candidate = if current.is_empty() {
                    word.to_string()
                } else {
                    format!("{current} {word}")
                };
                if metrics.text_width(&candidate, size) <= max_width {
                    current = candidate;
                    continue;
                }
                if !current.is_empty() {
                    lines.push(std::mem::take(&mut current));
                }
                if metrics.text_width(word, size) <= max_width {
                    current = word.to_string();
                } else {
                    push_char_split(word, &mut lines, &mut current);
                }
            }
        }
        LanguageClass::Logographic => {
            let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            push_char_split(&compact, &mut lines, &mut current);
        }
    }
    if !current.is_empty() {
        lines.push(current);
    }
    lines
}

/// Renders `text` inside the block's box at its font size. Ink never leaves
/// the box; when greedy wrapping needs more lines than fit, the size is
/// reduced until the text fits.
pub fn typeset_block(
    canvas: &RgbImage,
    block: &TextBlock,
    text: &str,
    font: &FontFace,
    theta: &RenderTheta,
) -> Result<RgbImage> {
    let size = block
        .font_size
        .ok_or_else(|| Error::InvalidArgument("block has no font_size; run analysis first".into()))?;
    let language = block.language.unwrap_or(LanguageClass::Latin);
    if let Some(capacity) = block.capacity {
        let got = count_units(text, language);
        if got != capacity {
            return Err(Error::InvalidArgument(format!(
                "replacement has {got} units but block capacity is {capacity}"
            )));
        }
    }
    let mut out = canvas.clone();
    if text.trim().is_empty() {
        return Ok(out);
    }
    let missing = font.missing_glyphs(text);
    if !missing.is_empty() {
        return Err(Error::MissingGlyphs(missing));
    }

    let font = font.clone().with_line_height_factor(theta.line_height_factor);
    let bbox = block.bbox;
    let mut s = size;
    let lines = loop {
        let lines = wrap_text(text, s, bbox.w as f64, &font, language);
        if lines.len() as f64 * font.line_height(s) <= bbox.h as f64 || s == 1 {
            break lines;
        }
        s -= 1;
    };
    if s != size {
        debug!("typeset shrank font from {size} to {s} to fit {} lines", lines.len());
    }

    let line_h = font.line_height(s) as f32;
    let leading = (line_h - s as f32) / 2.0;
    let ascent = font.ascent(s);
    for (i, line) in lines.iter().enumerate() {
        let top = bbox.y as f32 + i as f32 * line_h + leading;
        font.draw_line(&mut out, line, s, bbox.x as f32, top + ascent, bbox, INK);
    }
    Ok(out)
}

/// Places the image at the top-left of a white canvas, first shrinking it
/// uniformly if either side exceeds the canvas.
pub fn pad_to_canvas(image: &RgbImage, theta: &RenderTheta) -> RgbImage {
    let (w, h) = image.dimensions();
    let (cw, ch) = (theta.canvas_w, theta.canvas_h);
    if (w, h) == (cw, ch) {
        return image.clone();
    }
    let content = if w <= cw && h <= ch {
        image.clone()
    } else {
        let (nw, nh) = scaled_dims(w, h, cw, ch);
        imageops::resize(image, nw, nh, FilterType::Triangle)
    };
    let mut canvas = RgbImage::from_pixel(cw, ch, WHITE);
    imageops::replace(&mut canvas, &content, 0, 0);
    canvas
}

/// Dimensions after uniform downscaling to fit `(cw, ch)`; identity when it already fits.
pub fn scaled_dims(w: u32, h: u32, cw: u32, ch: u32) -> (u32, u32) {
    if w <= cw && h <= ch {
        return (w, h);
    }
    let scale = (cw as f64 / w as f64).min(ch as f64 / h as f64);
    let nw = ((w as f64 * scale).round() as u32).clamp(1, cw);
    let nh = ((h as f64 * scale).round() as u32).clamp(1, ch);
    (nw, nh)
}

/// Maps a box through a uniform downscale, clamped to the canvas.
pub fn scale_box(b: &BBox, scale: f64, cw: u32, ch: u32) -> BBox {
    let x = ((b.x as f64 * scale).floor() as u32).min(cw - 1);
    let y = ((b.y as f64 * scale).floor() as u32).min(ch - 1);
    let r = ((b.right() as f64 * scale).ceil() as u32).clamp(x + 1, cw);
    let bt = ((b.bottom() as f64 * scale).ceil() as u32).clamp(y + 1, ch);
    BBox {
        x,
        y,
        w: r - x,
        h: bt - y,
    }
}

/// Composes one ZeroSense page. `replacements[i]` replaces block `i`.
pub fn render_zerosense_page(
    page: &PageAnnotation,
    replacements: &[String],
    theta: &RenderTheta,
    font: &FontFace,
    source: Option<&RgbImage>,
    seed: u64,
) -> Result<RenderedPage> {
    theta.validate()?;
    if replacements.len() != page.blocks.len() {
        return Err(Error::InvalidArgument(format!(
            "page {} has {} blocks but {} replacements",
            page.id,
            page.blocks.len(),
            replacements.len()
        )));
    }
    let mut canvas = match theta.background {
        Background::Blank => RgbImage::from_pixel(page.page_w, page.page_h, WHITE),
        Background::InpaintedSource => {
            let src = source.ok_or_else(|| {
                Error::InvalidArgument("inpainted background needs the source image".into())
            })?;
            if src.dimensions() != (page.page_w, page.page_h) {
                return Err(Error::InvalidArgument(format!(
                    "source image is {:?}, annotation says {}x{}",
                    src.dimensions(),
                    page.page_w,
                    page.page_h
                )));
            }
            let masks: Vec<BBox> = page.blocks.iter().map(|b| b.bbox).collect();
            inpaint_regions(src, &masks)?
        }
    };

    let mut text_tokens = 0;
    for (block, text) in page.blocks.iter().zip(replacements) {
        canvas = typeset_block(&canvas, block, text, font, theta)?;
        text_tokens += block
            .capacity
            .unwrap_or_else(|| count_units(text, block.language.unwrap_or(LanguageClass::Latin)));
    }

    let (nw, _) = scaled_dims(page.page_w, page.page_h, theta.canvas_w, theta.canvas_h);
    let scale = nw as f64 / page.page_w as f64;
    let blocks = page
        .blocks
        .iter()
        .zip(replacements)
        .map(|(b, text)| TextBlock {
            bbox: if scale < 1.0 {
                scale_box(&b.bbox, scale, theta.canvas_w, theta.canvas_h)
            } else {
                b.bbox
            },
            text: text.clone(),
            ..b.clone()
        })
        .collect();

    Ok(RenderedPage {
        image: pad_to_canvas(&canvas, theta),
        theta: theta.clone(),
        text_token_count: text_tokens,
        visual_token_count: theta.visual_tokens(),
        provenance: Provenance {
            page_id: page.id.clone(),
            seed,
        },
        blocks,
    })
}

/// Text tokens per visual token across a page sequence.
pub fn compression_ratio(text_tokens: u32, pages: &[RenderedPage]) -> Result<f64> {
    let visual: Vec<u32> = pages.iter().map(|p| p.visual_token_count).collect();
    compression_ratio_from_counts(text_tokens, &visual)
}

pub fn compression_ratio_from_counts(text_tokens: u32, visual_tokens: &[u32]) -> Result<f64> {
    let total: u64 = visual_tokens.iter().map(|&v| v as u64).sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no visual tokens".into()));
    }
    Ok(text_tokens as f64 / total as f64)
}

/// Encodes an image as PNG bytes.
pub fn encode_png(image: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    image.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}
