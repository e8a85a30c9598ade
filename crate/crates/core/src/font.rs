//! Text measurement and rasterization.
//!
//! [`FontMetricsModel`] is what the font-size solver consults. Two models
//! ship: [`MonospaceMetrics`], an analytic model used to pin solver
//! behaviour in tests, and [`FontFace`], which measures real glyph advances
//! from a TrueType font and can also draw them.

use std::path::Path;
use std::sync::Arc;

use ab_glyph::{Font, FontArc, GlyphId, PxScale, ScaleFont};
use image::{Rgb, RgbImage};

use crate::corpus::{BBox, LanguageClass};
use crate::error::{Error, IoContext, Result};

static BUNDLED_FONT: &[u8] = include_bytes!("../assets/DejaVuSans.ttf");

/// Identifier of the font compiled into the crate.
pub const BUNDLED_FONT_ID: &str = "bundled:dejavu-sans";

pub const DEFAULT_LINE_HEIGHT_FACTOR: f64 = 1.2;

/// Width buffer applied when estimating wrapped line count.
pub fn buffer_coefficient(language: LanguageClass) -> f64 {
    match language {
        LanguageClass::Latin => 1.05,
        LanguageClass::Logographic => 1.01,
    }
}

pub trait FontMetricsModel: Send + Sync {
    /// Rendered width of `text` on a single line at `size` pixels.
    fn text_width(&self, text: &str, size: u32) -> f64;

    /// Baseline-to-baseline distance at `size` pixels.
    fn line_height(&self, size: u32) -> f64;

    fn beta(&self, language: LanguageClass) -> f64 {
        buffer_coefficient(language)
    }
}

/// Every character advances by `char_width * size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonospaceMetrics {
    pub char_width: f64,
    pub line_height_factor: f64,
}

impl Default for MonospaceMetrics {
    fn default() -> Self {
        Self {
            char_width: 0.6,
            line_height_factor: DEFAULT_LINE_HEIGHT_FACTOR,
        }
    }
}

impl FontMetricsModel for MonospaceMetrics {
    fn text_width(&self, text: &str, size: u32) -> f64 {
        text.chars().count() as f64 * self.char_width * size as f64
    }

    fn line_height(&self, size: u32) -> f64 {
        self.line_height_factor * size as f64
    }
}

/// A TrueType face used both for measurement and for drawing.
#[derive(Clone)]
pub struct FontFace {
    font: FontArc,
    id: Arc<str>,
    line_height_factor: f64,
}

impl std::fmt::Debug for FontFace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FontFace")
            .field("id", &self.id)
            .field("line_height_factor", &self.line_height_factor)
            .finish()
    }
}

impl FontFace {
    pub fn bundled() -> Self {
        let font = FontArc::try_from_slice(BUNDLED_FONT).expect("bundled font parses");
        Self {
            font,
            id: BUNDLED_FONT_ID.into(),
            line_height_factor: DEFAULT_LINE_HEIGHT_FACTOR,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).at(path)?;
        let font = FontArc::try_from_vec(bytes)
            .map_err(|e| Error::Font(format!("{}: {e}", path.display())))?;
        Ok(Self {
            font,
            id: path.display().to_string().into(),
            line_height_factor: DEFAULT_LINE_HEIGHT_FACTOR,
        })
    }

    /// Resolves a font resource id: the bundled id or a file path.
    pub fn load(resource: &str) -> Result<Self> {
        if resource == BUNDLED_FONT_ID {
            Ok(Self::bundled())
        } else {
            Self::from_file(resource)
        }
    }

    pub fn with_line_height_factor(mut self, factor: f64) -> Self {
        self.line_height_factor = factor;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Printable characters of `text` the face cannot draw, in first-seen order.
    pub fn missing_glyphs(&self, text: &str) -> Vec<char> {
        let mut missing = Vec::new();
        for c in text.chars() {
            if c.is_whitespace() || c.is_control() {
                continue;
            }
            if self.font.glyph_id(c) == GlyphId(0) && !missing.contains(&c) {
                missing.push(c);
            }
        }
        missing
    }

    /// Distance from the top of the em box to the baseline at `size`.
    pub fn ascent(&self, size: u32) -> f32 {
        self.font.as_scaled(PxScale::from(size as f32)).ascent()
    }

    /// Draws one line of text with its baseline at `baseline_y`, blending
    /// `ink` over the existing pixels. Pixels outside `clip` are untouched.
    pub fn draw_line(
        &self,
        canvas: &mut RgbImage,
        text: &str,
        size: u32,
        x: f32,
        baseline_y: f32,
        clip: BBox,
        ink: Rgb<u8>,
    ) {
        let scale = PxScale::from(size as f32);
        let scaled = self.font.as_scaled(scale);
        let (cw, ch) = canvas.dimensions();
        let x_lo = clip.x.min(cw);
        let x_hi = clip.right().min(cw);
        let y_lo = clip.y.min(ch);
        let y_hi = clip.bottom().min(ch);

        let mut pen = x;
        for c in text.chars() {
            let id = self.font.glyph_id(c);
            let glyph = id.with_scale_and_position(scale, ab_glyph::point(pen, baseline_y));
            pen += scaled.h_advance(id);
            let Some(outline) = self.font.outline_glyph(glyph) else {
                continue;
            };
            let bounds = outline.px_bounds();
            outline.draw(|gx, gy, coverage| {
                let px = bounds.min.x as i64 + gx as i64;
                let py = bounds.min.y as i64 + gy as i64;
                if px < x_lo as i64 || px >= x_hi as i64 || py < y_lo as i64 || py >= y_hi as i64 {
                    return;
                }
                let coverage = coverage.clamp(0.0, 1.0);
                if coverage <= 0.0 {
                    return;
                }
                let p = canvas.get_pixel_mut(px as u32, py as u32);
                for ch in 0..3 {
                    let bg = p.0[ch] as f32;
                    let fg = ink.0[ch] as f32;
                    p.0[ch] = (bg + (fg - bg) * coverage).round() as u8;
                }
            });
        }
    }
}

impl FontMetricsModel for FontFace {
    fn text_width(&self, text: &str, size: u32) -> f64 {
        let scaled = self.font.as_scaled(PxScale::from(size as f32));
        text.chars()
            .map(|c| scaled.h_advance(self.font.glyph_id(c)) as f64)
            .sum()
    }

    fn line_height(&self, size: u32) -> f64 {
        self.line_height_factor * size as f64
    }
}
