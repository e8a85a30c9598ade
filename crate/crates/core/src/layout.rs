//! Render-configuration extraction from annotations.
//!
//! Word boxes are grouped into paragraphs with a vertical projection profile
//! (to split columns) followed by greedy neighbourhood merging. Each
//! paragraph then gets the largest font size whose wrapped rendering fits
//! its box, plus a language-aware capacity.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    count_units, detect_language, BBox, Granularity, LanguageClass, PageAnnotation, TextBlock,
    DEFAULT_ASCII_THRESHOLD, MIN_FONT_SIZE,
};
use crate::error::{Error, Result};
use crate::font::FontMetricsModel;

/// Boxes at or below this height are ignored when estimating line height.
pub const MIN_BOX_HEIGHT: u32 = 8;

/// Largest font size the solver will consider.
pub const MAX_FONT_SIZE: u32 = 100;

/// How the vertical half of the merge predicate measures distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeRule {
    /// Gap between the boxes' vertical extents (zero when they overlap).
    /// Consecutive lines of a paragraph merge; this is the paragraph default.
    #[default]
    EdgeGap,
    /// Distance between vertical centres. Never joins two distinct text
    /// lines, so it reconstructs line boxes.
    CenterBand,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutParams {
    pub unified_line_height: f64,
    pub noise_threshold: f64,
    pub min_gap: f64,
    pub merge_dy_factor: f64,
    pub merge_dx_factor: f64,
    pub rule: MergeRule,
}

impl LayoutParams {
    pub fn from_unified_height(h: f64, rule: MergeRule) -> Self {
        Self {
            unified_line_height: h,
            noise_threshold: 3.0 * h,
            min_gap: 0.8 * h,
            merge_dy_factor: 0.5,
            merge_dx_factor: 1.5,
            rule,
        }
    }

    pub fn for_boxes<'a>(boxes: impl IntoIterator<Item = &'a BBox>, rule: MergeRule) -> Result<Self> {
        Ok(Self::from_unified_height(unified_line_height(boxes)?, rule))
    }

    pub fn mergeable(&self, u: &BBox, v: &BBox) -> bool {
        let h = self.unified_line_height;
        let dy = match self.rule {
            MergeRule::EdgeGap => u.vertical_gap(v) as f64,
            MergeRule::CenterBand => (u.y_center() - v.y_center()).abs(),
        };
        dy < h * self.merge_dy_factor && (u.horizontal_gap(v) as f64) < h * self.merge_dx_factor
    }
}

/// Median height of boxes taller than [`MIN_BOX_HEIGHT`].
pub fn unified_line_height<'a>(boxes: impl IntoIterator<Item = &'a BBox>) -> Result<f64> {
    let mut heights: Vec<u32> = boxes
        .into_iter()
        .map(|b| b.h)
        .filter(|&h| h > MIN_BOX_HEIGHT)
        .collect();
    if heights.is_empty() {
        return Err(Error::Layout(format!(
            "no box taller than {MIN_BOX_HEIGHT}px; unified line height undefined"
        )));
    }
    heights.sort_unstable();
    let n = heights.len();
    Ok(if n % 2 == 1 {
        heights[n / 2] as f64
    } else {
        (heights[n / 2 - 1] as f64 + heights[n / 2] as f64) / 2.0
    })
}

/// Per-column sum of the heights of all boxes covering that column.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionProfile {
    pub values: Vec<f64>,
}

impl ProjectionProfile {
    pub fn accumulate<'a>(boxes: impl IntoIterator<Item = &'a BBox>, page_w: u32) -> Self {
        let mut values = vec![0.0; page_w as usize];
        for b in boxes {
            let end = b.right().min(page_w) as usize;
            for v in &mut values[(b.x as usize).min(end)..end] {
                *v += b.h as f64;
            }
        }
        Self { values }
    }

    /// Interior runs `[start, end)` below `threshold` that are at least
    /// `min_width` wide. Runs touching either page edge are margins, not gaps.
    pub fn gaps(&self, threshold: f64, min_width: f64) -> Vec<(usize, usize)> {
        let mut gaps = Vec::new();
        let n = self.values.len();
        let mut x = 0;
        while x < n {
            if self.values[x] < threshold {
                let start = x;
                while x < n && self.values[x] < threshold {
                    x += 1;
                }
                if start > 0 && x < n && (x - start) as f64 >= min_width {
                    gaps.push((start, x));
                }
            } else {
                x += 1;
            }
        }
        gaps
    }
}

/// Splits box indices into columns. Column boundaries sit at the midpoint of
/// each qualifying gap; a box belongs to the column holding its x-centre.
pub fn split_columns(boxes: &[BBox], page_w: u32, params: &LayoutParams) -> Vec<Vec<usize>> {
    let profile = ProjectionProfile::accumulate(boxes, page_w);
    let cuts: Vec<f64> = profile
        .gaps(params.noise_threshold, params.min_gap)
        .into_iter()
        .map(|(s, e)| (s + e) as f64 / 2.0)
        .collect();
    let mut columns = vec![Vec::new(); cuts.len() + 1];
    for (i, b) in boxes.iter().enumerate() {
        let col = cuts.iter().take_while(|&&c| b.x_center() >= c).count();
        columns[col].push(i);
    }
    columns.retain(|c| !c.is_empty());
    columns
}

/// Greedy merge within one column: pop the first remaining box, absorb any
/// mergeable neighbour (re-scanning after every absorption), emit, repeat.
/// Passes repeat until no two outputs are mergeable.
fn merge_column(boxes: &[BBox], members: &[usize], params: &LayoutParams) -> Vec<(BBox, Vec<usize>)> {
    let mut groups: Vec<(BBox, Vec<usize>)> = members.iter().map(|&i| (boxes[i], vec![i])).collect();
    loop {
        let before = groups.len();
        let mut remaining = std::mem::take(&mut groups);
        remaining.reverse();
        while let Some((mut u, mut idx)) = remaining.pop() {
            'rescan: loop {
                // remaining is reversed, so scan from the back to keep input order
                for k in (0..remaining.len()).rev() {
                    if params.mergeable(&u, &remaining[k].0) {
                        let (v, vidx) = remaining.remove(k);
                        u = u.union(&v);
                        idx.extend(vidx);
                        continue 'rescan;
                    }
                }
                break;
            }
            groups.push((u, idx));
        }
        if groups.len() == before {
            return groups;
        }
    }
}

/// Orders constituents by line band (centre distance below half the unified
/// height), then left to right.
pub fn reading_order(boxes: &[BBox], members: &[usize], unified_height: f64) -> Vec<usize> {
    let mut by_y: Vec<usize> = members.to_vec();
    by_y.sort_by(|&a, &b| {
        boxes[a]
            .y_center()
            .total_cmp(&boxes[b].y_center())
            .then(boxes[a].x.cmp(&boxes[b].x))
    });
    let mut lines: Vec<Vec<usize>> = Vec::new();
    let mut anchor = f64::NEG_INFINITY;
    for i in by_y {
        let yc = boxes[i].y_center();
        match lines.last_mut() {
            Some(line) if (yc - anchor).abs() < 0.5 * unified_height => line.push(i),
            _ => {
                anchor = yc;
                lines.push(vec![i]);
            }
        }
    }
    lines
        .into_iter()
        .flat_map(|mut line| {
            line.sort_by_key(|&i| (boxes[i].x, boxes[i].y));
            line
        })
        .collect()
}

/// Joins text pieces with a space unless both sides of the seam are non-ASCII.
pub fn join_texts<'a>(pieces: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for piece in pieces {
        let piece = piece.trim();
        if piece.is_empty() {
            continue;
        }
        if let (Some(a), Some(b)) = (out.chars().last(), piece.chars().next()) {
            if a.is_ascii() || b.is_ascii() {
                out.push(' ');
            }
        }
        out.push_str(piece);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub paragraphs: Vec<TextBlock>,
    pub columns: usize,
    pub params: LayoutParams,
}

/// Merges word boxes into paragraph (or, with [`MergeRule::CenterBand`],
/// line) boxes. Output is ordered column by column, top to bottom.
pub fn reconstruct_layout(blocks: &[TextBlock], page_w: u32, rule: MergeRule) -> Result<Reconstruction> {
    if blocks.is_empty() {
        return Err(Error::Layout("no boxes to reconstruct".into()));
    }
    let boxes: Vec<BBox> = blocks.iter().map(|b| b.bbox).collect();
    let params = LayoutParams::for_boxes(&boxes, rule)?;
    let columns = split_columns(&boxes, page_w, &params);

    let mut paragraphs = Vec::new();
    for column in &columns {
        let mut merged = merge_column(&boxes, column, &params);
        merged.sort_by_key(|(b, _)| (b.y, b.x));
        for (bbox, members) in merged {
            let order = reading_order(&boxes, &members, params.unified_line_height);
            let text = join_texts(order.iter().map(|&i| blocks[i].text.as_str()));
            paragraphs.push(TextBlock::new(bbox, text));
        }
    }
    Ok(Reconstruction {
        paragraphs,
        columns: columns.len(),
        params,
    })
}

/// Indices of the boxes on each text line, column by column and top to
/// bottom, each line ordered left to right.
pub fn line_members(boxes: &[BBox], page_w: u32) -> Result<Vec<Vec<usize>>> {
    if boxes.is_empty() {
        return Err(Error::Layout("no boxes to group into lines".into()));
    }
    let params = LayoutParams::for_boxes(boxes, MergeRule::CenterBand)?;
    let mut lines = Vec::new();
    for column in split_columns(boxes, page_w, &params) {
        let mut merged = merge_column(boxes, &column, &params);
        merged.sort_by_key(|(b, _)| (b.y, b.x));
        for (_, mut members) in merged {
            members.sort_by_key(|&i| (boxes[i].x, boxes[i].y));
            lines.push(members);
        }
    }
    Ok(lines)
}

pub fn reconstruct_paragraphs(blocks: &[TextBlock], page_w: u32) -> Result<Vec<TextBlock>> {
    Ok(reconstruct_layout(blocks, page_w, MergeRule::EdgeGap)?.paragraphs)
}

/// Lines needed to hold `text` at `size` inside a box `box_w` wide.
pub fn required_lines(
    text: &str,
    size: u32,
    box_w: u32,
    metrics: &dyn FontMetricsModel,
    language: LanguageClass,
) -> u32 {
    let w_sim = metrics.text_width(text, size);
    let lines = (w_sim * metrics.beta(language) / box_w as f64).floor() + 1.0;
    lines.max(1.0) as u32
}

/// Whether `text` at `size` fits `bbox` under the wrapped-height constraint.
pub fn fits(
    text: &str,
    bbox: &BBox,
    size: u32,
    metrics: &dyn FontMetricsModel,
    language: LanguageClass,
) -> bool {
    let n = required_lines(text, size, bbox.w, metrics, language);
    n as f64 * metrics.line_height(size) <= bbox.h as f64
}

/// Largest integer font size in `[8, min(h, 100)]` whose wrapped rendering
/// fits the box; 8 when nothing fits.
pub fn solve_font_size(
    text: &str,
    bbox: &BBox,
    metrics: &dyn FontMetricsModel,
    language: LanguageClass,
) -> Result<u32> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    if bbox.w == 0 || bbox.h == 0 {
        return Err(Error::InvalidArgument("bbox must have positive size".into()));
    }
    let start = bbox.h.min(MAX_FONT_SIZE);
    Ok((MIN_FONT_SIZE..=start)
        .rev()
        .find(|&s| fits(text, bbox, s, metrics, language))
        .unwrap_or(MIN_FONT_SIZE))
}

pub fn compute_capacity(text: &str, language: LanguageClass) -> u32 {
    count_units(text, language)
}

#[derive(Debug, Clone, Copy)]
pub struct ThetaOptions {
    pub ascii_threshold: f64,
    pub rule: MergeRule,
}

impl Default for ThetaOptions {
    fn default() -> Self {
        Self {
            ascii_threshold: DEFAULT_ASCII_THRESHOLD,
            rule: MergeRule::EdgeGap,
        }
    }
}

/// Fills font size, capacity and language on every block, reconstructing
/// paragraphs first for word-level pages. Empty-text blocks are dropped.
pub fn extract_theta(
    page: &PageAnnotation,
    metrics: &dyn FontMetricsModel,
    options: &ThetaOptions,
) -> Result<PageAnnotation> {
    let non_empty: Vec<TextBlock> = page
        .blocks
        .iter()
        .enumerate()
        .filter_map(|(i, b)| {
            if b.text.trim().is_empty() {
                warn!("page {}: block {i} has empty text; skipped", page.id);
                None
            } else {
                Some(b.clone())
            }
        })
        .collect();

    let blocks = match page.granularity {
        Granularity::Word if !non_empty.is_empty() => {
            reconstruct_layout(&non_empty, page.page_w, options.rule)?.paragraphs
        }
        _ => non_empty,
    };

    let blocks = blocks
        .into_iter()
        .map(|mut b| {
            let language = detect_language(&b.text, options.ascii_threshold)?;
            b.language = Some(language);
            b.capacity = Some(compute_capacity(&b.text, language));
            b.font_size = Some(solve_font_size(&b.text, &b.bbox, metrics, language)?);
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(PageAnnotation {
        granularity: Granularity::Paragraph,
        blocks,
        ..page.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::font::MonospaceMetrics;

    fn bb(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn word(x: u32, y: u32, w: u32, h: u32, t: &str) -> TextBlock {
        TextBlock::new(bb(x, y, w, h), t)
    }

    #[test]
    fn one_line_merges_into_union() {
        // H = 20, gaps of 10 = 0.5 H
        let words = [word(10, 50, 40, 20, "a"), word(60, 50, 30, 20, "b"), word(100, 50, 50, 20, "c")];
        let out = reconstruct_paragraphs(&words, 300).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].bbox, bb(10, 50, 140, 20));
        assert_eq!(out[0].text, "a b c");
    }

    #[test]
    fn zero_density_run_splits_columns() {
        // two stacks of boxes separated by a 40px (2 H) empty run
        let mut words = Vec::new();
        for row in 0..4 {
            let y = 10 + row * 24;
            words.push(word(10, y, 100, 20, "left"));
            words.push(word(150, y, 100, 20, "right"));
        }
        let rec = reconstruct_layout(&words, 300, MergeRule::EdgeGap).unwrap();
        assert_eq!(rec.columns, 2);
        assert_eq!(rec.paragraphs.len(), 2);
        assert_eq!(rec.paragraphs[0].bbox, bb(10, 10, 100, 92));
        assert_eq!(rec.paragraphs[1].bbox, bb(150, 10, 100, 92));
    }

    #[test]
    fn single_box_is_identity() {
        let words = [word(5, 5, 30, 12, "solo")];
        let out = reconstruct_paragraphs(&words, 100).unwrap();
        assert_eq!(out, vec![word(5, 5, 30, 12, "solo")]);
    }

    #[test]
    fn undefined_unified_height() {
        let words = [word(5, 5, 30, 8, "tiny")];
        assert!(matches!(reconstruct_paragraphs(&words, 100), Err(Error::Layout(_))));
        assert!(reconstruct_paragraphs(&[], 100).is_err());
    }

    #[test]
    fn center_band_keeps_lines_apart() {
        let words = [word(0, 0, 40, 20, "l1"), word(0, 24, 40, 20, "l2")];
        let lines = reconstruct_layout(&words, 100, MergeRule::CenterBand).unwrap();
        assert_eq!(lines.paragraphs.len(), 2);
        let paras = reconstruct_layout(&words, 100, MergeRule::EdgeGap).unwrap();
        assert_eq!(paras.paragraphs.len(), 1);
        assert_eq!(paras.paragraphs[0].text, "l1 l2");
    }

    #[test]
    fn reading_order_is_line_then_x() {
        let words = [
            word(60, 24, 30, 20, "d"),
            word(0, 0, 40, 20, "a"),
            word(0, 24, 40, 20, "c"),
            word(50, 1, 30, 20, "b"),
        ];
        let out = reconstruct_paragraphs(&words, 200).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text, "a b c d");
    }

    #[test]
    fn logographic_pieces_join_without_spaces() {
        assert_eq!(join_texts(["你好", "世界"]), "你好世界");
        assert_eq!(join_texts(["hello", "世界"]), "hello 世界");
    }

    #[test]
    fn solver_hello_world() {
        let m = MonospaceMetrics::default();
        let s = solve_font_size("HELLO WORLD", &bb(0, 0, 200, 40), &m, LanguageClass::Latin).unwrap();
        assert_eq!(s, 28);
    }

    #[test]
    fn solver_single_char_height_bound() {
        let m = MonospaceMetrics::default();
        let s = solve_font_size("A", &bb(0, 0, 100, 100), &m, LanguageClass::Latin).unwrap();
        assert_eq!(s, 83);
    }

    #[test]
    fn solver_fallback() {
        let m = MonospaceMetrics::default();
        let text = "x".repeat(500);
        assert_eq!(solve_font_size(&text, &bb(0, 0, 20, 10), &m, LanguageClass::Latin).unwrap(), 8);
        assert!(matches!(
            solve_font_size("  ", &bb(0, 0, 20, 10), &m, LanguageClass::Latin),
            Err(Error::EmptyText)
        ));
    }

    #[test]
    fn capacity_counts() {
        assert_eq!(compute_capacity("hello world foo", LanguageClass::Latin), 3);
        assert_eq!(compute_capacity("你好世界", LanguageClass::Logographic), 4);
        assert_eq!(compute_capacity("", LanguageClass::Latin), 0);
        assert_eq!(compute_capacity("", LanguageClass::Logographic), 0);
    }

    #[test]
    fn theta_for_paragraph_page() {
        let page = PageAnnotation {
            id: "p".into(),
            image: "p.png".into(),
            page_w: 400,
            page_h: 400,
            granularity: Granularity::Paragraph,
            blocks: vec![
                word(0, 0, 200, 40, "HELLO WORLD"),
                word(0, 100, 100, 100, "A"),
                word(0, 300, 100, 20, "   "),
            ],
        };
        let out = extract_theta(&page, &MonospaceMetrics::default(), &ThetaOptions::default()).unwrap();
        assert_eq!(out.blocks.len(), 2);
        assert_eq!(out.blocks[0].font_size, Some(28));
        assert_eq!(out.blocks[0].capacity, Some(2));
        assert_eq!(out.blocks[0].language, Some(LanguageClass::Latin));
        assert_eq!(out.blocks[1].font_size, Some(83));
    }

    #[test]
    fn theta_for_word_page_reconstructs_first() {
        let page = PageAnnotation {
            id: "p".into(),
            image: "p.png".into(),
            page_w: 300,
            page_h: 100,
            granularity: Granularity::Word,
            blocks: vec![word(10, 50, 40, 20, "ab"), word(60, 50, 30, 20, "cd")],
        };
        let out = extract_theta(&page, &MonospaceMetrics::default(), &ThetaOptions::default()).unwrap();
        assert_eq!(out.granularity, Granularity::Paragraph);
        assert_eq!(out.blocks.len(), 1);
        assert_eq!(out.blocks[0].text, "ab cd");
        assert_eq!(out.blocks[0].capacity, Some(2));
        let expected = solve_font_size("ab cd", &bb(10, 50, 80, 20), &MonospaceMetrics::default(), LanguageClass::Latin).unwrap();
        assert_eq!(out.blocks[0].font_size, Some(expected));
    }

    #[test]
    fn sparse_page_is_one_column() {
        // a single line never reaches T_noise = 3 H, so the whole width is one
        // sub-threshold run touching both margins
        let words = [word(10, 10, 30, 20, "a"), word(120, 10, 30, 20, "b")];
        let rec = reconstruct_layout(&words, 200, MergeRule::EdgeGap).unwrap();
        assert_eq!(rec.columns, 1);
        assert_eq!(rec.paragraphs.len(), 2);
    }
}
