//! Word-order perturbation that keeps the visual layout.
//!
//! Lines of similar height exchange their contents, and words inside a line
//! are shuffled and re-laid with the original gap sequence. Word images are
//! moved as crops, so every page keeps exactly the same ink.

use image::{imageops, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{BBox, Granularity, PageAnnotation, TextBlock};
use crate::error::{Error, Result};
use crate::layout::line_members;
use crate::render::inpaint_regions;
use crate::rng::{stream_id, stream_rng};

pub const DEFAULT_HEIGHT_TOLERANCE: f64 = 0.05;
pub const DEFAULT_MAX_ATTEMPTS: usize = 20;

/// Which height the group tolerance is a fraction of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToleranceBase {
    #[default]
    Smaller,
    Larger,
    Representative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbOptions {
    pub tolerance: f64,
    pub tolerance_base: ToleranceBase,
    /// Permutation draws per line group when contents overflow their slots.
    pub max_attempts: usize,
}

impl Default for PerturbOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_HEIGHT_TOLERANCE,
            tolerance_base: ToleranceBase::Smaller,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineGroup {
    pub members: Vec<usize>,
    pub representative: f64,
    pub tolerance: f64,
}

fn within(a: f64, b: f64, tolerance: f64, base: ToleranceBase, representative: f64) -> bool {
    let reference = match base {
        ToleranceBase::Smaller => a.min(b),
        ToleranceBase::Larger => a.max(b),
        ToleranceBase::Representative => representative,
    };
    (a - b).abs() <= tolerance * reference + 1e-12
}

/// Greedy first-fit over heights in descending order. A line joins the first
/// group whose every member is within tolerance of it.
pub fn group_lines(heights: &[f64], tolerance: f64, base: ToleranceBase) -> Vec<LineGroup> {
    let mut order: Vec<usize> = (0..heights.len()).collect();
    order.sort_by(|&a, &b| heights[b].total_cmp(&heights[a]).then(a.cmp(&b)));
    let mut groups: Vec<LineGroup> = Vec::new();
    for i in order {
        let h = heights[i];
        let slot = groups.iter_mut().find(|g| {
            g.members
                .iter()
                .all(|&m| within(heights[m], h, tolerance, base, g.representative))
        });
        match slot {
            Some(g) => g.members.push(i),
            None => groups.push(LineGroup {
                members: vec![i],
                representative: h,
                tolerance,
            }),
        }
    }
    groups
}

/// A text line: its box and the indices of its words, left to right.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    pub bbox: BBox,
    pub words: Vec<usize>,
}

pub fn extract_lines(page: &PageAnnotation) -> Result<Vec<Line>> {
    let boxes: Vec<BBox> = page.blocks.iter().map(|b| b.bbox).collect();
    Ok(line_members(&boxes, page.page_w)?
        .into_iter()
        .map(|words| {
            let bbox = words
                .iter()
                .skip(1)
                .fold(boxes[words[0]], |acc, &i| acc.union(&boxes[i]));
            Line { bbox, words }
        })
        .collect())
}

/// Lays boxes out left to right from the first box's x, in `order`, with the
/// original gap sequence. `boxes` must be sorted by x.
fn relay(boxes: &[BBox], order: &[usize]) -> Vec<BBox> {
    let gaps: Vec<i64> = boxes
        .windows(2)
        .map(|w| (w[1].x as i64 - w[0].right() as i64).max(0))
        .collect();
    let mut x = boxes.first().map_or(0, |b| b.x as i64);
    let mut out = vec![boxes[0]; boxes.len()];
    for (slot, &src) in order.iter().enumerate() {
        out[src] = BBox { x: x as u32, ..boxes[src] };
        x += boxes[src].w as i64 + gaps.get(slot).copied().unwrap_or(0);
    }
    out
}

/// Shuffles the words of one line and re-lays them from the line's left
/// edge. Output is in the new left-to-right order.
pub fn shuffle_words_in_line<R: Rng + ?Sized>(words: &[TextBlock], rng: &mut R) -> Vec<TextBlock> {
    if words.len() < 2 {
        return words.to_vec();
    }
    let mut sorted = words.to_vec();
    sorted.sort_by_key(|w| (w.bbox.x, w.bbox.y));
    let boxes: Vec<BBox> = sorted.iter().map(|w| w.bbox).collect();
    let mut order: Vec<usize> = (0..sorted.len()).collect();
    order.shuffle(rng);
    let placed = relay(&boxes, &order);
    order
        .into_iter()
        .map(|i| TextBlock {
            bbox: placed[i],
            ..sorted[i].clone()
        })
        .collect()
}

/// Result of moving words around a page.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    /// Words in reading order at their new positions.
    pub page: PageAnnotation,
    /// Line slots, unchanged from the source, with indices into `page.blocks`.
    pub lines: Vec<Line>,
    /// `sources[j]` is the original index of `page.blocks[j]`.
    pub sources: Vec<usize>,
}

fn span(boxes: &[BBox], words: &[usize]) -> (u32, u32) {
    let lo = words.iter().map(|&i| boxes[i].x).min().unwrap_or(0);
    let hi = words.iter().map(|&i| boxes[i].right()).max().unwrap_or(0);
    (lo, hi)
}

/// Exchanges line contents within each group. Words keep their offsets
/// relative to their line's top-left corner and are moved into the slot;
/// a line that would leave the page is shifted back inside. When contents
/// would run into the next line on their band (or the page edge), up to
/// `max_attempts` permutations are drawn and the one with the least
/// overhang is kept.
pub fn permute_lines<R: Rng + ?Sized>(
    page: &PageAnnotation,
    lines: &[Line],
    groups: &[LineGroup],
    max_attempts: usize,
    rng: &mut R,
) -> Result<Perturbation> {
    let mut covered = vec![false; lines.len()];
    for g in groups {
        for &m in &g.members {
            if m >= lines.len() || std::mem::replace(&mut covered[m], true) {
                return Err(Error::InvalidArgument("line groups must partition the lines".into()));
            }
        }
    }
    if covered.iter().any(|c| !c) {
        return Err(Error::InvalidArgument("line groups must partition the lines".into()));
    }

    let boxes: Vec<BBox> = page.blocks.iter().map(|b| b.bbox).collect();
    let widths: Vec<u32> = lines
        .iter()
        .map(|l| {
            let (lo, hi) = span(&boxes, &l.words);
            hi - lo
        })
        .collect();

    // right edge a slot's contents may reach without touching another line
    let limits: Vec<u32> = lines
        .iter()
        .map(|slot| {
            lines
                .iter()
                .filter(|o| o.bbox.x >= slot.bbox.right() && o.bbox.vertical_gap(&slot.bbox) == 0)
                .map(|o| o.bbox.x)
                .min()
                .unwrap_or(page.page_w)
        })
        .collect();

    // content[slot] = source line
    let mut content: Vec<usize> = (0..lines.len()).collect();
    for g in groups {
        if g.members.len() < 2 {
            continue;
        }
        let overhang = |perm: &[usize]| -> u64 {
            g.members
                .iter()
                .zip(perm)
                .map(|(&slot, &src)| {
                    (lines[slot].bbox.x + widths[src]).saturating_sub(limits[slot]) as u64
                })
                .sum()
        };
        let mut best: Option<(u64, Vec<usize>)> = None;
        for _ in 0..max_attempts.max(1) {
            let mut perm = g.members.clone();
            perm.shuffle(rng);
            let cost = overhang(&perm);
            if best.as_ref().is_none_or(|(c, _)| cost < *c) {
                best = Some((cost, perm));
            }
            if cost == 0 {
                break;
            }
        }
        let (_, perm) = best.expect("at least one draw");
        for (&slot, src) in g.members.iter().zip(perm) {
            content[slot] = src;
        }
    }

    let mut blocks = Vec::with_capacity(page.blocks.len());
    let mut sources = Vec::with_capacity(page.blocks.len());
    let mut out_lines = Vec::with_capacity(lines.len());
    for (slot, &src) in content.iter().enumerate() {
        let slot_box = lines[slot].bbox;
        let src_line = &lines[src];
        let (lo, hi) = span(&boxes, &src_line.words);
        let mut x0 = slot_box.x as i64;
        let overflow = x0 + (hi - lo) as i64 - page.page_w as i64;
        if overflow > 0 {
            x0 = (x0 - overflow).max(0);
        }
        let dy = slot_box.y as i64 - src_line.bbox.y as i64;

        let mut words: Vec<usize> = src_line.words.clone();
        words.sort_by_key(|&i| (boxes[i].x, boxes[i].y));
        let start = blocks.len();
        for i in words {
            let b = boxes[i];
            let x = (x0 + (b.x - lo) as i64).clamp(0, (page.page_w - b.w.min(page.page_w)) as i64);
            let y = (b.y as i64 + dy).clamp(0, (page.page_h - b.h.min(page.page_h)) as i64);
            blocks.push(TextBlock {
                bbox: BBox {
                    x: x as u32,
                    y: y as u32,
                    ..b
                },
                ..page.blocks[i].clone()
            });
            sources.push(i);
        }
        out_lines.push(Line {
            bbox: slot_box,
            words: (start..blocks.len()).collect(),
        });
    }

    Ok(Perturbation {
        page: PageAnnotation {
            blocks,
            granularity: Granularity::Word,
            ..page.clone()
        },
        lines: out_lines,
        sources,
    })
}

/// Shuffles words inside every line, then exchanges lines within groups.
pub fn perturb_page<R: Rng + ?Sized>(
    page: &PageAnnotation,
    lines: &[Line],
    groups: &[LineGroup],
    options: &PerturbOptions,
    rng: &mut R,
) -> Result<Perturbation> {
    let mut shuffled = page.clone();
    for line in lines {
        let mut words = line.words.clone();
        words.sort_by_key(|&i| (page.blocks[i].bbox.x, page.blocks[i].bbox.y));
        let sorted: Vec<BBox> = words.iter().map(|&i| page.blocks[i].bbox).collect();
        let mut order: Vec<usize> = (0..words.len()).collect();
        order.shuffle(rng);
        let placed = relay(&sorted, &order);
        for (&i, b) in words.iter().zip(placed) {
            shuffled.blocks[i].bbox = b;
        }
    }
    permute_lines(&shuffled, lines, groups, options.max_attempts, rng)
}

#[derive(Debug, Clone)]
pub struct ShuffledPage {
    pub image: RgbImage,
    pub perturbation: Perturbation,
}

/// `n_permutations` shuffled variants of a word-level page. Word crops are
/// pasted at their new positions on the source image with all word regions
/// inpainted. Variant `k` draws from a stream keyed by page id and `k`.
pub fn build_shuffled_set(
    page: &PageAnnotation,
    image: &RgbImage,
    n_permutations: usize,
    seed: u64,
    options: &PerturbOptions,
) -> Result<Vec<ShuffledPage>> {
    if page.granularity != Granularity::Word {
        return Err(Error::InvalidArgument(format!(
            "page {} is not word-level; shuffling needs word boxes",
            page.id
        )));
    }
    if image.dimensions() != (page.page_w, page.page_h) {
        return Err(Error::InvalidArgument(format!(
            "page {} image is {:?}, annotation says {}x{}",
            page.id,
            image.dimensions(),
            page.page_w,
            page.page_h
        )));
    }
    let lines = extract_lines(page)?;
    let heights: Vec<f64> = lines.iter().map(|l| l.bbox.h as f64).collect();
    let groups = group_lines(&heights, options.tolerance, options.tolerance_base);
    let masks: Vec<BBox> = page.blocks.iter().map(|b| b.bbox).collect();
    let background = inpaint_regions(image, &masks)?;
    let crops: Vec<RgbImage> = masks
        .iter()
        .map(|b| imageops::crop_imm(image, b.x, b.y, b.w, b.h).to_image())
        .collect();

    (0..n_permutations)
        .map(|k| {
            let stream = stream_id(&[page.id.as_bytes(), b"shuffle", &(k as u64).to_le_bytes()]);
            let mut rng = stream_rng(seed, stream);
            let perturbation = perturb_page(page, &lines, &groups, options, &mut rng)?;
            let mut canvas = background.clone();
            for (block, &src) in perturbation.page.blocks.iter().zip(&perturbation.sources) {
                imageops::replace(&mut canvas, &crops[src], block.bbox.x as i64, block.bbox.y as i64);
            }
            Ok(ShuffledPage {
                image: canvas,
                perturbation,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use image::Rgb;

    fn bb(x: u32, y: u32, w: u32, h: u32) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn members(groups: &[LineGroup]) -> Vec<Vec<usize>> {
        let mut m: Vec<Vec<usize>> = groups
            .iter()
            .map(|g| {
                let mut v = g.members.clone();
                v.sort();
                v
            })
            .collect();
        m.sort();
        m
    }

    #[test]
    fn grouping_examples() {
        assert_eq!(members(&group_lines(&[20.0, 20.0, 20.0], 0.05, ToleranceBase::Smaller)), vec![vec![0, 1, 2]]);
        assert_eq!(members(&group_lines(&[20.0, 30.0], 0.05, ToleranceBase::Smaller)), vec![vec![0], vec![1]]);
        // 0.9 / 20 = 4.5%
        assert_eq!(
            members(&group_lines(&[20.0, 20.9, 30.0], 0.05, ToleranceBase::Smaller)),
            vec![vec![0, 1], vec![2]]
        );
        assert!(group_lines(&[], 0.05, ToleranceBase::Smaller).is_empty());
    }

    #[test]
    fn tolerance_base_matters_at_the_edge() {
        // |21 - 20| = 1: 5% of 20 is 1.0, 5% of 21 is 1.05
        let h = [21.0, 20.0];
        assert_eq!(group_lines(&h, 0.05, ToleranceBase::Smaller).len(), 1);
        let h = [21.01, 20.0];
        assert_eq!(group_lines(&h, 0.05, ToleranceBase::Smaller).len(), 2);
        assert_eq!(group_lines(&h, 0.05, ToleranceBase::Larger).len(), 1);
    }

    fn word(x: u32, w: u32, t: &str) -> TextBlock {
        TextBlock::new(bb(x, 10, w, 20), t)
    }

    #[test]
    fn two_word_swap_layout() {
        let words = [word(0, 50, "A"), word(60, 30, "B")];
        let mut rng = stream_rng(0, 0);
        loop {
            let out = shuffle_words_in_line(&words, &mut rng);
            if out[0].text == "B" {
                assert_eq!(out[0].bbox, bb(0, 10, 30, 20));
                assert_eq!(out[1].bbox, bb(40, 10, 50, 20));
                assert_eq!(out[1].bbox.right() - out[0].bbox.x, 90);
                break;
            }
        }
    }

    #[test]
    fn single_word_unchanged() {
        let words = [word(7, 50, "A")];
        assert_eq!(shuffle_words_in_line(&words, &mut stream_rng(1, 2)), words.to_vec());
    }

    fn grid_page(rows: &[(u32, u32)]) -> PageAnnotation {
        // rows: (y, height); words 40..=50 wide with 15px gaps, ragged right
        let mut blocks = Vec::new();
        for (r, &(y, h)) in rows.iter().enumerate() {
            let mut x = 10;
            for k in 0..3 - (r as u32 % 2) {
                let w = 40 + k * 5;
                blocks.push(TextBlock::new(bb(x, y, w, h), format!("w{r}_{k}")));
                x += w + 15;
            }
        }
        PageAnnotation {
            id: "grid".into(),
            image: "grid.png".into(),
            page_w: 300,
            page_h: 400,
            granularity: Granularity::Word,
            blocks,
        }
    }

    #[test]
    fn singleton_groups_are_identity() {
        let page = grid_page(&[(10, 20), (60, 30), (120, 40)]);
        let lines = extract_lines(&page).unwrap();
        assert_eq!(lines.len(), 3);
        let groups = group_lines(&lines.iter().map(|l| l.bbox.h as f64).collect::<Vec<_>>(), 0.05, ToleranceBase::Smaller);
        assert_eq!(groups.len(), 3);
        let out = permute_lines(&page, &lines, &groups, 20, &mut stream_rng(3, 3)).unwrap();
        assert_eq!(out.page.blocks, page.blocks);
        assert_eq!(out.sources, (0..page.blocks.len()).collect::<Vec<_>>());
    }

    #[test]
    fn line_exchange_is_reproducible() {
        let page = grid_page(&[(10, 20), (60, 20)]);
        let lines = extract_lines(&page).unwrap();
        let groups = group_lines(&[20.0, 20.0], 0.05, ToleranceBase::Smaller);
        let a = permute_lines(&page, &lines, &groups, 20, &mut stream_rng(5, 1)).unwrap();
        let b = permute_lines(&page, &lines, &groups, 20, &mut stream_rng(5, 1)).unwrap();
        assert_eq!(a, b);
        let slots: Vec<BBox> = a.lines.iter().map(|l| l.bbox).collect();
        assert_eq!(slots, lines.iter().map(|l| l.bbox).collect::<Vec<_>>());
        let mut seen = [false, false];
        for seed in 0..32 {
            let out = permute_lines(&page, &lines, &groups, 20, &mut stream_rng(seed, 1)).unwrap();
            seen[(out.sources[0] != 0) as usize] = true;
        }
        assert_eq!(seen, [true, true], "both orders should occur");
    }

    #[test]
    fn groups_must_partition() {
        let page = grid_page(&[(10, 20), (60, 20)]);
        let lines = extract_lines(&page).unwrap();
        let bad = vec![LineGroup {
            members: vec![0],
            representative: 20.0,
            tolerance: 0.05,
        }];
        assert!(permute_lines(&page, &lines, &bad, 20, &mut stream_rng(0, 0)).is_err());
    }

    #[test]
    fn shuffled_set_moves_crops_only() {
        let page = grid_page(&[(10, 20), (60, 20), (110, 20), (160, 21)]);
        let mut image = RgbImage::from_pixel(300, 400, Rgb([250, 250, 250]));
        for (i, b) in page.blocks.iter().enumerate() {
            for y in b.bbox.y..b.bbox.bottom() {
                for x in b.bbox.x..b.bbox.right() {
                    image.put_pixel(x, y, Rgb([i as u8 * 20, (x % 7) as u8 * 30, (y % 5) as u8 * 40]));
                }
            }
        }
        let opts = PerturbOptions::default();
        let set = build_shuffled_set(&page, &image, 5, 11, &opts).unwrap();
        assert_eq!(set.len(), 5);
        let again = build_shuffled_set(&page, &image, 5, 11, &opts).unwrap();
        for (a, b) in set.iter().zip(&again) {
            assert_eq!(a.image, b.image);
            assert_eq!(a.perturbation, b.perturbation);
        }

        let crop = |img: &RgbImage, b: &BBox| imageops::crop_imm(img, b.x, b.y, b.w, b.h).to_image().into_raw();
        let mut original: Vec<Vec<u8>> = page.blocks.iter().map(|b| crop(&image, &b.bbox)).collect();
        original.sort();
        let mut orders = Vec::new();
        for s in &set {
            let mut moved: Vec<Vec<u8>> = s.perturbation.page.blocks.iter().map(|b| crop(&s.image, &b.bbox)).collect();
            moved.sort();
            assert_eq!(moved, original);
            orders.push(s.perturbation.page.ground_truth());
        }
        orders.sort();
        orders.dedup();
        assert!(orders.len() >= 4, "{orders:?}");
    }
}
