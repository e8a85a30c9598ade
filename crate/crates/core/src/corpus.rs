//! Domain types shared by every stage, plus manifest ingestion.
//!
//! A corpus directory holds an `annotations.jsonl` manifest (one page per
//! line), the PNG images it references, and an optional `corpus.json`
//! sidecar carrying the corpus name and source style.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FILE: &str = "annotations.jsonl";
pub const THETA_MANIFEST_FILE: &str = "annotations.theta.jsonl";
pub const CORPUS_META_FILE: &str = "corpus.json";

/// Default ASCII-density threshold separating Latin from logographic text.
pub const DEFAULT_ASCII_THRESHOLD: f64 = 0.8;

/// Minimum font size a block may carry, in pixels.
pub const MIN_FONT_SIZE: u32 = 8;

/// Axis-aligned pixel box `(x, y, w, h)` with a non-zero extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "bbox must have positive size, got {w}x{h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn x_center(&self) -> f64 {
        self.x as f64 + self.w as f64 / 2.0
    }

    pub fn y_center(&self) -> f64 {
        self.y as f64 + self.h as f64 / 2.0
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn union(&self, other: &BBox) -> BBox {
        let x = self.x.min(other.x);
        let y = self.y.min(other.y);
        BBox {
            x,
            y,
            w: self.right().max(other.right()) - x,
            h: self.bottom().max(other.bottom()) - y,
        }
    }

    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x = self.x.max(other.x);
        let y = self.y.max(other.y);
        let r = self.right().min(other.right());
        let b = self.bottom().min(other.bottom());
        (r > x && b > y).then(|| BBox {
            x,
            y,
            w: r - x,
            h: b - y,
        })
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other).map_or(0, |b| b.area());
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }

    /// Horizontal distance between the two boxes; zero when their x-ranges overlap.
    pub fn horizontal_gap(&self, other: &BBox) -> u32 {
        if self.right() <= other.x {
            other.x - self.right()
        } else if other.right() <= self.x {
            self.x - other.right()
        } else {
            0
        }
    }

    /// Vertical distance between the two boxes; zero when their y-ranges overlap.
    pub fn vertical_gap(&self, other: &BBox) -> u32 {
        if self.bottom() <= other.y {
            other.y - self.bottom()
        } else if other.bottom() <= self.y {
            self.y - other.bottom()
        } else {
            0
        }
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    pub fn fits_page(&self, page_w: u32, page_h: u32) -> bool {
        self.right() <= page_w && self.bottom() <= page_h
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = Error;

    fn try_from([x, y, w, h]: [u32; 4]) -> Result<Self> {
        BBox::new(x, y, w, h)
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LanguageClass {
    Latin,
    Logographic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    Word,
    Paragraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceStyle {
    FoxLike,
    OmniLike,
    #[default]
    Custom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBlock {
    pub bbox: BBox,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub font_size: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language: Option<LanguageClass>,
}

impl TextBlock {
    pub fn new(bbox: BBox, text: impl Into<String>) -> Self {
        Self {
            bbox,
            text: text.into(),
            font_size: None,
            capacity: None,
            language: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageAnnotation {
    pub id: String,
    /// Image path relative to the corpus directory.
    pub image: PathBuf,
    pub page_w: u32,
    pub page_h: u32,
    pub granularity: Granularity,
    pub blocks: Vec<TextBlock>,
}

impl PageAnnotation {
    /// Block texts joined in stored order: one paragraph per line, or words
    /// separated by spaces.
    pub fn ground_truth(&self) -> String {
        let sep = match self.granularity {
            Granularity::Paragraph => "\n",
            Granularity::Word => " ",
        };
        self.blocks
            .iter()
            .map(|b| b.text.as_str())
            .collect::<Vec<_>>()
            .join(sep)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub name: String,
    pub source_style: SourceStyle,
    pub pages: Vec<PageAnnotation>,
}

impl Corpus {
    pub fn page(&self, id: &str) -> Option<&PageAnnotation> {
        self.pages.iter().find(|p| p.id == id)
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub manifest: String,
    /// Reject out-of-page boxes instead of clipping them.
    pub strict: bool,
    pub check_images: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            manifest: MANIFEST_FILE.to_string(),
            strict: false,
            check_images: true,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusMeta {
    name: String,
    source_style: SourceStyle,
}

// Manifest records are parsed loosely first so that bad geometry can be
// reported against its record index instead of as an opaque serde error.
#[derive(Debug, Deserialize)]
struct RawPage {
    id: String,
    image: PathBuf,
    page_w: i64,
    page_h: i64,
    granularity: Granularity,
    blocks: Vec<RawBlock>,
}

#[derive(Debug, Deserialize)]
struct RawBlock {
    bbox: [i64; 4],
    text: String,
    #[serde(default)]
    font_size: Option<i64>,
    #[serde(default)]
    capacity: Option<i64>,
    #[serde(default)]
    language: Option<LanguageClass>,
}

pub fn load_corpus(dir: impl AsRef<Path>, options: &LoadOptions) -> Result<Corpus> {
    let dir = dir.as_ref();
    let manifest = dir.join(&options.manifest);
    if !manifest.is_file() {
        return Err(Error::MissingManifest(manifest));
    }
    let reader = BufReader::new(fs::File::open(&manifest).at(&manifest)?);

    let mut pages = Vec::new();
    let mut ids = HashSet::new();
    let mut index = 0;
    for line in reader.lines() {
        let line = line.at(&manifest)?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPage = serde_json::from_str(&line).map_err(|e| Error::Record {
            index,
            reason: e.to_string(),
        })?;
        let page = validate_page(raw, index, options)?;
        if !ids.insert(page.id.clone()) {
            return Err(Error::Record {
                index,
                reason: format!("duplicate page id {:?}", page.id),
            });
        }
        if options.check_images && !dir.join(&page.image).is_file() {
            return Err(Error::Record {
                index,
                reason: format!("image {} does not exist", page.image.display()),
            });
        }
        pages.push(page);
        index += 1;
    }

    let meta_path = dir.join(CORPUS_META_FILE);
    let meta = if meta_path.is_file() {
        serde_json::from_str(&fs::read_to_string(&meta_path).at(&meta_path)?)?
    } else {
        CorpusMeta {
            name: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            source_style: SourceStyle::Custom,
        }
    };

    Ok(Corpus {
        name: meta.name,
        source_style: meta.source_style,
        pages,
    })
}

fn validate_page(raw: RawPage, index: usize, options: &LoadOptions) -> Result<PageAnnotation> {
    let record_err = |reason: String| Error::Record { index, reason };
    if raw.page_w <= 0 || raw.page_h <= 0 || raw.page_w > u32::MAX as i64 || raw.page_h > u32::MAX as i64 {
        return Err(record_err(format!(
            "page size must be positive, got {}x{}",
            raw.page_w, raw.page_h
        )));
    }
    let (page_w, page_h) = (raw.page_w as u32, raw.page_h as u32);
    let page_box = BBox::new(0, 0, page_w, page_h)?;

    let mut blocks = Vec::with_capacity(raw.blocks.len());
    for (bi, rb) in raw.blocks.into_iter().enumerate() {
        let [x, y, w, h] = rb.bbox;
        if w <= 0 || h <= 0 {
            return Err(record_err(format!(
                "block {bi}: bbox must have positive size, got w={w} h={h}"
            )));
        }
        let inside = x >= 0 && y >= 0 && x + w <= raw.page_w && y + h <= raw.page_h;
        let bbox = if inside {
            BBox::new(x as u32, y as u32, w as u32, h as u32)?
        } else if options.strict {
            return Err(record_err(format!(
                "block {bi}: bbox [{x}, {y}, {w}, {h}] outside page {page_w}x{page_h}"
            )));
        } else {
            let x0 = x.clamp(0, raw.page_w);
            let y0 = y.clamp(0, raw.page_h);
            let x1 = (x + w).clamp(0, raw.page_w);
            let y1 = (y + h).clamp(0, raw.page_h);
            match BBox::new(x0 as u32, y0 as u32, (x1 - x0) as u32, (y1 - y0) as u32)
                .ok()
                .and_then(|b| b.intersection(&page_box))
            {
                Some(clipped) => {
                    warn!(
                        "record {index} ({}), block {bi}: clipped bbox [{x}, {y}, {w}, {h}] to page",
                        raw.id
                    );
                    clipped
                }
                None => {
                    warn!(
                        "record {index} ({}), block {bi}: rejected bbox [{x}, {y}, {w}, {h}] entirely outside page",
                        raw.id
                    );
                    continue;
                }
            }
        };

        let font_size = match rb.font_size {
            Some(s) if s < MIN_FONT_SIZE as i64 || s > u32::MAX as i64 => {
                return Err(record_err(format!(
                    "block {bi}: font_size {s} below minimum {MIN_FONT_SIZE}"
                )))
            }
            s => s.map(|s| s as u32),
        };
        let capacity = match rb.capacity {
            Some(c) if c < 0 || c > u32::MAX as i64 => {
                return Err(record_err(format!("block {bi}: negative capacity {c}")))
            }
            c => c.map(|c| c as u32),
        };
        if let (Some(cap), Some(lang)) = (capacity, rb.language) {
            let expected = count_units(&rb.text, lang);
            if cap != expected {
                return Err(record_err(format!(
                    "block {bi}: capacity {cap} does not match text ({expected} {lang:?} units)"
                )));
            }
        }
        blocks.push(TextBlock {
            bbox,
            text: rb.text,
            font_size,
            capacity,
            language: rb.language,
        });
    }

    Ok(PageAnnotation {
        id: raw.id,
        image: raw.image,
        page_w,
        page_h,
        granularity: raw.granularity,
        blocks,
    })
}

pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    save_corpus_as(corpus, dir, MANIFEST_FILE)
}

pub fn save_corpus_as(corpus: &Corpus, dir: impl AsRef<Path>, manifest: &str) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).at(dir)?;
    let path = dir.join(manifest);
    let mut out = BufWriter::new(fs::File::create(&path).at(&path)?);
    for page in &corpus.pages {
        serde_json::to_writer(&mut out, page)?;
        out.write_all(b"\n").at(&path)?;
    }
    out.flush().at(&path)?;

    let meta_path = dir.join(CORPUS_META_FILE);
    let meta = CorpusMeta {
        name: corpus.name.clone(),
        source_style: corpus.source_style,
    };
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).at(&meta_path)?;
    Ok(())
}

/// Classifies text by the fraction of ASCII characters it contains.
pub fn detect_language(text: &str, ascii_threshold: f64) -> Result<LanguageClass> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::EmptyText);
    }
    let (ascii, total) = text
        .chars()
        .fold((0usize, 0usize), |(a, t), c| (a + c.is_ascii() as usize, t + 1));
    if ascii as f64 / total as f64 >= ascii_threshold {
        Ok(LanguageClass::Latin)
    } else {
        Ok(LanguageClass::Logographic)
    }
}

/// Number of whitespace-delimited words.
pub fn count_words(text: &str) -> u32 {
    text.split_whitespace().count() as u32
}

/// Number of non-whitespace Unicode scalar values.
pub fn count_chars(text: &str) -> u32 {
    text.chars().filter(|c| !c.is_whitespace()).count() as u32
}

/// Language-aware capacity: words for Latin text, characters for logographic text.
pub fn count_units(text: &str, language: LanguageClass) -> u32 {
    match language {
        LanguageClass::Latin => count_words(text),
        LanguageClass::Logographic => count_chars(text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_manifest(dir: &Path, lines: &[&str]) {
        fs::write(dir.join(MANIFEST_FILE), lines.join("\n")).unwrap();
    }

    fn no_images() -> LoadOptions {
        LoadOptions {
            check_images: false,
            ..Default::default()
        }
    }

    #[test]
    fn loads_one_page_two_words() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(
            tmp.path(),
            &[r#"{"id":"p1","image":"p1.png","page_w":100,"page_h":50,"granularity":"word","blocks":[{"bbox":[1,2,10,8],"text":"hello"},{"bbox":[20,2,12,8],"text":"world"}]}"#],
        );
        let corpus = load_corpus(tmp.path(), &no_images()).unwrap();
        assert_eq!(corpus.pages.len(), 1);
        assert_eq!(corpus.pages[0].blocks.len(), 2);
        assert_eq!(corpus.pages[0].granularity, Granularity::Word);
    }

    #[test]
    fn zero_width_bbox_names_record() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(
            tmp.path(),
            &[
                r#"{"id":"a","image":"a.png","page_w":100,"page_h":50,"granularity":"word","blocks":[]}"#,
                r#"{"id":"b","image":"b.png","page_w":100,"page_h":50,"granularity":"word","blocks":[{"bbox":[1,2,0,8],"text":"x"}]}"#,
            ],
        );
        let err = load_corpus(tmp.path(), &no_images()).unwrap_err();
        match err {
            Error::Record { index, reason } => {
                assert_eq!(index, 1);
                assert!(reason.contains("w=0"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_corpus(tmp.path(), &no_images()),
            Err(Error::MissingManifest(_))
        ));
    }

    #[test]
    fn malformed_record_reports_index() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(
            tmp.path(),
            &[
                r#"{"id":"a","image":"a.png","page_w":100,"page_h":50,"granularity":"word","blocks":[]}"#,
                r#"{"id":"b","image":"b.png""#,
            ],
        );
        assert!(matches!(
            load_corpus(tmp.path(), &no_images()),
            Err(Error::Record { index: 1, .. })
        ));
    }

    #[test]
    fn overshoot_is_clipped_or_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(
            tmp.path(),
            &[r#"{"id":"a","image":"a.png","page_w":100,"page_h":50,"granularity":"word","blocks":[{"bbox":[95,45,7,7],"text":"x"},{"bbox":[200,0,5,5],"text":"gone"}]}"#],
        );
        let corpus = load_corpus(tmp.path(), &no_images()).unwrap();
        let blocks = &corpus.pages[0].blocks;
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].bbox, BBox::new(95, 45, 5, 5).unwrap());

        let strict = LoadOptions {
            strict: true,
            ..no_images()
        };
        assert!(matches!(
            load_corpus(tmp.path(), &strict),
            Err(Error::Record { index: 0, .. })
        ));
    }

    #[test]
    fn missing_image_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(
            tmp.path(),
            &[r#"{"id":"a","image":"a.png","page_w":10,"page_h":10,"granularity":"word","blocks":[]}"#],
        );
        assert!(load_corpus(tmp.path(), &LoadOptions::default()).is_err());
    }

    #[test]
    fn capacity_must_match_language() {
        let tmp = tempfile::tempdir().unwrap();
        write_manifest(
            tmp.path(),
            &[r#"{"id":"a","image":"a.png","page_w":100,"page_h":50,"granularity":"paragraph","blocks":[{"bbox":[0,0,50,20],"text":"two words","capacity":3,"language":"latin"}]}"#],
        );
        assert!(load_corpus(tmp.path(), &no_images()).is_err());
    }

    #[test]
    fn empty_blocks_round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = Corpus {
            name: "rt".into(),
            source_style: SourceStyle::OmniLike,
            pages: vec![PageAnnotation {
                id: "p".into(),
                image: "p.png".into(),
                page_w: 10,
                page_h: 10,
                granularity: Granularity::Paragraph,
                blocks: vec![],
            }],
        };
        save_corpus(&corpus, tmp.path()).unwrap();
        let first = fs::read(tmp.path().join(MANIFEST_FILE)).unwrap();
        let loaded = load_corpus(tmp.path(), &no_images()).unwrap();
        assert_eq!(loaded, corpus);
        save_corpus(&loaded, tmp.path()).unwrap();
        assert_eq!(fs::read(tmp.path().join(MANIFEST_FILE)).unwrap(), first);
    }

    #[test]
    fn mixed_script_text_round_trips_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let text = "Visual 压缩 test — ñandú 你好";
        let corpus = Corpus {
            name: "u".into(),
            source_style: SourceStyle::Custom,
            pages: vec![PageAnnotation {
                id: "p".into(),
                image: "p.png".into(),
                page_w: 100,
                page_h: 100,
                granularity: Granularity::Paragraph,
                blocks: vec![TextBlock::new(BBox::new(0, 0, 50, 50).unwrap(), text)],
            }],
        };
        save_corpus(&corpus, tmp.path()).unwrap();
        let loaded = load_corpus(tmp.path(), &no_images()).unwrap();
        assert_eq!(loaded.pages[0].blocks[0].text.as_bytes(), text.as_bytes());
    }

    #[test]
    fn language_detection() {
        assert_eq!(detect_language("hello world", 0.8).unwrap(), LanguageClass::Latin);
        assert_eq!(detect_language("你好世界", 0.8).unwrap(), LanguageClass::Logographic);
        // 3 of 5 characters are ASCII
        assert_eq!(detect_language("abc你好", 0.8).unwrap(), LanguageClass::Logographic);
        assert_eq!(detect_language("abc你好", 0.6).unwrap(), LanguageClass::Latin);
        assert!(matches!(detect_language("   ", 0.8), Err(Error::EmptyText)));
    }

    #[test]
    fn bbox_geometry() {
        let a = BBox::new(0, 0, 10, 10).unwrap();
        let b = BBox::new(15, 5, 10, 10).unwrap();
        assert_eq!(a.horizontal_gap(&b), 5);
        assert_eq!(b.horizontal_gap(&a), 5);
        assert_eq!(a.vertical_gap(&b), 0);
        assert_eq!(a.union(&b), BBox::new(0, 0, 25, 15).unwrap());
        assert_eq!(a.intersection(&b), None);
        assert!((a.iou(&a) - 1.0).abs() < 1e-12);
        assert!(serde_json::from_str::<BBox>("[0,0,0,1]").is_err());
    }
}
