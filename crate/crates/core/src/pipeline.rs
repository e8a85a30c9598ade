//! Directory-level steps: each reads a corpus or result files from disk and
//! writes its outputs to a directory.
//!
//! | step       | reads                               | writes                                   |
//! |------------|-------------------------------------|------------------------------------------|
//! | analyze    | `annotations.jsonl`                 | `annotations.theta.jsonl`                |
//! | generate   | `annotations.theta.jsonl`           | `replacements.jsonl`                     |
//! | render     | theta manifest, replacements        | images, manifest, `render_meta.jsonl`    |
//! | perturb    | word-level manifest and images      | `original/` and `shuffled/` corpora      |
//! | evaluate   | rendered corpus                     | `records.jsonl`                          |
//! | calibrate  | records or a `ratio,precision` CSV  | `calibration.json`                       |
//! | decouple   | records and calibration             | `decoupled.jsonl`                        |
//! | report     | points and records                  | CSV tables and `summary.txt`             |
//! | audit      | `replacements.jsonl`                | `audit.json`                             |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::corpus::{
    count_units, detect_language, load_corpus, save_corpus, save_corpus_as, Corpus, Granularity, LanguageClass,
    LoadOptions, PageAnnotation, TextBlock, THETA_MANIFEST_FILE,
};
use crate::error::{Error, IoContext, Result};
use crate::harness::{
    calibration_points, read_jsonl, run_eval, write_jsonl, write_report, DatasetTag, EvalOptions, EvalRecord,
    ModelClient, RenderedCorpus, ReportInputs, RECORDS_FILE, RENDER_META_FILE,
};
use crate::layout::extract_theta;
use crate::metrics::{fit_ocr_raw, DecoupledPoint, LinearCalibration, StrategyScore};
use crate::perturb::{build_shuffled_set, extract_lines};
use crate::render::{pad_to_canvas, render_zerosense_page, scale_box, scaled_dims, RenderMeta, RenderTheta};
use crate::zerotext::{audit_text_tokens, generate_page_replacements, OracleSet, ProbabilityOracle, VACUUM_CEILING};

pub const REPLACEMENTS_FILE: &str = "replacements.jsonl";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const POINTS_FILE: &str = "decoupled.jsonl";
pub const AUDIT_FILE: &str = "audit.json";
pub const IMAGES_DIR: &str = "images";

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).at(path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn load_image(dir: &Path, page: &PageAnnotation) -> Result<RgbImage> {
    let path = dir.join(&page.image);
    Ok(image::open(&path)
        .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
        .to_rgb8())
}

/// Fills font size, capacity and language for every page of the corpus in
/// `input` and writes the result to `out`. Image paths are made absolute when
/// `out` differs from `input`.
pub fn analyze_dir(input: &Path, out: &Path, config: &Config) -> Result<Corpus> {
    let corpus = load_corpus(input, &LoadOptions::default())?;
    let font = config.render.font()?;
    let options = config.layout.theta_options();
    fs::create_dir_all(out).at(out)?;
    let base = input.canonicalize().at(input)?;
    let same_dir = base == out.canonicalize().at(out)?;
    let pages = pool(config.jobs())?.install(|| {
        corpus
            .pages
            .par_iter()
            .map(|page| {
                let mut analyzed = extract_theta(page, &font, &options)?;
                if !same_dir {
                    analyzed.image = base.join(&page.image);
                }
                Ok(analyzed)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let analyzed = Corpus { pages, ..corpus };
    save_corpus_as(&analyzed, out, THETA_MANIFEST_FILE)?;
    info!("analyzed {} pages into {}", analyzed.pages.len(), out.display());
    Ok(analyzed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedBlock {
    pub text: String,
    pub language: LanguageClass,
}

/// One line of `replacements.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplacementRecord {
    pub id: String,
    pub blocks: Vec<GeneratedBlock>,
    /// Largest threshold any token of the page was drawn under.
    pub max_tau: f64,
    pub relaxations: u32,
    pub fallbacks: usize,
}

struct Oracles {
    latin: Box<dyn ProbabilityOracle>,
    logographic: Option<Box<dyn ProbabilityOracle>>,
}

impl Oracles {
    fn build(config: &Config, for_audit: bool) -> Result<Self> {
        let z = &config.zerotext;
        let latin = match (&z.audit_oracle, for_audit) {
            (Some(audit), true) => audit.build()?,
            _ => z.oracle.build()?,
        };
        let logographic = z.logographic_oracle.as_ref().map(|o| o.build()).transpose()?;
        Ok(Self { latin, logographic })
    }

    fn set(&self) -> Result<OracleSet<'_>> {
        let set = OracleSet::new().with(LanguageClass::Latin, self.latin.as_ref())?;
        match &self.logographic {
            Some(o) => set.with(LanguageClass::Logographic, o.as_ref()),
            None => Ok(set),
        }
    }

    fn get(&self, language: LanguageClass) -> Result<&dyn ProbabilityOracle> {
        match language {
            LanguageClass::Latin => Ok(self.latin.as_ref()),
            LanguageClass::Logographic => self
                .logographic
                .as_deref()
                .ok_or_else(|| Error::Oracle("no logographic oracle configured".into())),
        }
    }
}

fn load_analyzed(dir: &Path) -> Result<Corpus> {
    load_corpus(
        dir,
        &LoadOptions {
            manifest: THETA_MANIFEST_FILE.to_string(),
            ..LoadOptions::default()
        },
    )
}

/// Draws zero-information replacement text for every block of an analyzed corpus.
pub fn generate_dir(analyzed: &Path, out: &Path, config: &Config) -> Result<Vec<ReplacementRecord>> {
    let corpus = load_analyzed(analyzed)?;
    let oracles = Oracles::build(config, false)?;
    let set = oracles.set()?;
    let tau = config.zerotext.tau_init;
    let seed = config.seed;
    let records = pool(config.jobs())?.install(|| {
        corpus
            .pages
            .par_iter()
            .map(|page| {
                let replacements = generate_page_replacements(page, &set, tau, seed)?;
                Ok(ReplacementRecord {
                    id: page.id.clone(),
                    max_tau: replacements.iter().map(|r| r.log.max_tau()).fold(0.0, f64::max),
                    relaxations: replacements.iter().map(|r| r.log.relaxations()).sum(),
                    fallbacks: replacements.iter().map(|r| r.log.fallbacks()).sum(),
                    blocks: page
                        .blocks
                        .iter()
                        .zip(replacements)
                        .map(|(b, r)| GeneratedBlock {
                            text: r.text,
                            language: b.language.unwrap_or(LanguageClass::Latin),
                        })
                        .collect(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    fs::create_dir_all(out).at(out)?;
    write_jsonl(&out.join(REPLACEMENTS_FILE), &records)?;
    let relaxed = records.iter().filter(|r| r.relaxations > 0).count();
    info!("generated {} pages ({relaxed} needed a relaxed threshold)", records.len());
    Ok(records)
}

/// Id of a page accounted under one resolution mode.
pub fn mode_page_id(id: &str, mode: crate::render::ResolutionMode) -> String {
    format!("{id}@{}", mode.name())
}

struct ModeSet {
    pages: Vec<PageAnnotation>,
    meta: Vec<RenderMeta>,
}

/// Expands one image into a page per configured mode, sharing the image file.
fn expand_modes(
    page: &PageAnnotation,
    image: PathBuf,
    blocks: Vec<TextBlock>,
    granularity: Granularity,
    text_tokens: u32,
    theta: &RenderTheta,
    config: &Config,
) -> ModeSet {
    let mut set = ModeSet {
        pages: Vec::new(),
        meta: Vec::new(),
    };
    for &mode in &config.render.modes {
        let t = theta.with_mode(mode);
        let id = mode_page_id(&page.id, mode);
        set.meta.push(RenderMeta {
            id: id.clone(),
            mode,
            visual_tokens: t.visual_tokens(),
            text_tokens,
            seed: config.seed,
            theta_hash: t.hash(),
        });
        set.pages.push(PageAnnotation {
            id,
            image: image.clone(),
            page_w: theta.canvas_w,
            page_h: theta.canvas_h,
            granularity,
            blocks: blocks.clone(),
        });
    }
    set
}

fn save_rendered(out: &Path, name: &str, source: &Corpus, sets: Vec<ModeSet>) -> Result<Corpus> {
    let mut pages = Vec::new();
    let mut meta = Vec::new();
    for s in sets {
        pages.extend(s.pages);
        meta.extend(s.meta);
    }
    let corpus = Corpus {
        name: name.to_string(),
        source_style: source.source_style,
        pages,
    };
    save_corpus(&corpus, out)?;
    write_jsonl(&out.join(RENDER_META_FILE), &meta)?;
    Ok(corpus)
}

/// Typesets every page of an analyzed corpus. With `replacements` the
/// generated text is used; without, each block's own text is typeset under
/// the same parameters, giving the natural-text counterpart.
pub fn render_dir(analyzed: &Path, replacements: Option<&Path>, out: &Path, config: &Config) -> Result<Corpus> {
    let corpus = load_analyzed(analyzed)?;
    let theta = config.render.theta();
    theta.validate()?;
    let font = config.render.font()?;
    let generated: Option<BTreeMap<String, ReplacementRecord>> = replacements
        .map(|p| read_jsonl::<ReplacementRecord>(p))
        .transpose()?
        .map(|rs| rs.into_iter().map(|r| (r.id.clone(), r)).collect());
    let images = out.join(IMAGES_DIR);
    fs::create_dir_all(&images).at(&images)?;

    let sets = pool(config.jobs())?.install(|| {
        corpus
            .pages
            .par_iter()
            .map(|page| {
                let texts: Vec<String> = match &generated {
                    Some(map) => map
                        .get(&page.id)
                        .ok_or_else(|| Error::InvalidArgument(format!("no replacements for page {}", page.id)))?
                        .blocks
                        .iter()
                        .map(|b| b.text.clone())
                        .collect(),
                    None => page.blocks.iter().map(|b| b.text.clone()).collect(),
                };
                let source = match theta.background {
                    crate::render::Background::InpaintedSource => Some(load_image(analyzed, page)?),
                    crate::render::Background::Blank => None,
                };
                let rendered = render_zerosense_page(page, &texts, &theta, &font, source.as_ref(), config.seed)?;
                let rel = PathBuf::from(IMAGES_DIR).join(format!("{}.png", file_stem(&page.id)));
                rendered.image.save(out.join(&rel))?;
                Ok(expand_modes(
                    page,
                    rel,
                    rendered.blocks,
                    Granularity::Paragraph,
                    rendered.text_token_count,
                    &theta,
                    config,
                ))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rendered = save_rendered(out, &corpus.name, &corpus, sets)?;
    info!("rendered {} pages into {}", rendered.pages.len(), out.display());
    Ok(rendered)
}

/// Words of a page in reading order: lines column by column, left to right within a line.
fn in_reading_order(page: &PageAnnotation) -> Result<Vec<TextBlock>> {
    Ok(extract_lines(page)?
        .into_iter()
        .flat_map(|l| l.words)
        .map(|i| page.blocks[i].clone())
        .collect())
}

fn text_tokens(blocks: &[TextBlock], ascii_threshold: f64) -> Result<u32> {
    let text = blocks.iter().map(|b| b.text.as_str()).collect::<Vec<_>>().join(" ");
    Ok(count_units(&text, detect_language(&text, ascii_threshold)?))
}

/// Pads `image` to the canvas and maps the word boxes alongside.
fn place_on_canvas(image: &RgbImage, blocks: &[TextBlock], theta: &RenderTheta) -> (RgbImage, Vec<TextBlock>) {
    let (w, _) = image.dimensions();
    let (nw, _) = scaled_dims(w, image.height(), theta.canvas_w, theta.canvas_h);
    let scale = nw as f64 / w as f64;
    let blocks = blocks
        .iter()
        .map(|b| TextBlock {
            bbox: if scale < 1.0 {
                scale_box(&b.bbox, scale, theta.canvas_w, theta.canvas_h)
            } else {
                b.bbox
            },
            ..b.clone()
        })
        .collect();
    (pad_to_canvas(image, theta), blocks)
}

pub struct PerturbOutput {
    pub original: Corpus,
    pub shuffled: Corpus,
}

/// Builds `original/` (source images on the canvas) and `shuffled/`
/// (`n_permutations` word-shuffled variants per page) under `out`.
pub fn perturb_dir(input: &Path, out: &Path, config: &Config) -> Result<PerturbOutput> {
    let corpus = load_corpus(input, &LoadOptions::default())?;
    let theta = config.render.theta();
    theta.validate()?;
    let threshold = config.layout.ascii_threshold;
    let (orig_dir, shuf_dir) = (out.join("original"), out.join("shuffled"));
    for d in [&orig_dir, &shuf_dir] {
        fs::create_dir_all(d.join(IMAGES_DIR)).at(d)?;
    }

    let results = pool(config.jobs())?.install(|| {
        corpus
            .pages
            .par_iter()
            .map(|page| {
                let image = load_image(input, page)?;
                let words = in_reading_order(page)?;
                let tokens = text_tokens(&words, threshold)?;
                let (canvas, blocks) = place_on_canvas(&image, &words, &theta);
                let rel = PathBuf::from(IMAGES_DIR).join(format!("{}.png", file_stem(&page.id)));
                canvas.save(orig_dir.join(&rel))?;
                let original = expand_modes(page, rel, blocks, Granularity::Word, tokens, &theta, config);

                let variants = build_shuffled_set(
                    page,
                    &image,
                    config.perturb.n_permutations,
                    config.seed,
                    &config.perturb.options,
                )?;
                let mut shuffled = Vec::new();
                for (k, v) in variants.into_iter().enumerate() {
                    let variant = PageAnnotation {
                        id: format!("{}#{k}", page.id),
                        ..v.perturbation.page
                    };
                    let (canvas, blocks) = place_on_canvas(&v.image, &variant.blocks, &theta);
                    let rel = PathBuf::from(IMAGES_DIR).join(format!("{}.png", file_stem(&variant.id)));
                    canvas.save(shuf_dir.join(&rel))?;
                    shuffled.push(expand_modes(&variant, rel, blocks, Granularity::Word, tokens, &theta, config));
                }
                Ok((original, shuffled))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let (originals, shuffled): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let shuffled = shuffled.into_iter().flatten().collect();
    Ok(PerturbOutput {
        original: save_rendered(&orig_dir, &corpus.name, &corpus, originals)?,
        shuffled: save_rendered(&shuf_dir, &corpus.name, &corpus, shuffled)?,
    })
}

/// Evaluates the configured clients on a rendered corpus, resuming from
/// `out/records.jsonl` if present.
pub fn evaluate_dir(corpus_dir: &Path, dataset: DatasetTag, out: &Path, config: &Config) -> Result<Vec<EvalRecord>> {
    let clients = config.harness.clients()?;
    evaluate_with(corpus_dir, dataset, out, config, &clients.iter().map(|c| c.as_ref()).collect::<Vec<_>>())
}

pub fn evaluate_with(
    corpus_dir: &Path,
    dataset: DatasetTag,
    out: &Path,
    config: &Config,
    clients: &[&dyn ModelClient],
) -> Result<Vec<EvalRecord>> {
    let corpus = RenderedCorpus::load(corpus_dir)?;
    fs::create_dir_all(out).at(out)?;
    let options = EvalOptions {
        dataset,
        instruction: config.harness.sweep.instruction.clone(),
        jobs: config.jobs(),
        normalize: config.harness.normalize,
    };
    run_eval(&corpus, clients, &options, Some(&out.join(RECORDS_FILE)))
}

/// Reads records from one or more `records.jsonl` files (or directories holding one).
pub fn read_records(paths: &[PathBuf]) -> Result<Vec<EvalRecord>> {
    let mut out = Vec::new();
    for p in paths {
        let file = if p.is_dir() { p.join(RECORDS_FILE) } else { p.clone() };
        out.extend(read_jsonl::<EvalRecord>(&file)?);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct CalibrationRow {
    ratio: f64,
    precision: f64,
    #[serde(default)]
    id: Option<String>,
}

/// Fits OCR_raw from natural-text records or from a CSV with `ratio` and
/// `precision` columns (and an optional `id`), writing `calibration.json`.
pub fn calibrate(inputs: &[PathBuf], out: &Path) -> Result<LinearCalibration> {
    let mut points = Vec::new();
    let mut ids = Vec::new();
    for p in inputs {
        if p.extension().is_some_and(|e| e == "csv") {
            let mut reader = csv::Reader::from_path(p)?;
            for (i, row) in reader.deserialize::<CalibrationRow>().enumerate() {
                let row = row?;
                points.push((row.ratio, row.precision));
                ids.push(row.id.unwrap_or_else(|| format!("{}:{i}", p.display())));
            }
        } else {
            let records = read_records(std::slice::from_ref(p))?;
            let (pts, pids) = calibration_points(&records);
            points.extend(pts);
            ids.extend(pids);
        }
    }
    let calibration = fit_ocr_raw(&points, ids)?;
    fs::create_dir_all(out).at(out)?;
    write_json(&out.join(CALIBRATION_FILE), &calibration)?;
    info!(
        "OCR_raw(rho) = {:.5} * rho + {:.5} from {} points",
        calibration.slope,
        calibration.intercept,
        calibration.reference_sample_ids.len()
    );
    Ok(calibration)
}

pub fn load_calibration(path: &Path) -> Result<LinearCalibration> {
    let file = if path.is_dir() { path.join(CALIBRATION_FILE) } else { path.to_path_buf() };
    read_json(&file)
}

/// Decouples records on natural text (`full`) and zero-information text
/// (`zero`) and writes `decoupled.jsonl`.
pub fn decouple_files(
    full: &[PathBuf],
    zero: &[PathBuf],
    calibration: &Path,
    out: &Path,
    config: &Config,
) -> Result<Vec<DecoupledPoint>> {
    let calibration = load_calibration(calibration)?;
    let points = crate::harness::decouple(
        &read_records(full)?,
        &read_records(zero)?,
        &calibration,
        &config.harness.sweep,
        config.harness.aggregation,
    )?;
    fs::create_dir_all(out).at(out)?;
    write_jsonl(&out.join(POINTS_FILE), &points)?;
    Ok(points)
}

/// Result files feeding a report; every entry is optional.
#[derive(Debug, Clone, Default)]
pub struct ReportSources {
    pub points: Option<PathBuf>,
    pub original: Vec<PathBuf>,
    pub zerosense: Vec<PathBuf>,
    pub shuffled: Vec<PathBuf>,
    pub shuffle_baseline: Vec<PathBuf>,
}

pub fn report_files(sources: &ReportSources, out: &Path, config: &Config) -> Result<Option<StrategyScore>> {
    let points: Vec<DecoupledPoint> = match &sources.points {
        Some(p) => {
            let file = if p.is_dir() { p.join(POINTS_FILE) } else { p.clone() };
            read_jsonl(&file)?
        }
        None => Vec::new(),
    };
    let (original, zerosense, shuffled, baseline) = (
        read_records(&sources.original)?,
        read_records(&sources.zerosense)?,
        read_records(&sources.shuffled)?,
        read_records(&sources.shuffle_baseline)?,
    );
    let h = &config.harness;
    let theta = config.render.theta();
    write_report(
        &ReportInputs {
            points: &points,
            original: &original,
            zerosense: &zerosense,
            shuffled: &shuffled,
            shuffle_baseline: &baseline,
            sweep: &h.sweep,
            visual_tokens: &theta.visual_tokens_per_mode,
            histogram_width: h.histogram_width,
            text_reference: h.text_reference,
            epsilon: h.epsilon,
        },
        out,
    )
}

/// Posterior statistics of generated text under an audit oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub pages: usize,
    pub blocks: usize,
    pub tokens: usize,
    pub max_posterior: f64,
    pub mean_posterior: f64,
    pub fraction_below_1e5: f64,
    pub fraction_below_1e6: f64,
    /// Pages holding a token at or above the vacuum ceiling.
    pub pages_over_ceiling: Vec<String>,
}

/// Splits generated block text back into oracle tokens.
pub fn block_tokens(text: &str, language: LanguageClass) -> Vec<String> {
    match language {
        LanguageClass::Latin => text.split_whitespace().map(str::to_string).collect(),
        LanguageClass::Logographic => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
    }
}

/// Scores every generated token under the audit oracle (each block read
/// from an empty context, as it was generated) and writes `audit.json`.
pub fn audit_replacements(replacements: &Path, out: &Path, config: &Config) -> Result<AuditReport> {
    let file = if replacements.is_dir() { replacements.join(REPLACEMENTS_FILE) } else { replacements.to_path_buf() };
    let records: Vec<ReplacementRecord> = read_jsonl(&file)?;
    let oracles = Oracles::build(config, true)?;
    let mut posteriors = Vec::new();
    let mut blocks = 0;
    let mut over = Vec::new();
    for r in &records {
        let mut page_max: f64 = 0.0;
        for b in &r.blocks {
            let tokens = block_tokens(&b.text, b.language);
            if tokens.is_empty() {
                continue;
            }
            let audit = audit_text_tokens(&tokens, oracles.get(b.language)?)?;
            page_max = page_max.max(audit.max_posterior);
            posteriors.extend(audit.posteriors);
            blocks += 1;
        }
        if page_max >= VACUUM_CEILING {
            over.push(r.id.clone());
        }
    }
    if posteriors.is_empty() {
        return Err(Error::InvalidArgument("no generated tokens to audit".into()));
    }
    let n = posteriors.len() as f64;
    let below = |t: f64| posteriors.iter().filter(|&&p| p < t).count() as f64 / n;
    let report = AuditReport {
        pages: records.len(),
        blocks,
        tokens: posteriors.len(),
        max_posterior: posteriors.iter().copied().fold(0.0, f64::max),
        mean_posterior: posteriors.iter().sum::<f64>() / n,
        fraction_below_1e5: below(1e-5),
        fraction_below_1e6: below(1e-6),
        pages_over_ceiling: over,
    };
    fs::create_dir_all(out).at(out)?;
    write_json(&out.join(AUDIT_FILE), &report)?;
    Ok(report)
}
