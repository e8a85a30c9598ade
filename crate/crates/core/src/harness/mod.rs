//! Experiment orchestration: evaluate clients over rendered corpora, bin by
//! compression ratio, decouple, and report.

mod client;
mod report;

pub use client::{
    extract_reply, identity_with_hash, EchoStub, EmptyStub, FileStub, ModelClient, PredictionLine,
    TranscribeRequest, WireClient, WireConfig,
};
pub use report::{
    shuffle_comparison, token_histogram, write_report, ReportInputs, ShuffleRow, TokenHistogram,
};

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{load_corpus, Corpus, LoadOptions};
use crate::error::{Error, IoContext, Result};
use crate::metrics::{
    decouple_bin, score_strings, Aggregation, BinSamples, DecoupledPoint, LinearCalibration, NormalizeOptions,
    PointFlag, Sample, StringMetricResult,
};
use crate::render::{RenderMeta, ResolutionMode};

pub const RENDER_META_FILE: &str = "render_meta.jsonl";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const DEFAULT_INSTRUCTION: &str = "Transcribe all text in this image exactly as it appears.";
pub const DEFAULT_JOBS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBin {
    pub center: f64,
    pub half_width: f64,
}

impl RatioBin {
    pub fn contains(&self, ratio: f64) -> bool {
        ratio >= self.center - self.half_width && ratio < self.center + self.half_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub bins: Vec<RatioBin>,
    pub modes: Vec<ResolutionMode>,
    pub seeds: Vec<u64>,
    pub instruction: String,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            bins: [2.5, 5.0, 7.5, 10.0, 12.5, 15.0, 17.5]
                .into_iter()
                .map(|center| RatioBin {
                    center,
                    half_width: 1.25,
                })
                .collect(),
            modes: ResolutionMode::ALL.to_vec(),
            seeds: vec![0],
            instruction: DEFAULT_INSTRUCTION.to_string(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins.is_empty() {
            return Err(Error::Config("sweep needs at least one ratio bin".into()));
        }
        let mut sorted = self.bins.clone();
        sorted.sort_by(|a, b| a.center.total_cmp(&b.center));
        for b in &sorted {
            if !(b.half_width > 0.0) || !b.center.is_finite() {
                return Err(Error::Config(format!("bad ratio bin {b:?}")));
            }
        }
        for w in sorted.windows(2) {
            if w[0].center + w[0].half_width > w[1].center - w[1].half_width + 1e-12 {
                return Err(Error::Config(format!("ratio bins {:?} and {:?} overlap", w[0], w[1])));
            }
        }
        Ok(())
    }

    pub fn bin_of(&self, ratio: f64) -> Option<usize> {
        self.bins.iter().position(|b| b.contains(ratio))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Original,
    Zerosense,
    Shuffled,
}

impl DatasetTag {
    pub fn name(self) -> &'static str {
        match self {
            Self::Original => "original",
            Self::Zerosense => "zerosense",
            Self::Shuffled => "shuffled",
        }
    }
}

impl std::str::FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(Self::Original),
            "zerosense" => Ok(Self::Zerosense),
            "shuffled" => Ok(Self::Shuffled),
            _ => Err(Error::InvalidArgument(format!("unknown dataset tag {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub page_id: String,
    /// Name of the corpus the page came from.
    pub corpus: String,
    pub dataset: DatasetTag,
    pub mode: ResolutionMode,
    pub ratio: f64,
    pub text_tokens: u32,
    pub model: String,
    pub instruction: String,
    pub gt: String,
    pub prediction: String,
    pub metrics: StringMetricResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl EvalRecord {
    fn key(&self) -> (String, String) {
        (self.page_id.clone(), self.model.clone())
    }
}

/// A directory of page images with annotations and per-page render metadata.
#[derive(Debug, Clone)]
pub struct RenderedCorpus {
    pub dir: PathBuf,
    pub corpus: Corpus,
    pub meta: BTreeMap<String, RenderMeta>,
}

impl RenderedCorpus {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let corpus = load_corpus(&dir, &LoadOptions::default())?;
        let meta_path = dir.join(RENDER_META_FILE);
        let meta: BTreeMap<String, RenderMeta> = read_jsonl::<RenderMeta>(&meta_path)?
            .into_iter()
            .map(|m| (m.id.clone(), m))
            .collect();
        for page in &corpus.pages {
            let m = meta.get(&page.id).ok_or_else(|| {
                Error::InvalidArgument(format!("page {} has no entry in {}", page.id, meta_path.display()))
            })?;
            if m.visual_tokens == 0 {
                return Err(Error::InvalidArgument(format!("page {} has zero visual tokens", page.id)));
            }
        }
        Ok(Self { dir, corpus, meta })
    }
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).at(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            index: i,
            reason: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

/// Writes `items` as JSON lines through a temporary file and a rename.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).at(&tmp)?);
        for item in items {
            serde_json::to_writer(&mut w, item)?;
            w.write_all(b"\n").at(&tmp)?;
        }
        w.flush().at(&tmp)?;
    }
    fs::rename(&tmp, path).at(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub dataset: DatasetTag,
    pub instruction: String,
    pub jobs: usize,
    pub normalize: NormalizeOptions,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            dataset: DatasetTag::Original,
            instruction: DEFAULT_INSTRUCTION.to_string(),
            jobs: DEFAULT_JOBS,
            normalize: NormalizeOptions::default(),
        }
    }
}

/// Runs every client over every page. Failed calls become records with an
/// empty prediction and an error tag. With `records_path`, records are
/// appended as they complete, pages already recorded without error are
/// skipped, and the file is finally rewritten sorted by (page id, model).
pub fn run_eval(
    corpus: &RenderedCorpus,
    clients: &[&dyn ModelClient],
    options: &EvalOptions,
    records_path: Option<&Path>,
) -> Result<Vec<EvalRecord>> {
    if clients.is_empty() {
        return Err(Error::InvalidArgument("no model clients given".into()));
    }
    let identities: Vec<String> = clients.iter().map(|c| c.identity()).collect();

    let mut done: BTreeMap<(String, String), EvalRecord> = BTreeMap::new();
    if let Some(path) = records_path {
        if path.exists() {
            for r in read_jsonl::<EvalRecord>(path)? {
                if r.error.is_none() {
                    done.insert(r.key(), r);
                }
            }
            info!("resuming: {} completed records in {}", done.len(), path.display());
        }
    }

    let mut jobs: Vec<(usize, usize)> = Vec::new();
    for (pi, page) in corpus.corpus.pages.iter().enumerate() {
        for (ci, id) in identities.iter().enumerate() {
            if !done.contains_key(&(page.id.clone(), id.clone())) {
                jobs.push((pi, ci));
            }
        }
    }

    let sink = match records_path {
        Some(path) => {
            // keep only the completed records before appending new ones
            let kept: Vec<&EvalRecord> = done.values().collect();
            write_jsonl(path, &kept)?;
            Some(Mutex::new(OpenOptions::new().append(true).open(path).at(path)?))
        }
        None => None,
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let fresh: Vec<EvalRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(pi, ci)| {
                let page = &corpus.corpus.pages[pi];
                let record = evaluate_page(corpus, page, clients[ci], &identities[ci], options)?;
                if let Some(sink) = &sink {
                    let mut line = serde_json::to_vec(&record)?;
                    line.push(b'\n');
                    let mut f = sink.lock().expect("records file lock");
                    f.write_all(&line).at(records_path.expect("sink implies path"))?;
                }
                Ok(record)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut unreachable: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for r in &fresh {
        let e = unreachable.entry(r.model.as_str()).or_default();
        e.0 += 1;
        if r.error.as_deref().is_some_and(|e| e.starts_with("unreachable")) {
            e.1 += 1;
        }
    }

    let mut records: Vec<EvalRecord> = done.into_values().chain(fresh.iter().cloned()).collect();
    records.sort_by(|a, b| a.page_id.cmp(&b.page_id).then(a.model.cmp(&b.model)));
    if let Some(path) = records_path {
        write_jsonl(path, &records)?;
    }
    if let Some((model, (n, _))) = unreachable.iter().find(|(_, (n, u))| *n > 0 && n == u) {
        return Err(Error::Unreachable {
            attempts: *n as u32,
            reason: format!("every call to {model} failed; records kept for resume"),
        });
    }
    Ok(records)
}

fn evaluate_page(
    corpus: &RenderedCorpus,
    page: &crate::corpus::PageAnnotation,
    client: &dyn ModelClient,
    identity: &str,
    options: &EvalOptions,
) -> Result<EvalRecord> {
    let meta = &corpus.meta[&page.id];
    let image_path = corpus.dir.join(&page.image);
    let png = fs::read(&image_path).at(&image_path)?;
    let gt = page.ground_truth();
    let request = TranscribeRequest {
        page_id: &page.id,
        instruction: &options.instruction,
        image_png: &png,
        ground_truth: &gt,
    };
    let (prediction, error) = match client.transcribe(&request) {
        Ok(p) => (p, None),
        Err(e @ Error::Unreachable { .. }) => (String::new(), Some(format!("unreachable: {e}"))),
        Err(e) => (String::new(), Some(e.to_string())),
    };
    if let Some(e) = &error {
        warn!("page {} with {identity}: {e}", page.id);
    }
    Ok(EvalRecord {
        page_id: page.id.clone(),
        corpus: corpus.corpus.name.clone(),
        dataset: options.dataset,
        mode: meta.mode,
        ratio: meta.compression_ratio(),
        text_tokens: meta.text_tokens,
        model: identity.to_string(),
        instruction: options.instruction.clone(),
        metrics: score_strings(&gt, &prediction, &options.normalize),
        gt,
        prediction,
        error,
    })
}

fn as_sample(r: &EvalRecord) -> Sample {
    Sample {
        id: r.page_id.clone(),
        ratio: r.ratio,
        precision: r.metrics.precision,
        ned_similarity: r.metrics.ned_similarity,
    }
}

fn gap_point(center: f64, dataset: &str, model: &str, mode: Aggregation, n_full: usize, n_zero: usize) -> DecoupledPoint {
    DecoupledPoint {
        compression_bin: center,
        dataset: dataset.to_string(),
        model: model.to_string(),
        f_full: f64::NAN,
        f_zero: f64::NAN,
        f_prior: f64::NAN,
        ocr_raw: f64::NAN,
        k_quality: f64::NAN,
        ned_full: None,
        ned_zero: None,
        ned_prior: None,
        mode,
        n_full,
        n_zero,
        flags: vec![PointFlag::EmptyBin],
    }
}

/// One point per (corpus, model, bin). Bins without records on both sides
/// are emitted as gaps flagged [`PointFlag::EmptyBin`]. Errored records and
/// records outside every bin are left out.
pub fn decouple(
    records_full: &[EvalRecord],
    records_zero: &[EvalRecord],
    calibration: &LinearCalibration,
    sweep: &SweepConfig,
    mode: Aggregation,
) -> Result<Vec<DecoupledPoint>> {
    sweep.validate()?;
    type Key = (String, String, usize);
    let mut bins: BTreeMap<Key, BinSamples> = BTreeMap::new();
    let mut groups: BTreeSet<(String, String)> = BTreeSet::new();
    let mut skipped = 0usize;
    for (records, zero) in [(records_full, false), (records_zero, true)] {
        for r in records {
            groups.insert((r.corpus.clone(), r.model.clone()));
            let Some(bin) = sweep.bin_of(r.ratio).filter(|_| r.error.is_none()) else {
                skipped += 1;
                continue;
            };
            let entry = bins.entry((r.corpus.clone(), r.model.clone(), bin)).or_default();
            if zero {
                entry.zero.push(as_sample(r));
            } else {
                entry.full.push(as_sample(r));
            }
        }
    }
    if skipped > 0 {
        info!("{skipped} records errored or fell outside every ratio bin");
    }

    let mut points = Vec::new();
    for (corpus, model) in &groups {
        for (bi, bin) in sweep.bins.iter().enumerate() {
            let samples = bins.remove(&(corpus.clone(), model.clone(), bi)).unwrap_or_default();
            if samples.full.is_empty() || samples.zero.is_empty() {
                points.push(gap_point(bin.center, corpus, model, mode, samples.full.len(), samples.zero.len()));
                continue;
            }
            let mut p = decouple_bin(bin.center, corpus, &samples, calibration, mode)?;
            p.model = model.clone();
            points.push(p);
        }
    }
    Ok(points)
}

/// Calibration points from records: one (ratio, precision) per error-free record.
pub fn calibration_points(records: &[EvalRecord]) -> (Vec<(f64, f64)>, Vec<String>) {
    let mut seen = HashSet::new();
    records
        .iter()
        .filter(|r| r.error.is_none() && seen.insert(r.key()))
        .map(|r| ((r.ratio, r.metrics.precision), r.page_id.clone()))
        .unzip()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::fit_ocr_raw;

    pub(crate) fn record(id: &str, dataset: DatasetTag, ratio: f64, gt: &str, pred: &str) -> EvalRecord {
        EvalRecord {
            page_id: id.into(),
            corpus: "fox".into(),
            dataset,
            mode: ResolutionMode::Base,
            ratio,
            text_tokens: (ratio * 256.0) as u32,
            model: "m".into(),
            instruction: DEFAULT_INSTRUCTION.into(),
            gt: gt.into(),
            prediction: pred.into(),
            metrics: score_strings(gt, pred, &NormalizeOptions::default()),
            error: None,
        }
    }

    #[test]
    fn default_bins_tile_without_overlap() {
        let s = SweepConfig::default();
        s.validate().unwrap();
        assert_eq!(s.bin_of(7.5), Some(2));
        assert_eq!(s.bin_of(8.75), Some(3));
        assert_eq!(s.bin_of(1.0), None);
        let bad = SweepConfig {
            bins: vec![
                RatioBin {
                    center: 5.0,
                    half_width: 2.0,
                },
                RatioBin {
                    center: 7.0,
                    half_width: 1.0,
                },
            ],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn injected_bin_means() {
        // two points through (7.5, 0.761) and (17.5, 0.460)
        let calib = fit_ocr_raw(&[(7.5, 0.761), (17.5, 0.460)], vec![]).unwrap();
        let mut full = Vec::new();
        let mut zero = Vec::new();
        // precision 0.955 = 191/200 matched chars; 0.717 = 717/1000
        let gt: String = "x".repeat(200);
        full.push(record("a", DatasetTag::Original, 7.5, &gt, &"x".repeat(191)));
        let gt: String = "y".repeat(1000);
        zero.push(record("a", DatasetTag::Zerosense, 7.5, &gt, &"y".repeat(717)));
        let points = decouple(&full, &zero, &calib, &SweepConfig::default(), Aggregation::MeanThenDivide).unwrap();
        assert_eq!(points.len(), 7);
        let p = &points[2];
        assert!((p.f_prior - 0.238).abs() < 1e-12);
        assert!((p.k_quality - 0.9422).abs() < 1e-4);
        for (i, q) in points.iter().enumerate() {
            if i != 2 {
                assert_eq!(q.flags, vec![PointFlag::EmptyBin]);
                assert!(q.f_full.is_nan());
            }
        }
    }

    #[test]
    fn equal_accuracies_give_zero_prior() {
        let calib = fit_ocr_raw(&[(0.0, 0.9), (20.0, 0.5)], vec![]).unwrap();
        let full = vec![record("a", DatasetTag::Original, 5.0, "abcd", "abxd"), record("b", DatasetTag::Original, 10.0, "ab", "ab")];
        let zero = vec![record("a", DatasetTag::Zerosense, 5.0, "wxyz", "wxqz"), record("b", DatasetTag::Zerosense, 10.0, "qq", "qq")];
        for p in decouple(&full, &zero, &calib, &SweepConfig::default(), Aggregation::MeanThenDivide).unwrap() {
            if !p.flags.contains(&PointFlag::EmptyBin) {
                assert_eq!(p.f_prior, 0.0);
            }
        }
    }
}
