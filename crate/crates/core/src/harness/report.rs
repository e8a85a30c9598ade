use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, IoContext, Result};
use crate::metrics::{strategy_score, DecoupledPoint, StrategyScore};
use crate::render::ResolutionMode;

use super::{DatasetTag, EvalRecord, SweepConfig};

/// Counts over consecutive half-open bins `[start + i*width, start + (i+1)*width)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenHistogram {
    pub start: u32,
    pub width: u32,
    pub counts: Vec<u64>,
}

/// Histogram spanning the bins that hold the smallest and largest value.
pub fn token_histogram(values: &[u32], width: u32) -> Result<TokenHistogram> {
    if width == 0 {
        return Err(Error::InvalidArgument("histogram bin width must be positive".into()));
    }
    let (Some(&lo), Some(&hi)) = (values.iter().min(), values.iter().max()) else {
        return Ok(TokenHistogram {
            start: 0,
            width,
            counts: Vec::new(),
        });
    };
    let start = lo / width * width;
    let mut counts = vec![0u64; ((hi - start) / width + 1) as usize];
    for &v in values {
        counts[((v - start) / width) as usize] += 1;
    }
    Ok(TokenHistogram { start, width, counts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleRow {
    pub corpus: String,
    pub model: String,
    pub compression: f64,
    pub original: f64,
    pub shuffled: f64,
    /// Shuffled minus original: negative when shuffling costs precision.
    pub delta: f64,
}

fn bin_means(records: &[EvalRecord], sweep: &SweepConfig) -> BTreeMap<(String, String, usize), (f64, usize)> {
    let mut acc: BTreeMap<(String, String, usize), (f64, usize)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.error.is_none()) {
        if let Some(b) = sweep.bin_of(r.ratio) {
            let e = acc.entry((r.corpus.clone(), r.model.clone(), b)).or_default();
            e.0 += r.metrics.precision;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (s, n))| (k, (s / n as f64, n))).collect()
}

/// Mean precision of original and shuffled pages per bin, for bins where
/// both sides have records.
pub fn shuffle_comparison(original: &[EvalRecord], shuffled: &[EvalRecord], sweep: &SweepConfig) -> Vec<ShuffleRow> {
    let o = bin_means(original, sweep);
    let s = bin_means(shuffled, sweep);
    o.iter()
        .filter_map(|(key, &(orig, _))| {
            let &(shuf, _) = s.get(key)?;
            Some(ShuffleRow {
                corpus: key.0.clone(),
                model: key.1.clone(),
                compression: sweep.bins[key.2].center,
                original: orig,
                shuffled: shuf,
                delta: shuf - orig,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub points: &'a [DecoupledPoint],
    /// Records on natural-text renders.
    pub original: &'a [EvalRecord],
    pub zerosense: &'a [EvalRecord],
    pub shuffled: &'a [EvalRecord],
    /// Natural-text renders of the pages behind `shuffled`.
    pub shuffle_baseline: &'a [EvalRecord],
    pub sweep: &'a SweepConfig,
    pub visual_tokens: &'a BTreeMap<ResolutionMode, u32>,
    pub histogram_width: u32,
    /// Accuracy a model attains reading the plain text; deltas are taken against it.
    pub text_reference: f64,
    pub epsilon: f64,
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush().at(path)
}

/// Writes every report file into `out` and returns the strategy score when
/// original records exist.
pub fn write_report(inputs: &ReportInputs<'_>, out: &Path) -> Result<Option<StrategyScore>> {
    if inputs.points.is_empty() && inputs.original.is_empty() && inputs.shuffled.is_empty() {
        return Err(Error::InvalidArgument("nothing to report".into()));
    }
    fs::create_dir_all(out).at(out)?;
    let mut points: Vec<&DecoupledPoint> = inputs.points.iter().collect();
    points.sort_by(|a, b| {
        (a.dataset.as_str(), a.model.as_str())
            .cmp(&(b.dataset.as_str(), b.model.as_str()))
            .then(a.compression_bin.total_cmp(&b.compression_bin))
    });

    let detail: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                num(p.compression_bin),
                p.dataset.clone(),
                p.model.clone(),
                num(p.f_full),
                num(p.f_zero),
                num(p.f_prior),
                num(p.ocr_raw),
                num(p.k_quality),
                p.mode.name().to_string(),
                opt(p.ned_full),
                opt(p.ned_zero),
                opt(p.ned_prior),
                p.n_full.to_string(),
                p.n_zero.to_string(),
                p.flags
                    .iter()
                    .map(|f| serde_json::to_value(f).expect("flag serializes").as_str().unwrap_or("").to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            ]
        })
        .collect();
    write_csv(
        &out.join("decoupled.csv"),
        &[
            "bin", "dataset", "model", "F_full", "F_zero", "F_prior", "OCR_raw", "K_quality", "mode", "NED_sim_full",
            "NED_sim_zero", "NED_prior", "n_full", "n_zero", "flags",
        ],
        &detail,
    )?;

    let mut by_dataset: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for p in &points {
        by_dataset.entry(&p.dataset).or_default().insert(&p.model);
    }
    let mut table_files = Vec::new();
    for (dataset, models) in &by_dataset {
        for model in models {
            let name = if models.len() == 1 {
                format!("table_{}.csv", sanitize(dataset))
            } else {
                format!("table_{}__{}.csv", sanitize(dataset), sanitize(model))
            };
            let rows: Vec<Vec<String>> = points
                .iter()
                .filter(|p| p.dataset == *dataset && p.model == *model)
                .map(|p| {
                    vec![
                        num(p.compression_bin),
                        num(p.f_full),
                        num(p.f_zero),
                        num(p.f_prior),
                        num(p.ocr_raw),
                        num(p.k_quality),
                    ]
                })
                .collect();
            write_csv(
                &out.join(&name),
                &["Compression", "F_full", "F_zero", "F_prior", "OCR_raw", "K_quality"],
                &rows,
            )?;
            table_files.push(name);
        }
    }

    let shuffle = shuffle_comparison(inputs.shuffle_baseline, inputs.shuffled, inputs.sweep);
    let rows: Vec<Vec<String>> = shuffle
        .iter()
        .map(|r| {
            vec![
                r.corpus.clone(),
                r.model.clone(),
                num(r.compression),
                num(r.original),
                num(r.shuffled),
                num(r.delta),
            ]
        })
        .collect();
    write_csv(
        &out.join("shuffle_comparison.csv"),
        &["Dataset", "Model", "Compression", "Original", "Shuffled", "Delta(Drop)"],
        &rows,
    )?;

    // one count per page: records repeat across models
    let mut tokens: BTreeMap<(String, DatasetTag), BTreeMap<String, u32>> = BTreeMap::new();
    for r in inputs.original.iter().chain(inputs.zerosense) {
        tokens
            .entry((r.corpus.clone(), r.dataset))
            .or_default()
            .insert(r.page_id.clone(), r.text_tokens);
    }
    let mut rows = Vec::new();
    for ((corpus, tag), pages) in &tokens {
        let values: Vec<u32> = pages.values().copied().collect();
        let h = token_histogram(&values, inputs.histogram_width)?;
        for (i, c) in h.counts.iter().enumerate() {
            let lo = h.start + i as u32 * h.width;
            rows.push(vec![corpus.clone(), tag.name().to_string(), lo.to_string(), (lo + h.width).to_string(), c.to_string()]);
        }
    }
    write_csv(&out.join("token_histogram.csv"), &["Dataset", "Tag", "BinStart", "BinEnd", "Count"], &rows)?;

    let mut deltas: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in inputs.original.iter().filter(|r| r.error.is_none()) {
        deltas
            .entry(r.model.clone())
            .or_default()
            .push(r.metrics.precision - inputs.text_reference);
    }
    let score = if deltas.is_empty() {
        None
    } else {
        Some(strategy_score(&deltas, inputs.epsilon)?)
    };
    if let Some(s) = &score {
        write_csv(
            &out.join("strategy_score.csv"),
            &["S_theta", "best_model", "epsilon", "information_preserving", "text_reference", "n_models"],
            &[vec![
                num(s.s_theta),
                s.best_model.clone(),
                num(s.epsilon),
                s.information_preserving.to_string(),
                num(inputs.text_reference),
                s.per_model_means.len().to_string(),
            ]],
        )?;
    }

    let mut summary = String::new();
    writeln!(summary, "Visual tokens per mode (assumed):").ok();
    for (mode, n) in inputs.visual_tokens {
        writeln!(summary, "  {:<6} {n}", mode.name()).ok();
    }
    writeln!(summary).ok();
    for file in &table_files {
        writeln!(summary, "{file}").ok();
    }
    for (dataset, models) in &by_dataset {
        for model in models {
            writeln!(summary, "\n{dataset} / {model}").ok();
            writeln!(
                summary,
                "  {:>11} {:>8} {:>8} {:>8} {:>8} {:>9}  flags",
                "Compression", "F_full", "F_zero", "F_prior", "OCR_raw", "K_quality"
            )
            .ok();
            for p in points.iter().filter(|p| p.dataset == *dataset && p.model == *model) {
                let cell = |v: f64| if v.is_finite() { format!("{v:.4}") } else { "-".into() };
                writeln!(
                    summary,
                    "  {:>10.1}x {:>8} {:>8} {:>8} {:>8} {:>9}  {}",
                    p.compression_bin,
                    cell(p.f_full),
                    cell(p.f_zero),
                    cell(p.f_prior),
                    cell(p.ocr_raw),
                    cell(p.k_quality),
                    p.flags.iter().map(|f| format!("{f:?}")).collect::<Vec<_>>().join(",")
                )
                .ok();
            }
        }
    }
    if !shuffle.is_empty() {
        writeln!(summary, "\nOriginal vs shuffled precision").ok();
        for r in &shuffle {
            writeln!(
                summary,
                "  {} {:>5.1}x  {:.4}  {:.4}  {:+.4}",
                r.corpus, r.compression, r.original, r.shuffled, r.delta
            )
            .ok();
        }
    }
    if let Some(s) = &score {
        writeln!(summary, "\nStrategy score (precision - {:.4} per model)", inputs.text_reference).ok();
        for (m, v) in &s.per_model_means {
            writeln!(summary, "  {m:<32} {v:+.4}").ok();
        }
        writeln!(
            summary,
            "  S = {:+.4} ({}), information preserving at eps {}: {}",
            s.s_theta, s.best_model, s.epsilon, s.information_preserving
        )
        .ok();
    }
    let path = out.join("summary.txt");
    fs::write(&path, summary).at(&path)?;
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::tests::record;

    #[test]
    fn histogram_example() {
        let mut v = vec![300; 3];
        v.extend([900; 5]);
        v.extend([2100; 2]);
        let h = token_histogram(&v, 300).unwrap();
        assert_eq!(h.start, 300);
        assert_eq!(h.counts, vec![3, 0, 5, 0, 0, 0, 2]);
        assert!(token_histogram(&[], 300).unwrap().counts.is_empty());
        assert!(token_histogram(&v, 0).is_err());
    }

    #[test]
    fn shuffle_delta_is_exact_difference() {
        let sweep = SweepConfig::default();
        let original = vec![
            record("a", DatasetTag::Original, 7.5, "abcd", "abcd"),
            record("b", DatasetTag::Original, 7.6, "abcd", "abcx"),
        ];
        let shuffled = vec![record("a#0", DatasetTag::Shuffled, 7.5, "abcd", "abxx")];
        let rows = shuffle_comparison(&original, &shuffled, &sweep);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].original, 0.875);
        assert_eq!(rows[0].shuffled, 0.5);
        assert_eq!(rows[0].delta, 0.5 - 0.875);
    }

    #[test]
    fn five_bin_table() {
        let dir = tempfile::tempdir().unwrap();
        let points: Vec<DecoupledPoint> = [7.5, 10.0, 12.5, 15.0, 17.5]
            .iter()
            .map(|&c| DecoupledPoint::from_means(c, "fox", 0.9, 0.5, 0.8).unwrap())
            .collect();
        let sweep = SweepConfig::default();
        let vt = crate::render::default_visual_tokens();
        let inputs = ReportInputs {
            points: &points,
            original: &[],
            zerosense: &[],
            shuffled: &[],
            shuffle_baseline: &[],
            sweep: &sweep,
            visual_tokens: &vt,
            histogram_width: 100,
            text_reference: 1.0,
            epsilon: 0.01,
        };
        assert!(write_report(&inputs, dir.path()).unwrap().is_none());
        let table = fs::read_to_string(dir.path().join("table_fox.csv")).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "Compression,F_full,F_zero,F_prior,OCR_raw,K_quality");
        assert_eq!(lines[1], "7.5000,0.9000,0.5000,0.4000,0.8000,0.6250");
        let first = fs::read(dir.path().join("decoupled.csv")).unwrap();
        write_report(&inputs, dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join("decoupled.csv")).unwrap(), first);
    }
}
