//! String metrics and the decoupling of prior reliance from visual reading.

mod decouple;

pub use decouple::{
    decouple_bin, f_prior, fit_ocr_raw, k_quality, strategy_score, Aggregation, BinSamples, DecoupledPoint,
    LinearCalibration, PointFlag, Sample, StrategyScore,
};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Edit distance over any comparable sequence.
pub fn levenshtein_seq<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (a, b) = if a.len() < b.len() { (b, a) } else { (a, b) };
    if b.is_empty() {
        return a.len();
    }
    let mut stack = [0usize; 64];
    let mut heap;
    let row: &mut [usize] = if b.len() < stack.len() {
        &mut stack[..=b.len()]
    } else {
        heap = vec![0usize; b.len() + 1];
        &mut heap
    };
    for (j, cell) in row.iter_mut().enumerate() {
        *cell = j;
    }
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            let sub = diag + usize::from(ca != cb);
            row[j + 1] = sub.min(up + 1).min(row[j] + 1);
            diag = up;
        }
    }
    row[b.len()]
}

/// Minimum number of character insertions, deletions and substitutions.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    levenshtein_seq(&a, &b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NedResult {
    pub ned_distance: f64,
    pub ned_similarity: f64,
}

/// Edit distance divided by the longer length; two empty strings are at
/// distance 0.
pub fn ned(a: &str, b: &str) -> NedResult {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    ned_chars(&a, &b)
}

fn ned_chars(a: &[char], b: &[char]) -> NedResult {
    let longest = a.len().max(b.len());
    let ned_distance = if longest == 0 {
        0.0
    } else {
        levenshtein_seq(a, b) as f64 / longest as f64
    };
    NedResult {
        ned_distance,
        ned_similarity: 1.0 - ned_distance,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeOptions {
    pub nfkc: bool,
    pub collapse_whitespace: bool,
    pub case_fold: bool,
}

impl Default for NormalizeOptions {
    fn default() -> Self {
        Self {
            nfkc: true,
            collapse_whitespace: true,
            case_fold: false,
        }
    }
}

pub fn normalize(text: &str, options: &NormalizeOptions) -> String {
    let mut s: String = if options.nfkc { text.nfkc().collect() } else { text.to_string() };
    if options.case_fold {
        s = s.to_lowercase();
    }
    if options.collapse_whitespace {
        s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    s
}

/// Matched characters in an optimal alignment, preferring more matches
/// among alignments of equal cost.
pub fn aligned_matches(a: &[char], b: &[char]) -> usize {
    // (cost, matches) per cell, minimizing cost then maximizing matches
    let mut row: Vec<(usize, usize)> = (0..=b.len()).map(|j| (j, 0)).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = (i + 1, 0);
        for (j, cb) in b.iter().enumerate() {
            let up = row[j + 1];
            let same = ca == cb;
            let candidates = [
                (diag.0 + usize::from(!same), diag.1 + usize::from(same)),
                (up.0 + 1, up.1),
                (row[j].0 + 1, row[j].1),
            ];
            row[j + 1] = candidates
                .into_iter()
                .min_by(|x, y| x.0.cmp(&y.0).then(y.1.cmp(&x.1)))
                .expect("three candidates");
            diag = up;
        }
    }
    row[b.len()].1
}

/// Share of ground-truth characters matched by the prediction after
/// normalization.
pub fn char_precision(gt: &str, pred: &str, options: &NormalizeOptions) -> f64 {
    let gt: Vec<char> = normalize(gt, options).chars().collect();
    let pred: Vec<char> = normalize(pred, options).chars().collect();
    precision_chars(&gt, &pred)
}

fn precision_chars(gt: &[char], pred: &[char]) -> f64 {
    if gt.is_empty() {
        return if pred.is_empty() { 1.0 } else { 0.0 };
    }
    aligned_matches(gt, pred) as f64 / gt.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StringMetricResult {
    pub precision: f64,
    pub ned_similarity: f64,
    pub ned_distance: f64,
    pub gt_len: usize,
    pub pred_len: usize,
}

/// Precision and both edit-distance conventions on normalized strings.
pub fn score_strings(gt: &str, pred: &str, options: &NormalizeOptions) -> StringMetricResult {
    let gt: Vec<char> = normalize(gt, options).chars().collect();
    let pred: Vec<char> = normalize(pred, options).chars().collect();
    let n = ned_chars(&gt, &pred);
    StringMetricResult {
        precision: precision_chars(&gt, &pred),
        ned_similarity: n.ned_similarity,
        ned_distance: n.ned_distance,
        gt_len: gt.len(),
        pred_len: pred.len(),
    }
}
