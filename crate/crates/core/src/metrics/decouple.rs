use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accuracy attributable to context rather than reading.
pub fn f_prior(f_full: f64, f_zero: f64) -> f64 {
    f_full - f_zero
}

/// Share of the text that survives rendering once prior and recognition
/// effects are removed.
pub fn k_quality(f_full: f64, f_prior: f64, ocr_raw: f64) -> Result<f64> {
    if ocr_raw <= 0.0 {
        return Err(Error::InvalidArgument(format!("ocr_raw must be positive, got {ocr_raw}")));
    }
    Ok((f_full - f_prior) / ocr_raw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearCalibration {
    pub slope: f64,
    pub intercept: f64,
    pub fit_residual_max: f64,
    #[serde(default)]
    pub reference_sample_ids: Vec<String>,
}

impl LinearCalibration {
    /// Predicted raw recognition accuracy at `ratio`, clamped to [0, 1].
    pub fn predict(&self, ratio: f64) -> f64 {
        (self.intercept + self.slope * ratio).clamp(0.0, 1.0)
    }
}

/// Ordinary least squares of accuracy on ratio.
pub fn fit_ocr_raw(points: &[(f64, f64)], reference_sample_ids: Vec<String>) -> Result<LinearCalibration> {
    if points.len() < 2 {
        return Err(Error::InvalidArgument("calibration needs at least two points".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(Error::InvalidArgument("calibration ratios are all identical".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let fit_residual_max = points
        .iter()
        .map(|&(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    Ok(LinearCalibration {
        slope,
        intercept,
        fit_residual_max,
        reference_sample_ids,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyScore {
    pub per_model_means: BTreeMap<String, f64>,
    pub s_theta: f64,
    pub best_model: String,
    pub epsilon: f64,
    pub information_preserving: bool,
}

/// Mean delta per model; the score is the best model's mean.
pub fn strategy_score(per_model_deltas: &BTreeMap<String, Vec<f64>>, epsilon: f64) -> Result<StrategyScore> {
    if per_model_deltas.is_empty() {
        return Err(Error::InvalidArgument("no models to score".into()));
    }
    let mut per_model_means = BTreeMap::new();
    for (model, deltas) in per_model_deltas {
        if deltas.is_empty() {
            return Err(Error::InvalidArgument(format!("model {model} has no deltas")));
        }
        per_model_means.insert(model.clone(), deltas.iter().sum::<f64>() / deltas.len() as f64);
    }
    let (best_model, s_theta) = per_model_means
        .iter()
        .fold(None::<(&String, f64)>, |best, (m, &v)| match best {
            Some((_, b)) if b >= v => best,
            _ => Some((m, v)),
        })
        .map(|(m, v)| (m.clone(), v))
        .expect("non-empty");
    Ok(StrategyScore {
        per_model_means,
        s_theta,
        best_model,
        epsilon,
        information_preserving: s_theta >= -epsilon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Average accuracies over the bin, then divide by the calibrated
    /// recognition accuracy at the bin centre.
    #[default]
    MeanThenDivide,
    /// Divide each zero-text sample by the calibration at its own ratio,
    /// then average.
    PerSampleThenMean,
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Self::MeanThenDivide => "mean_then_divide",
            Self::PerSampleThenMean => "per_sample_then_mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointFlag {
    NegativePrior,
    KAboveOne,
    EmptyBin,
}

/// One evaluated sample: precision and edit-distance similarity at a ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub ratio: f64,
    pub precision: f64,
    pub ned_similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BinSamples {
    pub full: Vec<Sample>,
    pub zero: Vec<Sample>,
}

/// JSON has no NaN; gaps are written as null and read back as NaN.
fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoupledPoint {
    pub compression_bin: f64,
    pub dataset: String,
    #[serde(default)]
    pub model: String,
    #[serde(deserialize_with = "nan_if_null")]
    pub f_full: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub f_zero: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub f_prior: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub ocr_raw: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub k_quality: f64,
    /// Edit-distance channel, reported separately from precision.
    pub ned_full: Option<f64>,
    pub ned_zero: Option<f64>,
    pub ned_prior: Option<f64>,
    pub mode: Aggregation,
    pub n_full: usize,
    pub n_zero: usize,
    pub flags: Vec<PointFlag>,
}

impl DecoupledPoint {
    /// Builds a point from bin-level means (e.g. published table values).
    pub fn from_means(compression_bin: f64, dataset: &str, f_full: f64, f_zero: f64, ocr_raw: f64) -> Result<Self> {
        let prior = f_prior(f_full, f_zero);
        let k = k_quality(f_full, prior, ocr_raw)?;
        Ok(Self {
            compression_bin,
            dataset: dataset.to_string(),
            model: String::new(),
            f_full,
            f_zero,
            f_prior: prior,
            ocr_raw,
            k_quality: k,
            ned_full: None,
            ned_zero: None,
            ned_prior: None,
            mode: Aggregation::MeanThenDivide,
            n_full: 0,
            n_zero: 0,
            flags: flags_for(prior, k),
        })
    }
}

fn flags_for(prior: f64, k: f64) -> Vec<PointFlag> {
    let mut flags = Vec::new();
    if prior < 0.0 {
        flags.push(PointFlag::NegativePrior);
    }
    if k > 1.0 {
        flags.push(PointFlag::KAboveOne);
    }
    flags
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Decouples one compression bin. Both sample sets must be non-empty.
pub fn decouple_bin(
    compression_bin: f64,
    dataset: &str,
    samples: &BinSamples,
    calibration: &LinearCalibration,
    mode: Aggregation,
) -> Result<DecoupledPoint> {
    let empty = || Error::InvalidArgument(format!("bin {compression_bin} of {dataset} lacks full or zero samples"));
    let f_full = mean(samples.full.iter().map(|s| s.precision)).ok_or_else(empty)?;
    let f_zero = mean(samples.zero.iter().map(|s| s.precision)).ok_or_else(empty)?;
    let ned_full = mean(samples.full.iter().map(|s| s.ned_similarity)).ok_or_else(empty)?;
    let ned_zero = mean(samples.zero.iter().map(|s| s.ned_similarity)).ok_or_else(empty)?;
    let prior = f_prior(f_full, f_zero);

    let ocr_raw = calibration.predict(compression_bin);
    let k = match mode {
        Aggregation::MeanThenDivide => k_quality(f_full, prior, ocr_raw)?,
        Aggregation::PerSampleThenMean => {
            let ks = samples
                .zero
                .iter()
                .map(|s| {
                    // per sample the prior is unobserved; F_full - F_prior reduces to F_zero
                    k_quality(s.precision, 0.0, calibration.predict(s.ratio))
                })
                .collect::<Result<Vec<_>>>()?;
            mean(ks.into_iter()).ok_or_else(empty)?
        }
    };
    Ok(DecoupledPoint {
        compression_bin,
        dataset: dataset.to_string(),
        model: String::new(),
        f_full,
        f_zero,
        f_prior: prior,
        ocr_raw,
        k_quality: k,
        ned_full: Some(ned_full),
        ned_zero: Some(ned_zero),
        ned_prior: Some(ned_full - ned_zero),
        mode,
        n_full: samples.full.len(),
        n_zero: samples.zero.len(),
        flags: flags_for(prior, k),
    })
}
