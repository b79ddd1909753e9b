//! Split conformal calibration of the EPD trust threshold.
//!
//! Non-conformity is `offset - epd`, so sorting non-conformity ascending is
//! the same as sorting EPD descending. The conservative rank
//! `k = ⌈(n + 1)(1 - ε)⌉` (capped at `n`) picks the quantile, and the EPD
//! threshold is the EPD of the calibration pair sitting at that rank. Taking
//! the threshold from the selected EPD rather than re-subtracting keeps it
//! bit-identical for every offset.

use serde::{Deserialize, Serialize};

use crate::dataset::{Action, Context, PromptRecord};
use crate::estimator::{Estimator, ScoredAction};
use crate::par::Exec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub epsilon: f64,
    pub offset: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            epsilon: 0.2,
            offset: 50.0,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !self.offset.is_finite() {
            return Err(Error::Config("offset must be finite".into()));
        }
        Ok(())
    }

    /// Smallest calibration set for which the rank stays meaningful.
    pub fn min_pairs(&self) -> usize {
        (1.0 / self.epsilon - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub epsilon: f64,
    pub offset: f64,
    pub n_calib: usize,
    /// 1-based rank into ascending non-conformity scores.
    pub quantile_rank: usize,
    pub nonconformity_quantile: f64,
    pub epd_threshold: f64,
}

impl CalibrationResult {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn nonconformity(epd: f64, config: &CalibrationConfig) -> f64 {
    config.offset - epd
}

/// `⌈(n + 1)(1 - ε)⌉` capped at `n`.
pub fn quantile_rank(n: usize, epsilon: f64) -> usize {
    let raw = ((n as f64 + 1.0) * (1.0 - epsilon) - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// All `(history prefix, next action)` pairs under each record's stored order.
pub fn step_pairs(records: &[PromptRecord]) -> Vec<(Context, Action)> {
    records.iter().flat_map(|r| r.step_pairs()).collect()
}

/// Calibrates from precomputed EPD scores of true pairs.
pub fn calibrate_scores(epds: &[f64], config: &CalibrationConfig) -> Result<CalibrationResult> {
    config.validate()?;
    let n = epds.len();
    if n < config.min_pairs() {
        return Err(Error::TooFew {
            what: "calibration pairs",
            required: config.min_pairs(),
            got: n,
        });
    }
    if let Some(bad) = epds.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("calibration EPD {bad}")));
    }
    let mut desc = epds.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let k = quantile_rank(n, config.epsilon);
    let threshold = desc[k - 1];
    Ok(CalibrationResult {
        epsilon: config.epsilon,
        offset: config.offset,
        n_calib: n,
        quantile_rank: k,
        nonconformity_quantile: nonconformity(threshold, config),
        epd_threshold: threshold,
    })
}

/// Scores every step-extended true pair of `records` and calibrates.
pub fn calibrate(
    records: &[PromptRecord],
    estimator: &Estimator,
    config: &CalibrationConfig,
    exec: Exec,
) -> Result<CalibrationResult> {
    let epds = true_pair_epds(records, estimator, exec)?;
    calibrate_scores(&epds, config)
}

pub fn true_pair_epds(
    records: &[PromptRecord],
    estimator: &Estimator,
    exec: Exec,
) -> Result<Vec<f64>> {
    let pairs = step_pairs(records);
    Ok(estimator
        .score_pairs(&pairs, exec)?
        .into_iter()
        .map(|s| s.epd)
        .collect())
}

/// Keeps candidates with `epd >= threshold`, in order.
pub fn prediction_set(scored: &[ScoredAction], epd_threshold: f64) -> Vec<ScoredAction> {
    scored
        .iter()
        .filter(|s| s.epd >= epd_threshold)
        .cloned()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramReport {
    pub split: String,
    pub n_pairs: usize,
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub reference_value: f64,
    pub fraction_below: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl HistogramReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                c
            ));
        }
        out
    }
}

/// Equal-width histogram over `[min, max]` of the scores.
pub fn histogram_from_scores(
    split: &str,
    epds: &[f64],
    bins: usize,
    reference_value: f64,
) -> Result<HistogramReport> {
    if epds.is_empty() {
        return Err(Error::TooFew {
            what: "scored pairs for a histogram",
            required: 1,
            got: 0,
        });
    }
    let bins = bins.max(1);
    let mut lo = epds.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = epds.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = (lo, hi);
    if hi - lo < 1e-12 {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let mut bin_edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    bin_edges.push(hi);
    let mut counts = vec![0usize; bins];
    for &v in epds {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let n = epds.len();
    Ok(HistogramReport {
        split: split.to_string(),
        n_pairs: n,
        bin_edges,
        counts,
        reference_value,
        fraction_below: epds.iter().filter(|&&v| v < reference_value).count() as f64 / n as f64,
        min,
        max,
        mean: epds.iter().sum::<f64>() / n as f64,
    })
}

pub fn epd_histogram(
    split: &str,
    records: &[PromptRecord],
    estimator: &Estimator,
    bins: usize,
    reference_value: f64,
    exec: Exec,
) -> Result<HistogramReport> {
    let epds = true_pair_epds(records, estimator, exec)?;
    histogram_from_scores(split, &epds, bins, reference_value)
}

/// Fraction of scores at or above the threshold.
pub fn coverage_of_scores(epds: &[f64], epd_threshold: f64) -> Result<f64> {
    if epds.is_empty() {
        return Err(Error::TooFew {
            what: "evaluation pairs for coverage",
            required: 1,
            got: 0,
        });
    }
    Ok(epds.iter().filter(|&&v| v >= epd_threshold).count() as f64 / epds.len() as f64)
}

/// Empirical `P(true next action ∈ C(x'))` over every step pair of `records`.
pub fn coverage_audit(
    records: &[PromptRecord],
    estimator: &Estimator,
    result: &CalibrationResult,
    exec: Exec,
) -> Result<f64> {
    let epds = true_pair_epds(records, estimator, exec)?;
    coverage_of_scores(&epds, result.epd_threshold)
}
