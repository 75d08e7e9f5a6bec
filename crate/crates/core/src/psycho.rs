//! Frequency-importance weights from the absolute threshold of hearing and
//! from per-frame masking thresholds.

use serde::{Deserialize, Serialize};

use crate::dsp::StftConfig;
use crate::{Error, Result};

/// Spreading slope on the lower flank, dB per bark.
pub const LOWER_SLOPE_DB_PER_BARK: f64 = 25.0;
/// Spreading slope on the upper flank, dB per bark.
pub const UPPER_SLOPE_DB_PER_BARK: f64 = 10.0;
/// Power floor for the masking analysis, relative to the frame peak.
pub const MASKING_POWER_FLOOR: f64 = 1e-12;
/// Resolution of the relative level grid used by the masking analysis.
const LEVEL_RESOLUTION_DB: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    GlobalAth,
    PerFrameMasking,
}

/// Positive per-bin weights with square sum equal to N (the highest bin index).
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyWeights {
    pub w: Vec<f64>,
    pub kind: WeightKind,
}

/// Threshold in quiet, dB SPL, for a pure tone at `fq_hz`.
pub fn ath_db(fq_hz: f64) -> Result<f64> {
    if !(fq_hz > 0.0) {
        return Err(Error::NonPositiveFrequency(fq_hz));
    }
    let k = fq_hz / 1000.0;
    Ok(3.64 * k.powf(-0.8) - 6.5 * (-0.6 * (k - 3.3).powi(2)).exp() + 1e-3 * k.powi(4))
}

/// Frequency at which bin `f` is evaluated for the threshold in quiet. Bin 0
/// sits at DC where the threshold diverges, so it is evaluated at three
/// quarters of one bin spacing instead.
pub fn ath_bin_hz(cfg: &StftConfig, f: usize) -> f64 {
    if f == 0 {
        0.75 * cfg.bin_hz(1)
    } else {
        cfg.bin_hz(f)
    }
}

/// Global weights inversely related to the hearing threshold.
///
/// Thresholds are shifted so their minimum is 1, inverted, then normalized.
pub fn ath_weights(cfg: &StftConfig) -> FrequencyWeights {
    let thresholds: Vec<f64> = (0..cfg.num_bins())
        .map(|f| ath_db(ath_bin_hz(cfg, f)).expect("bin frequencies are positive"))
        .collect();
    let min = thresholds.iter().copied().fold(f64::INFINITY, f64::min);
    let w = thresholds.iter().map(|t| 1.0 / (t + 1.0 - min)).collect();
    FrequencyWeights { w: normalize_square_sum(w, cfg.nyquist_bin() as f64), kind: WeightKind::GlobalAth }
}

/// Critical-band rate in bark.
pub fn bark(fq_hz: f64) -> f64 {
    13.0 * (0.00076 * fq_hz).atan() + 3.5 * (fq_hz / 7500.0).powi(2).atan()
}

/// Masking threshold of a magnitude frame, in dB relative to the frame peak.
///
/// Each bin acts as a masker whose level spreads at +25 dB/bark towards lower
/// frequencies and -10 dB/bark towards higher ones; the threshold at a bin is
/// the largest contribution it receives. Levels are taken relative to the
/// frame's peak power and placed on a fixed 1e-6 dB grid, so a global gain on
/// the frame leaves the result bit-identical.
pub fn masking_threshold_db(magnitude: &[f64], cfg: &StftConfig) -> Vec<f64> {
    let peak = magnitude.iter().map(|m| m * m).fold(0.0, f64::max);
    let levels: Vec<f64> = magnitude
        .iter()
        .map(|m| {
            let rel = if peak > 0.0 { (m * m) / peak } else { 0.0 };
            let db = 10.0 * (rel + MASKING_POWER_FLOOR).log10();
            (db / LEVEL_RESOLUTION_DB).round() * LEVEL_RESOLUTION_DB
        })
        .collect();
    let barks: Vec<f64> = (0..magnitude.len()).map(|f| bark(cfg.bin_hz(f))).collect();
    (0..levels.len())
        .map(|j| {
            levels
                .iter()
                .zip(&barks)
                .map(|(&level, &zi)| {
                    let zj = barks[j];
                    if zj < zi {
                        level - LOWER_SLOPE_DB_PER_BARK * (zi - zj)
                    } else {
                        level - UPPER_SLOPE_DB_PER_BARK * (zj - zi)
                    }
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// What to do with the shifted |log| thresholds before normalization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskingMapping {
    /// Use the shifted absolute log thresholds directly.
    #[default]
    Direct,
    /// Invert them, mirroring the threshold-in-quiet weights.
    Inverse,
}

/// Per-frame weights from the masking threshold of a clean magnitude frame.
///
/// The threshold is scaled so its maximum is 1; the absolute base-10 log of
/// the scaled threshold is shifted so its minimum is 1, then normalized.
/// Bins near the spectral peak, where noise is masked, get the least weight.
pub fn masking_weights(clean_magnitude: &[f64], cfg: &StftConfig, mapping: MaskingMapping) -> FrequencyWeights {
    let mth = masking_threshold_db(clean_magnitude, cfg);
    let max = mth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    // |log10(MTH / max MTH)| with MTH in dB.
    let abs_log: Vec<f64> = mth.iter().map(|m| ((m - max) / 10.0).abs()).collect();
    let min = abs_log.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted = abs_log.iter().map(|v| v + 1.0 - min);
    let w: Vec<f64> = match mapping {
        MaskingMapping::Direct => shifted.collect(),
        MaskingMapping::Inverse => shifted.map(|v| 1.0 / v).collect(),
    };
    FrequencyWeights {
        w: normalize_square_sum(w, cfg.nyquist_bin() as f64),
        kind: WeightKind::PerFrameMasking,
    }
}

fn normalize_square_sum(w: Vec<f64>, target: f64) -> Vec<f64> {
    let sq: f64 = w.iter().map(|v| v * v).sum();
    let scale = (target / sq).sqrt();
    w.into_iter().map(|v| v * scale).collect()
}
