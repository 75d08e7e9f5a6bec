//! Feature assembly, training-pair generation and inference.
//!
//! Inputs are context-expanded noisy log-power frames, optionally followed by
//! one frame of noise estimate: none (BD), the stationary mean of the leading
//! frames (BSD), or the running tracker output (BED). Targets are clean
//! log-power frames.

mod logmmse;

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::audio::AudioSignal;
use crate::dsp::{analyze, reconstruct, LogPowerSpectrogram, StftConfig};
use crate::mlp::{Dataset, FeatureNorm, FrameWeights, MlpModel, Real};
use crate::noise::{running_estimate, stationary_estimate, NoiseEstimate, TrackerConfig};
use crate::psycho::{ath_weights, masking_weights, MaskingMapping};
use crate::{Error, Result};

pub use logmmse::{expint_e1, logmmse_enhance, logmmse_enhance_with, LogMmseConfig};

/// Floor on per-dimension feature standard deviations.
pub const NORM_STD_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// Context frames only.
    #[default]
    Bd,
    /// Context frames plus the stationary noise estimate.
    Bsd,
    /// Context frames plus the running noise estimate.
    Bed,
}

impl InputMode {
    pub const ALL: [InputMode; 3] = [InputMode::Bd, InputMode::Bsd, InputMode::Bed];

    pub fn name(self) -> &'static str {
        match self {
            InputMode::Bd => "bd",
            InputMode::Bsd => "bsd",
            InputMode::Bed => "bed",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bd" => Ok(InputMode::Bd),
            "bsd" => Ok(InputMode::Bsd),
            "bed" => Ok(InputMode::Bed),
            other => Err(Error::Config(format!("unknown input mode {other:?} (expected bd, bsd or bed)"))),
        }
    }
}

/// Training objective: plain squared error, or squared error weighted by the
/// threshold-in-quiet or per-frame masking weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    #[default]
    Mse,
    Ath,
    Masking,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Mse => "mse",
            LossMode::Ath => "ath",
            LossMode::Masking => "masking",
        }
    }
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossMode::Mse),
            "ath" => Ok(LossMode::Ath),
            "masking" => Ok(LossMode::Masking),
            other => Err(Error::Config(format!("unknown loss {other:?} (expected mse, ath or masking)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Context radius: frames t-tau..=t+tau form one input.
    pub tau: usize,
    pub mode: InputMode,
    /// Leading frames averaged for the stationary estimate.
    pub stationary_frames: usize,
    pub tracker: TrackerConfig,
    pub masking_mapping: MaskingMapping,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            tau: 5,
            mode: InputMode::Bd,
            stationary_frames: 8,
            tracker: TrackerConfig::default(),
            masking_mapping: MaskingMapping::Direct,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stationary_frames == 0 {
            return Err(Error::Config("stationary_frames must be at least 1".into()));
        }
        Ok(())
    }

    /// Number of context blocks plus the appended estimate, if any.
    pub fn blocks(&self) -> usize {
        2 * self.tau + 1 + usize::from(self.mode != InputMode::Bd)
    }

    pub fn input_dim(&self, bins: usize) -> usize {
        self.blocks() * bins
    }
}

/// Concatenation of frames t-tau..=t+tau, with out-of-range frames replaced by
/// the nearest edge frame.
pub fn expand_context(spec: &LogPowerSpectrogram, t: usize, tau: usize) -> Result<Array1<f64>> {
    let frames = spec.frames();
    if t >= frames {
        return Err(Error::IndexOutOfRange { index: t, frames });
    }
    let bins = spec.bins();
    let mut out = Array1::zeros((2 * tau + 1) * bins);
    write_context(spec, t, tau, out.view_mut().into_slice().expect("contiguous"));
    Ok(out)
}

fn write_context(spec: &LogPowerSpectrogram, t: usize, tau: usize, out: &mut [f64]) {
    let bins = spec.bins();
    let last = spec.frames() - 1;
    for (k, chunk) in out.chunks_exact_mut(bins).take(2 * tau + 1).enumerate() {
        let src = (t + k).saturating_sub(tau).min(last);
        for (d, s) in chunk.iter_mut().zip(spec.values.row(src)) {
            *d = *s;
        }
    }
}

/// Appends one noise-estimate frame to a context-expanded input.
pub fn augment(y: ArrayView1<f64>, e: ArrayView1<f64>) -> Result<Array1<f64>> {
    if e.is_empty() || y.len() % e.len() != 0 {
        return Err(Error::DimensionMismatch(format!(
            "estimate of length {} does not match context vector of length {}",
            e.len(),
            y.len()
        )));
    }
    Ok(y.iter().chain(e.iter()).copied().collect())
}

/// Noise estimate used by `cfg.mode`, if any.
pub fn noise_estimate(
    noisy: &LogPowerSpectrogram,
    noisy_power: &Array2<f64>,
    cfg: &FeatureConfig,
) -> Result<Option<NoiseEstimate>> {
    Ok(match cfg.mode {
        InputMode::Bd => None,
        InputMode::Bsd => Some(stationary_estimate(noisy, cfg.stationary_frames)?),
        InputMode::Bed => Some(running_estimate(noisy_power, &cfg.tracker)),
    })
}

/// Network inputs for every frame, T x input_dim.
pub fn input_features(noisy: &LogPowerSpectrogram, noisy_power: &Array2<f64>, cfg: &FeatureConfig) -> Result<Array2<f64>> {
    let estimate = noise_estimate(noisy, noisy_power, cfg)?;
    let bins = noisy.bins();
    let ctx = (2 * cfg.tau + 1) * bins;
    let mut out = Array2::zeros((noisy.frames(), cfg.input_dim(bins)));
    for (t, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        write_context(noisy, t, cfg.tau, &mut row[..ctx]);
        if let Some(e) = &estimate {
            for (d, s) in row[ctx..].iter_mut().zip(e.values.row(t)) {
                *d = *s;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: Array1<f64>,
    pub target: Array1<f64>,
    /// Per-bin loss weights from the clean frame, for the masking loss.
    pub mask_weights: Option<Array1<f64>>,
}

/// Training features of one utterance in matrix form, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
    pub mask_weights: Option<Array2<f64>>,
}

impl UtteranceFeatures {
    pub fn frames(&self) -> usize {
        self.inputs.nrows()
    }
}

pub fn utterance_features(
    clean: &AudioSignal,
    noisy: &AudioSignal,
    feat: &FeatureConfig,
    stft_cfg: &StftConfig,
    loss: LossMode,
) -> Result<UtteranceFeatures> {
    if clean.len() != noisy.len() {
        return Err(Error::LengthMismatch { left: clean.len(), right: noisy.len() });
    }
    feat.validate()?;
    let (clean_lp, _, clean_power) = analyze(clean, stft_cfg)?;
    let (noisy_lp, _, noisy_power) = analyze(noisy, stft_cfg)?;
    let inputs = input_features(&noisy_lp, &noisy_power, feat)?;
    let mask_weights = (loss == LossMode::Masking).then(|| {
        let mut w = Array2::zeros(clean_power.dim());
        for (mut dst, p) in w.axis_iter_mut(Axis(0)).zip(clean_power.axis_iter(Axis(0))) {
            let mag: Vec<f64> = p.iter().map(|v| v.sqrt()).collect();
            dst.assign(&Array1::from(masking_weights(&mag, stft_cfg, feat.masking_mapping).w));
        }
        w
    });
    Ok(UtteranceFeatures { inputs, targets: clean_lp.values, mask_weights })
}

/// One (noisy input, clean target) pair per STFT frame.
pub fn make_training_pairs(
    clean: &AudioSignal,
    noisy: &AudioSignal,
    feat: &FeatureConfig,
    stft_cfg: &StftConfig,
    loss: LossMode,
) -> Result<Vec<TrainingPair>> {
    let u = utterance_features(clean, noisy, feat, stft_cfg, loss)?;
    Ok((0..u.frames())
        .map(|t| TrainingPair {
            input: u.inputs.row(t).to_owned(),
            target: u.targets.row(t).to_owned(),
            mask_weights: u.mask_weights.as_ref().map(|w| w.row(t).to_owned()),
        })
        .collect())
}

/// Stacks per-utterance features into one dataset in precision `T`.
pub fn stack_dataset<T: Real>(utterances: &[UtteranceFeatures], loss: LossMode, stft_cfg: &StftConfig) -> Result<Dataset<T>> {
    let first = utterances.first().ok_or(Error::EmptyDataset)?;
    let (in_dim, out_dim) = (first.inputs.ncols(), first.targets.ncols());
    let rows: usize = utterances.iter().map(UtteranceFeatures::frames).sum();
    let mut inputs = Array2::<T>::zeros((rows, in_dim));
    let mut targets = Array2::<T>::zeros((rows, out_dim));
    let mut per_frame = (loss == LossMode::Masking).then(|| Array2::<T>::zeros((rows, out_dim)));
    let mut at = 0;
    for u in utterances {
        if u.inputs.ncols() != in_dim || u.targets.ncols() != out_dim {
            return Err(Error::DimensionMismatch("utterances have different feature dimensions".into()));
        }
        let n = u.frames();
        let cast = |a: &Array2<f64>| a.mapv(T::from_f64_lossy);
        inputs.slice_mut(s![at..at + n, ..]).assign(&cast(&u.inputs));
        targets.slice_mut(s![at..at + n, ..]).assign(&cast(&u.targets));
        if let Some(w) = per_frame.as_mut() {
            let src = u.mask_weights.as_ref().ok_or_else(|| {
                Error::DimensionMismatch("masking loss needs per-frame weights for every utterance".into())
            })?;
            w.slice_mut(s![at..at + n, ..]).assign(&cast(src));
        }
        at += n;
    }
    let weights = match loss {
        LossMode::Mse => FrameWeights::None,
        LossMode::Ath => FrameWeights::Global(ath_weights(stft_cfg).w.into_iter().map(T::from_f64_lossy).collect()),
        LossMode::Masking => FrameWeights::PerFrame(per_frame.expect("allocated for masking")),
    };
    Ok(Dataset { inputs, targets, weights })
}

/// Normalization statistics from training data.
///
/// Input statistics are fitted per frequency bin on the central context block
/// (each noisy frame counted once) and shared by every block, including the
/// appended noise estimate, since all live in the same log-power domain.
pub fn fit_feature_norm<T: Real>(train: &Dataset<T>, feat: &FeatureConfig) -> Result<FeatureNorm<T>> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bins = train.targets.ncols();
    if train.inputs.ncols() != feat.input_dim(bins) {
        return Err(Error::DimensionMismatch(format!(
            "input dim {} does not match {} mode with tau {}",
            train.inputs.ncols(),
            feat.mode,
            feat.tau
        )));
    }
    let centre = train.inputs.slice(s![.., feat.tau * bins..(feat.tau + 1) * bins]).to_owned();
    let (mean, std) = crate::mlp::fit_norm_stats(&centre, NORM_STD_FLOOR);
    let tile = |v: &Array1<T>| -> Array1<T> { (0..feat.blocks()).flat_map(|_| v.iter().copied()).collect() };
    let (target_mean, target_std) = crate::mlp::fit_norm_stats(&train.targets, NORM_STD_FLOOR);
    Ok(FeatureNorm { input_mean: tile(&mean), input_std: tile(&std), target_mean, target_std })
}

/// Estimated clean log-power spectrogram for `noisy`.
pub fn predict_log_power<T: Real>(
    model: &MlpModel<T>,
    noisy: &LogPowerSpectrogram,
    noisy_power: &Array2<f64>,
    feat: &FeatureConfig,
) -> Result<LogPowerSpectrogram> {
    let bins = noisy.bins();
    let expected = feat.input_dim(bins);
    if model.input_dim() != expected || model.output_dim() != bins {
        return Err(Error::DimensionMismatch(format!(
            "model maps {} -> {}, {} mode needs {expected} -> {bins}",
            model.input_dim(),
            model.output_dim(),
            feat.mode
        )));
    }
    let inputs = input_features(noisy, noisy_power, feat)?.mapv(T::from_f64_lossy);
    let out = model.predict(&inputs)?;
    Ok(LogPowerSpectrogram {
        values: out.mapv(|v| v.to_f64().expect("finite network output")),
        config: noisy.config,
    })
}

/// Enhances `noisy` with a trained model, resynthesizing with the noisy phase.
pub fn enhance<T: Real>(
    model: &MlpModel<T>,
    noisy: &AudioSignal,
    feat: &FeatureConfig,
    stft_cfg: &StftConfig,
) -> Result<AudioSignal> {
    let (lp, phase, power) = analyze(noisy, stft_cfg)?;
    let est = predict_log_power(model, &lp, &power, feat)?;
    reconstruct(&est, &phase, stft_cfg, noisy.len())
}
