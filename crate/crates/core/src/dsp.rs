//! STFT analysis, log-power spectra and least-squares overlap-add synthesis.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioSignal, SAMPLE_RATE_HZ};
use crate::{Error, Result};

const ENVELOPE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    /// Periodic Hamming.
    Hamming,
    /// Periodic Hann.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        let n = len as f64;
        (0..len)
            .map(|i| {
                let phase = 2.0 * PI * i as f64 / n;
                match self {
                    WindowKind::Hamming => 0.54 - 0.46 * phase.cos(),
                    WindowKind::Hann => 0.5 - 0.5 * phase.cos(),
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_len: usize,
    pub hop: usize,
    pub dft_size: usize,
    pub window: WindowKind,
    /// Lower bound applied to squared magnitude before taking the log.
    pub power_floor: f64,
}

impl Default for StftConfig {
    /// 16 ms windows with an 8 ms shift at 16 kHz.
    fn default() -> Self {
        Self { window_len: 256, hop: 128, dft_size: 256, window: WindowKind::Hamming, power_floor: 1e-10 }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len || self.window_len > self.dft_size {
            return Err(Error::Config(format!(
                "need 0 < hop <= window_len <= dft_size, got hop {} window {} dft {}",
                self.hop, self.window_len, self.dft_size
            )));
        }
        if !(self.power_floor > 0.0) {
            return Err(Error::Config("power_floor must be positive".into()));
        }
        Ok(())
    }

    /// N, the index of the highest bin; bins run 0..=N.
    pub fn nyquist_bin(&self) -> usize {
        self.dft_size / 2
    }

    pub fn num_bins(&self) -> usize {
        self.dft_size / 2 + 1
    }

    pub fn frame_count(&self, len: usize) -> Option<usize> {
        (len >= self.window_len).then(|| (len - self.window_len) / self.hop + 1)
    }

    /// Center frequency of bin `f` at the pipeline sample rate.
    pub fn bin_hz(&self, f: usize) -> f64 {
        f as f64 * SAMPLE_RATE_HZ as f64 / self.dft_size as f64
    }

    pub fn log_floor(&self) -> f64 {
        self.power_floor.ln()
    }
}

/// T x (N+1) natural-log power spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct LogPowerSpectrogram {
    pub values: Array2<f64>,
    pub config: StftConfig,
}

impl LogPowerSpectrogram {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.values.row(t)
    }
}

/// T x (N+1) phase in radians, each entry in (-pi, pi].
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpectrogram {
    pub values: Array2<f64>,
}

/// Magnitude and phase of the short-time transform.
#[derive(Debug, Clone)]
pub struct Stft {
    pub magnitude: Array2<f64>,
    pub phase: PhaseSpectrogram,
}

impl Stft {
    pub fn power(&self) -> Array2<f64> {
        self.magnitude.mapv(|m| m * m)
    }
}

/// Frame `t` covers samples `[t*hop, t*hop + window_len)`, windowed and
/// zero-padded to `dft_size`.
pub fn stft(signal: &AudioSignal, cfg: &StftConfig) -> Result<Stft> {
    cfg.validate()?;
    let x = &signal.samples;
    let frames = cfg
        .frame_count(x.len())
        .ok_or(Error::SignalTooShort { len: x.len(), needed: cfg.window_len })?;
    let bins = cfg.num_bins();
    let window = cfg.window.coefficients(cfg.window_len);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.dft_size);

    let mut magnitude = Array2::zeros((frames, bins));
    let mut phase = Array2::zeros((frames, bins));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.dft_size];
    for t in 0..frames {
        let start = t * cfg.hop;
        buf.fill(Complex64::new(0.0, 0.0));
        for (b, (&s, &w)) in buf.iter_mut().zip(x[start..start + cfg.window_len].iter().zip(&window)) {
            b.re = s * w;
        }
        fft.process(&mut buf);
        for f in 0..bins {
            magnitude[[t, f]] = buf[f].norm();
            phase[[t, f]] = wrap_phase(buf[f].arg());
        }
    }
    Ok(Stft { magnitude, phase: PhaseSpectrogram { values: phase } })
}

fn wrap_phase(p: f64) -> f64 {
    if p <= -PI {
        p + 2.0 * PI
    } else {
        p
    }
}

/// `ln(max(magnitude^2, power_floor))` per entry.
pub fn log_power(magnitude: &Array2<f64>, cfg: &StftConfig) -> LogPowerSpectrogram {
    let floor = cfg.power_floor;
    LogPowerSpectrogram { values: magnitude.mapv(|m| (m * m).max(floor).ln()), config: *cfg }
}

/// Log-power spectrogram of a power (squared magnitude) matrix.
pub fn log_of_power(power: &Array2<f64>, cfg: &StftConfig) -> LogPowerSpectrogram {
    let floor = cfg.power_floor;
    LogPowerSpectrogram { values: power.mapv(|p| p.max(floor).ln()), config: *cfg }
}

/// Synthesizes a waveform from an estimated log-power spectrogram and a phase
/// spectrogram by least-squares overlap-add.
///
/// Each frame is inverse transformed, weighted by the analysis window and
/// overlap-added; the sum is divided by the overlap-added squared window.
pub fn reconstruct(
    log_power_est: &LogPowerSpectrogram,
    phase: &PhaseSpectrogram,
    cfg: &StftConfig,
    out_len: usize,
) -> Result<AudioSignal> {
    cfg.validate()?;
    let (frames, bins) = log_power_est.values.dim();
    if phase.values.dim() != (frames, bins) {
        return Err(Error::DimensionMismatch(format!(
            "log-power {:?} vs phase {:?}",
            log_power_est.values.dim(),
            phase.values.dim()
        )));
    }
    if bins != cfg.num_bins() {
        return Err(Error::DimensionMismatch(format!("{bins} bins, config expects {}", cfg.num_bins())));
    }
    let n = cfg.dft_size;
    let window = cfg.window.coefficients(cfg.window_len);
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n);

    let span = if frames == 0 { 0 } else { (frames - 1) * cfg.hop + cfg.window_len };
    let mut acc = vec![0.0; span];
    let mut envelope = vec![0.0; span];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (t, (lp_row, ph_row)) in log_power_est.values.axis_iter(Axis(0)).zip(phase.values.axis_iter(Axis(0))).enumerate() {
        for f in 0..bins {
            let mag = (lp_row[f] * 0.5).exp();
            buf[f] = Complex64::from_polar(mag, ph_row[f]);
        }
        // Hermitian completion; DC and Nyquist must be real for a real frame.
        buf[0].im = 0.0;
        if n % 2 == 0 {
            buf[n / 2].im = 0.0;
        }
        for f in 1..n - bins + 1 {
            buf[n - f] = buf[f].conj();
        }
        ifft.process(&mut buf);
        let start = t * cfg.hop;
        for (i, &w) in window.iter().enumerate() {
            acc[start + i] += buf[i].re / n as f64 * w;
            envelope[start + i] += w * w;
        }
    }
    let mut samples: Vec<f64> =
        acc.iter().zip(&envelope).map(|(a, e)| a / e.max(ENVELOPE_FLOOR)).collect();
    samples.resize(out_len, 0.0);
    Ok(AudioSignal::mono16k(samples))
}

/// Full analysis of a waveform into log-power and phase.
pub fn analyze(signal: &AudioSignal, cfg: &StftConfig) -> Result<(LogPowerSpectrogram, PhaseSpectrogram, Array2<f64>)> {
    let Stft { magnitude, phase } = stft(signal, cfg)?;
    let lp = log_power(&magnitude, cfg);
    let power = magnitude.mapv_into(|m| m * m);
    Ok((lp, phase, power))
}
