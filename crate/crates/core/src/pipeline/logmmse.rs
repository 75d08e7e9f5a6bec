//! Log-spectral-amplitude MMSE baseline with decision-directed a-priori SNR.

use serde::{Deserialize, Serialize};

use crate::audio::AudioSignal;
use crate::dsp::{analyze, reconstruct, LogPowerSpectrogram, StftConfig};
use crate::noise::{running_power, TrackerConfig};
use crate::Result;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Exponential integral E1(x) for x > 0: power series up to 1, modified Lentz
/// continued fraction beyond.
pub fn expint_e1(x: f64) -> f64 {
    if x <= 0.0 {
        return f64::INFINITY;
    }
    if x <= 1.0 {
        let mut sum = 0.0;
        let mut term = 1.0;
        for k in 1..200 {
            term *= -x / k as f64;
            let add = term / k as f64;
            sum += add;
            if add.abs() < 1e-17 * sum.abs().max(1e-300) {
                break;
            }
        }
        -EULER_GAMMA - x.ln() - sum
    } else {
        const TINY: f64 = 1e-300;
        let mut b = x + 1.0;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -((i * i) as f64);
            b += 2.0;
            d = 1.0 / (an * d + b);
            c = b + an / c;
            let del = c * d;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        h * (-x).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogMmseConfig {
    /// Decision-directed smoothing.
    pub alpha: f64,
    pub xi_floor_db: f64,
    pub gain_floor_db: f64,
    pub tracker: TrackerConfig,
}

impl Default for LogMmseConfig {
    fn default() -> Self {
        Self { alpha: 0.98, xi_floor_db: -25.0, gain_floor_db: -25.0, tracker: TrackerConfig::default() }
    }
}

pub fn logmmse_enhance(noisy: &AudioSignal, stft_cfg: &StftConfig) -> Result<AudioSignal> {
    logmmse_enhance_with(noisy, stft_cfg, &LogMmseConfig::default())
}

pub fn logmmse_enhance_with(noisy: &AudioSignal, stft_cfg: &StftConfig, cfg: &LogMmseConfig) -> Result<AudioSignal> {
    let (_, phase, power) = analyze(noisy, stft_cfg)?;
    let noise = running_power(&power, &cfg.tracker);
    let xi_min = 10f64.powf(cfg.xi_floor_db / 10.0);
    let g_min = 10f64.powf(cfg.gain_floor_db / 20.0);
    let floor = stft_cfg.power_floor;
    let (frames, bins) = power.dim();

    let mut out = power.clone();
    // |G·Y|² / λ of the previous frame, per bin.
    let mut prev_clean_snr = vec![0.0; bins];
    for t in 0..frames {
        for f in 0..bins {
            let lambda = noise[[t, f]].max(floor);
            let gamma = (power[[t, f]] / lambda).min(1e12);
            let ml = (gamma - 1.0).max(0.0);
            let xi = if t == 0 {
                cfg.alpha + (1.0 - cfg.alpha) * ml
            } else {
                cfg.alpha * prev_clean_snr[f] + (1.0 - cfg.alpha) * ml
            }
            .max(xi_min);
            let nu = (xi * gamma / (1.0 + xi)).max(1e-10);
            let gain = (xi / (1.0 + xi) * (0.5 * expint_e1(nu)).exp()).max(g_min);
            prev_clean_snr[f] = gain * gain * gamma;
            out[[t, f]] = gain * gain * power[[t, f]];
        }
    }
    let lp = LogPowerSpectrogram { values: out.mapv_into(|p| p.max(floor).ln()), config: *stft_cfg };
    reconstruct(&lp, &phase, stft_cfg, noisy.len())
}
