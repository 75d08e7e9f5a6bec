//! Noise log-power estimates used to augment the network input.
//!
//! Two variants: a stationary estimate averaged over the leading frames, and a
//! causal per-frame tracker driven by a speech presence probability computed
//! under a fixed a-priori SNR.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::dsp::LogPowerSpectrogram;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimateMode {
    Stationary,
    Running,
}

/// Per-frame noise estimate in the log-power domain, T x (N+1).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseEstimate {
    pub values: Array2<f64>,
    pub mode: EstimateMode,
}

/// Mean of the first `frames` rows of the noisy log-power spectrogram,
/// replicated over all frames.
pub fn stationary_estimate(noisy: &LogPowerSpectrogram, frames: usize) -> Result<NoiseEstimate> {
    let total = noisy.frames();
    if frames == 0 || total < frames {
        return Err(Error::TooFewFrames { have: total, need: frames.max(1) });
    }
    let mut mean = Array1::<f64>::zeros(noisy.bins());
    for row in noisy.values.rows().into_iter().take(frames) {
        mean += &row;
    }
    mean /= frames as f64;
    let values = mean.broadcast((total, noisy.bins())).expect("row broadcast").to_owned();
    Ok(NoiseEstimate { values, mode: EstimateMode::Stationary })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Fixed a-priori SNR assumed under speech presence, in dB.
    pub prior_snr_db: f64,
    /// Prior probability of speech presence.
    pub speech_prior: f64,
    /// Smoothing of the noise power update.
    pub noise_smoothing: f64,
    /// Smoothing of the running presence probability used for stuck detection.
    pub presence_smoothing: f64,
    /// Cap applied to the presence probability once the smoothed value exceeds it.
    pub stuck_clamp: f64,
    /// Floor used when converting the estimate to log power.
    pub power_floor: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            prior_snr_db: 15.0,
            speech_prior: 0.5,
            noise_smoothing: 0.8,
            presence_smoothing: 0.9,
            stuck_clamp: 0.99,
            power_floor: 1e-10,
        }
    }
}

/// Causal noise power tracker.
///
/// Feeds one power frame at a time; the state after frame t depends only on
/// frames 0..=t.
#[derive(Debug, Clone)]
pub struct NoiseTracker {
    cfg: TrackerConfig,
    noise: Vec<f64>,
    presence_mean: Vec<f64>,
    initialized: bool,
}

impl NoiseTracker {
    pub fn new(bins: usize, cfg: TrackerConfig) -> Self {
        Self { cfg, noise: vec![0.0; bins], presence_mean: vec![0.5; bins], initialized: false }
    }

    /// Current linear-power noise estimate.
    pub fn noise_power(&self) -> &[f64] {
        &self.noise
    }

    /// Consumes one frame of linear power and returns the updated estimate.
    pub fn update(&mut self, power: &[f64]) -> &[f64] {
        assert_eq!(power.len(), self.noise.len(), "frame width");
        if !self.initialized {
            self.noise.copy_from_slice(power);
            self.initialized = true;
            return &self.noise;
        }
        let xi = 10f64.powf(self.cfg.prior_snr_db / 10.0);
        let prior_ratio = (1.0 - self.cfg.speech_prior) / self.cfg.speech_prior;
        let glr_scale = prior_ratio * (1.0 + xi);
        let exponent_scale = xi / (1.0 + xi);
        let alpha = self.cfg.noise_smoothing;
        let beta = self.cfg.presence_smoothing;
        for ((noise, pmean), &p) in self.noise.iter_mut().zip(self.presence_mean.iter_mut()).zip(power) {
            let posterior_snr = if *noise > 0.0 {
                p / *noise
            } else if p > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            // P(H1 | Y) = 1 / (1 + P(H0)/P(H1) (1 + xi) exp(-gamma xi / (1 + xi)))
            let mut presence = 1.0 / (1.0 + glr_scale * (-posterior_snr * exponent_scale).exp());
            *pmean = beta * *pmean + (1.0 - beta) * presence;
            if *pmean > self.cfg.stuck_clamp {
                presence = presence.min(self.cfg.stuck_clamp);
            }
            let estimate = (1.0 - presence) * p + presence * *noise;
            *noise = alpha * *noise + (1.0 - alpha) * estimate;
        }
        &self.noise
    }
}

/// Runs the tracker over a linear-power spectrogram and returns the per-frame
/// estimate in log power.
pub fn running_estimate(noisy_power: &Array2<f64>, cfg: &TrackerConfig) -> NoiseEstimate {
    let floor = cfg.power_floor;
    let values = running_power(noisy_power, cfg).mapv_into(|p| p.max(floor).ln());
    NoiseEstimate { values, mode: EstimateMode::Running }
}

/// Linear-power output of the tracker, T x (N+1).
pub fn running_power(noisy_power: &Array2<f64>, cfg: &TrackerConfig) -> Array2<f64> {
    let (frames, bins) = noisy_power.dim();
    let mut tracker = NoiseTracker::new(bins, *cfg);
    let mut values = Array2::zeros((frames, bins));
    let mut frame = vec![0.0; bins];
    for (t, row) in noisy_power.axis_iter(Axis(0)).enumerate() {
        for (dst, &src) in frame.iter_mut().zip(row.iter()) {
            *dst = src;
        }
        for (dst, &e) in values.row_mut(t).iter_mut().zip(tracker.update(&frame)) {
            *dst = e;
        }
    }
    values
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lp(values: Array2<f64>) -> LogPowerSpectrogram {
        LogPowerSpectrogram { values, config: StftConfig::default() }
    }

    #[test]
    fn stationary_constant_and_two_point() {
        let c = Array2::from_elem((10, 4), 3.5);
        let e = stationary_estimate(&lp(c), 8).unwrap();
        assert!(e.values.iter().all(|&v| v == 3.5));

        let mut m = Array2::zeros((3, 4));
        m.row_mut(1).fill(2.0);
        m.row_mut(2).fill(100.0);
        let e = stationary_estimate(&lp(m), 2).unwrap();
        assert!(e.values.iter().all(|&v| v == 1.0));
        assert_eq!(e.values.nrows(), 3);
    }

    #[test]
    fn stationary_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Array2::from_shape_fn((20, 129), |_| rng.random_range(-20.0..5.0));
        let e = stationary_estimate(&lp(m.clone()), 8).unwrap();
        for f in 0..129 {
            let mut s = 0.0;
            for t in 0..8 {
                s += m[[t, f]];
            }
            for t in 0..20 {
                assert!((e.values[[t, f]] - s / 8.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stationary_too_few_frames() {
        let m = Array2::zeros((5, 4));
        assert!(matches!(stationary_estimate(&lp(m.clone()), 8), Err(Error::TooFewFrames { have: 5, need: 8 })));
        assert!(matches!(stationary_estimate(&lp(m), 0), Err(Error::TooFewFrames { .. })));
    }

    #[test]
    fn silence_stays_at_floor() {
        let cfg = TrackerConfig::default();
        let e = running_estimate(&Array2::zeros((30, 5)), &cfg);
        assert!(e.values.iter().all(|&v| v == cfg.power_floor.ln()));
    }

    #[test]
    fn constant_input_is_fixed_point() {
        let cfg = TrackerConfig::default();
        let p = Array2::from_elem((100, 7), 0.25);
        let e = running_estimate(&p, &cfg);
        for v in e.values.iter() {
            assert!((v - 0.25f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Array2::from_shape_fn((60, 9), |_| -rng.random::<f64>().ln());
        let cfg = TrackerConfig::default();
        let full = running_estimate(&p, &cfg);
        for cut in [1, 7, 33] {
            let part = running_estimate(&p.slice(ndarray::s![..cut, ..]).to_owned(), &cfg);
            assert_eq!(part.values, full.values.slice(ndarray::s![..cut, ..]));
        }
    }

    #[test]
    fn update_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tracker = NoiseTracker::new(16, TrackerConfig::default());
        tracker.update(&vec![1.0; 16]);
        for _ in 0..200 {
            let prev = tracker.noise_power().to_vec();
            let frame: Vec<f64> = (0..16).map(|_| -rng.random::<f64>().ln()).collect();
            let next = tracker.update(&frame).to_vec();
            for ((n, p), y) in next.iter().zip(&prev).zip(&frame) {
                assert!(*n >= p.min(*y) - 1e-15 && *n <= p.max(*y) + 1e-15);
            }
        }
    }
}
