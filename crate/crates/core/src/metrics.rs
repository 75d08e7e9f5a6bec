//! Objective measures: speech distortion, noise reduction, segmental SNR and
//! short-time objective intelligibility, plus CSV reporting.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::AudioSignal;
use crate::dsp::{analyze, LogPowerSpectrogram, StftConfig};
use crate::{Error, Result};

fn same_shape(a: &LogPowerSpectrogram, b: &LogPowerSpectrogram) -> Result<()> {
    if a.values.dim() != b.values.dim() {
        return Err(Error::DimensionMismatch(format!("spectrograms {:?} vs {:?}", a.values.dim(), b.values.dim())));
    }
    Ok(())
}

fn mean_frame_l1(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let frames = a.nrows();
    if frames == 0 {
        return 0.0;
    }
    let total: f64 = a
        .axis_iter(Axis(0))
        .zip(b.axis_iter(Axis(0)))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum();
    total / frames as f64
}

/// Mean over frames of the L1 distance between estimated and clean log-power frames.
pub fn speech_distortion(est: &LogPowerSpectrogram, clean: &LogPowerSpectrogram) -> Result<f64> {
    same_shape(est, clean)?;
    Ok(mean_frame_l1(&est.values, &clean.values))
}

/// Mean over frames of the L1 distance between estimated and noisy log-power frames.
pub fn noise_reduction(est: &LogPowerSpectrogram, noisy: &LogPowerSpectrogram) -> Result<f64> {
    same_shape(est, noisy)?;
    Ok(mean_frame_l1(&est.values, &noisy.values))
}

pub const SEG_SNR_FRAME: usize = 512;
pub const SEG_SNR_RANGE_DB: (f64, f64) = (-10.0, 35.0);
/// Frames whose clean level is below -60 dBFS are skipped.
const SEG_SNR_SILENCE_POWER: f64 = 1e-6;

/// Mean of per-frame SNRs over 32 ms frames, each clamped to [-10, 35] dB.
pub fn segmental_snr(clean: &AudioSignal, processed: &AudioSignal) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::LengthMismatch { left: clean.len(), right: processed.len() });
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (c, p) in clean.samples.chunks_exact(SEG_SNR_FRAME).zip(processed.samples.chunks_exact(SEG_SNR_FRAME)) {
        let sig: f64 = c.iter().map(|v| v * v).sum();
        if sig / (SEG_SNR_FRAME as f64) < SEG_SNR_SILENCE_POWER {
            continue;
        }
        let err: f64 = c.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum();
        let snr = if err > 0.0 { 10.0 * (sig / err).log10() } else { f64::INFINITY };
        sum += snr.clamp(SEG_SNR_RANGE_DB.0, SEG_SNR_RANGE_DB.1);
        count += 1;
    }
    if count == 0 {
        return Err(Error::AllSilent);
    }
    Ok(sum / count as f64)
}

mod stoi_consts {
    pub const FS: u32 = 10_000;
    pub const N_FRAME: usize = 256;
    pub const NFFT: usize = 512;
    pub const NUM_BANDS: usize = 15;
    pub const MIN_FREQ: f64 = 150.0;
    /// Frames per intermediate intelligibility segment (384 ms).
    pub const SEGMENT: usize = 30;
    pub const BETA_DB: f64 = -15.0;
    pub const DYN_RANGE_DB: f64 = 40.0;
}
use stoi_consts::*;

const EPS: f64 = f64::EPSILON;
const RESAMPLE_HALF_TAPS: i64 = 16;

/// Band-limited resampling by direct evaluation of a Blackman-windowed sinc
/// with 32 taps at the input rate.
pub fn resample(x: &[f64], from_hz: u32, to_hz: u32) -> Vec<f64> {
    if from_hz == to_hz {
        return x.to_vec();
    }
    let (fi, fo) = (from_hz as f64, to_hz as f64);
    let cutoff = 0.45 * fi.min(fo);
    let ratio = 2.0 * cutoff / fi;
    let out_len = (x.len() as u64 * to_hz as u64).div_ceil(from_hz as u64) as usize;
    let half = RESAMPLE_HALF_TAPS as f64;
    (0..out_len)
        .map(|m| {
            let pos = m as f64 * fi / fo;
            let centre = pos.floor() as i64;
            let mut acc = 0.0;
            for k in (centre - RESAMPLE_HALF_TAPS + 1)..=(centre + RESAMPLE_HALF_TAPS) {
                if k < 0 || k as usize >= x.len() {
                    continue;
                }
                let d = pos - k as f64;
                if d.abs() >= half {
                    continue;
                }
                let arg = ratio * d;
                let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
                let w = 0.42 + 0.5 * (PI * d / half).cos() + 0.08 * (2.0 * PI * d / half).cos();
                acc += x[k as usize] * ratio * sinc * w;
            }
            acc
        })
        .collect()
}

/// Symmetric Hann window without its zero end points.
fn hann_inner(len: usize) -> Vec<f64> {
    (1..=len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len + 1) as f64).cos()).collect()
}

fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

/// Drops frames more than 40 dB below the loudest clean frame and
/// overlap-adds the remaining windowed frames of both signals.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = N_FRAME / 2;
    let w = hann_inner(N_FRAME);
    let starts: Vec<usize> = frame_starts(x.len(), N_FRAME, hop).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let norm = x[s..s + N_FRAME].iter().zip(&w).map(|(v, w)| (v * w).powi(2)).sum::<f64>().sqrt();
            20.0 * (norm + EPS).log10()
        })
        .collect();
    let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> =
        starts.iter().zip(&energies).filter(|(_, &e)| max - DYN_RANGE_DB - e < 0.0).map(|(&s, _)| s).collect();
    let out_len = if kept.is_empty() { 0 } else { (kept.len() - 1) * hop + N_FRAME };
    let (mut xs, mut ys) = (vec![0.0; out_len], vec![0.0; out_len]);
    for (k, &s) in kept.iter().enumerate() {
        for i in 0..N_FRAME {
            xs[k * hop + i] += w[i] * x[s + i];
            ys[k * hop + i] += w[i] * y[s + i];
        }
    }
    (xs, ys)
}

/// Rows of ones marking the DFT bins of each one-third octave band.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freqs: Vec<f64> = (0..bins).map(|i| i as f64 * FS as f64 / NFFT as f64).collect();
    let nearest = |target: f64| {
        freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - target).powi(2).total_cmp(&(b.1 - target).powi(2)))
            .map(|(i, _)| i)
            .expect("non-empty")
    };
    (0..NUM_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes, NUM_BANDS x frames.
fn band_envelopes(x: &[f64], bands: &[(usize, usize)]) -> Array2<f64> {
    let hop = N_FRAME / 2;
    let w = hann_inner(N_FRAME);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let starts: Vec<usize> = frame_starts(x.len(), N_FRAME, hop).collect();
    let mut out = Array2::zeros((bands.len(), starts.len()));
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    for (t, &s) in starts.iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for i in 0..N_FRAME {
            buf[i].re = w[i] * x[s + i];
        }
        fft.process(&mut buf);
        for (b, &(lo, hi)) in bands.iter().enumerate() {
            out[[b, t]] = buf[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        }
    }
    out
}

fn centred_unit(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt() + EPS;
    v.iter_mut().for_each(|x| *x /= norm);
}

/// Short-time objective intelligibility of `processed` against `clean`,
/// clamped to [0, 1].
///
/// Both signals are resampled to 10 kHz; frames more than 40 dB below the
/// loudest clean frame are dropped; 15 one-third octave band envelopes are
/// compared over 30-frame segments by clipped, normalized correlation.
pub fn stoi(clean: &AudioSignal, processed: &AudioSignal) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::LengthMismatch { left: clean.len(), right: processed.len() });
    }
    let x = resample(&clean.samples, clean.sample_rate_hz, FS);
    let y = resample(&processed.samples, processed.sample_rate_hz, FS);
    let (x, y) = remove_silent_frames(&x, &y);
    let bands = third_octave_bands();
    let xe = band_envelopes(&x, &bands);
    let ye = band_envelopes(&y, &bands);
    let frames = xe.ncols();
    if frames < SEGMENT {
        return Err(Error::TooShort { frames, needed: SEGMENT });
    }
    let clip = 10f64.powf(-BETA_DB / 20.0);
    let (mut total, mut count) = (0.0, 0usize);
    let mut xs = vec![0.0; SEGMENT];
    let mut ys = vec![0.0; SEGMENT];
    for m in SEGMENT..=frames {
        for b in 0..bands.len() {
            for (i, t) in (m - SEGMENT..m).enumerate() {
                xs[i] = xe[[b, t]];
                ys[i] = ye[[b, t]];
            }
            let xn = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = xn / (yn + EPS);
            for (yv, xv) in ys.iter_mut().zip(&xs) {
                *yv = (*yv * scale).min(xv * (1.0 + clip));
            }
            centred_unit(&mut xs);
            centred_unit(&mut ys);
            total += xs.iter().zip(&ys).map(|(a, b)| a * b).sum::<f64>();
            count += 1;
        }
    }
    Ok((total / count as f64).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceMetrics {
    pub utterance_id: String,
    pub snr_db: f64,
    pub mode: String,
    pub stoi: f64,
    pub sd: f64,
    pub nr: f64,
    pub seg_snr_db: f64,
}

/// All four measures for one processed utterance. SD and NR are computed on
/// the log-power spectrogram of the processed waveform.
pub fn evaluate_utterance(
    clean: &AudioSignal,
    noisy: &AudioSignal,
    processed: &AudioSignal,
    stft_cfg: &StftConfig,
) -> Result<(f64, f64, f64, f64)> {
    if clean.len() != noisy.len() {
        return Err(Error::LengthMismatch { left: clean.len(), right: noisy.len() });
    }
    let (c, _, _) = analyze(clean, stft_cfg)?;
    let (n, _, _) = analyze(noisy, stft_cfg)?;
    let (p, _, _) = analyze(processed, stft_cfg)?;
    Ok((stoi(clean, processed)?, speech_distortion(&p, &c)?, noise_reduction(&p, &n)?, segmental_snr(clean, processed)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub snr_db: f64,
    pub mode: String,
    pub count: usize,
    pub stoi: f64,
    pub sd: f64,
    pub nr: f64,
    pub seg_snr_db: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub rows: Vec<UtteranceMetrics>,
}

pub const UTTERANCE_CSV_HEADER: &str = "utterance_id,snr_db,mode,stoi,sd,nr,seg_snr_db";
pub const AGGREGATE_CSV_HEADER: &str = "snr_db,mode,count,stoi,sd,nr,seg_snr_db";

fn snr_key(snr_db: f64) -> i64 {
    (snr_db * 1e6).round() as i64
}

impl MetricsReport {
    /// Means per (SNR, mode), ordered by SNR and then by first appearance of the mode.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut mode_order: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !mode_order.contains(&r.mode.as_str()) {
                mode_order.push(&r.mode);
            }
        }
        let mut groups: BTreeMap<(i64, usize), Vec<&UtteranceMetrics>> = BTreeMap::new();
        for r in &self.rows {
            let m = mode_order.iter().position(|m| *m == r.mode).expect("mode recorded");
            groups.entry((snr_key(r.snr_db), m)).or_default().push(r);
        }
        groups
            .into_values()
            .map(|members| {
                let n = members.len() as f64;
                let mean = |f: fn(&UtteranceMetrics) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n;
                AggregateRow {
                    snr_db: members[0].snr_db,
                    mode: members[0].mode.clone(),
                    count: members.len(),
                    stoi: mean(|r| r.stoi),
                    sd: mean(|r| r.sd),
                    nr: mean(|r| r.nr),
                    seg_snr_db: mean(|r| r.seg_snr_db),
                }
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        write_csv(&self.rows)
    }

    pub fn aggregate_csv(&self) -> String {
        write_csv(&self.aggregate())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| Error::Manifest(format!("metrics CSV: {e}")))?;
        if header.iter().collect::<Vec<_>>().join(",") != UTTERANCE_CSV_HEADER {
            return Err(Error::Manifest("metrics CSV header mismatch".into()));
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Manifest(format!("metrics CSV: {e}")))?;
        Ok(Self { rows })
    }
}

fn write_csv<R: Serialize>(rows: &[R]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory CSV write");
    }
    String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("UTF-8 CSV")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec(values: Array2<f64>) -> LogPowerSpectrogram {
        LogPowerSpectrogram { values, config: StftConfig::default() }
    }

    fn random_spec(rng: &mut ChaCha8Rng, t: usize) -> LogPowerSpectrogram {
        spec(Array2::from_shape_fn((t, 129), |_| rng.random_range(-23.0..3.0)))
    }

    #[test]
    fn sd_nr_constant_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let clean = random_spec(&mut rng, 20);
        assert_eq!(speech_distortion(&clean, &clean).unwrap(), 0.0);
        let plus_one = spec(&clean.values + 1.0);
        assert!((speech_distortion(&plus_one, &clean).unwrap() - 129.0).abs() < 1e-9);
        let minus_two = spec(&clean.values - 2.0);
        assert!((noise_reduction(&minus_two, &clean).unwrap() - 258.0).abs() < 1e-9);
        let short = random_spec(&mut rng, 19);
        assert!(matches!(speech_distortion(&short, &clean), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn sd_frame_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_spec(&mut rng, 16);
        let b = random_spec(&mut rng, 16);
        let perm: Vec<usize> = (0..16).rev().collect();
        let pa = spec(a.values.select(Axis(0), &perm));
        let pb = spec(b.values.select(Axis(0), &perm));
        let d = speech_distortion(&a, &b).unwrap();
        assert!((speech_distortion(&pa, &pb).unwrap() - d).abs() < 1e-12);
        assert!(d > 0.0);
    }

    fn noise(seed: u64, len: usize, amp: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| amp * rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn segmental_snr_cases() {
        let clean = AudioSignal::mono16k(noise(1, 512 * 20, 0.3));
        assert_eq!(segmental_snr(&clean, &clean).unwrap(), 35.0);
        // Equal-power error in every frame.
        let noisy: Vec<f64> = clean.samples.iter().map(|v| v * 2.0).collect();
        assert!(segmental_snr(&clean, &AudioSignal::mono16k(noisy)).unwrap().abs() < 1e-9);
        let mut one_bad = clean.samples.clone();
        one_bad[..512].iter_mut().for_each(|v| *v *= 1000.0);
        let v = segmental_snr(&clean, &AudioSignal::mono16k(one_bad)).unwrap();
        assert!((v - (-10.0 + 35.0 * 19.0) / 20.0).abs() < 1e-9);
        let silent = AudioSignal::mono16k(vec![0.0; 4096]);
        assert!(matches!(segmental_snr(&silent, &silent), Err(Error::AllSilent)));
        assert!(matches!(
            segmental_snr(&clean, &AudioSignal::mono16k(vec![0.0; 10])),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn resampler_preserves_inband_tone() {
        let x: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * 1000.0 * n as f64 / 16_000.0).sin()).collect();
        let y = resample(&x, 16_000, 10_000);
        assert_eq!(y.len(), 10_000);
        let err = y[100..9900]
            .iter()
            .enumerate()
            .map(|(i, v)| (v - (2.0 * PI * 1000.0 * (i + 100) as f64 / 10_000.0).sin()).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-2, "{err}");
        // A tone above the new Nyquist is attenuated.
        let hi: Vec<f64> = (0..16_000).map(|n| (2.0 * PI * 6500.0 * n as f64 / 16_000.0).sin()).collect();
        let yh = resample(&hi, 16_000, 10_000);
        let rms = (yh[100..9900].iter().map(|v| v * v).sum::<f64>() / 9800.0).sqrt();
        assert!(rms < 0.01, "{rms}");
    }

    #[test]
    fn third_octave_band_edges() {
        let bands = third_octave_bands();
        assert_eq!(bands.len(), 15);
        // 150 Hz * 2^(-1/6) = 133.6 Hz is nearest to bin 7 (136.7 Hz).
        assert_eq!(bands[0].0, 7);
        assert!(bands.windows(2).all(|w| w[0].1 == w[1].0));
        assert!(bands[14].1 < 257);
    }

    fn speechlike(seed: u64, len: usize) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = vec![0.0; len];
        let mut state = 0.0;
        for (n, v) in s.iter_mut().enumerate() {
            let t = n as f64 / 16_000.0;
            let env = 0.2 + (0.5 + 0.5 * (2.0 * PI * 3.0 * t).sin()).powi(2);
            state = 0.9 * state + rng.random_range(-1.0..1.0);
            *v = env * (0.3 * (2.0 * PI * 180.0 * t).sin() + 0.05 * state);
        }
        AudioSignal::mono16k(s)
    }

    #[test]
    fn stoi_identity_gain_and_independence() {
        let x = speechlike(1, 32_000);
        assert!((stoi(&x, &x).unwrap() - 1.0).abs() < 1e-6);
        let scaled = AudioSignal::mono16k(x.samples.iter().map(|v| v * 3.7).collect());
        let n = AudioSignal::mono16k(noise(9, 32_000, 0.2));
        let y = AudioSignal::mono16k(x.samples.iter().zip(&n.samples).map(|(a, b)| a + b).collect());
        let y_scaled = AudioSignal::mono16k(y.samples.iter().map(|v| v * 0.01).collect());
        assert!((stoi(&x, &scaled).unwrap() - 1.0).abs() < 1e-6);
        assert!((stoi(&x, &y).unwrap() - stoi(&x, &y_scaled).unwrap()).abs() < 1e-6);
        assert!(stoi(&x, &n).unwrap() < 0.2);
    }

    #[test]
    fn stoi_errors() {
        let x = speechlike(2, 32_000);
        assert!(matches!(stoi(&x, &AudioSignal::mono16k(vec![0.0; 100])), Err(Error::LengthMismatch { .. })));
        let short = speechlike(3, 4000);
        assert!(matches!(stoi(&short, &short), Err(Error::TooShort { needed: 30, .. })));
    }

    #[test]
    fn report_aggregation_and_csv() {
        let mut report = MetricsReport::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (i, snr) in [-5.0, 0.0, 5.0, -5.0, 0.0, 5.0].iter().enumerate() {
            for mode in ["noisy", "bd"] {
                report.rows.push(UtteranceMetrics {
                    utterance_id: format!("u{i}"),
                    snr_db: *snr,
                    mode: mode.into(),
                    stoi: rng.random(),
                    sd: rng.random(),
                    nr: rng.random(),
                    seg_snr_db: rng.random_range(-10.0..35.0),
                });
            }
        }
        let agg = report.aggregate();
        assert_eq!(agg.len(), 6);
        assert_eq!((agg[0].snr_db, agg[0].mode.as_str(), agg[0].count), (-5.0, "noisy", 2));
        let members: Vec<_> = report.rows.iter().filter(|r| r.snr_db == 0.0 && r.mode == "bd").collect();
        let want = members.iter().map(|r| r.stoi).sum::<f64>() / members.len() as f64;
        let got = agg.iter().find(|a| a.snr_db == 0.0 && a.mode == "bd").unwrap();
        assert!((got.stoi - want).abs() < 1e-12);
        assert_eq!(MetricsReport::from_csv(&report.to_csv()).unwrap(), report);
        assert_eq!(report.aggregate_csv().lines().count(), 7);
    }
}
