//! Synthetic stand-ins for a speech corpus and office noise recordings.
//!
//! Utterances are strings of voiced syllables (harmonic series under a vowel
//! formant envelope, with a breathy noise component), fricative bursts of
//! band-passed noise, and short pauses, framed by leading and trailing
//! pauses, over a faint recording floor. Noises mimic office sources, six for training and two held out
//! for testing: one stationary, one strongly non-stationary.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{AudioSignal, SAMPLE_RATE_HZ};
use crate::{Error, Result};

const FS: f64 = SAMPLE_RATE_HZ as f64;

/// Formant frequencies and bandwidths (Hz) of a few vowels.
const VOWELS: [[(f64, f64); 3]; 5] = [
    [(730.0, 90.0), (1090.0, 110.0), (2440.0, 170.0)],
    [(270.0, 60.0), (2290.0, 100.0), (3010.0, 200.0)],
    [(300.0, 60.0), (870.0, 90.0), (2240.0, 150.0)],
    [(530.0, 70.0), (1840.0, 100.0), (2480.0, 160.0)],
    [(570.0, 80.0), (840.0, 90.0), (2410.0, 160.0)],
];

/// RBJ biquad, direct form I.
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl Biquad {
    fn new(b: [f64; 3], a0: f64, a1: f64, a2: f64) -> Self {
        Self { b: [b[0] / a0, b[1] / a0, b[2] / a0], a: [a1 / a0, a2 / a0], x: [0.0; 2], y: [0.0; 2] }
    }

    fn bandpass(centre_hz: f64, q: f64) -> Self {
        let w = 2.0 * PI * centre_hz / FS;
        let alpha = w.sin() / (2.0 * q);
        Self::new([alpha, 0.0, -alpha], 1.0 + alpha, -2.0 * w.cos(), 1.0 - alpha)
    }

    fn lowpass(cut_hz: f64, q: f64) -> Self {
        let w = 2.0 * PI * cut_hz / FS;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Self::new([(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    fn highpass(cut_hz: f64, q: f64) -> Self {
        let w = 2.0 * PI * cut_hz / FS;
        let alpha = w.sin() / (2.0 * q);
        let c = w.cos();
        Self::new([(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0], 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    fn tick(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.b[1] * self.x[0] + self.b[2] * self.x[1] - self.a[0] * self.y[0] - self.a[1] * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }

    fn run(mut self, x: &mut [f64]) {
        x.iter_mut().for_each(|v| *v = self.tick(*v));
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn normalize_rms(x: &mut [f64], rms: f64) {
    let cur = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if cur > 0.0 {
        x.iter_mut().for_each(|v| *v *= rms / cur);
    }
}

/// Raised-cosine attack and release of `ramp` samples.
fn envelope(i: usize, len: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(len / 2).max(1);
    let edge = |k: usize| 0.5 - 0.5 * (PI * k as f64 / ramp as f64).cos();
    if i < ramp {
        edge(i)
    } else if i + ramp >= len {
        edge(len - 1 - i)
    } else {
        1.0
    }
}

fn formant_gain(f: f64, formants: &[(f64, f64); 3]) -> f64 {
    let tilt = 1.0 / (1.0 + f / 500.0);
    let peaks: f64 = formants.iter().map(|&(c, bw)| 1.0 / (1.0 + ((f - c) / bw).powi(2))).sum();
    tilt * (0.05 + peaks)
}

fn voiced(rng: &mut ChaCha8Rng, len: usize, f0_base: f64) -> Vec<f64> {
    let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
    let next = VOWELS[rng.random_range(0..VOWELS.len())];
    let f0_start = f0_base * rng.random_range(0.85..1.15);
    let f0_end = f0_base * rng.random_range(0.8..1.1);
    let mut out = vec![0.0; len];
    let mut phase = 0.0;
    let breath = gaussian(rng, len);
    let mut breath_filter = Biquad::bandpass(1500.0, 0.7);
    for (i, v) in out.iter_mut().enumerate() {
        let x = i as f64 / len as f64;
        let f0 = f0_start + (f0_end - f0_start) * x;
        phase += 2.0 * PI * f0 / FS;
        // Formants glide towards the next vowel over the syllable.
        let mut formants = vowel;
        for (k, fm) in formants.iter_mut().enumerate() {
            fm.0 += (next[k].0 - fm.0) * 0.3 * x;
        }
        let mut s = 0.0;
        let mut h = 1;
        while h as f64 * f0 < 7000.0 {
            s += formant_gain(h as f64 * f0, &formants) * (h as f64 * phase).sin();
            h += 1;
        }
        *v = (s + 0.08 * breath_filter.tick(breath[i])) * envelope(i, len, len / 5);
    }
    out
}

fn fricative(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut x = gaussian(rng, len);
    Biquad::bandpass(rng.random_range(2500.0..6000.0), rng.random_range(1.0..3.0)).run(&mut x);
    Biquad::highpass(1500.0, 0.7).run(&mut x);
    let amp = rng.random_range(0.15..0.35);
    x.iter_mut().enumerate().for_each(|(i, v)| *v *= amp * envelope(i, len, len / 4));
    x
}

/// Level of the white recording floor below the speech RMS.
const RECORDING_FLOOR_DB: f64 = 50.0;

/// One synthetic utterance of `duration_s` seconds at 16 kHz, RMS-normalized.
pub fn synth_utterance(seed: u64, duration_s: f64) -> AudioSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (duration_s * FS).round() as usize;
    let mut out = vec![0.0; len];
    let f0_base = if rng.random_bool(0.5) { rng.random_range(95.0..140.0) } else { rng.random_range(170.0..240.0) };
    let lead = (rng.random_range(0.08..0.16) * FS) as usize;
    let tail = (rng.random_range(0.05..0.1) * FS) as usize;
    let mut at = lead;
    while at + tail < len {
        let remaining = len - tail - at;
        let (seg, piece) = match rng.random_range(0..10) {
            0..=5 => {
                let n = ((rng.random_range(0.09..0.22) * FS) as usize).min(remaining);
                (n, voiced(&mut rng, n, f0_base))
            }
            6..=7 => {
                let n = ((rng.random_range(0.05..0.12) * FS) as usize).min(remaining);
                (n, fricative(&mut rng, n))
            }
            _ => ((rng.random_range(0.03..0.09) * FS) as usize, Vec::new()),
        };
        for (d, s) in out[at..].iter_mut().zip(&piece) {
            *d += s;
        }
        at += seg;
    }
    // Recording floor, so pauses are quiet rather than digitally silent.
    normalize_rms(&mut out, 1.0);
    let floor = 10f64.powf(-RECORDING_FLOOR_DB / 20.0);
    out.iter_mut().zip(gaussian(&mut rng, len)).for_each(|(v, g)| *v += floor * g);
    normalize_rms(&mut out, 0.1);
    AudioSignal::mono16k(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Fan,
    Hvac,
    Printer,
    Typing,
    Phone,
    Thuds,
    /// Held out: stationary.
    Aircon,
    /// Held out: non-stationary.
    Copier,
}

pub const TRAIN_NOISES: [NoiseKind; 6] =
    [NoiseKind::Fan, NoiseKind::Hvac, NoiseKind::Printer, NoiseKind::Typing, NoiseKind::Phone, NoiseKind::Thuds];
pub const TEST_NOISES: [NoiseKind; 2] = [NoiseKind::Aircon, NoiseKind::Copier];

impl NoiseKind {
    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::Fan => "fan",
            NoiseKind::Hvac => "hvac",
            NoiseKind::Printer => "printer",
            NoiseKind::Typing => "typing",
            NoiseKind::Phone => "phone",
            NoiseKind::Thuds => "thuds",
            NoiseKind::Aircon => "aircon",
            NoiseKind::Copier => "copier",
        }
    }

    pub fn is_stationary(self) -> bool {
        matches!(self, NoiseKind::Fan | NoiseKind::Hvac | NoiseKind::Aircon)
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TRAIN_NOISES
            .iter()
            .chain(&TEST_NOISES)
            .find(|k| k.name() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown noise kind {s:?}")))
    }
}

fn tone(len: usize, hz: f64, amp: f64) -> impl Iterator<Item = f64> {
    (0..len).map(move |i| amp * (2.0 * PI * hz * i as f64 / FS).sin())
}

/// Decaying filtered impulses at Poisson times.
fn impacts(rng: &mut ChaCha8Rng, len: usize, rate_hz: f64, centre: (f64, f64), decay_s: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    let mut t = 0.0;
    loop {
        t += -rng.random::<f64>().max(1e-12).ln() / rate_hz;
        let start = (t * FS) as usize;
        if start >= len {
            break;
        }
        let n = ((decay_s * 5.0 * FS) as usize).min(len - start);
        let mut burst = gaussian(rng, n);
        Biquad::bandpass(rng.random_range(centre.0..centre.1), 2.0).run(&mut burst);
        let amp = rng.random_range(0.5..1.5);
        for (i, b) in burst.iter().enumerate() {
            out[start + i] += amp * b * (-(i as f64) / (decay_s * FS)).exp();
        }
    }
    out
}

/// `duration_s` seconds of the given noise, RMS-normalized to 0.1.
///
/// A recording is a chain of takes, each a few seconds long with freshly drawn
/// source parameters (fan speed, machine resonances, ring tone, ...), joined
/// by short crossfades.
pub fn synth_noise(kind: NoiseKind, seed: u64, duration_s: f64) -> AudioSignal {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (kind as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let len = (duration_s * FS).round() as usize;
    let fade = (TAKE_CROSSFADE_S * FS) as usize;
    let mut x = vec![0.0; len];
    let mut at = 0;
    while at < len {
        let take_len = ((rng.random_range(TAKE_SECS.0..TAKE_SECS.1) * FS) as usize).min(len - at);
        let with_tail = (take_len + fade).min(len - at);
        let take = noise_take(kind, &mut rng, with_tail);
        for (i, (d, v)) in x[at..at + with_tail].iter_mut().zip(&take).enumerate() {
            let fade_in = if at > 0 && i < fade { i as f64 / fade as f64 } else { 1.0 };
            let fade_out = if i >= take_len { 1.0 - (i - take_len) as f64 / fade as f64 } else { 1.0 };
            *d += v * fade_in * fade_out;
        }
        at += take_len;
    }
    normalize_rms(&mut x, 0.1);
    AudioSignal::mono16k(x)
}

const TAKE_SECS: (f64, f64) = (1.5, 3.0);
const TAKE_CROSSFADE_S: f64 = 0.05;

/// One unit-RMS take of `kind` with its own random parameters.
fn noise_take(kind: NoiseKind, rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut x: Vec<f64> = match kind {
        NoiseKind::Fan => {
            let mut base = gaussian(rng, len);
            Biquad::lowpass(rng.random_range(600.0..2000.0), 0.7).run(&mut base);
            normalize_rms(&mut base, 1.0);
            let blade = rng.random_range(80.0..160.0);
            let (a1, a2) = (rng.random_range(0.3..0.9), rng.random_range(0.1..0.5));
            base.iter().zip(tone(len, blade, a1)).zip(tone(len, 2.0 * blade, a2)).map(|((b, t1), t2)| b + t1 + t2).collect()
        }
        NoiseKind::Hvac => {
            let mut low = gaussian(rng, len);
            Biquad::lowpass(rng.random_range(150.0..400.0), 0.7).run(&mut low);
            normalize_rms(&mut low, 1.0);
            let mut hiss = gaussian(rng, len);
            Biquad::bandpass(rng.random_range(2000.0..4500.0), 0.5).run(&mut hiss);
            normalize_rms(&mut hiss, 1.0);
            let h = rng.random_range(0.2..0.5);
            low.iter().zip(&hiss).map(|(l, s)| l + h * s).collect()
        }
        NoiseKind::Printer => {
            let mut body = gaussian(rng, len);
            Biquad::bandpass(rng.random_range(1200.0..2500.0), rng.random_range(0.8..1.6)).run(&mut body);
            normalize_rms(&mut body, 1.0);
            let rate = rng.random_range(3.0..5.0);
            let whine = rng.random_range(1900.0..2600.0);
            let duty = rng.random_range(0.4..0.7);
            body.iter()
                .zip(tone(len, whine, 0.4))
                .enumerate()
                .map(|(i, (b, w))| {
                    let phase = (i as f64 / FS * rate).fract();
                    let gate = if phase < duty { 1.0 } else { 0.15 };
                    gate * (b + w)
                })
                .collect()
        }
        NoiseKind::Typing => {
            let mut floor = gaussian(rng, len);
            Biquad::lowpass(500.0, 0.7).run(&mut floor);
            let low = rng.random_range(1500.0..3000.0);
            let rate = rng.random_range(4.0..10.0);
            let clicks = impacts(rng, len, rate, (low, low + 2500.0), 0.004);
            clicks.iter().zip(&floor).map(|(c, f)| c + 0.02 * f).collect()
        }
        NoiseKind::Phone => {
            let mut floor = gaussian(rng, len);
            Biquad::lowpass(2000.0, 0.7).run(&mut floor);
            normalize_rms(&mut floor, 1.0);
            let cadence = rng.random_range(0.5..0.8);
            let f1 = rng.random_range(400.0..1000.0);
            let f2 = f1 * rng.random_range(1.05..1.3);
            tone(len, f1, 0.5)
                .zip(tone(len, f2, 0.5))
                .zip(&floor)
                .enumerate()
                .map(|(i, ((a, b), f))| {
                    let on = (i as f64 / FS / cadence).fract() < 0.6;
                    if on { a + b + 0.05 * f } else { 0.05 * f }
                })
                .collect()
        }
        NoiseKind::Thuds => {
            let mut floor = gaussian(rng, len);
            Biquad::lowpass(300.0, 0.7).run(&mut floor);
            let (rate, decay) = (rng.random_range(2.0..4.0), rng.random_range(0.03..0.08));
            let hits = impacts(rng, len, rate, (60.0, 250.0), decay);
            hits.iter().zip(&floor).map(|(h, f)| h + 0.05 * f).collect()
        }
        NoiseKind::Aircon => {
            let mut base = gaussian(rng, len);
            Biquad::bandpass(rng.random_range(500.0..1000.0), 0.4).run(&mut base);
            let mut rumble = gaussian(rng, len);
            Biquad::lowpass(150.0, 0.7).run(&mut rumble);
            normalize_rms(&mut rumble, 1.0);
            normalize_rms(&mut base, 1.0);
            let hum = rng.random_range(100.0..140.0);
            base.iter().zip(&rumble).zip(tone(len, hum, 0.3)).map(|((b, r), t)| b + 0.5 * r + t).collect()
        }
        NoiseKind::Copier => {
            let mut body = gaussian(rng, len);
            Biquad::bandpass(rng.random_range(900.0..1600.0), 0.8).run(&mut body);
            normalize_rms(&mut body, 1.0);
            let period = rng.random_range(1.2..1.8);
            let mut phase = 0.0;
            body.iter()
                .enumerate()
                .map(|(i, b)| {
                    let cycle = (i as f64 / FS / period).fract();
                    // Scan head sweep: the motor tone glides up, then a quiet return.
                    let (gain, motor_hz) = if cycle < 0.7 { (1.0, 300.0 + 900.0 * cycle) } else { (0.1, 250.0) };
                    phase += 2.0 * PI * motor_hz / FS;
                    gain * (b + 0.5 * phase.sin())
                })
                .collect()
        }
    };
    normalize_rms(&mut x, 1.0);
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn utterances_are_deterministic_and_speechlike() {
        let a = synth_utterance(1, 1.0);
        assert_eq!(a, synth_utterance(1, 1.0));
        assert_ne!(a, synth_utterance(2, 1.0));
        assert_eq!(a.len(), 16_000);
        assert!((a.power().sqrt() - 0.1).abs() < 1e-12);
        let lead = (a.samples[..1000].iter().map(|v| v * v).sum::<f64>() / 1000.0).sqrt();
        assert!(lead > 0.0 && lead < 1e-3, "{lead}");
        assert!(a.samples.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn noises_have_expected_character() {
        for kind in TRAIN_NOISES.iter().chain(&TEST_NOISES) {
            let n = synth_noise(*kind, 7, 3.0);
            assert_eq!(n, synth_noise(*kind, 7, 3.0));
            assert!((n.power().sqrt() - 0.1).abs() < 1e-12, "{kind}");
            assert_eq!(kind.name().parse::<NoiseKind>().unwrap(), *kind);
            // Spread of 100 ms block levels separates stationary from
            // non-stationary sources.
            let e: Vec<f64> = n.samples.chunks_exact(1600).map(|b| b.iter().map(|v| v * v).sum::<f64>().ln()).collect();
            let m = e.iter().sum::<f64>() / e.len() as f64;
            let sd = (e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / e.len() as f64).sqrt();
            if kind.is_stationary() {
                assert!(sd < 0.25, "{kind}: {sd}");
            } else {
                assert!(sd > 0.4, "{kind}: {sd}");
            }
        }
    }
}
