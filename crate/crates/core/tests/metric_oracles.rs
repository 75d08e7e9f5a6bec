use denoise_core::audio::AudioSignal;
use denoise_core::dsp::{LogPowerSpectrogram, StftConfig};
use denoise_core::metrics::{noise_reduction, speech_distortion, stoi};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// 64-bit LCG shared with the Python script that produced the reference values.
fn lcg(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed;
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

fn reference_pair() -> (Vec<f64>, Vec<f64>) {
    let n = 30_000;
    let u = lcg(1, n);
    let x = (0..n)
        .map(|i| {
            let t = i as f64 / 10_000.0;
            let env = 0.2 + (0.5 + 0.5 * (2.0 * PI * 3.0 * t).sin()).powi(2);
            env * ((2.0 * PI * 180.0 * t).sin() + 0.5 * (2.0 * PI * 470.0 * t).sin() + 0.3 * u[i])
        })
        .collect();
    (x, lcg(2, n))
}

#[test]
fn stoi_matches_reference_implementation() {
    // Values from pystoi 0.4 on the same 10 kHz signals.
    let (x, v) = reference_pair();
    let at10k = |s: Vec<f64>| AudioSignal::new(s, 10_000);
    let clean = at10k(x.clone());
    let cases = [
        (0.7, 0.5099848156428335),
        (0.1, 0.9796393465933602),
    ];
    for (g, want) in cases {
        let y = at10k(x.iter().zip(&v).map(|(a, b)| a + g * b).collect());
        let got = stoi(&clean, &y).unwrap();
        assert!((got - want).abs() < 1e-9, "gain {g}: {got} vs {want}");
    }
    let got = stoi(&clean, &at10k(v.clone())).unwrap();
    assert!((got - 0.000134532819157189).abs() < 1e-9, "{got}");
}

#[test]
fn sd_nr_match_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let t = rng.random_range(1..60);
        let mk = |rng: &mut ChaCha8Rng| LogPowerSpectrogram {
            values: Array2::from_shape_fn((t, 129), |_| rng.random_range(-23.0..5.0)),
            config: StftConfig::default(),
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let mut naive = 0.0;
        for i in 0..t {
            let mut frame = 0.0;
            for j in 0..129 {
                frame += (a.values[[i, j]] - b.values[[i, j]]).abs();
            }
            naive += frame;
        }
        naive /= t as f64;
        assert!((speech_distortion(&a, &b).unwrap() - naive).abs() < 1e-12);
        assert!((noise_reduction(&a, &b).unwrap() - naive).abs() < 1e-12);
    }
}
