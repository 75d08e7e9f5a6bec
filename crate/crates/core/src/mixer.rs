//! Multi-noise corruption of clean utterances and reproducible dataset
//! manifests.
//!
//! Every noise is tiled from its own start offset to the clean length, the
//! noises are summed with unit gains, and the sum is scaled once so that the
//! full-utterance SNR matches the request.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mean_square, AudioSignal};
use crate::{Error, Result};

pub const MAX_NOISES: usize = 4;
/// SNRs used for test and validation manifests, in dB.
pub const SNR_GRID_DB: [f64; 6] = [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0];
/// Training SNRs are drawn uniformly from this range, in dB.
pub const TRAIN_SNR_RANGE_DB: (f64, f64) = (-5.0, 20.0);

const SILENCE_POWER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0x7472_6169_6e00_0001,
            Split::Validation => 0x7661_6c69_6400_0002,
            Split::Test => 0x7465_7374_0000_0003,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "valid" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// One corrupted utterance. Paths are relative to the corpus root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub id: String,
    pub clean: String,
    pub noises: Vec<String>,
    pub snr_db: f64,
    /// Start sample per noise; reduced modulo the noise length when mixing.
    pub offsets: Vec<u64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<MixSpec>,
    pub split: Split,
    pub global_seed: u64,
}

/// Result of [`mix`]: `noisy - clean == scaled_noise` sample for sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: AudioSignal,
    pub scaled_noise: AudioSignal,
}

/// Mixes with explicit per-noise start offsets.
pub fn mix_at_offsets(clean: &AudioSignal, noises: &[&AudioSignal], offsets: &[u64], snr_db: f64) -> Result<Mixture> {
    if noises.is_empty() || noises.len() > MAX_NOISES {
        return Err(Error::NoiseCount(noises.len()));
    }
    if offsets.len() != noises.len() {
        return Err(Error::DimensionMismatch(format!("{} offsets for {} noises", offsets.len(), noises.len())));
    }
    let clean_power = clean.power();
    if !(clean_power > SILENCE_POWER) {
        return Err(Error::SilentClean);
    }
    let len = clean.len();
    let mut mixture = vec![0.0; len];
    for (noise, &offset) in noises.iter().zip(offsets) {
        let n = noise.len();
        if n == 0 {
            return Err(Error::SilentNoiseMixture);
        }
        let start = (offset % n as u64) as usize;
        for (i, m) in mixture.iter_mut().enumerate() {
            *m += noise.samples[(start + i) % n];
        }
    }
    let mix_power = mean_square(&mixture);
    if !(mix_power > 0.0) || !mix_power.is_finite() {
        return Err(Error::SilentNoiseMixture);
    }
    let gain = (clean_power / (mix_power * 10f64.powf(snr_db / 10.0))).sqrt();
    let noisy: Vec<f64> = clean.samples.iter().zip(&mixture).map(|(c, m)| c + gain * m).collect();
    let scaled: Vec<f64> = noisy.iter().zip(&clean.samples).map(|(y, c)| y - c).collect();
    Ok(Mixture {
        noisy: AudioSignal::new(noisy, clean.sample_rate_hz),
        scaled_noise: AudioSignal::new(scaled, clean.sample_rate_hz),
    })
}

/// Mixes 1-4 noises into `clean` at `snr_db`, each starting at a random offset.
pub fn mix<R: Rng + ?Sized>(clean: &AudioSignal, noises: &[&AudioSignal], snr_db: f64, rng: &mut R) -> Result<Mixture> {
    let offsets: Vec<u64> = noises.iter().map(|n| rng.random_range(0..n.len().max(1) as u64)).collect();
    mix_at_offsets(clean, noises, &offsets, snr_db)
}

/// `10 log10(P_clean / P_noise)` over the full signals.
pub fn measured_snr_db(clean: &[f64], noise: &[f64]) -> f64 {
    10.0 * (mean_square(clean) / mean_square(noise)).log10()
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of manifest entry `index`, a pure function of its inputs.
pub fn entry_seed(global_seed: u64, split: Split, index: usize) -> u64 {
    splitmix64(splitmix64(global_seed ^ split.tag()) ^ index as u64)
}

/// Draws `count` corruption specs.
///
/// Clean utterances are visited in a seeded random order, cycling when
/// `count` exceeds the corpus. Each entry picks 1-4 distinct noises (capped by
/// the corpus size). Training SNRs are uniform on [-5, 20] dB; validation and
/// test SNRs step through the fixed grid, shifted by one step per pass over the
/// corpus: the first 6 entries cover the grid, and a count of 6x the corpus
/// pairs every utterance with every SNR.
pub fn build_manifest(
    clean_corpus: &[String],
    noise_corpus: &[String],
    split: Split,
    count: usize,
    global_seed: u64,
) -> Result<DatasetManifest> {
    if clean_corpus.is_empty() {
        return Err(Error::EmptyCorpus("no clean utterances".into()));
    }
    if noise_corpus.is_empty() {
        return Err(Error::EmptyCorpus("no noise recordings".into()));
    }
    let needed = if split == Split::Train { 1 } else { SNR_GRID_DB.len() };
    if count < needed {
        return Err(Error::CountTooSmall { count, needed });
    }
    let mut order: Vec<usize> = (0..clean_corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(global_seed ^ split.tag())));
    let max_noises = MAX_NOISES.min(noise_corpus.len());

    let entries = (0..count)
        .map(|i| {
            let seed = entry_seed(global_seed, split, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = rng.random_range(1..=MAX_NOISES).min(max_noises);
            let noises: Vec<String> = noise_corpus.choose_multiple(&mut rng, k).cloned().collect();
            let offsets = (0..k).map(|_| rng.random::<u32>() as u64).collect();
            let snr_db = match split {
                Split::Train => rng.random_range(TRAIN_SNR_RANGE_DB.0..=TRAIN_SNR_RANGE_DB.1),
                Split::Validation | Split::Test => {
                    SNR_GRID_DB[(i % clean_corpus.len() + i / clean_corpus.len()) % SNR_GRID_DB.len()]
                }
            };
            MixSpec {
                id: format!("{}_{i:05}", split.name()),
                clean: clean_corpus[order[i % order.len()]].clone(),
                noises,
                snr_db,
                offsets,
                seed,
            }
        })
        .collect();
    Ok(DatasetManifest { entries, split, global_seed })
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    split: Split,
    clean: String,
    noises: Vec<String>,
    snr_db: f64,
    offsets: Vec<u64>,
    seed: u64,
    global_seed: u64,
}

impl DatasetManifest {
    /// JSON Lines, one entry per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let line = ManifestLine {
                id: e.id.clone(),
                split: self.split,
                clean: e.clean.clone(),
                noises: e.noises.clone(),
                snr_db: e.snr_db,
                offsets: e.offsets.clone(),
                seed: e.seed,
                global_seed: self.global_seed,
            };
            out.push_str(&serde_json::to_string(&line).expect("manifest line serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut header: Option<(Split, u64)> = None;
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let l: ManifestLine =
                serde_json::from_str(line).map_err(|e| Error::Manifest(format!("line {}: {e}", n + 1)))?;
            match header {
                None => header = Some((l.split, l.global_seed)),
                Some(h) if h != (l.split, l.global_seed) => {
                    return Err(Error::Manifest(format!("line {}: mixed splits or seeds", n + 1)));
                }
                _ => {}
            }
            if l.noises.is_empty() || l.noises.len() > MAX_NOISES || l.offsets.len() != l.noises.len() {
                return Err(Error::Manifest(format!("line {}: need 1-4 noises with one offset each", n + 1)));
            }
            entries.push(MixSpec {
                id: l.id,
                clean: l.clean,
                noises: l.noises,
                snr_db: l.snr_db,
                offsets: l.offsets,
                seed: l.seed,
            });
        }
        let (split, global_seed) = header.ok_or_else(|| Error::Manifest("manifest has no entries".into()))?;
        Ok(Self { entries, split, global_seed })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(seed: u64, len: usize, amp: f64) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioSignal::mono16k((0..len).map(|_| amp * rng.random_range(-1.0..1.0)).collect())
    }

    fn names(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}/{i}.wav")).collect()
    }

    #[test]
    fn zero_db_gives_equal_power() {
        let clean = noise(1, 4000, 0.3);
        let n = noise(2, 1000, 0.05);
        let m = mix(&clean, &[&n], 0.0, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let rel = (m.scaled_noise.power() - clean.power()).abs() / clean.power();
        assert!(rel < 1e-9, "{rel}");
    }

    #[test]
    fn exact_decomposition_and_requested_snr() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..50 {
            let clean = noise(100 + trial, 3000, 0.2);
            let owned: Vec<AudioSignal> =
                (0..(1 + trial as usize % 4)).map(|k| noise(trial * 10 + k as u64, 500 + 300 * k, 0.1)).collect();
            let refs: Vec<&AudioSignal> = owned.iter().collect();
            let snr = rng.random_range(-5.0..20.0);
            let m = mix(&clean, &refs, snr, &mut rng).unwrap();
            for ((y, c), s) in m.noisy.samples.iter().zip(&clean.samples).zip(&m.scaled_noise.samples) {
                assert_eq!(y - c, *s);
            }
            assert!((measured_snr_db(&clean.samples, &m.scaled_noise.samples) - snr).abs() < 0.01);
        }
    }

    #[test]
    fn identical_noises_sum_coherently() {
        let clean = noise(1, 2000, 0.3);
        let n = noise(7, 2000, 0.1);
        let one = mix_at_offsets(&clean, &[&n], &[0], 5.0).unwrap();
        let two = mix_at_offsets(&clean, &[&n, &n], &[0, 0], 5.0).unwrap();
        // The doubled mixture has 4x the power, so its gain halves.
        for (a, b) in one.scaled_noise.samples.iter().zip(&two.scaled_noise.samples) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((measured_snr_db(&clean.samples, &two.scaled_noise.samples) - 5.0).abs() < 1e-9);
    }

    #[test]
    fn summation_order_does_not_matter() {
        let clean = noise(1, 2000, 0.3);
        let ns: Vec<AudioSignal> = (0..4).map(|k| noise(20 + k, 700 + 50 * k as usize, 0.1)).collect();
        let a = mix_at_offsets(&clean, &[&ns[0], &ns[1], &ns[2], &ns[3]], &[1, 2, 3, 4], 3.0).unwrap();
        let b = mix_at_offsets(&clean, &[&ns[3], &ns[1], &ns[0], &ns[2]], &[4, 2, 1, 3], 3.0).unwrap();
        for (x, y) in a.noisy.samples.iter().zip(&b.noisy.samples) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn mix_errors() {
        let clean = noise(1, 100, 0.3);
        let n = noise(2, 100, 0.1);
        let silent = AudioSignal::mono16k(vec![0.0; 100]);
        assert!(matches!(mix_at_offsets(&silent, &[&n], &[0], 0.0), Err(Error::SilentClean)));
        assert!(matches!(mix_at_offsets(&clean, &[&silent], &[0], 0.0), Err(Error::SilentNoiseMixture)));
        assert!(matches!(mix_at_offsets(&clean, &[], &[], 0.0), Err(Error::NoiseCount(0))));
        assert!(matches!(mix_at_offsets(&clean, &[&n; 5], &[0; 5], 0.0), Err(Error::NoiseCount(5))));
    }

    #[test]
    fn test_manifest_covers_grid() {
        let m = build_manifest(&names("c", 10), &names("n", 5), Split::Test, 6, 9).unwrap();
        let mut snrs: Vec<f64> = m.entries.iter().map(|e| e.snr_db).collect();
        snrs.sort_by(f64::total_cmp);
        assert_eq!(snrs, SNR_GRID_DB.to_vec());
        assert!(matches!(
            build_manifest(&names("c", 10), &names("n", 5), Split::Test, 5, 9),
            Err(Error::CountTooSmall { count: 5, needed: 6 })
        ));
        assert!(matches!(build_manifest(&[], &names("n", 5), Split::Train, 5, 9), Err(Error::EmptyCorpus(_))));
        assert!(matches!(build_manifest(&names("c", 1), &[], Split::Train, 5, 9), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn full_test_manifest_is_factorial() {
        let m = build_manifest(&names("c", 5), &names("n", 2), Split::Test, 30, 1).unwrap();
        let mut pairs: Vec<(String, i64)> = m.entries.iter().map(|e| (e.clean.clone(), e.snr_db as i64)).collect();
        pairs.sort();
        pairs.dedup();
        assert_eq!(pairs.len(), 30);
        assert!(m.entries.iter().all(|e| e.noises.len() <= 2));
    }

    #[test]
    fn manifest_is_deterministic_and_round_trips() {
        let a = build_manifest(&names("c", 10), &names("n", 7), Split::Train, 40, 123).unwrap();
        let b = build_manifest(&names("c", 10), &names("n", 7), Split::Train, 40, 123).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_ne!(a.to_jsonl(), build_manifest(&names("c", 10), &names("n", 7), Split::Train, 40, 124).unwrap().to_jsonl());
        let back = DatasetManifest::from_jsonl(&a.to_jsonl()).unwrap();
        assert_eq!(back, a);
        for e in &a.entries {
            assert!((1..=4).contains(&e.noises.len()));
            let mut uniq = e.noises.clone();
            uniq.sort();
            uniq.dedup();
            assert_eq!(uniq.len(), e.noises.len());
        }
    }

    #[test]
    fn train_distributions() {
        let m = build_manifest(&names("c", 50), &names("n", 10), Split::Train, 10_000, 77).unwrap();
        let n = m.entries.len() as f64;
        let mean = m.entries.iter().map(|e| e.snr_db).sum::<f64>() / n;
        assert!((mean - 7.5).abs() < 0.5, "mean SNR {mean}");
        assert!(m.entries.iter().all(|e| (-5.0..=20.0).contains(&e.snr_db)));
        let mut hist = [0usize; 4];
        for e in &m.entries {
            hist[e.noises.len() - 1] += 1;
        }
        let expected = n / 4.0;
        let sigma = (n * 0.25 * 0.75).sqrt();
        for h in hist {
            assert!((h as f64 - expected).abs() < 3.0 * sigma, "{hist:?}");
        }
    }
}
