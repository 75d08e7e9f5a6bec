//! Mono 16 kHz WAV input and output.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::{Error, Result};

/// The only sample rate the pipeline accepts.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

const PCM16_SCALE: f64 = 32768.0;

/// A mono waveform. Samples are nominally in `[-1, 1]` but may overshoot in
/// memory; they saturate on write.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Self { samples, sample_rate_hz }
    }

    /// Signal at the pipeline rate.
    pub fn mono16k(samples: Vec<f64>) -> Self {
        Self::new(samples, SAMPLE_RATE_HZ)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean squared amplitude over the whole signal.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Reads a mono 16 kHz WAV holding 16-bit PCM or 32-bit IEEE float samples.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioSignal> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = WavReader::new(std::io::BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let unsupported = |reason: String| Error::UnsupportedFormat { path: path.to_path_buf(), reason };
    if spec.channels != 1 {
        return Err(unsupported(format!("{} channels, expected mono", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(unsupported(format!(
            "{} Hz, expected {SAMPLE_RATE_HZ} Hz (resample externally)",
            spec.sample_rate
        )));
    }
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<Result<Vec<_>, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<Vec<_>, _>>(),
        (fmt, bits) => {
            return Err(unsupported(format!("{bits}-bit {fmt:?} samples")));
        }
    }
    .map_err(|e| map_hound(path, e))?;
    if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::CorruptFile { path: path.to_path_buf(), reason: format!("non-finite sample at {i}") });
    }
    Ok(AudioSignal::new(samples, spec.sample_rate))
}

/// Quantizes one sample to 16-bit PCM with saturation.
pub fn quantize_pcm16(sample: f64) -> i16 {
    let clipped = sample.clamp(-1.0, 1.0);
    (clipped * PCM16_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Sample encoding for [`write_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavEncoding {
    /// 16-bit PCM; samples outside `[-1, 1]` saturate.
    #[default]
    Pcm16,
    /// 32-bit IEEE float, unclipped.
    Float32,
}

/// Writes a mono WAV.
pub fn write_wav(signal: &AudioSignal, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    if let Some(i) = signal.samples.iter().position(|s| !s.is_finite()) {
        return Err(Error::DimensionMismatch(format!("non-finite sample at {i}")));
    }
    let (bits_per_sample, sample_format) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec { channels: 1, sample_rate: signal.sample_rate_hz, bits_per_sample, sample_format };
    let write_err = |e: hound::Error| match e {
        hound::Error::IoError(source) => Error::io(path, source),
        other => Error::UnsupportedFormat { path: path.to_path_buf(), reason: other.to_string() },
    };
    let mut writer = WavWriter::create(path, spec).map_err(write_err)?;
    for &s in &signal.samples {
        match encoding {
            WavEncoding::Pcm16 => writer.write_sample(quantize_pcm16(s)),
            WavEncoding::Float32 => writer.write_sample(s as f32),
        }
        .map_err(write_err)?;
    }
    writer.finalize().map_err(write_err)
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    let path = path.to_path_buf();
    match err {
        // The file itself opened, so read failures mean a malformed stream.
        hound::Error::IoError(e) => Error::CorruptFile { path, reason: e.to_string() },
        hound::Error::FormatError(reason) => Error::CorruptFile { path, reason: reason.into() },
        hound::Error::Unsupported => Error::UnsupportedFormat { path, reason: "unsupported encoding".into() },
        other => Error::CorruptFile { path, reason: other.to_string() },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(path: &Path, rate: u32, channels: u16, samples: &[i16]) {
        let spec = WavSpec { channels, sample_rate: rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn pcm16_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        write_raw(&p, 16_000, 1, &[16384, -32768, 0, 32767]);
        let sig = read_wav(&p).unwrap();
        assert_eq!(sig.samples[0], 0.5);
        assert_eq!(sig.samples[1], -1.0);
        assert_eq!(sig.samples[2], 0.0);
        assert_eq!(sig.sample_rate_hz, 16_000);
    }

    #[test]
    fn rejects_wrong_rate_and_stereo() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.wav");
        write_raw(&p, 44_100, 2, &[0, 0, 1, 1]);
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat { .. })));
        let p = dir.path().join("c.wav");
        write_raw(&p, 16_000, 2, &[0, 0]);
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn reads_float32() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let spec = WavSpec { channels: 1, sample_rate: 16_000, bits_per_sample: 32, sample_format: SampleFormat::Float };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(0.25f32).unwrap();
        w.write_sample(-0.75f32).unwrap();
        w.finalize().unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![0.25, -0.75]);
    }

    #[test]
    fn garbage_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.wav");
        std::fs::write(&p, b"RIFF\x10\x00\x00\x00WAVEjunkjunk").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::CorruptFile { .. })));
        assert!(matches!(read_wav(dir.path().join("missing.wav")), Err(Error::Io { .. })));
    }

    #[test]
    fn write_clips_and_scales() {
        assert_eq!(quantize_pcm16(0.5), 16384);
        assert_eq!(quantize_pcm16(1.5), 32767);
        assert_eq!(quantize_pcm16(-1.5), -32768);
        assert_eq!(quantize_pcm16(1.0), 32767);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.wav");
        write_wav(&AudioSignal::mono16k(vec![0.5, 1.5, -2.0]), &p, WavEncoding::Pcm16).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.samples, vec![0.5, 32767.0 / 32768.0, -1.0]);

        write_wav(&AudioSignal::mono16k(vec![0.5, 1.5, -2.0]), &p, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap().samples, vec![0.5, 1.5, -2.0]);
    }
}
