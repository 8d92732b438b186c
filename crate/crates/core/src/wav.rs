//! RIFF/WAVE mono 16-bit PCM reading and writing.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

const PCM_SCALE: f64 = 32768.0;

/// Reads a mono 16-bit PCM WAV file. Multi-channel input is rejected.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::AudioFormat {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::AudioFormat {
            path: path.to_path_buf(),
            reason: format!("expected mono audio, found {} channels", spec.channels),
        });
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::AudioFormat {
            path: path.to_path_buf(),
            reason: format!(
                "expected 16-bit integer PCM, found {}-bit {:?}",
                spec.bits_per_sample, spec.sample_format
            ),
        });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / PCM_SCALE))
        .collect::<Result<Vec<_>, _>>()?;
    Waveform::new(samples, spec.sample_rate)
}

/// Quantizes a sample to 16-bit PCM, clipping to the representable range.
pub fn quantize_pcm16(x: f64) -> i16 {
    (x * PCM_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}

/// Writes a mono 16-bit PCM WAV file.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| wrap_io(path, e))?;
    for &s in &w.samples {
        writer
            .write_sample(quantize_pcm16(s))
            .map_err(|e| wrap_io(path, e))?;
    }
    writer.finalize().map_err(|e| wrap_io(path, e))
}

/// Writes a copy scaled so its peak sits at 0.99 full scale.
pub fn write_wav_normalized(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let peak = w.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    if peak == 0.0 {
        return write_wav(path, w);
    }
    let gain = 0.99 / peak;
    let scaled = Waveform {
        samples: w.samples.iter().map(|s| s * gain).collect(),
        sample_rate: w.sample_rate,
    };
    write_wav(path, &scaled)
}

fn wrap_io(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav(other),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (-300..300).map(|i| (i * 97) as f64 / PCM_SCALE).collect();
        let w = Waveform::new(samples, 16000).unwrap();
        write_wav(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back, w);
        let again = dir.path().join("b.wav");
        write_wav(&again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn stereo_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut wr = WavWriter::create(&path, spec).unwrap();
        for _ in 0..10 {
            wr.write_sample(0i16).unwrap();
        }
        wr.finalize().unwrap();
        let err = read_wav(&path).unwrap_err();
        assert!(err.to_string().contains("mono"), "{err}");
    }

    #[test]
    fn clipping_saturates() {
        assert_eq!(quantize_pcm16(2.0), i16::MAX);
        assert_eq!(quantize_pcm16(-2.0), i16::MIN);
    }
}
