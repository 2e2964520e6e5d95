use std::path::Path;

use hound::{SampleFormat, WavSpec, WavWriter};

use super::{Waveform, SAMPLE_RATE};
use crate::{Error, Result};

const FULL_SCALE: f64 = 32768.0;

/// Reads a 16-bit PCM mono 16 kHz WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let wav_err = |source| Error::Wav { path: path.to_path_buf(), source };
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => wav_err(other),
    })?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::UnsupportedChannels(spec.channels));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{:?} {}-bit, expected 16-bit integer PCM",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::SampleRate { found: spec.sample_rate });
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(|v| v as f64 / FULL_SCALE))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(wav_err)?;
    Waveform::from_samples(samples)
}

/// Writes `w` as 16-bit PCM; samples are rounded and saturated to the i16 range.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let wav_err = |source| match source {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Wav { path: path.to_path_buf(), source: other },
    };
    if w.sample_rate() != SAMPLE_RATE {
        return Err(Error::SampleRate { found: w.sample_rate() });
    }
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err)?;
    for &s in w.samples() {
        writer.write_sample(quantize(s)).map_err(wav_err)?;
    }
    writer.finalize().map_err(wav_err)
}

/// Nearest 16-bit code for a sample in [-1, 1].
pub(crate) fn quantize(s: f64) -> i16 {
    (s * FULL_SCALE).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16
}
