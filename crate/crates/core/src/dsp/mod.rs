//! Waveforms, WAV I/O and the short-time Fourier transform.

mod stft;
mod wav;

pub use stft::{istft, stft, ComplexSpectrogram, Stft, StftConfig};
pub use wav::{read_wav, write_wav};

use crate::{Error, Result};

/// The only sample rate accepted by pipeline operations.
pub const SAMPLE_RATE: u32 = 16_000;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    /// Builds a waveform, rejecting NaN and infinite samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        Ok(Self { samples, sample_rate })
    }

    /// A 16 kHz waveform.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn silence(len: usize) -> Self {
        Self { samples: vec![0.0; len], sample_rate: SAMPLE_RATE }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Checks the pipeline preconditions: non-empty and 16 kHz.
    pub fn check_pipeline(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyInput("waveform has no samples"));
        }
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate { found: self.sample_rate });
        }
        Ok(())
    }

    /// Mean power over all samples.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()))
    }

    /// Copy zero-padded or truncated to `len` samples.
    pub fn resized(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self { samples, sample_rate: self.sample_rate }
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

pub(crate) fn power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Waveform::from_samples(vec![0.0, f64::NAN]),
            Err(Error::NonFiniteSample(1))
        ));
        assert!(Waveform::from_samples(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn pipeline_checks() {
        assert!(Waveform::silence(0).check_pipeline().is_err());
        let w = Waveform::new(vec![0.0; 10], 8000).unwrap();
        assert!(matches!(w.check_pipeline(), Err(Error::SampleRate { found: 8000 })));
    }
}
