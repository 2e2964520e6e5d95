use crate::dsp::{Stft, StftConfig, Waveform};
use crate::{Error, Result};

/// Natural-log floor applied to band energies; silent frames take this value.
pub const LOG_FLOOR: f64 = -23.025850929940457; // ln(1e-10)

/// Row-major `rows × cols` matrix of per-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FrameMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch { expected: rows * cols, found: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Frame-synchronous acoustic features of the source waveform.
///
/// Implementations must use the spectrogram hop so that their frame count
/// matches the STFT frame count for every input length.
pub trait AcousticEmbedder {
    fn hop(&self) -> usize;
    fn width(&self) -> usize;
    fn embed(&self, y: &Waveform) -> Result<FrameMatrix>;
}

/// Log energies of triangular mel bands over the hop-320 STFT.
pub struct LogMelEmbedder {
    stft: Stft,
    bands: Vec<Vec<(usize, f64)>>,
}

impl Default for LogMelEmbedder {
    fn default() -> Self {
        Self::new(StftConfig::default(), 13).expect("default STFT parameters are valid")
    }
}

impl LogMelEmbedder {
    pub fn new(config: StftConfig, num_bands: usize) -> Result<Self> {
        let stft = Stft::new(config)?;
        let bands = mel_filterbank(num_bands, config.num_bins(), 16000.0);
        Ok(Self { stft, bands })
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular HTK-style filters from 0 Hz to Nyquist, as sparse rows.
fn mel_filterbank(num_bands: usize, num_bins: usize, sample_rate: f64) -> Vec<Vec<(usize, f64)>> {
    let nyquist = sample_rate / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..num_bands + 2).map(|i| mel_to_hz(top * i as f64 / (num_bands + 1) as f64)).collect();
    let bin_hz = |k: usize| k as f64 * nyquist / (num_bins - 1).max(1) as f64;
    (0..num_bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            let mut row: Vec<(usize, f64)> = (0..num_bins)
                .filter_map(|k| {
                    let f = bin_hz(k);
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect();
            if row.is_empty() {
                // Narrow low bands can fall between bins; use the nearest one.
                let k = ((mid / nyquist) * (num_bins - 1) as f64).round() as usize;
                row.push((k.min(num_bins - 1), 1.0));
            }
            row
        })
        .collect()
}

impl AcousticEmbedder for LogMelEmbedder {
    fn hop(&self) -> usize {
        self.stft.config().hop_length
    }

    fn width(&self) -> usize {
        self.bands.len()
    }

    fn embed(&self, y: &Waveform) -> Result<FrameMatrix> {
        let spec = self.stft.analyze(y)?;
        let mut data = Vec::with_capacity(spec.num_frames() * self.bands.len());
        for f in 0..spec.num_frames() {
            let frame = spec.frame(f);
            for band in &self.bands {
                let e: f64 = band.iter().map(|&(k, w)| w * frame[k].norm_sqr()).sum();
                data.push(e.max(1e-10).ln());
            }
        }
        FrameMatrix::from_vec(spec.num_frames(), self.bands.len(), data)
    }
}
