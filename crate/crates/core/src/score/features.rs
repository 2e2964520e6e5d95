//! Fixed (non-learned) input features of the score network.

use rustfft::num_complex::Complex64;

use crate::dsp::ComplexSpectrogram;

/// Features per time-frequency bin fed to the shared bin head: three
/// dynamic (state, interpolated source, noise level) followed by
/// [`NUM_STATIC`] that depend only on the source.
pub const NUM_BIN_FEATURES: usize = 3 + NUM_STATIC;
pub(crate) const NUM_STATIC: usize = 10;

const LOG_EPS: f64 = 1e-6;
const SMOOTH_HALF_WIDTH: usize = 4;
const FLOOR_QUANTILES: [f64; 2] = [0.2, 0.5];
const CENTRED_HALF_WIDTH: usize = 2;
/// Leaky-integrator time constants in frames.
const DECAY_FRAMES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

pub(crate) fn log_power(p: f64) -> f64 {
    0.2 * (p + LOG_EPS).ln()
}

/// Source-derived per-bin features, frame-major, stored as `f32`.
///
/// Per bin: log power, log power smoothed over neighbouring bins, four
/// causal leaky integrals of the power along time, the power averaged over
/// the surrounding five frames, two per-bin noise-floor estimates (the 0.2
/// and 0.5 quantiles over frames), and the normalized bin position.
#[derive(Debug, Clone)]
pub struct StaticFeatures {
    frames: usize,
    bins: usize,
    data: Vec<f32>,
}

impl StaticFeatures {
    pub fn from_source(y: &ComplexSpectrogram) -> Self {
        let (frames, bins) = (y.num_frames(), y.num_bins());
        let power: Vec<f64> = y.data().iter().map(|c| c.norm_sqr()).collect();
        let mut data = vec![0f32; frames * bins * NUM_STATIC];

        let mut floor = vec![[0.0; 2]; bins];
        let mut col = vec![0.0; frames];
        for (k, fl) in floor.iter_mut().enumerate() {
            for (f, c) in col.iter_mut().enumerate() {
                *c = power[f * bins + k];
            }
            col.sort_by(|a, b| a.total_cmp(b));
            for (v, q) in fl.iter_mut().zip(FLOOR_QUANTILES) {
                *v = log_power(col[((frames as f64 - 1.0) * q).round() as usize]);
            }
        }

        let rhos: Vec<f64> = DECAY_FRAMES.iter().map(|d| (-1.0 / d).exp()).collect();
        let mut leaky = vec![[0.0f64; 4]; bins];
        for f in 0..frames {
            let p = &power[f * bins..(f + 1) * bins];
            let mut prefix = vec![0.0; bins + 1];
            for k in 0..bins {
                prefix[k + 1] = prefix[k] + p[k];
            }
            for k in 0..bins {
                let lo = k.saturating_sub(SMOOTH_HALF_WIDTH);
                let hi = (k + SMOOTH_HALF_WIDTH + 1).min(bins);
                let smooth = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
                let out = &mut data[(f * bins + k) * NUM_STATIC..(f * bins + k + 1) * NUM_STATIC];
                out[0] = log_power(p[k]) as f32;
                out[1] = log_power(smooth) as f32;
                for (j, rho) in rhos.iter().enumerate() {
                    leaky[k][j] = rho * leaky[k][j] + (1.0 - rho) * p[k];
                    out[2 + j] = log_power(leaky[k][j]) as f32;
                }
                let (lo, hi) = (f.saturating_sub(CENTRED_HALF_WIDTH), (f + CENTRED_HALF_WIDTH + 1).min(frames));
                let centred = (lo..hi).map(|g| power[g * bins + k]).sum::<f64>() / (hi - lo) as f64;
                out[6] = log_power(centred) as f32;
                out[7] = floor[k][0] as f32;
                out[8] = floor[k][1] as f32;
                out[9] = if bins > 1 { k as f32 / (bins - 1) as f32 } else { 0.0 };
            }
        }
        Self { frames, bins, data }
    }

    pub fn num_frames(&self) -> usize {
        self.frames
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    /// Features of frame `f`, `bins * NUM_STATIC` values.
    pub fn frame(&self, f: usize) -> &[f32] {
        let n = self.bins * NUM_STATIC;
        &self.data[f * n..(f + 1) * n]
    }
}

/// Bin ranges `[lo, hi)` of `num_bands` bands equally spaced on the mel
/// scale over `num_bins` bins spanning 0 Hz to Nyquist. Bands may be empty
/// when there are fewer bins than bands.
pub fn band_edges(num_bins: usize, num_bands: usize) -> Vec<(usize, usize)> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let top = mel(8000.0);
    let bin_of = |u: f64| {
        let hz = 700.0 * (10f64.powf(u * top / 2595.0) - 1.0);
        ((hz / 8000.0) * num_bins as f64).round() as usize
    };
    let mut edges = Vec::with_capacity(num_bands);
    let mut prev = 0;
    for b in 0..num_bands {
        let mut hi = bin_of((b + 1) as f64 / num_bands as f64).min(num_bins);
        if b + 1 == num_bands {
            hi = num_bins;
        }
        if hi <= prev && prev < num_bins {
            hi = prev + 1;
        }
        edges.push((prev, hi.max(prev)));
        prev = hi.max(prev);
    }
    edges
}

/// Log mean power per band of one frame.
pub(crate) fn band_log_powers(frame: &[Complex64], edges: &[(usize, usize)], out: &mut [f64]) {
    for (o, &(lo, hi)) in out.iter_mut().zip(edges) {
        let p = if hi > lo { frame[lo..hi].iter().map(|c| c.norm_sqr()).sum::<f64>() / (hi - lo) as f64 } else { 0.0 };
        *o = log_power(p);
    }
}
