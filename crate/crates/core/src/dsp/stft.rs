use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Waveform;
use crate::{Error, Result};

/// Frame parameters of a spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub win_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
}

impl Default for StftConfig {
    /// Periodic Hann of 640 samples, hop 320, zero-padded to a 1024-point FFT.
    fn default() -> Self {
        Self { win_length: 640, hop_length: 320, fft_size: 1024 }
    }
}

impl StftConfig {
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples: `ceil(len / hop)`.
    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.hop_length)
    }

    fn validate(&self) -> Result<()> {
        if self.hop_length == 0 || self.win_length == 0 {
            return Err(Error::FrameParams("zero hop or window length".into()));
        }
        if self.win_length > self.fft_size {
            return Err(Error::FrameParams(format!(
                "window length {} exceeds FFT size {}",
                self.win_length, self.fft_size
            )));
        }
        if self.win_length % 2 != 0 {
            return Err(Error::FrameParams("window length must be even".into()));
        }
        if 2 * self.hop_length > self.win_length {
            return Err(Error::FrameParams("hop longer than half the window leaves gaps".into()));
        }
        Ok(())
    }
}

/// Complex time-frequency representation, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    data: Vec<Complex64>,
    num_frames: usize,
    config: StftConfig,
}

impl ComplexSpectrogram {
    pub fn zeros(num_frames: usize, config: StftConfig) -> Self {
        Self { data: vec![Complex64::new(0.0, 0.0); num_frames * config.num_bins()], num_frames, config }
    }

    pub fn from_data(data: Vec<Complex64>, num_frames: usize, config: StftConfig) -> Result<Self> {
        let expected = num_frames * config.num_bins();
        if data.len() != expected {
            return Err(Error::ShapeMismatch { expected, found: data.len() });
        }
        Ok(Self { data, num_frames, config })
    }

    /// Builds a spectrogram from interleaved real/imaginary values.
    pub fn from_reals(reals: &[f64], num_frames: usize, config: StftConfig) -> Result<Self> {
        let expected = 2 * num_frames * config.num_bins();
        if reals.len() != expected {
            return Err(Error::ShapeMismatch { expected, found: reals.len() });
        }
        let data = reals.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Ok(Self { data, num_frames, config })
    }

    /// Interleaved real/imaginary values, the flat diffusion state.
    pub fn to_reals(&self) -> Vec<f64> {
        self.data.iter().flat_map(|c| [c.re, c.im]).collect()
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_bins(&self) -> usize {
        self.config.num_bins()
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn frame(&self, f: usize) -> &[Complex64] {
        let nb = self.num_bins();
        &self.data[f * nb..(f + 1) * nb]
    }

    /// Magnitude compression `|X|^beta · e^{i∠X}`; `beta = 1` is the identity.
    pub fn compressed(&self, beta: f64) -> Self {
        let mut out = self.clone();
        if beta != 1.0 {
            for c in out.data.iter_mut() {
                let m = c.norm();
                if m > 0.0 {
                    *c *= m.powf(beta - 1.0);
                }
            }
        }
        out
    }

    /// Inverse of [`compressed`](Self::compressed).
    pub fn decompressed(&self, beta: f64) -> Self {
        self.compressed(1.0 / beta)
    }
}

/// Hop-320 analysis/synthesis with cached FFT plans.
///
/// Frames are centred on multiples of the hop with reflection padding, so a
/// signal of `len` samples yields `ceil(len / hop)` frames. Spectra are
/// scaled by `1/sqrt(sum w^2)`, which keeps white-noise bins at the
/// per-sample variance.
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    norm: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        let window = periodic_hann(config.win_length);
        let norm = window.iter().map(|w| w * w).sum::<f64>().sqrt();
        Ok(Self {
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
            config,
            window,
            norm,
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Scale applied to every spectrum, `1/sqrt(sum w^2)`.
    pub fn spectrum_scale(&self) -> f64 {
        1.0 / self.norm
    }

    pub fn analyze(&self, w: &Waveform) -> Result<ComplexSpectrogram> {
        w.check_pipeline()?;
        Ok(self.analyze_samples(w.samples()))
    }

    /// Windowed frame `f` of `x` (before the FFT), reflection-padded.
    pub fn windowed_frame(&self, x: &[f64], f: usize) -> Vec<f64> {
        let half = self.config.win_length / 2;
        let start = (f * self.config.hop_length) as isize - half as isize;
        self.window
            .iter()
            .enumerate()
            .map(|(j, w)| w * x[reflect_index(start + j as isize, x.len())])
            .collect()
    }

    pub(crate) fn analyze_samples(&self, x: &[f64]) -> ComplexSpectrogram {
        let cfg = self.config;
        let num_frames = cfg.num_frames(x.len());
        let nb = cfg.num_bins();
        let mut data = Vec::with_capacity(num_frames * nb);
        let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
        let scale = 1.0 / self.norm;
        for f in 0..num_frames {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (b, v) in buf.iter_mut().zip(self.windowed_frame(x, f)) {
                b.re = v;
            }
            self.forward.process(&mut buf);
            data.extend(buf[..nb].iter().map(|c| c * scale));
        }
        ComplexSpectrogram { data, num_frames, config: cfg }
    }

    /// Least-squares overlap-add synthesis, truncated or zero-padded to `length`.
    pub fn synthesize(&self, s: &ComplexSpectrogram, length: usize) -> Result<Waveform> {
        if s.config != self.config {
            return Err(Error::FrameParams(format!(
                "spectrogram uses {:?}, synthesis expects {:?}",
                s.config, self.config
            )));
        }
        let cfg = self.config;
        let (n, nb, hop, win) = (cfg.fft_size, cfg.num_bins(), cfg.hop_length, cfg.win_length);
        let half = win / 2;
        // Padded time axis: sample i of the output sits at i + half.
        let span = (s.num_frames.saturating_sub(1)) * hop + win;
        let mut acc = vec![0.0; span];
        let mut wsum = vec![0.0; span];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let inv = self.norm / n as f64;
        for f in 0..s.num_frames {
            let frame = s.frame(f);
            buf[..nb].copy_from_slice(frame);
            for k in 1..n - nb + 1 {
                buf[n - k] = frame[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = f * hop;
            for j in 0..win {
                let w = self.window[j];
                acc[start + j] += w * buf[j].re * inv;
                wsum[start + j] += w * w;
            }
        }
        let samples = (0..length)
            .map(|i| {
                let p = i + half;
                if p < span && wsum[p] > 1e-300 {
                    acc[p] / wsum[p]
                } else {
                    0.0
                }
            })
            .collect();
        Waveform::from_samples(samples)
    }
}

/// Forward transform with the default frame parameters.
pub fn stft(w: &Waveform) -> Result<ComplexSpectrogram> {
    Stft::new(StftConfig::default())?.analyze(w)
}

/// Inverse of [`stft`] with window-normalised overlap-add.
pub fn istft(s: &ComplexSpectrogram, length: usize) -> Result<Waveform> {
    Stft::new(s.config())?.synthesize(s, length)
}

fn periodic_hann(len: usize) -> Vec<f64> {
    (0..len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / len as f64).cos()).collect()
}

/// Index into a signal of length `len` under whole-sample symmetric
/// reflection (`x[-1] = x[1]`), repeated as often as needed.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
        let sig: f64 = reference.iter().map(|v| v * v).sum();
        let err: f64 = reference.iter().zip(estimate).map(|(a, b)| (a - b).powi(2)).sum();
        10.0 * (sig / err.max(1e-300)).log10()
    }

    fn random_wave(seed: u64, len: usize) -> Waveform {
        Waveform::from_samples(rng::normals(&mut rng::seeded(seed), len)).unwrap()
    }

    #[test]
    fn reflection_matches_numpy_reflect() {
        // numpy.pad([0,1,2,3], 3, mode="reflect") == [3,2,1,0,1,2,3,2,1,0]
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn silence_gives_zero_frames() {
        let s = stft(&Waveform::silence(16000)).unwrap();
        assert_eq!(s.num_frames(), 50);
        assert_eq!(s.num_bins(), 513);
        assert!(s.data().iter().all(|c| c.norm() == 0.0));
        let w = istft(&s, 16000).unwrap();
        assert!(w.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_is_ceil_len_over_hop() {
        let st = Stft::new(StftConfig::default()).unwrap();
        for len in [1, 2, 319, 320, 321, 640, 16001] {
            let s = st.analyze(&random_wave(len as u64, len)).unwrap();
            assert_eq!(s.num_frames(), len.div_ceil(320), "len {len}");
        }
    }

    #[test]
    fn sine_peaks_at_nearest_bin_and_matches_direct_dft() {
        let fs = 16000.0;
        let x: Vec<f64> = (0..16000).map(|n| (2.0 * PI * 1000.0 * n as f64 / fs).sin()).collect();
        let st = Stft::new(StftConfig::default()).unwrap();
        let s = st.analyze(&Waveform::from_samples(x.clone()).unwrap()).unwrap();
        let expected_bin = (1000.0 * 1024.0 / fs).round() as usize;
        for f in 2..s.num_frames() - 2 {
            let frame = s.frame(f);
            let (peak, _) = frame
                .iter()
                .enumerate()
                .fold((0, 0.0), |(bi, bm), (i, c)| if c.norm() > bm { (i, c.norm()) } else { (bi, bm) });
            assert_eq!(peak, expected_bin, "frame {f}");
            // Direct DFT of the windowed frame at the peak bin.
            let wf = st.windowed_frame(&x, f);
            let direct: Complex64 = wf
                .iter()
                .enumerate()
                .map(|(n, v)| v * Complex64::from_polar(1.0, -2.0 * PI * (peak * n) as f64 / 1024.0))
                .sum::<Complex64>()
                * st.spectrum_scale();
            assert!((direct - frame[peak]).norm() < 1e-9 * direct.norm());
        }
    }

    #[test]
    fn round_trip_is_exact_to_60_db() {
        let st = Stft::new(StftConfig::default()).unwrap();
        for (seed, len) in [(1u64, 16000usize), (2, 1), (3, 333), (4, 640), (5, 12345)] {
            let w = random_wave(seed, len);
            let back = st.synthesize(&st.analyze(&w).unwrap(), len).unwrap();
            assert!(snr_db(w.samples(), back.samples()) >= 60.0, "len {len}");
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let st = Stft::new(StftConfig::default()).unwrap();
        let w = random_wave(9, 5000);
        let s = st.analyze(&w).unwrap();
        let s2 = st.analyze(&st.synthesize(&s, 5000).unwrap()).unwrap();
        let num: f64 = s.data().iter().zip(s2.data()).map(|(a, b)| (a - b).norm_sqr()).sum();
        let den: f64 = s.data().iter().map(|a| a.norm_sqr()).sum();
        assert!((num / den).sqrt() < 1e-6);
    }

    #[test]
    fn linearity() {
        let st = Stft::new(StftConfig::default()).unwrap();
        let a = random_wave(10, 3000);
        let b = random_wave(11, 3000);
        let mix: Vec<f64> = a.samples().iter().zip(b.samples()).map(|(x, y)| 0.7 * x - 2.0 * y).collect();
        let sm = st.analyze(&Waveform::from_samples(mix).unwrap()).unwrap();
        let (sa, sb) = (st.analyze(&a).unwrap(), st.analyze(&b).unwrap());
        for ((m, x), y) in sm.data().iter().zip(sa.data()).zip(sb.data()) {
            let lin = x * 0.7 - y * 2.0;
            assert!((m - lin).norm() <= 1e-6 * lin.norm().max(1e-9));
        }
    }

    #[test]
    fn parseval_per_frame() {
        let st = Stft::new(StftConfig::default()).unwrap();
        let x = random_wave(12, 4000);
        let s = st.analyze(&x).unwrap();
        let n = st.config().fft_size as f64;
        let nb = st.config().num_bins();
        for f in 0..s.num_frames() {
            let time: f64 = st.windowed_frame(x.samples(), f).iter().map(|v| v * v).sum();
            let fr = s.frame(f);
            let one_sided: f64 = fr[0].norm_sqr()
                + fr[nb - 1].norm_sqr()
                + 2.0 * fr[1..nb - 1].iter().map(|c| c.norm_sqr()).sum::<f64>();
            let spec = one_sided / (st.spectrum_scale().powi(2) * n);
            assert!((spec - time).abs() <= 1e-6 * time);
        }
    }

    #[test]
    fn rejects_mismatched_frame_params() {
        let s = ComplexSpectrogram::zeros(3, StftConfig { win_length: 512, hop_length: 256, fft_size: 512 });
        assert!(matches!(istft(&s, 100).map(|_| ()), Ok(())));
        let st = Stft::new(StftConfig::default()).unwrap();
        assert!(matches!(st.synthesize(&s, 100), Err(Error::FrameParams(_))));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(stft(&Waveform::silence(0)), Err(Error::EmptyInput(_))));
        let w = Waveform::new(vec![0.1; 100], 8000).unwrap();
        assert!(matches!(stft(&w), Err(Error::SampleRate { found: 8000 })));
    }

    #[test]
    fn compression_inverts() {
        let s = stft(&random_wave(13, 2000)).unwrap();
        let back = s.compressed(0.5).decompressed(0.5);
        for (a, b) in s.data().iter().zip(back.data()) {
            assert!((a - b).norm() <= 1e-9 * a.norm().max(1e-12));
        }
    }
}
