//! Per-step conditioning for the score network.
//!
//! A [`ConditionBundle`] carries the source spectrogram, its interpolation
//! with the current diffusion state, frame-aligned acoustic embeddings and
//! the prompt's token sequence. Everything that depends only on the source
//! waveform and prompt lives in [`SourceConditions`] and is computed once per
//! utterance; only the interpolated spectrogram changes between steps.

mod acoustic;
mod text;

use std::sync::{Arc, OnceLock};

pub use acoustic::{AcousticEmbedder, FrameMatrix, LogMelEmbedder, LOG_FLOOR};
pub use text::{embed_text, tokenize, Vocabulary};

use crate::dsp::{ComplexSpectrogram, Stft, Waveform};
use crate::score::StaticFeatures;
use crate::sde::{InterpMode, SdeSchedule};
use crate::{Error, Result};

/// Conditions that depend only on the source utterance and the prompt.
#[derive(Debug, Clone)]
pub struct SourceConditions {
    source_spec: ComplexSpectrogram,
    acoustic_frames: FrameMatrix,
    text_tokens: Vec<usize>,
    features: OnceLock<Arc<StaticFeatures>>,
}

impl SourceConditions {
    /// Analyzes `y` and tokenizes `prompt`.
    pub fn new(
        y: &Waveform,
        prompt: &str,
        stft: &Stft,
        embedder: &dyn AcousticEmbedder,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        let source_spec = stft.analyze(y)?;
        if embedder.hop() != stft.config().hop_length {
            return Err(Error::FrameParams(format!(
                "embedder hop {} differs from STFT hop {}",
                embedder.hop(),
                stft.config().hop_length
            )));
        }
        let acoustic_frames = embedder.embed(y)?;
        Self::from_parts(source_spec, acoustic_frames, vocab.encode(prompt))
    }

    pub fn from_parts(
        source_spec: ComplexSpectrogram,
        acoustic_frames: FrameMatrix,
        text_tokens: Vec<usize>,
    ) -> Result<Self> {
        if acoustic_frames.rows() != source_spec.num_frames() {
            return Err(Error::FrameParams(format!(
                "acoustic embedding has {} frames, spectrogram has {}",
                acoustic_frames.rows(),
                source_spec.num_frames()
            )));
        }
        Ok(Self { source_spec, acoustic_frames, text_tokens, features: OnceLock::new() })
    }

    pub fn source_spec(&self) -> &ComplexSpectrogram {
        &self.source_spec
    }

    pub fn acoustic_frames(&self) -> &FrameMatrix {
        &self.acoustic_frames
    }

    pub fn text_tokens(&self) -> &[usize] {
        &self.text_tokens
    }

    pub fn num_frames(&self) -> usize {
        self.source_spec.num_frames()
    }

    /// Per-bin network features of the source, computed on first use.
    pub fn static_features(&self) -> Arc<StaticFeatures> {
        self.features.get_or_init(|| Arc::new(StaticFeatures::from_source(&self.source_spec))).clone()
    }
}

/// Conditioning input at one reverse step.
#[derive(Debug, Clone)]
pub struct ConditionBundle {
    pub source: Arc<SourceConditions>,
    pub interp_spec: ComplexSpectrogram,
}

impl ConditionBundle {
    /// Interpolates the source with `x_t` at time `t`.
    pub fn at(source: Arc<SourceConditions>, t: f64, x_t: &ComplexSpectrogram, sched: &SdeSchedule) -> Result<Self> {
        let y = source.source_spec();
        if x_t.num_frames() != y.num_frames() || x_t.num_bins() != y.num_bins() {
            return Err(Error::ShapeMismatch { expected: y.data().len(), found: x_t.data().len() });
        }
        let w = interp_weight(t, sched);
        let data = y.data().iter().zip(x_t.data()).map(|(y, x)| y * w + x * (1.0 - w)).collect();
        let interp_spec = ComplexSpectrogram::from_data(data, y.num_frames(), y.config())?;
        Ok(Self { source, interp_spec })
    }

    pub fn source_spec(&self) -> &ComplexSpectrogram {
        self.source.source_spec()
    }

    pub fn acoustic_frames(&self) -> &FrameMatrix {
        self.source.acoustic_frames()
    }

    pub fn text_tokens(&self) -> &[usize] {
        self.source.text_tokens()
    }
}

/// Weight of the source spectrogram in the interpolated condition.
///
/// Equals 1 at `t_max` (the first reverse step) and decreases as the
/// reverse process approaches `t_min`: `exp(-gamma (t_max - t))` in
/// exponential mode, the affine ramp `(t - t_min) / (t_max - t_min)` in
/// linear mode.
pub fn interp_weight(t: f64, sched: &SdeSchedule) -> f64 {
    match sched.interp_mode {
        InterpMode::Exponential => (-sched.gamma * (sched.t_max - t)).exp(),
        InterpMode::Linear => ((t - sched.t_min) / (sched.t_max - sched.t_min)).clamp(0.0, 1.0),
    }
}

/// One-shot bundle construction from a waveform and prompt.
#[allow(clippy::too_many_arguments)]
pub fn build_bundle(
    y: &Waveform,
    prompt: &str,
    t: f64,
    x_t: &ComplexSpectrogram,
    sched: &SdeSchedule,
    stft: &Stft,
    embedder: &dyn AcousticEmbedder,
    vocab: &Vocabulary,
) -> Result<ConditionBundle> {
    let source = Arc::new(SourceConditions::new(y, prompt, stft, embedder, vocab)?);
    ConditionBundle::at(source, t, x_t, sched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::StftConfig;
    use crate::rng;
    use rand::Rng;

    fn setup() -> (Stft, LogMelEmbedder, Vocabulary) {
        (Stft::new(StftConfig::default()).unwrap(), LogMelEmbedder::default(), Vocabulary::default())
    }

    fn noise(seed: u64, len: usize) -> Waveform {
        Waveform::from_samples(rng::normals(&mut rng::seeded(seed), len).iter().map(|v| 0.1 * v).collect()).unwrap()
    }

    #[test]
    fn boundary_and_midpoint() {
        let (stft, emb, vocab) = setup();
        let y = noise(1, 3000);
        let x = stft.analyze(&noise(2, 3000)).unwrap();
        let sched = SdeSchedule::default();
        let b = build_bundle(&y, "Remove noise", sched.t_max, &x, &sched, &stft, &emb, &vocab).unwrap();
        assert_eq!(b.interp_spec.data(), b.source_spec().data());

        let lin = SdeSchedule { interp_mode: InterpMode::Linear, ..Default::default() };
        let mid = 0.5 * (lin.t_min + lin.t_max);
        let b = build_bundle(&y, "Remove noise", mid, &x, &lin, &stft, &emb, &vocab).unwrap();
        for ((i, s), xv) in b.interp_spec.data().iter().zip(b.source_spec().data()).zip(x.data()) {
            assert!((i - (s * 0.5 + xv * 0.5)).norm() < 1e-12);
        }
    }

    #[test]
    fn weight_is_monotone_in_both_modes() {
        for mode in [InterpMode::Exponential, InterpMode::Linear] {
            let s = SdeSchedule { interp_mode: mode, ..Default::default() };
            let ws: Vec<f64> = (0..=40).map(|i| interp_weight(s.t_min + (s.t_max - s.t_min) * i as f64 / 40.0, &s)).collect();
            assert!(ws.windows(2).all(|w| w[1] > w[0]), "{mode:?}");
            assert!((ws[40] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn frame_counts_align_for_random_lengths() {
        let (stft, emb, vocab) = setup();
        let mut r = rng::seeded(77);
        for _ in 0..1000 {
            let len = r.random_range(1..=16000);
            let y = Waveform::silence(len);
            let sc = SourceConditions::new(&y, "", &stft, &emb, &vocab).unwrap();
            assert_eq!(sc.acoustic_frames().rows(), sc.source_spec().num_frames());
        }
    }

    #[test]
    fn deterministic() {
        let (stft, emb, vocab) = setup();
        let y = noise(3, 2000);
        let x = stft.analyze(&noise(4, 2000)).unwrap();
        let s = SdeSchedule::default();
        let a = build_bundle(&y, "add reverberation with large room", 0.4, &x, &s, &stft, &emb, &vocab).unwrap();
        let b = build_bundle(&y, "add reverberation with large room", 0.4, &x, &s, &stft, &emb, &vocab).unwrap();
        assert_eq!(a.interp_spec, b.interp_spec);
        assert_eq!(a.acoustic_frames(), b.acoustic_frames());
        assert_eq!(a.text_tokens(), b.text_tokens());
    }

    #[test]
    fn misaligned_parts_rejected() {
        let spec = ComplexSpectrogram::zeros(4, StftConfig::default());
        let frames = FrameMatrix::zeros(3, 13);
        assert!(matches!(SourceConditions::from_parts(spec, frames, vec![]), Err(Error::FrameParams(_))));
    }
}
