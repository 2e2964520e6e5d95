//! End-to-end workflows: waveform in, spectrogram diffusion, waveform out.

use std::path::Path;
use std::sync::Arc;

use crate::conditioning::{LogMelEmbedder, SourceConditions, Vocabulary};
use crate::dsp::{read_wav, ComplexSpectrogram, Stft, StftConfig, Waveform};
use crate::metrics::{evaluate, MetricReport};
use crate::prompt::{self, EditCommand};
use crate::rng::{derive_seed, seeded};
use crate::score::{NetScore, PairStore, ScoreNet};
use crate::sde::SdeSchedule;
use crate::sim::{DatasetManifest, ManifestEntry};
use crate::solver::{self, SolverConfig};
use crate::{Error, Result};

/// STFT, acoustic embedder and vocabulary shared by training and inference.
pub struct Pipeline {
    stft: Stft,
    embedder: LogMelEmbedder,
    vocab: Vocabulary,
}

impl Default for Pipeline {
    fn default() -> Self {
        Self {
            stft: Stft::new(StftConfig::default()).expect("default STFT parameters are valid"),
            embedder: LogMelEmbedder::default(),
            vocab: Vocabulary::default(),
        }
    }
}

impl Pipeline {
    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    /// Zero-pads to `(ceil(len / hop) + 1) * hop` samples so that the last
    /// frame sees silence rather than a reflection of the signal.
    pub fn pad(&self, w: &Waveform) -> Waveform {
        let hop = self.stft.config().hop_length;
        w.resized((w.len().div_ceil(hop) + 1) * hop)
    }

    pub fn source_conditions(&self, y: &Waveform, prompt: &str) -> Result<SourceConditions> {
        SourceConditions::new(&self.pad(y), prompt, &self.stft, &self.embedder, &self.vocab)
    }

    pub fn spectrogram(&self, x: &Waveform) -> Result<ComplexSpectrogram> {
        self.stft.analyze(&self.pad(x))
    }

    /// Training pairs of the manifest entries accepted by `keep`.
    pub fn load_pairs(
        &self,
        manifest_path: &Path,
        manifest: &DatasetManifest,
        keep: &dyn Fn(&ManifestEntry) -> bool,
    ) -> Result<PairStore> {
        let mut store = PairStore::default();
        for e in manifest.entries.iter().filter(|e| keep(e)) {
            let src = read_wav(crate::sim::entry_path(manifest_path, &e.source_path))?;
            let tgt = read_wav(crate::sim::entry_path(manifest_path, &e.target_path))?;
            let cond = self.source_conditions(&src, &prompt::format(&e.command)?)?;
            store.pairs.push((Arc::new(cond), Arc::new(self.spectrogram(&tgt)?)));
        }
        if store.pairs.is_empty() {
            return Err(Error::Manifest(format!("{}: no matching entries", manifest_path.display())));
        }
        Ok(store)
    }

    /// Reverse diffusion from `y` under `prompt`; the output has `y`'s length.
    pub fn generate(
        &self,
        net: &ScoreNet,
        sched: &SdeSchedule,
        solver_cfg: &SolverConfig,
        y: &Waveform,
        prompt: &str,
        seed: u64,
    ) -> Result<Waveform> {
        let source = Arc::new(self.source_conditions(y, prompt)?);
        let spec = source.source_spec().clone();
        let ctx = net.context(source)?;
        let score = NetScore { net, sched: *sched };
        let x = solver::sample(&spec.to_reals(), &score, &ctx, sched, solver_cfg, &mut seeded(seed))?;
        let out = ComplexSpectrogram::from_reals(&x, spec.num_frames(), spec.config())?;
        self.stft.synthesize(&out, y.len())
    }
}

/// Parses `prompt` and checks that it requests enhancement (`true`) or
/// editing (`false`).
pub fn parse_for(prompt: &str, enhancement: bool) -> Result<EditCommand> {
    let cmd = prompt::parse(prompt)?;
    if cmd.action().is_enhancement() != enhancement {
        let want = if enhancement { "Remove noise / Remove reverberation" } else { "an Add ... prompt" };
        return Err(Error::InvalidCommand(format!("{prompt:?} is not {want}")));
    }
    Ok(cmd)
}

/// Runs every entry's prompt on its source and scores the output against
/// the target. Entry `i` samples with `derive_seed(seed, i)`.
pub fn evaluate_manifest(
    pipeline: &Pipeline,
    net: &ScoreNet,
    sched: &SdeSchedule,
    solver_cfg: &SolverConfig,
    manifest_path: &Path,
    manifest: &DatasetManifest,
    seed: u64,
) -> Result<Vec<(String, MetricReport)>> {
    let run = |i: usize, e: &ManifestEntry| -> Result<(String, MetricReport)> {
        let src = read_wav(crate::sim::entry_path(manifest_path, &e.source_path))?;
        let tgt = read_wav(crate::sim::entry_path(manifest_path, &e.target_path))?;
        let prompt = prompt::format(&e.command)?;
        let out = pipeline.generate(net, sched, solver_cfg, &src, &prompt, derive_seed(seed, i as u64))?;
        Ok((e.id.clone(), evaluate(&tgt, &out)?))
    };
    par_map(&manifest.entries, run)
}

/// Order-preserving map over scoped worker threads.
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(usize, &T) -> Result<U> + Sync) -> Result<Vec<U>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len()).max(1);
    let chunk = items.len().div_ceil(workers).max(1);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                s.spawn(move || part.iter().enumerate().map(|(j, it)| f(c * chunk + j, it)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}
