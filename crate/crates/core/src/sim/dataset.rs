//! Dataset assembly and the JSON-lines manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::corpus::label_of_file;
use super::mix::{mix_at_snr, peak_limit};
use super::rir::{apply_rir, synth_rir, RirSpec};
use crate::dsp::{read_wav, write_wav, Waveform};
use crate::metrics::snr_db;
use crate::prompt::{sample_command_weighted, EditCommand, RoomSize, SNR_RANGE_DB};
use crate::rng::{derive_seed, seeded};
use crate::{Error, Result};

/// Relative frequency of each edit action in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskMix {
    pub add_background: f64,
    pub add_reverb: f64,
    pub remove_noise: f64,
    pub remove_reverb: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        Self { add_background: 1.0, add_reverb: 1.0, remove_noise: 1.0, remove_reverb: 1.0 }
    }
}

impl TaskMix {
    fn weights(&self) -> [f64; 4] {
        [self.add_background, self.add_reverb, self.remove_noise, self.remove_reverb]
    }
}

/// One source/target pair. Paths are relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub source_path: String,
    pub target_path: String,
    pub command: EditCommand,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measured_snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rt60_s: Option<f64>,
    pub clean_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insert_offset: Option<usize>,
    /// Room of the simulated reverberation when the command names none.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_size: Option<RoomSize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

fn list_wavs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for e in rd {
        let p = e.map_err(|e| Error::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x == "wav") {
            out.push(p);
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::EmptyInput("corpus directory has no .wav files"));
    }
    Ok(out)
}

fn relative_to(path: &Path, base: &Path) -> String {
    let abs = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let (p, b) = (abs(path), abs(base));
    p.strip_prefix(&b).map(Path::to_path_buf).unwrap_or(p).to_string_lossy().into_owned()
}

fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

struct Synthesis {
    source: Waveform,
    target: Waveform,
    measured_snr_db: Option<f64>,
    rt60_s: Option<f64>,
    insert_offset: Option<usize>,
}

fn reverberate<R: Rng + ?Sized>(clean: &Waveform, room: RoomSize, rng: &mut R) -> Result<Waveform> {
    let rir = synth_rir(&RirSpec::for_room(room), rng)?;
    Ok(apply_rir(clean, &rir)?.resized(clean.len()))
}

/// Deterministic corruption of `clean` for `entry`, drawing from the
/// entry's generation stream.
fn synthesize(entry: &ManifestEntry, clean: &Waveform, noise: Option<&Waveform>) -> Result<Synthesis> {
    let mut rng = seeded(derive_seed(entry.seed, 1));
    let need_noise = || noise.ok_or_else(|| Error::Manifest(format!("{}: noise file required", entry.id)));
    let mix = |snr: f64, rng: &mut crate::rng::SeededRng| -> Result<(Waveform, f64, usize)> {
        let (m, scaled, off) = mix_at_snr(clean, need_noise()?, snr, rng)?;
        let measured = snr_db(clean.samples(), &scaled.samples()[off..off + clean.len()]);
        Ok((m, measured, off))
    };
    Ok(match &entry.command {
        EditCommand::RemoveNoise => {
            let snr = rng.random_range(SNR_RANGE_DB.0..=SNR_RANGE_DB.1);
            let (m, measured, off) = mix(snr, &mut rng)?;
            let target = if m.len() == clean.len() { clean.clone() } else { padded(clean, off, m.len())? };
            Synthesis { source: peak_limit(m), target, measured_snr_db: Some(measured), rt60_s: None, insert_offset: Some(off) }
        }
        EditCommand::AddBackground { snr_db, .. } => {
            let (m, measured, off) = mix(*snr_db, &mut rng)?;
            let source = if m.len() == clean.len() { clean.clone() } else { padded(clean, off, m.len())? };
            // One gain for both sides keeps the pair's SNR intact.
            let g = 1.0 / m.peak().max(1.0);
            Synthesis { source: source.scaled(g), target: m.scaled(g), measured_snr_db: Some(measured), rt60_s: None, insert_offset: Some(off) }
        }
        EditCommand::AddReverb { room } => Synthesis {
            source: clean.clone(),
            target: reverberate(clean, *room, &mut rng)?,
            measured_snr_db: None,
            rt60_s: Some(RirSpec::rt60_of(*room)),
            insert_offset: None,
        },
        EditCommand::RemoveReverb => {
            let room = entry.room_size.ok_or_else(|| Error::Manifest(format!("{}: room_size required", entry.id)))?;
            Synthesis {
                source: reverberate(clean, room, &mut rng)?,
                target: clean.clone(),
                measured_snr_db: None,
                rt60_s: Some(RirSpec::rt60_of(room)),
                insert_offset: None,
            }
        }
    })
}

fn padded(clean: &Waveform, offset: usize, len: usize) -> Result<Waveform> {
    let mut x = vec![0.0; len];
    x[offset..offset + clean.len()].copy_from_slice(clean.samples());
    Waveform::from_samples(x)
}

/// Simulates `n_pairs` pairs from the clean and noise corpora into
/// `out_dir/audio` and writes `out_dir/manifest.jsonl`.
///
/// Entry `i` uses seed `derive_seed(seed, i)`: one stream picks the command
/// and files, a second one (seeded from the entry seed) drives the
/// corruption, so [`regenerate_entry`] can rebuild the audio from the
/// manifest alone. Enhancement entries map corrupted to clean speech,
/// editing entries clean to corrupted.
pub fn build_dataset(
    clean_dir: &Path,
    noise_dir: &Path,
    n_pairs: usize,
    mix: &TaskMix,
    seed: u64,
    out_dir: &Path,
) -> Result<(DatasetManifest, PathBuf)> {
    let cleans = list_wavs(clean_dir)?;
    let noises = list_wavs(noise_dir)?;
    let labelled: Vec<(PathBuf, String)> =
        noises.iter().filter_map(|p| label_of_file(p).map(|l| (p.clone(), l))).collect();
    let mut labels: Vec<String> = labelled.iter().map(|(_, l)| l.clone()).collect();
    labels.dedup();
    labels.sort();
    labels.dedup();
    if labels.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let audio = out_dir.join("audio");
    fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;

    let mut entries = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let seed_i = derive_seed(seed, i as u64);
        let mut rng = seeded(seed_i);
        let command = sample_command_weighted(&mut rng, &labels, &mix.weights())?;
        let clean_path = &cleans[rng.random_range(0..cleans.len())];
        let noise_path = match &command {
            EditCommand::AddBackground { label, .. } => {
                let pool: Vec<&PathBuf> = labelled.iter().filter(|(_, l)| l == label).map(|(p, _)| p).collect();
                Some(pool[rng.random_range(0..pool.len())].clone())
            }
            EditCommand::RemoveNoise => Some(noises[rng.random_range(0..noises.len())].clone()),
            _ => None,
        };
        let room_size = matches!(command, EditCommand::RemoveReverb).then(|| RoomSize::ALL[rng.random_range(0..3)]);
        let id = format!("pair_{i:05}");
        let mut entry = ManifestEntry {
            source_path: format!("audio/{id}_source.wav"),
            target_path: format!("audio/{id}_target.wav"),
            id,
            command,
            seed: seed_i,
            measured_snr_db: None,
            rt60_s: None,
            clean_file: relative_to(clean_path, out_dir),
            noise_file: noise_path.as_ref().map(|p| relative_to(p, out_dir)),
            insert_offset: None,
            room_size,
        };
        let (source, target) = generate(&mut entry, out_dir)?;
        write_wav(resolve(out_dir, &entry.source_path), &source)?;
        write_wav(resolve(out_dir, &entry.target_path), &target)?;
        entries.push(entry);
    }
    let manifest = DatasetManifest { entries };
    let path = out_dir.join("manifest.jsonl");
    write_manifest(&path, &manifest)?;
    Ok((manifest, path))
}

fn generate(entry: &mut ManifestEntry, base: &Path) -> Result<(Waveform, Waveform)> {
    let clean = read_wav(resolve(base, &entry.clean_file))?;
    let noise = entry.noise_file.as_ref().map(|p| read_wav(resolve(base, p))).transpose()?;
    let s = synthesize(entry, &clean, noise.as_ref())?;
    entry.measured_snr_db = s.measured_snr_db;
    entry.rt60_s = s.rt60_s;
    entry.insert_offset = s.insert_offset;
    Ok((s.source, s.target))
}

/// Recomputes an entry's source and target audio; `base` is the manifest
/// directory.
pub fn regenerate_entry(entry: &ManifestEntry, base: &Path) -> Result<(Waveform, Waveform)> {
    let mut e = entry.clone();
    generate(&mut e, base)
}

pub fn write_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut buf = Vec::new();
    for e in &manifest.entries {
        serde_json::to_writer(&mut buf, e).map_err(|err| Error::Manifest(err.to_string()))?;
        buf.write_all(b"\n").expect("write to memory");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a manifest and checks that its files exist and seeds are unique.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::new();
    let mut seeds = std::collections::HashSet::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let e: ManifestEntry =
            serde_json::from_str(line).map_err(|err| Error::Manifest(format!("line {}: {err}", n + 1)))?;
        for p in [&e.source_path, &e.target_path] {
            let full = resolve(base, p);
            if !full.exists() {
                return Err(Error::Manifest(format!("{}: missing file {}", e.id, full.display())));
            }
        }
        if !seeds.insert(e.seed) {
            return Err(Error::Manifest(format!("{}: duplicate seed {}", e.id, e.seed)));
        }
        entries.push(e);
    }
    if entries.is_empty() {
        return Err(Error::Manifest(format!("{} has no entries", path.display())));
    }
    Ok(DatasetManifest { entries })
}

/// Resolves a manifest-relative path.
pub fn entry_path(manifest_path: &Path, p: &str) -> PathBuf {
    resolve(manifest_path.parent().unwrap_or(Path::new(".")), p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::Action;
    use crate::sim::{write_clean_corpus, write_noise_corpus};

    fn quantized(w: &Waveform) -> Waveform {
        let q = w.samples().iter().map(|&s| (s * 32768.0).round().clamp(-32768.0, 32767.0) / 32768.0).collect();
        Waveform::from_samples(q).unwrap()
    }

    fn corpora(dir: &Path) -> (PathBuf, PathBuf) {
        let (c, n) = (dir.join("corpus/clean"), dir.join("corpus/noise"));
        write_clean_corpus(&c, 3, 1).unwrap();
        write_noise_corpus(&n, 2, 2).unwrap();
        (c, n)
    }

    #[test]
    fn build_load_and_regenerate() {
        let dir = tempfile::tempdir().unwrap();
        let (c, n) = corpora(dir.path());
        let (m, path) = build_dataset(&c, &n, 24, &TaskMix::default(), 9, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 24);
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded, m);
        let mut seen = std::collections::HashSet::new();
        for e in &m.entries {
            seen.insert(e.command.action());
            let src = read_wav(entry_path(&path, &e.source_path)).unwrap();
            let tgt = read_wav(entry_path(&path, &e.target_path)).unwrap();
            let clean = read_wav(entry_path(&path, &e.clean_file)).unwrap();
            assert_eq!(src.len(), tgt.len());
            match &e.command {
                EditCommand::RemoveNoise | EditCommand::RemoveReverb => assert_eq!(tgt, clean),
                EditCommand::AddBackground { .. } => {
                    let g = src.peak() / clean.peak();
                    assert!(g <= 1.0 && src.samples().iter().zip(clean.samples()).all(|(a, b)| (a - g * b).abs() < 1e-4));
                }
                _ => assert_eq!(src, clean),
            }
            if let EditCommand::AddBackground { snr_db: want, .. } = e.command {
                let noise: Vec<f64> = tgt.samples().iter().zip(src.samples()).map(|(t, s)| t - s).collect();
                let got = snr_db(src.samples(), &noise);
                assert!((got - want).abs() <= 0.1, "{}: {got} vs {want}", e.id);
                assert!((e.measured_snr_db.unwrap() - want).abs() <= 0.1);
            }
            let (s2, t2) = regenerate_entry(e, dir.path()).unwrap();
            assert_eq!(quantized(&s2), src);
            assert_eq!(quantized(&t2), tgt);
        }
        assert_eq!(seen.len(), 4, "{seen:?}");
        let _ = Action::ALL;
    }

    #[test]
    fn rebuild_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (c, n) = corpora(dir.path());
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        build_dataset(&c, &n, 8, &TaskMix::default(), 3, &a).unwrap();
        build_dataset(&c, &n, 8, &TaskMix::default(), 3, &b).unwrap();
        for f in ["audio/pair_00005_source.wav", "audio/pair_00005_target.wav"] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
        }
        let ma = fs::read_to_string(a.join("manifest.jsonl")).unwrap();
        let mb = fs::read_to_string(b.join("manifest.jsonl")).unwrap();
        assert_eq!(ma.replace("../", ""), mb.replace("../", ""));
    }

    #[test]
    fn bad_manifests_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "{not json}\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Manifest(_))));
        assert!(load_manifest(&dir.path().join("none.jsonl")).unwrap_err().is_io());
        assert!(build_dataset(dir.path(), dir.path(), 1, &TaskMix::default(), 0, dir.path()).is_err());
    }
}
