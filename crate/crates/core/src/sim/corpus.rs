//! Synthetic speech-like and background-sound corpora.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::dsp::{write_wav, Waveform, SAMPLE_RATE};
use crate::rng::{derive_seed, normal, seeded};
use crate::{Error, Result};

/// Background-sound classes of the synthetic noise corpus.
pub const NOISE_LABELS: [&str; 4] = ["rain", "dog barking", "traffic", "babble"];

/// Length of a synthetic clean utterance: 1.28 s, the last ~0.4 s silent.
pub const CLEAN_LEN: usize = 20_480;
const SPEECH_END: usize = 13_600;
const PEAK: f64 = 0.5;
const SR: f64 = SAMPLE_RATE as f64;

fn normalize(mut x: Vec<f64>) -> Vec<f64> {
    let p = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if p > 0.0 {
        x.iter_mut().for_each(|v| *v *= PEAK / p);
    }
    x
}

/// Adds one voiced syllable at `start`: a gliding harmonic complex shaped
/// by two formant bumps under an attack/release envelope.
fn add_syllable<R: Rng + ?Sized>(out: &mut [f64], start: usize, len: usize, rng: &mut R) {
    let f0 = rng.random_range(100.0..240.0);
    let glide: f64 = rng.random_range(0.85..1.15);
    let f1 = rng.random_range(300.0..900.0);
    let f2 = rng.random_range(900.0..2500.0);
    let bw = rng.random_range(150.0..250.0);
    let n_harm = (4000.0 / (f0 * glide.max(1.0))) as usize;
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            let formant = (-((f - f1) / bw).powi(2)).exp() + 0.7 * (-((f - f2) / bw).powi(2)).exp() + 0.08;
            formant / (h as f64).sqrt()
        })
        .collect();
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..TAU)).collect();
    let attack = (0.02 * SR) as usize;
    let release = (0.04 * SR) as usize;
    let mut phi = 0.0;
    for i in 0..len.min(out.len().saturating_sub(start)) {
        let frac = i as f64 / len as f64;
        phi += TAU * f0 * (1.0 + (glide - 1.0) * frac) / SR;
        let env = if i < attack {
            0.5 - 0.5 * (std::f64::consts::PI * i as f64 / attack as f64).cos()
        } else if i + release > len {
            0.5 - 0.5 * (std::f64::consts::PI * (len - i) as f64 / release as f64).cos()
        } else {
            1.0
        };
        let s: f64 = amps.iter().zip(&phases).enumerate().map(|(h, (a, p))| a * ((h + 1) as f64 * phi + p).sin()).sum();
        out[start + i] += env * s;
    }
}

/// A speech-like utterance of [`CLEAN_LEN`] samples: two to four voiced
/// syllables, then silence. Peak 0.5.
pub fn synth_clean<R: Rng + ?Sized>(rng: &mut R) -> Waveform {
    let mut x = vec![0.0; CLEAN_LEN];
    let n_syl = rng.random_range(2..=4);
    let mut pos = rng.random_range((0.02 * SR) as usize..(0.08 * SR) as usize);
    for _ in 0..n_syl {
        let len = rng.random_range((0.12 * SR) as usize..(0.22 * SR) as usize);
        if pos + len > SPEECH_END {
            break;
        }
        add_syllable(&mut x, pos, len, rng);
        pos += len + rng.random_range((0.03 * SR) as usize..(0.1 * SR) as usize);
    }
    Waveform::from_samples(normalize(x)).expect("finite synthesis")
}

fn rain<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; len];
    let mut prev = 0.0;
    for v in x.iter_mut() {
        let w = normal(rng);
        *v = 0.3 * (w - 0.9 * prev);
        prev = w;
    }
    let drops = (len as f64 / SR * 40.0) as usize;
    for _ in 0..drops {
        let at = rng.random_range(0..len);
        let amp = rng.random_range(0.5..2.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        for k in 0..(0.01 * SR) as usize {
            if at + k < len {
                x[at + k] += amp * (-(k as f64) / (0.002 * SR)).exp() * normal(rng);
            }
        }
    }
    x
}

fn dog<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut x: Vec<f64> = (0..len).map(|_| 0.02 * normal(rng)).collect();
    let mut pos = rng.random_range(0..(0.1 * SR) as usize);
    while pos < len {
        let blen = rng.random_range((0.08 * SR) as usize..(0.15 * SR) as usize);
        let f0 = rng.random_range(350.0..600.0);
        let mut phi = 0.0;
        for i in 0..blen.min(len - pos) {
            let frac = i as f64 / blen as f64;
            phi += TAU * f0 * (1.0 - 0.3 * frac) / SR;
            let env = (1.0 - (-(i as f64) / (0.005 * SR)).exp()) * (-(i as f64) / (0.05 * SR)).exp();
            let tone: f64 = (1..=8).map(|h| ((h as f64) * phi).sin() / h as f64).sum();
            x[pos + i] += env * (tone + 0.4 * normal(rng));
        }
        pos += blen + rng.random_range((0.15 * SR) as usize..(0.4 * SR) as usize);
    }
    x
}

fn traffic<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let hum = rng.random_range(50.0..90.0);
    let am = rng.random_range(0.2..0.5);
    let am_phase = rng.random_range(0.0..TAU);
    let mut brown = 0.0;
    let mut lp = 0.0;
    (0..len)
        .map(|i| {
            let t = i as f64 / SR;
            brown = 0.995 * brown + 0.05 * normal(rng);
            lp = 0.9 * lp + 0.1 * normal(rng);
            let engine: f64 = (1..=4).map(|h| (TAU * hum * h as f64 * t).sin() / h as f64).sum();
            (1.0 + 0.5 * (TAU * am * t + am_phase).sin()) * (brown + 0.5 * lp + 0.2 * engine)
        })
        .collect()
}

fn babble<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let mut x = vec![0.0; len];
    for _ in 0..5 {
        let mut pos = rng.random_range(0..(0.1 * SR) as usize);
        while pos < len {
            let slen = rng.random_range((0.12 * SR) as usize..(0.22 * SR) as usize);
            add_syllable(&mut x, pos, slen, rng);
            pos += slen + rng.random_range(0..(0.06 * SR) as usize);
        }
    }
    x
}

/// A background clip of class `label` and `len` samples, peak 0.5.
pub fn synth_noise<R: Rng + ?Sized>(label: &str, len: usize, rng: &mut R) -> Result<Waveform> {
    if len == 0 {
        return Err(Error::EmptyInput("noise length"));
    }
    let x = match label {
        "rain" => rain(len, rng),
        "dog barking" => dog(len, rng),
        "traffic" => traffic(len, rng),
        "babble" => babble(len, rng),
        other => return Err(Error::InvalidCommand(format!("no synthetic generator for sound {other:?}"))),
    };
    Waveform::from_samples(normalize(x))
}

/// Label encoded in a noise file name: the stem without its trailing
/// `_NNN` index, underscores read as spaces (`dog_barking_003.wav`).
pub fn label_of_file(path: &Path) -> Option<String> {
    let stem = path.file_stem()?.to_str()?;
    let (label, idx) = stem.rsplit_once('_')?;
    (!label.is_empty() && idx.chars().all(|c| c.is_ascii_digit())).then(|| label.replace('_', " "))
}

/// Writes `n` clean utterances `clean_NNN.wav` into `dir`.
pub fn write_clean_corpus(dir: &Path, n: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..n)
        .map(|i| {
            let path = dir.join(format!("clean_{i:03}.wav"));
            write_wav(&path, &synth_clean(&mut seeded(derive_seed(seed, i as u64))))?;
            Ok(path)
        })
        .collect()
}

/// Writes `per_label` clips of 0.6–1.0 s for every label in
/// [`NOISE_LABELS`] into `dir`.
pub fn write_noise_corpus(dir: &Path, per_label: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for (li, label) in NOISE_LABELS.iter().enumerate() {
        for i in 0..per_label {
            let mut rng = seeded(derive_seed(derive_seed(seed, li as u64), i as u64));
            let len = rng.random_range((0.6 * SR) as usize..=(1.0 * SR) as usize);
            let path = dir.join(format!("{}_{i:03}.wav", label.replace(' ', "_")));
            write_wav(&path, &synth_noise(label, len, &mut rng)?)?;
            paths.push(path);
        }
    }
    Ok(paths)
}
