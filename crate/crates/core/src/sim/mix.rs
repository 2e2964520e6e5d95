use rand::Rng;

use crate::dsp::{power, Waveform};
use crate::{Error, Result};

/// Clean and noise brought to a common length.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub clean: Waveform,
    pub noise: Waveform,
    /// Start of the clean signal in the aligned span.
    pub offset: usize,
}

/// A clean signal shorter than the noise is zero-padded around a uniformly
/// random offset so the whole background is kept; a longer one gets the
/// noise tiled end to end and truncated to its length.
pub fn align_lengths<R: Rng + ?Sized>(clean: &Waveform, noise: &Waveform, rng: &mut R) -> Result<Alignment> {
    if clean.is_empty() || noise.is_empty() {
        return Err(Error::EmptyInput("clean or noise"));
    }
    let (lc, ln) = (clean.len(), noise.len());
    if lc < ln {
        let offset = rng.random_range(0..=ln - lc);
        let mut padded = vec![0.0; ln];
        padded[offset..offset + lc].copy_from_slice(clean.samples());
        Ok(Alignment { clean: Waveform::from_samples(padded)?, noise: noise.clone(), offset })
    } else {
        let tiled: Vec<f64> = noise.samples().iter().copied().cycle().take(lc).collect();
        Ok(Alignment { clean: clean.clone(), noise: Waveform::from_samples(tiled)?, offset: 0 })
    }
}

/// Mixes `noise` into `clean` at `snr_db`, measured over the span that holds
/// the clean signal. Returns the mixture, the scaled noise and the
/// alignment offset. `snr_db = +inf` returns the clean signal unchanged.
pub fn mix_at_snr<R: Rng + ?Sized>(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut R,
) -> Result<(Waveform, Waveform, usize)> {
    if snr_db == f64::INFINITY {
        return Ok((clean.clone(), Waveform::silence(clean.len()), 0));
    }
    if !snr_db.is_finite() {
        return Err(Error::InvalidCommand(format!("SNR {snr_db} dB")));
    }
    let al = align_lengths(clean, noise, rng)?;
    let span = al.offset..al.offset + clean.len();
    let pc = power(&al.clean.samples()[span.clone()]);
    let pn = power(&al.noise.samples()[span]);
    if pc == 0.0 {
        return Err(Error::Silent("clean"));
    }
    if pn == 0.0 {
        return Err(Error::Silent("noise"));
    }
    let gain = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled = al.noise.scaled(gain);
    let mix: Vec<f64> = al.clean.samples().iter().zip(scaled.samples()).map(|(c, n)| c + n).collect();
    Ok((Waveform::from_samples(mix)?, scaled, al.offset))
}

/// Uniformly rescales `w` so its peak does not exceed 1.
pub fn peak_limit(w: Waveform) -> Waveform {
    let p = w.peak();
    if p > 1.0 { w.scaled(1.0 / p) } else { w }
}
