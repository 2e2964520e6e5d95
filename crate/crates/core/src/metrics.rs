//! Objective quality metrics and reverberation-time estimation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{power, Stft, StftConfig, Waveform, SAMPLE_RATE};
use crate::sde::check_same_len;
use crate::{Error, Result};

/// Reported value for identical signals.
pub const SI_SDR_CAP_DB: f64 = 100.0;
const SEG_LEN: usize = 320;
const SEG_CLAMP_DB: (f64, f64) = (-10.0, 35.0);
const LSD_FLOOR: f64 = 1e-8;

fn db_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        return SI_SDR_CAP_DB;
    }
    if num == 0.0 {
        return -SI_SDR_CAP_DB;
    }
    (10.0 * (num / den).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB)
}

/// Scale-invariant signal-to-distortion ratio in dB, capped at ±100 dB.
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    let (s, e) = (reference.samples(), estimate.samples());
    check_same_len(s, e)?;
    let ss: f64 = s.iter().map(|v| v * v).sum();
    if ss == 0.0 {
        return Err(Error::Silent("reference"));
    }
    let alpha = s.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / ss;
    let (mut tt, mut nn) = (0.0, 0.0);
    for (sv, ev) in s.iter().zip(e) {
        let target = alpha * sv;
        tt += target * target;
        nn += (ev - target).powi(2);
    }
    Ok(db_ratio(tt, nn))
}

/// Mean over 320-sample segments of the per-segment SNR, each clamped to
/// [-10, 35] dB.
pub fn seg_snr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    let (s, e) = (reference.samples(), estimate.samples());
    check_same_len(s, e)?;
    if s.is_empty() {
        return Err(Error::EmptyInput("reference"));
    }
    let mut total = 0.0;
    let mut n = 0;
    for (rs, es) in s.chunks(SEG_LEN).zip(e.chunks(SEG_LEN)) {
        let sig: f64 = rs.iter().map(|v| v * v).sum();
        let err: f64 = rs.iter().zip(es).map(|(a, b)| (a - b).powi(2)).sum();
        let v = if err == 0.0 { SEG_CLAMP_DB.1 } else if sig == 0.0 { SEG_CLAMP_DB.0 } else { 10.0 * (sig / err).log10() };
        total += v.clamp(SEG_CLAMP_DB.0, SEG_CLAMP_DB.1);
        n += 1;
    }
    Ok(total / n as f64)
}

/// RMS over all frames and bins of `20 log10 |R| - 20 log10 |E|`, with
/// magnitudes floored at 1e-8.
pub fn log_spectral_distance(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    check_same_len(reference.samples(), estimate.samples())?;
    let stft = Stft::new(StftConfig::default())?;
    let (r, e) = (stft.analyze(reference)?, stft.analyze(estimate)?);
    let sum: f64 = r
        .data()
        .iter()
        .zip(e.data())
        .map(|(a, b)| (20.0 * a.norm().max(LSD_FLOOR).log10() - 20.0 * b.norm().max(LSD_FLOOR).log10()).powi(2))
        .sum();
    Ok((sum / r.data().len() as f64).sqrt())
}

/// Reverberation time from the Schroeder energy decay curve.
///
/// Backward integration stops where the 10 ms energy envelope, after its
/// maximum, first falls to within 3 dB of the noise floor (the power of the
/// last 10% of the signal). The decay curve is fit by least squares between
/// its -5 dB and -25 dB crossings and extrapolated to -60 dB. A curve that
/// only reaches -25 dB in the last 5% of the integrated span (as for
/// stationary noise) has no measurable decay.
pub fn estimate_rt60(w: &Waveform) -> Result<f64> {
    let x = w.samples();
    if x.is_empty() {
        return Err(Error::EmptyInput("waveform"));
    }
    let x = &x[..floor_crossing(x)];
    let mut edc = vec![0.0; x.len()];
    let mut acc = 0.0;
    for i in (0..x.len()).rev() {
        acc += x[i] * x[i];
        edc[i] = acc;
    }
    if acc == 0.0 {
        return Err(Error::Silent("waveform"));
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / acc).log10()).collect();
    let i5 = db.iter().position(|&d| d <= -5.0).ok_or(Error::NoDecay)?;
    let i25 = db.iter().position(|&d| d <= -25.0).ok_or(Error::NoDecay)?;
    if i25 as f64 >= 0.95 * x.len() as f64 || i25 <= i5 + 1 {
        return Err(Error::NoDecay);
    }
    let sr = w.sample_rate() as f64;
    let n = (i25 - i5 + 1) as f64;
    let (mut st, mut sd) = (0.0, 0.0);
    for i in i5..=i25 {
        st += i as f64 / sr;
        sd += db[i];
    }
    let (mt, md) = (st / n, sd / n);
    let (mut cov, mut var) = (0.0, 0.0);
    for i in i5..=i25 {
        let dt = i as f64 / sr - mt;
        cov += dt * (db[i] - md);
        var += dt * dt;
    }
    let slope = cov / var;
    if !(slope < 0.0) {
        return Err(Error::NoDecay);
    }
    Ok(-60.0 / slope)
}

const ENV_FRAME: usize = 160;

/// End of the decay: the first 10 ms frame after the loudest one whose
/// power is within 3 dB of the floor, or the whole signal when the floor
/// is silent.
fn floor_crossing(x: &[f64]) -> usize {
    let floor = power(&x[x.len() - x.len().div_ceil(10)..]);
    if floor == 0.0 {
        return x.len();
    }
    let env: Vec<f64> = x.chunks(ENV_FRAME).map(power).collect();
    let loudest = env.iter().enumerate().fold(0, |best, (i, &p)| if p > env[best] { i } else { best });
    env[loudest..]
        .iter()
        .position(|&p| p <= 2.0 * floor)
        .map_or(x.len(), |f| ((loudest + f) * ENV_FRAME).max(1))
}

/// RT60 of the free decay in `wet` after `dry` falls silent, i.e. from the
/// first sample after which `dry` stays 40 dB below its peak.
pub fn decay_rt60(wet: &Waveform, dry: &Waveform) -> Result<f64> {
    let floor = 0.01 * dry.peak();
    if floor == 0.0 {
        return Err(Error::Silent("dry reference"));
    }
    let offset = dry.samples().iter().rposition(|v| v.abs() > floor).map_or(0, |i| i + 1);
    if offset >= wet.len() {
        return Err(Error::NoDecay);
    }
    estimate_rt60(&Waveform::new(wet.samples()[offset..].to_vec(), wet.sample_rate())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub si_sdr_db: f64,
    pub seg_snr_db: f64,
    pub lsd: f64,
    pub rt60_s: Option<f64>,
}

/// All metrics of `estimate` against `reference`; the RT60 is that of the
/// estimate and is absent when it shows no measurable decay.
pub fn evaluate(reference: &Waveform, estimate: &Waveform) -> Result<MetricReport> {
    let rt60_s = match estimate_rt60(estimate) {
        Ok(v) => Some(v),
        Err(Error::NoDecay | Error::Silent(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricReport {
        si_sdr_db: si_sdr(reference, estimate)?,
        seg_snr_db: seg_snr(reference, estimate)?,
        lsd: log_spectral_distance(reference, estimate)?,
        rt60_s,
    })
}

/// Writes `entry_id, si_sdr_db, seg_snr_db, lsd, rt60_s` rows; a missing
/// RT60 is an empty field.
pub fn write_report_csv(path: &Path, rows: &[(String, MetricReport)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["entry_id", "si_sdr_db", "seg_snr_db", "lsd", "rt60_s"]).map_err(|e| csv_err(path, e))?;
    for (id, r) in rows {
        let rt = r.rt60_s.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([id.clone(), r.si_sdr_db.to_string(), r.seg_snr_db.to_string(), r.lsd.to_string(), rt])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Manifest(format!("{}: {other:?}", path.display())),
    }
}

/// Power ratio in dB of `clean` to `noise` over the same span.
pub fn snr_db(clean: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(clean) / power(noise)).log10()
}

#[allow(dead_code)]
const _: () = assert!(SAMPLE_RATE == 16_000);

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal, normals, seeded};

    fn wav(x: Vec<f64>) -> Waveform {
        Waveform::from_samples(x).unwrap()
    }

    #[test]
    fn si_sdr_cases() {
        let r = wav(normals(&mut seeded(1), 4000));
        assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP_DB);
        assert_eq!(si_sdr(&r, &r.scaled(2.0)).unwrap(), SI_SDR_CAP_DB);
        // Remove the component along r from fresh noise, then match power.
        let n = normals(&mut seeded(2), 4000);
        let rs = r.samples();
        let proj = rs.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>() / rs.iter().map(|a| a * a).sum::<f64>();
        let orth: Vec<f64> = n.iter().zip(rs).map(|(b, a)| b - proj * a).collect();
        let g = (power(rs) / power(&orth)).sqrt();
        let est = wav(rs.iter().zip(&orth).map(|(a, o)| a + g * o).collect());
        assert!(si_sdr(&r, &est).unwrap().abs() < 1e-9);
        for a in [0.01, 0.5, 3.0, 1e3] {
            let d = si_sdr(&r, &est.scaled(a)).unwrap() - si_sdr(&r, &est).unwrap();
            assert!(d.abs() < 1e-9);
        }
        assert!(matches!(si_sdr(&Waveform::silence(10), &Waveform::silence(10)), Err(Error::Silent(_))));
        assert!(si_sdr(&r, &Waveform::silence(4000)).unwrap().is_finite());
    }

    #[test]
    fn lsd_cases() {
        let r = wav(normals(&mut seeded(3), 8000).iter().map(|v| 0.1 * v).collect());
        assert_eq!(log_spectral_distance(&r, &r).unwrap(), 0.0);
        let half = r.scaled(0.5);
        assert!((log_spectral_distance(&r, &half).unwrap() - 20.0 * 2f64.log10()).abs() < 1e-9);
        let other = wav(normals(&mut seeded(4), 8000).iter().map(|v| 0.1 * v).collect());
        let (a, b) = (log_spectral_distance(&r, &other).unwrap(), log_spectral_distance(&other, &r).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn seg_snr_of_identical_is_max() {
        let r = wav(normals(&mut seeded(3), 1000));
        assert_eq!(seg_snr(&r, &r).unwrap(), 35.0);
        let z = Waveform::silence(1000);
        assert_eq!(seg_snr(&r, &z).unwrap(), 0.0);
    }

    #[test]
    fn rt60_of_exponential_decay() {
        for rt in [0.3, 0.5, 0.8] {
            let n = (2.0 * rt * 16000.0) as usize;
            let z = normals(&mut seeded(7), n);
            let x: Vec<f64> = z.iter().enumerate().map(|(i, v)| v * (-6.9 * i as f64 / 16000.0 / rt).exp()).collect();
            let est = estimate_rt60(&wav(x)).unwrap();
            assert!((est - rt).abs() <= 0.1 * rt, "{rt}: {est}");
        }
        let noise = wav(normals(&mut seeded(8), 16000));
        assert!(matches!(estimate_rt60(&noise), Err(Error::NoDecay)));
        assert_eq!(estimate_rt60(&noise).unwrap_err().to_string(), "no measurable decay");
    }

    #[test]
    fn rt60_ignores_noise_floor() {
        let rt = 0.2;
        let z = normals(&mut seeded(9), 16000);
        let floor = normals(&mut seeded(10), 16000);
        let x: Vec<f64> = z
            .iter()
            .zip(&floor)
            .enumerate()
            .map(|(i, (v, f))| v * (-6.9 * i as f64 / 16000.0 / rt).exp() + 1e-2 * f)
            .collect();
        let est = estimate_rt60(&wav(x)).unwrap();
        assert!((est - rt).abs() <= 0.15 * rt, "{est}");
    }

    #[test]
    fn decay_after_dry_offset() {
        let mut rng = seeded(11);
        let mut dry = normals(&mut rng, 8000);
        dry.extend(vec![0.0; 12000]);
        let rt = 0.4;
        let wet: Vec<f64> = (0..dry.len())
            .map(|i| {
                let tail = if i < 8000 { 1.0 } else { (-6.9 * (i - 8000) as f64 / 16000.0 / rt).exp() };
                tail * normal(&mut rng)
            })
            .collect();
        let est = decay_rt60(&wav(wet.clone()), &wav(dry)).unwrap();
        assert!((est - rt).abs() <= 0.1 * rt, "{est}");
        assert!(matches!(decay_rt60(&wav(wet), &Waveform::silence(20000)), Err(Error::Silent(_))));
    }

    #[test]
    fn csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let rep = MetricReport { si_sdr_db: 1.5, seg_snr_db: 2.0, lsd: 0.25, rt60_s: None };
        write_report_csv(&p, &[("a".into(), rep)]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "entry_id,si_sdr_db,seg_snr_db,lsd,rt60_s\na,1.5,2,0.25,\n");
    }
}
