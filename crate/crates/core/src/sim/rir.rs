use rand::Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::mix::peak_limit;
use crate::dsp::{Waveform, SAMPLE_RATE};
use crate::prompt::RoomSize;
use crate::rng::normal;
use crate::{Error, Result};

/// Parameters of a synthetic room impulse response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RirSpec {
    pub room_size: RoomSize,
    pub rt60_s: f64,
    /// Total length in samples.
    pub length: usize,
    pub direct_delay: usize,
}

const TAIL_STD: f64 = 0.1;

impl RirSpec {
    /// Nominal RT60 of a room class: 0.2 s, 0.5 s, 0.9 s.
    pub fn rt60_of(room: RoomSize) -> f64 {
        match room {
            RoomSize::Small => 0.2,
            RoomSize::Medium => 0.5,
            RoomSize::Large => 0.9,
        }
    }

    /// Spec covering 1.2 RT60 after a zero-delay direct path.
    pub fn for_room(room: RoomSize) -> Self {
        let rt60_s = Self::rt60_of(room);
        Self { room_size: room, rt60_s, length: (1.2 * rt60_s * SAMPLE_RATE as f64).ceil() as usize, direct_delay: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rt60_s > 0.0 && self.rt60_s.is_finite()) || self.direct_delay >= self.length {
            return Err(Error::Config(format!("invalid RIR spec {self:?}")));
        }
        Ok(())
    }
}

/// Unit direct impulse followed by Gaussian noise under the amplitude
/// envelope `exp(-6.9 t / rt60)`, which falls 60 dB in energy at `rt60`.
/// Tail samples are kept strictly below the direct path.
pub fn synth_rir<R: Rng + ?Sized>(spec: &RirSpec, rng: &mut R) -> Result<Waveform> {
    spec.validate()?;
    let mut h = vec![0.0; spec.length];
    h[spec.direct_delay] = 1.0;
    let sr = SAMPLE_RATE as f64;
    for (i, v) in h.iter_mut().enumerate().skip(spec.direct_delay + 1) {
        let t = (i - spec.direct_delay) as f64 / sr;
        *v = (TAIL_STD * normal(rng) * (-6.9 * t / spec.rt60_s).exp()).clamp(-0.99, 0.99);
    }
    Waveform::from_samples(h)
}

/// Full linear convolution via FFT.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let n = a.len() + b.len() - 1;
    let size = n.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        v.resize(size, Complex64::new(0.0, 0.0));
        v
    };
    let (mut fa, mut fb) = (pad(a), pad(b));
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    fa[..n].iter().map(|c| c.re / size as f64).collect()
}

/// Convolves `clean` with `rir` (length `len(clean) + len(rir) - 1`) and
/// peak-limits the result.
pub fn apply_rir(clean: &Waveform, rir: &Waveform) -> Result<Waveform> {
    if clean.is_empty() || rir.is_empty() {
        return Err(Error::EmptyInput("clean or RIR"));
    }
    Ok(peak_limit(Waveform::from_samples(convolve(clean.samples(), rir.samples()))?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::estimate_rt60;
    use crate::rng::{normals, seeded};

    #[test]
    fn direct_path_is_the_peak() {
        for room in RoomSize::ALL {
            for seed in 0..5 {
                let spec = RirSpec { direct_delay: 37, ..RirSpec::for_room(room) };
                let h = synth_rir(&spec, &mut seeded(seed)).unwrap();
                assert_eq!(h.samples()[37], 1.0);
                assert!(h.samples().iter().enumerate().all(|(i, v)| i == 37 || v.abs() < 1.0));
                assert_eq!(h.samples()[..37], vec![0.0; 37][..]);
            }
        }
    }

    #[test]
    fn rt60_estimates_track_the_spec() {
        let mut means = Vec::new();
        for room in RoomSize::ALL {
            let spec = RirSpec::for_room(room);
            let mut sum = 0.0;
            for seed in 0..20 {
                let est = estimate_rt60(&synth_rir(&spec, &mut seeded(seed)).unwrap()).unwrap();
                assert!((est - spec.rt60_s).abs() <= 0.2 * spec.rt60_s, "{room:?}: {est}");
                sum += est;
            }
            means.push(sum / 20.0);
        }
        assert!(means[0] < means[1] && means[1] < means[2], "{means:?}");
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let a = normals(&mut seeded(1), 37);
        let b = normals(&mut seeded(2), 11);
        let got = convolve(&a, &b);
        for n in 0..a.len() + b.len() - 1 {
            let want: f64 = (0..b.len()).filter(|&k| n >= k && n - k < a.len()).map(|k| a[n - k] * b[k]).sum();
            assert!((got[n] - want).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_impulse_is_identity() {
        let c = Waveform::from_samples(normals(&mut seeded(1), 100).iter().map(|v| 0.1 * v).collect()).unwrap();
        let out = apply_rir(&c, &Waveform::from_samples(vec![1.0]).unwrap()).unwrap();
        for (a, b) in out.samples().iter().zip(c.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn reverberant_tail_decays_at_rir_rate() {
        let spec = RirSpec::for_room(RoomSize::Medium);
        let rir = synth_rir(&spec, &mut seeded(4)).unwrap();
        let burst: Vec<f64> = normals(&mut seeded(5), 1600).iter().map(|v| 0.1 * v).collect();
        let out = apply_rir(&Waveform::from_samples(burst).unwrap(), &rir).unwrap();
        let tail = Waveform::from_samples(out.samples()[1600..].to_vec()).unwrap();
        let est = estimate_rt60(&tail).unwrap();
        assert!((est - spec.rt60_s).abs() <= 0.3 * spec.rt60_s, "{est}");
    }
}
