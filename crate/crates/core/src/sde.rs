//! Forward diffusion process.
//!
//! The state drifts toward the source `y` at rate `gamma` while white noise
//! with a geometrically growing scale is injected:
//!
//! ```text
//! dx = gamma (y - x) dt + g(t) dw,   g(t) = s_min (s_max/s_min)^t sqrt(2 ln(s_max/s_min))
//! ```
//!
//! The transition density from `x0` is Gaussian with mean
//! `e^{-gamma t} x0 + (1 - e^{-gamma t}) y` and the scalar variance returned by
//! [`SdeSchedule::variance`]. States are flat real vectors; complex
//! spectrograms enter as interleaved real/imaginary pairs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::normal;
use crate::{Error, Result};

/// How the kernel mean moves from the target toward the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InterpMode {
    #[default]
    Exponential,
    Linear,
}

impl std::str::FromStr for InterpMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "exponential" | "exp" => Ok(Self::Exponential),
            "linear" | "lin" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown interp_mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdeSchedule {
    pub gamma: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub interp_mode: InterpMode,
}

impl Default for SdeSchedule {
    fn default() -> Self {
        Self { gamma: 1.5, sigma_min: 0.05, sigma_max: 0.5, t_min: 0.03, t_max: 1.0, interp_mode: InterpMode::Exponential }
    }
}

impl SdeSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Schedule(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return bad("require sigma_max > sigma_min > 0");
        }
        if !(0.0 <= self.t_min && self.t_min < self.t_max && self.t_max <= 1.0) {
            return bad("require 0 <= t_min < t_max <= 1");
        }
        Ok(())
    }

    fn log_ratio(&self) -> f64 {
        (self.sigma_max / self.sigma_min).ln()
    }

    /// Diffusion coefficient `g(t)`.
    pub fn diffusion_coeff(&self, t: f64) -> f64 {
        let ratio = self.sigma_max / self.sigma_min;
        self.sigma_min * ratio.powf(t) * (2.0 * ratio.ln()).sqrt()
    }

    /// Kernel variance `sigma(t)^2`; zero at `t = 0`.
    pub fn variance(&self, t: f64) -> f64 {
        let l = self.log_ratio();
        let ratio = self.sigma_max / self.sigma_min;
        let num = ratio.powf(2.0 * t) - (-2.0 * self.gamma * t).exp();
        (self.sigma_min * self.sigma_min * num * l / (self.gamma + l)).max(0.0)
    }

    pub fn std(&self, t: f64) -> f64 {
        self.variance(t).sqrt()
    }

    /// Weights `(a, b)` such that the kernel mean is `a x0 + b y`.
    pub fn mean_weights(&self, t: f64) -> (f64, f64) {
        match self.interp_mode {
            InterpMode::Exponential => {
                let a = (-self.gamma * t).exp();
                (a, 1.0 - a)
            }
            InterpMode::Linear => (1.0 - t, t),
        }
    }

    pub(crate) fn check_time(&self, t: f64, lo: f64, hi: f64) -> Result<()> {
        if t.is_finite() && t >= lo - 1e-12 && t <= hi + 1e-12 {
            Ok(())
        } else {
            Err(Error::TimeOutOfRange { t, lo, hi })
        }
    }
}

pub(crate) fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { expected: a.len(), found: b.len() })
    }
}

/// Drift `gamma (y - x_t)`.
pub fn drift(x_t: &[f64], y: &[f64], sched: &SdeSchedule) -> Result<Vec<f64>> {
    check_same_len(x_t, y)?;
    Ok(x_t.iter().zip(y).map(|(x, y)| sched.gamma * (y - x)).collect())
}

/// Mean and standard deviation of the perturbation kernel at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMoments {
    pub mean: Vec<f64>,
    pub std: f64,
}

pub fn kernel_moments(x0: &[f64], y: &[f64], t: f64, sched: &SdeSchedule) -> Result<KernelMoments> {
    check_same_len(x0, y)?;
    sched.check_time(t, 0.0, 1.0)?;
    let (a, b) = sched.mean_weights(t);
    Ok(KernelMoments { mean: x0.iter().zip(y).map(|(x, y)| a * x + b * y).collect(), std: sched.std(t) })
}

/// Draws `x_t = mean + sigma(t) z` and returns it with the noise `z`.
pub fn sample_forward<R: Rng + ?Sized>(
    x0: &[f64],
    y: &[f64],
    t: f64,
    sched: &SdeSchedule,
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    sched.check_time(t, 0.0, sched.t_max)?;
    let m = kernel_moments(x0, y, t, sched)?;
    let z: Vec<f64> = (0..x0.len()).map(|_| normal(rng)).collect();
    let x_t = m.mean.iter().zip(&z).map(|(mu, z)| mu + m.std * z).collect();
    Ok((x_t, z))
}

/// Euler–Maruyama integration of the forward SDE for a batch of scalar
/// paths started at `x0`. Used as the Monte-Carlo reference for the kernel.
pub fn simulate_forward<R: Rng + ?Sized>(
    x0: f64,
    y: f64,
    t_end: f64,
    dt: f64,
    paths: usize,
    sched: &SdeSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let steps = (t_end / dt).round() as usize;
    let mut xs = vec![x0; paths];
    for k in 0..steps {
        let t = k as f64 * dt;
        let g = sched.diffusion_coeff(t) * dt.sqrt();
        for x in xs.iter_mut() {
            *x += sched.gamma * (y - *x) * dt + g * normal(rng);
        }
    }
    xs
}
