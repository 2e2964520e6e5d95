//! Reverse-time integration with predictor–corrector stepping.
//!
//! The predictor is an Euler–Maruyama step of the reverse SDE
//! `dx = [f(x, t) - g(t)^2 s(x, t)] dt + g(t) dw`, run backward in time. The
//! corrector is an annealed Langevin step whose size follows the norm-ratio
//! rule `eps = 2 (r |z| / |s|)^2`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::normals;
use crate::sde::{check_same_len, SdeSchedule};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub num_steps: usize,
    pub corrector_steps: usize,
    pub corrector_snr: f64,
    /// Finish with one noise-free predictor step from `t_min` to 0.
    pub final_denoise: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { num_steps: 30, corrector_steps: 1, corrector_snr: 0.16, final_denoise: true }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_steps == 0 {
            return Err(Error::Config("solver.num_steps must be at least 1".into()));
        }
        if !(self.corrector_snr > 0.0) {
            return Err(Error::Config("solver.corrector_snr must be positive".into()));
        }
        Ok(())
    }
}

/// A score estimate `s(x_t, y, t, cond)` with the same shape as `x_t`.
pub trait ScoreFunction<C: ?Sized> {
    fn score(&self, x_t: &[f64], y: &[f64], t: f64, cond: &C) -> Result<Vec<f64>>;
}

impl<C: ?Sized, F> ScoreFunction<C> for F
where
    F: Fn(&[f64], &[f64], f64, &C) -> Result<Vec<f64>>,
{
    fn score(&self, x_t: &[f64], y: &[f64], t: f64, cond: &C) -> Result<Vec<f64>> {
        self(x_t, y, t, cond)
    }
}

/// `x_T ~ N(y, sigma(t_max)^2 I)`.
pub fn init_state<R: Rng + ?Sized>(y: &[f64], sched: &SdeSchedule, rng: &mut R) -> Vec<f64> {
    let sd = sched.std(sched.t_max);
    y.iter().zip(normals(rng, y.len())).map(|(y, z)| y + sd * z).collect()
}

fn checked_score<C: ?Sized, S: ScoreFunction<C> + ?Sized>(
    score: &S,
    x: &[f64],
    y: &[f64],
    t: f64,
    cond: &C,
) -> Result<Vec<f64>> {
    let s = score.score(x, y, t, cond)?;
    check_same_len(x, &s)?;
    Ok(s)
}

/// One reverse Euler–Maruyama update from `t` to `t - dt` given the score
/// `s` at `(x, t)` and an optional noise draw.
fn reverse_euler(x: &[f64], y: &[f64], t: f64, dt: f64, s: &[f64], sched: &SdeSchedule, z: Option<&[f64]>) -> Vec<f64> {
    let g = sched.diffusion_coeff(t);
    let g2 = g * g;
    let noise = g * dt.sqrt();
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            let f = sched.gamma * (y[i] - xi);
            let mut next = xi - (f - g2 * s[i]) * dt;
            if let Some(z) = z {
                next += noise * z[i];
            }
            next
        })
        .collect()
}

/// Predictor step from `t` to `t - |dt|`; the target time must not fall
/// below `t_min`.
#[allow(clippy::too_many_arguments)]
pub fn predictor_step<C: ?Sized, S: ScoreFunction<C> + ?Sized, R: Rng + ?Sized>(
    x_t: &[f64],
    y: &[f64],
    t: f64,
    dt: f64,
    score: &S,
    cond: &C,
    sched: &SdeSchedule,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_same_len(x_t, y)?;
    let dt = dt.abs();
    sched.check_time(t, sched.t_min, sched.t_max)?;
    sched.check_time(t - dt, sched.t_min, sched.t_max)?;
    let s = checked_score(score, x_t, y, t, cond)?;
    let z = normals(rng, x_t.len());
    Ok(reverse_euler(x_t, y, t, dt, &s, sched, Some(&z)))
}

/// Noise-free predictor step from `t_min` down to 0.
pub fn denoise_step<C: ?Sized, S: ScoreFunction<C> + ?Sized>(
    x_t: &[f64],
    y: &[f64],
    score: &S,
    cond: &C,
    sched: &SdeSchedule,
) -> Result<Vec<f64>> {
    check_same_len(x_t, y)?;
    let t = sched.t_min;
    if t <= 0.0 {
        return Ok(x_t.to_vec());
    }
    let s = checked_score(score, x_t, y, t, cond)?;
    Ok(reverse_euler(x_t, y, t, t, &s, sched, None))
}

/// Annealed Langevin update at fixed `t`. A zero score skips the step.
#[allow(clippy::too_many_arguments)]
pub fn corrector_step<C: ?Sized, S: ScoreFunction<C> + ?Sized, R: Rng + ?Sized>(
    x_t: &[f64],
    y: &[f64],
    t: f64,
    score: &S,
    cond: &C,
    sched: &SdeSchedule,
    rng: &mut R,
    snr: f64,
) -> Result<Vec<f64>> {
    check_same_len(x_t, y)?;
    sched.check_time(t, sched.t_min, sched.t_max)?;
    let s = checked_score(score, x_t, y, t, cond)?;
    let z = normals(rng, x_t.len());
    let s_norm = s.iter().map(|v| v * v).sum::<f64>().sqrt();
    if s_norm == 0.0 {
        return Ok(x_t.to_vec());
    }
    let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eps = 2.0 * (snr * z_norm / s_norm).powi(2);
    let amp = (2.0 * eps).sqrt();
    Ok(x_t.iter().zip(&s).zip(&z).map(|((x, s), z)| x + eps * s + amp * z).collect())
}

/// Full reverse run: `x_T` from [`init_state`], then `num_steps` uniform
/// steps from `t_max` to `t_min`, each preceded by `corrector_steps`
/// Langevin corrections.
pub fn sample<C: ?Sized, S: ScoreFunction<C> + ?Sized, R: Rng + ?Sized>(
    y: &[f64],
    score: &S,
    cond: &C,
    sched: &SdeSchedule,
    cfg: &SolverConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    sched.validate()?;
    cfg.validate()?;
    let mut x = init_state(y, sched, rng);
    let dt = (sched.t_max - sched.t_min) / cfg.num_steps as f64;
    for i in 0..cfg.num_steps {
        let t = sched.t_max - i as f64 * dt;
        for _ in 0..cfg.corrector_steps {
            x = corrector_step(&x, y, t, score, cond, sched, rng, cfg.corrector_snr)?;
        }
        // Land exactly on t_min at the last step.
        let step = if i + 1 == cfg.num_steps { t - sched.t_min } else { dt };
        x = predictor_step(&x, y, t, step, score, cond, sched, rng)?;
    }
    if cfg.final_denoise {
        x = denoise_step(&x, y, score, cond, sched)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::score::GaussianTask;

    fn zero_score(x: &[f64], _: &[f64], _: f64, _: &()) -> Result<Vec<f64>> {
        Ok(vec![0.0; x.len()])
    }

    fn stats(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    }

    #[test]
    fn init_state_moments() {
        let s = SdeSchedule::default();
        let y = vec![0.7; 10_000];
        let a = init_state(&y, &s, &mut seeded(1));
        assert_eq!(a, init_state(&y, &s, &mut seeded(1)));
        let (m, sd) = stats(&a);
        let target = s.std(s.t_max);
        assert!((sd - target).abs() <= 0.03 * target);
        assert!((m - 0.7).abs() <= 3.0 * target / 100.0);
    }

    #[test]
    fn no_dynamics_without_score_noise_or_drift() {
        let s = SdeSchedule { gamma: 0.0, ..Default::default() };
        let x = vec![1.0, -2.0];
        let out = reverse_euler(&x, &[5.0, 5.0], 0.5, 0.1, &[0.0, 0.0], &s, None);
        assert_eq!(out, x);
    }

    #[test]
    fn predictor_rejects_steps_below_t_min() {
        let s = SdeSchedule::default();
        let r = predictor_step(&[0.0], &[0.0], 0.05, 0.1, &zero_score, &(), &s, &mut seeded(0));
        assert!(matches!(r, Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn corrector_skips_on_zero_score() {
        let s = SdeSchedule::default();
        let x = vec![0.3, 0.4];
        let out = corrector_step(&x, &[0.0, 0.0], 0.5, &zero_score, &(), &s, &mut seeded(0), 0.16).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn exact_score_step_contracts_toward_x0() {
        // One reverse step from a forward draw at t moves x toward the
        // true x0 on average when the conditional score is exact.
        let s = SdeSchedule::default();
        let x0 = 1.5;
        let n = 20_000;
        let t = 0.2;
        let dt = 0.05;
        let (x0v, yv) = (vec![x0; n], vec![0.0; n]);
        let (xt, _) = crate::sde::sample_forward(&x0v, &yv, t, &s, &mut seeded(4)).unwrap();
        let task = GaussianTask::point(x0v.clone(), yv.clone(), s);
        let before: f64 = xt.iter().map(|x| (x - x0).abs()).sum::<f64>() / n as f64;
        let xn = predictor_step(&xt, &yv, t, dt, &task, &(), &s, &mut seeded(5)).unwrap();
        let after: f64 = xn.iter().map(|x| (x - x0).abs()).sum::<f64>() / n as f64;
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn single_step_composition() {
        let s = SdeSchedule::default();
        let y = vec![0.1, -0.2, 0.3];
        let task = GaussianTask::prior(2.0, 0.3, y.clone(), s);
        for final_denoise in [false, true] {
            let cfg = SolverConfig { num_steps: 1, corrector_steps: 0, final_denoise, ..Default::default() };
            let got = sample(&y, &task, &(), &s, &cfg, &mut seeded(9)).unwrap();
            let mut rng = seeded(9);
            let x_t = init_state(&y, &s, &mut rng);
            let mut want =
                predictor_step(&x_t, &y, s.t_max, s.t_max - s.t_min, &task, &(), &s, &mut rng).unwrap();
            if final_denoise {
                want = denoise_step(&want, &y, &task, &(), &s).unwrap();
            }
            assert_eq!(got, want);
            assert_eq!(got.len(), y.len());
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let s = SdeSchedule::default();
        let y = vec![0.0; 64];
        let task = GaussianTask::prior(2.0, 0.3, y.clone(), s);
        let cfg = SolverConfig::default();
        let a = sample(&y, &task, &(), &s, &cfg, &mut seeded(3)).unwrap();
        let b = sample(&y, &task, &(), &s, &cfg, &mut seeded(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn langevin_corrector_moves_toward_marginal() {
        // Start far from the marginal at fixed t; repeated corrector steps
        // reduce the KS distance to N(mu(t), v(t)).
        let s = SdeSchedule::default();
        let n = 4000;
        let y = vec![0.0; n];
        let task = GaussianTask::prior(2.0, 0.3, y.clone(), s);
        let t = 0.5;
        let (mu, var) = task.marginal(t);
        let mut rng = seeded(11);
        let mut x: Vec<f64> = normals(&mut rng, n).iter().map(|z| -1.0 + 0.1 * z).collect();
        let ks0 = crate::score::ks_normal(&x, mu[0], var[0].sqrt());
        for _ in 0..20 {
            x = corrector_step(&x, &y, t, &task, &(), &s, &mut rng, 0.16).unwrap();
        }
        let ks1 = crate::score::ks_normal(&x, mu[0], var[0].sqrt());
        assert!(ks1 < ks0, "{ks1} vs {ks0}");
    }
}
