//! Score estimators: the closed-form Gaussian oracle and the trainable
//! conditional network.

mod checkpoint;
mod features;
mod net;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use features::{band_edges, StaticFeatures, NUM_BIN_FEATURES};
pub use net::{ModelConfig, NetContext, NetScore, ScoreNet, SliceInfo};
pub use train::{
    dsm_loss, toy_task_2d, train, train_toy, Adam, AdamConfig, LossLog, PairStore, TrainBatch, TrainConfig,
    PairSource, TrainItem, TrainState, ToyTask,
};

use crate::sde::{check_same_len, SdeSchedule};
use crate::solver::ScoreFunction;
use crate::{Error, Result};

/// Gaussian oracle: `x0 ~ N(m0, s0^2 I)` (a point mass when `s0 == 0`)
/// under the forward process toward `y`.
///
/// The marginal at time `t` is `N(a m0 + b y, (a^2 s0^2 + sigma(t)^2) I)`
/// with `(a, b)` the kernel mean weights, so its score is available in
/// closed form.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTask {
    pub m0: Vec<f64>,
    pub s0: f64,
    pub y: Vec<f64>,
    pub sched: SdeSchedule,
}

impl GaussianTask {
    /// Known `x0`: the score is that of the perturbation kernel.
    pub fn point(x0: Vec<f64>, y: Vec<f64>, sched: SdeSchedule) -> Self {
        Self { m0: x0, s0: 0.0, y, sched }
    }

    /// Scalar prior `N(m0, s0^2)` broadcast to every element of `y`.
    pub fn prior(m0: f64, s0: f64, y: Vec<f64>, sched: SdeSchedule) -> Self {
        Self { m0: vec![m0; y.len()], s0, y, sched }
    }

    pub fn prior_vec(m0: Vec<f64>, s0: f64, y: Vec<f64>, sched: SdeSchedule) -> Self {
        Self { m0, s0, y, sched }
    }

    /// Per-element marginal mean and variance at `t`.
    pub fn marginal(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        self.marginal_with(&self.y, t)
    }

    fn marginal_with(&self, y: &[f64], t: f64) -> (Vec<f64>, Vec<f64>) {
        let (a, b) = self.sched.mean_weights(t);
        let var = a * a * self.s0 * self.s0 + self.sched.variance(t);
        let mean = self.m0.iter().zip(y).map(|(m, y)| a * m + b * y).collect();
        (mean, vec![var; y.len()])
    }

    fn checked_var(&self, t: f64) -> Result<f64> {
        let (a, _) = self.sched.mean_weights(t);
        let var = a * a * self.s0 * self.s0 + self.sched.variance(t);
        if var > 0.0 && var.is_finite() {
            Ok(var)
        } else {
            Err(Error::TimeOutOfRange { t, lo: f64::MIN_POSITIVE, hi: self.sched.t_max })
        }
    }

    /// `grad log p_t(x_t)`.
    pub fn analytic_score(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        self.score_with(x_t, &self.y, t)
    }

    fn score_with(&self, x_t: &[f64], y: &[f64], t: f64) -> Result<Vec<f64>> {
        check_same_len(&self.m0, x_t)?;
        check_same_len(&self.m0, y)?;
        let var = self.checked_var(t)?;
        let (mean, _) = self.marginal_with(y, t);
        Ok(x_t.iter().zip(&mean).map(|(x, m)| -(x - m) / var).collect())
    }

    /// `log p_t(x_t)` including the normalizing constant.
    pub fn log_density(&self, x_t: &[f64], t: f64) -> Result<f64> {
        check_same_len(&self.m0, x_t)?;
        let var = self.checked_var(t)?;
        let (mean, _) = self.marginal(t);
        let n = x_t.len() as f64;
        let q: f64 = x_t.iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum();
        Ok(-0.5 * q / var - 0.5 * n * (2.0 * std::f64::consts::PI * var).ln())
    }
}

impl ScoreFunction<()> for GaussianTask {
    fn score(&self, x_t: &[f64], y: &[f64], t: f64, _: &()) -> Result<Vec<f64>> {
        self.score_with(x_t, y, t)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Kolmogorov–Smirnov statistic of `xs` against `N(mean, std^2)`.
pub fn ks_normal(xs: &[f64], mean: f64, std: f64) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = normal_cdf((x - mean) / std);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_mean_and_unit_slope() {
        let s = SdeSchedule::default();
        let task = GaussianTask::point(vec![0.4, -1.0], vec![1.0, 0.0], s);
        let (mu, _) = task.marginal(0.3);
        assert_eq!(task.analytic_score(&mu, 0.3).unwrap(), vec![0.0, 0.0]);

        // Pick t with sigma(t) = 1 under a widened schedule.
        let s = SdeSchedule { sigma_min: 0.1, sigma_max: 3.0, ..Default::default() };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if s.variance(mid) < 1.0 { lo = mid } else { hi = mid }
        }
        let task = GaussianTask::point(vec![2.0], vec![0.0], s);
        let (mu, _) = task.marginal(lo);
        let got = task.analytic_score(&[mu[0] + 1.0], lo).unwrap()[0];
        assert!((got + 1.0).abs() < 1e-9, "{got}");
    }

    #[test]
    fn marginal_score_matches_log_density_gradient() {
        let s = SdeSchedule::default();
        let task = GaussianTask::prior_vec(vec![1.0, -0.5], 0.3, vec![0.5, 0.5], s);
        for &t in &[0.03, 0.2, 0.5, 1.0] {
            for i in -5..=5 {
                for j in -5..=5 {
                    let x = [0.3 * i as f64, 0.3 * j as f64 + 0.05];
                    let g = task.analytic_score(&x, t).unwrap();
                    for k in 0..2 {
                        let h = 1e-5;
                        let mut xp = x;
                        let mut xm = x;
                        xp[k] += h;
                        xm[k] -= h;
                        let fd = (task.log_density(&xp, t).unwrap() - task.log_density(&xm, t).unwrap()) / (2.0 * h);
                        let rel = (fd - g[k]).abs() / g[k].abs().max(1e-3);
                        assert!(rel < 1e-6, "t={t} x={x:?} fd={fd} g={}", g[k]);
                    }
                }
            }
        }
    }

    #[test]
    fn point_task_needs_positive_time() {
        let task = GaussianTask::point(vec![1.0], vec![0.0], SdeSchedule::default());
        assert!(matches!(task.analytic_score(&[1.0], 0.0), Err(Error::TimeOutOfRange { .. })));
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n)
            .map(|i| {
                let p = (i as f64 + 0.5) / n as f64;
                let (mut lo, mut hi) = (-10.0, 10.0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if normal_cdf(mid) < p { lo = mid } else { hi = mid }
                }
                lo
            })
            .collect();
        assert!(ks_normal(&xs, 0.0, 1.0) <= 0.5 / n as f64 + 1e-9);
        assert!(ks_normal(&xs, 1.0, 1.0) > 0.3);
        assert!((normal_cdf(1.96) - 0.975).abs() < 1e-4);
    }
}
