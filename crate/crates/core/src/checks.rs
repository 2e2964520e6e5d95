//! Numerical self-checks: forward-kernel moments, reverse recovery with
//! the analytic score, and the network's gradient.

use std::sync::Arc;

use crate::conditioning::{FrameMatrix, SourceConditions};
use crate::dsp::{ComplexSpectrogram, StftConfig};
use crate::rng::{derive_seed, normals, seeded};
use crate::score::{dsm_loss, GaussianTask, ModelConfig, ScoreNet, TrainBatch, TrainItem};
use crate::sde::{simulate_forward, SdeSchedule};
use crate::solver::{sample, SolverConfig};
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub const MOMENT_TIMES: [f64; 3] = [0.25, 0.5, 1.0];

/// Euler–Maruyama simulation of the forward SDE (scalar, `x0 = 1`, `y = 2`,
/// 10^4 paths, `dt = 1e-3`) against the closed-form mean (1% relative) and
/// the supplied variance function (5% relative).
pub fn kernel_moment_check(sched: &SdeSchedule, variance: &dyn Fn(f64) -> f64, seed: u64) -> CheckOutcome {
    let (x0, y) = (1.0, 2.0);
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for (i, &t) in MOMENT_TIMES.iter().enumerate() {
        let xs = simulate_forward(x0, y, t, 1e-3, 10_000, sched, &mut seeded(derive_seed(seed, i as u64)));
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        let (a, b) = sched.mean_weights(t);
        let want_m = a * x0 + b * y;
        worst_mean = worst_mean.max(((m - want_m) / want_m).abs());
        worst_var = worst_var.max(((v - variance(t)) / variance(t)).abs());
    }
    CheckOutcome {
        name: "kernel moments",
        passed: worst_mean <= 0.01 && worst_var <= 0.05,
        detail: format!("max rel err mean {worst_mean:.4} (tol 0.01), variance {worst_var:.4} (tol 0.05)"),
    }
}

/// Reverse sampling of `x0 ~ N(2, 0.3^2)`, `y = 0` with the closed-form
/// marginal score: N = 200 steps, one corrector step, 5000 samples drawn
/// as one state. Requires mean 2 ± 0.05 and std 0.3 ± 10%.
pub fn reverse_recovery_check(sched: &SdeSchedule, seed: u64) -> Result<CheckOutcome> {
    let n = 5000;
    let y = vec![0.0; n];
    let task = GaussianTask::prior(2.0, 0.3, y.clone(), *sched);
    let cfg = SolverConfig { num_steps: 200, corrector_steps: 1, ..Default::default() };
    let xs = sample(&y, &task, &(), sched, &cfg, &mut seeded(seed))?;
    let m = xs.iter().sum::<f64>() / n as f64;
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
    Ok(CheckOutcome {
        name: "reverse recovery",
        passed: (m - 2.0).abs() <= 0.05 && (sd - 0.3).abs() <= 0.03,
        detail: format!("mean {m:.4} (2 ± 0.05), std {sd:.4} (0.3 ± 10%)"),
    })
}

/// The two-frame batch used for the gradient check: a 9-bin spectrogram,
/// three prompt tokens, `t = 0.4`.
pub fn gradient_check_batch(seed: u64) -> Result<TrainBatch> {
    let cfg = StftConfig { win_length: 16, hop_length: 8, fft_size: 16 };
    let frames = 2;
    let n = 2 * frames * cfg.num_bins();
    let mut rng = seeded(seed);
    let scale = |v: Vec<f64>| v.into_iter().map(|x| 0.3 * x).collect::<Vec<_>>();
    let y = ComplexSpectrogram::from_reals(&scale(normals(&mut rng, n)), frames, cfg)?;
    let x0 = ComplexSpectrogram::from_reals(&scale(normals(&mut rng, n)), frames, cfg)?;
    let width = ModelConfig::default().acoustic_width;
    let ac = FrameMatrix::from_vec(frames, width, normals(&mut rng, frames * width))?;
    let source = Arc::new(SourceConditions::from_parts(y, ac, vec![1, 4, 7])?);
    let z = normals(&mut rng, n);
    Ok(TrainBatch { items: vec![TrainItem { source, target: Arc::new(x0), frames: vec![0, 1], t: 0.4, z }] })
}

/// Worst relative error between backpropagated and central-difference
/// gradients and the number of components outside tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub checked: usize,
    pub failures: usize,
    pub max_rel_err: f64,
}

/// Compares every gradient component with a central difference of step
/// `eps`. A component passes when its relative error is at most `rel_tol`,
/// or when the absolute error is below `1e-10 * max|g|` (components at the
/// rounding floor of the difference quotient).
pub fn gradient_check(net: &ScoreNet, batch: &TrainBatch, sched: &SdeSchedule, eps: f64, rel_tol: f64) -> Result<GradientReport> {
    let (_, grad) = dsm_loss(net, batch, sched)?;
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let guard = 1e-10 * gmax;
    let mut probe = net.clone();
    let mut report = GradientReport { checked: 0, failures: 0, max_rel_err: 0.0 };
    for i in 0..grad.len() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + eps;
        let (lp, _) = dsm_loss(&probe, batch, sched)?;
        probe.params_mut()[i] = orig - eps;
        let (lm, _) = dsm_loss(&probe, batch, sched)?;
        probe.params_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * eps);
        let abs = (fd - grad[i]).abs();
        let rel = if abs == 0.0 { 0.0 } else { abs / fd.abs().max(grad[i].abs()) };
        report.checked += 1;
        if abs > guard {
            report.max_rel_err = report.max_rel_err.max(rel);
            if rel > rel_tol {
                report.failures += 1;
            }
        }
    }
    Ok(report)
}

/// Gradient check of a freshly initialized default network.
pub fn network_gradient_check(seed: u64) -> Result<CheckOutcome> {
    let net = ScoreNet::init(ModelConfig::default(), &mut seeded(seed))?;
    let batch = gradient_check_batch(derive_seed(seed, 1))?;
    let r = gradient_check(&net, &batch, &SdeSchedule::default(), 1e-4, 1e-4)?;
    Ok(CheckOutcome {
        name: "gradient",
        passed: r.failures == 0,
        detail: format!("{} of {} components outside 1e-4 relative, max rel err {:.2e}", r.failures, r.checked, r.max_rel_err),
    })
}

/// All checks with the schedule's own variance.
pub fn run_all(sched: &SdeSchedule, seed: u64) -> Result<Vec<CheckOutcome>> {
    run_all_with(sched, &|t| sched.variance(t), seed)
}

/// As [`run_all`] with an injected variance function for the moment check.
pub fn run_all_with(sched: &SdeSchedule, variance: &dyn Fn(f64) -> f64, seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        kernel_moment_check(sched, variance, derive_seed(seed, 0)),
        reverse_recovery_check(sched, derive_seed(seed, 1))?,
        network_gradient_check(derive_seed(seed, 2))?,
    ])
}
