//! Denoising score matching and the Adam training loop.

use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::net::{interp_frame, NetScore, ScoreNet};
use super::GaussianTask;
use crate::conditioning::{FrameMatrix, SourceConditions};
use crate::dsp::{ComplexSpectrogram, StftConfig};
use crate::rng::{derive_seed, normals, seeded};
use crate::sde::SdeSchedule;
use crate::solver::ScoreFunction;
use crate::{Error, Result};

/// One training example: a source/target pair, the frames scored this
/// step, the diffusion time and the perturbation noise of those frames.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub source: Arc<SourceConditions>,
    pub target: Arc<ComplexSpectrogram>,
    pub frames: Vec<usize>,
    pub t: f64,
    /// `frames.len() * bins * 2` standard normal values.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainBatch {
    pub items: Vec<TrainItem>,
}

impl TrainItem {
    fn validate(&self, sched: &SdeSchedule) -> Result<()> {
        let y = self.source.source_spec();
        let x = &self.target;
        if x.num_frames() != y.num_frames() || x.num_bins() != y.num_bins() {
            return Err(Error::ShapeMismatch { expected: y.data().len(), found: x.data().len() });
        }
        if let Some(&f) = self.frames.iter().find(|&&f| f >= y.num_frames()) {
            return Err(Error::FrameParams(format!("frame {f} out of range")));
        }
        let n = 2 * self.frames.len() * y.num_bins();
        if self.z.len() != n || n == 0 {
            return Err(Error::ShapeMismatch { expected: n, found: self.z.len() });
        }
        sched.check_time(self.t, sched.t_min, sched.t_max)
    }
}

/// `mean_items( |sigma(t) s(x_t) + z|^2 / n )` over the selected frames,
/// where `n` is the number of real state values scored per item, and its
/// gradient with respect to every network parameter.
pub fn dsm_loss(net: &ScoreNet, batch: &TrainBatch, sched: &SdeSchedule) -> Result<(f64, Vec<f64>)> {
    if batch.items.is_empty() {
        return Err(Error::EmptyInput("training batch"));
    }
    let mut grad = vec![0.0; net.num_params()];
    let mut total = 0.0;
    let n_items = batch.items.len() as f64;
    for item in &batch.items {
        item.validate(sched)?;
        let prep = net.prepare(&item.source)?;
        let mut tg = net.text_grads(&prep);
        let y = item.source.source_spec();
        let bins = y.num_bins();
        let (a, b) = sched.mean_weights(item.t);
        let sd = sched.std(item.t);
        let n = item.z.len() as f64;
        let mut item_loss = 0.0;
        let mut s = vec![0.0; 2 * bins];
        let mut gs = vec![0.0; 2 * bins];
        for (j, &f) in item.frames.iter().enumerate() {
            let z = &item.z[j * 2 * bins..(j + 1) * 2 * bins];
            let x: Vec<Complex64> = item
                .target
                .frame(f)
                .iter()
                .zip(y.frame(f))
                .enumerate()
                .map(|(k, (x0, yv))| x0 * a + yv * b + Complex64::new(z[2 * k], z[2 * k + 1]) * sd)
                .collect();
            let interp = interp_frame(y.frame(f), &x, item.t, sched);
            let tape = net.forward_frame(&prep, &item.source, f, &x, &interp, item.t, sched, &mut s);
            for i in 0..2 * bins {
                let r = sd * s[i] + z[i];
                item_loss += r * r;
                gs[i] = 2.0 * sd * r / (n * n_items);
            }
            net.backward_frame(&prep, &tape, &gs, &mut grad, &mut tg);
        }
        net.finish_text(&prep, &tg, &mut grad);
        total += item_loss / n;
    }
    Ok((total / n_items, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &AdamConfig, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub frames_per_item: usize,
    pub adam: AdamConfig,
    /// Final learning rate as a fraction of `adam.lr` under cosine decay;
    /// 1 keeps it constant.
    pub lr_final_frac: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 16,
            frames_per_item: 8,
            adam: AdamConfig::default(),
            lr_final_frac: 1.0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.frames_per_item == 0 {
            return Err(Error::Config("train.batch_size and train.frames_per_item must be positive".into()));
        }
        if !(self.adam.lr > 0.0) || !(0.0..=1.0).contains(&self.lr_final_frac) {
            return Err(Error::Config("train.adam.lr must be positive, lr_final_frac in [0, 1]".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: u64) -> f64 {
        if self.lr_final_frac >= 1.0 || self.steps == 0 {
            return self.adam.lr;
        }
        let p = (step as f64 / self.steps as f64).min(1.0);
        let cos = 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
        self.adam.lr * (self.lr_final_frac + (1.0 - self.lr_final_frac) * cos)
    }
}

/// Supplier of (source, target) pairs for minibatches.
pub trait PairSource {
    fn draw(&self, rng: &mut dyn rand::RngCore) -> (Arc<SourceConditions>, Arc<ComplexSpectrogram>);
}

/// In-memory training pairs.
#[derive(Debug, Clone, Default)]
pub struct PairStore {
    pub pairs: Vec<(Arc<SourceConditions>, Arc<ComplexSpectrogram>)>,
}

impl PairSource for PairStore {
    fn draw(&self, rng: &mut dyn rand::RngCore) -> (Arc<SourceConditions>, Arc<ComplexSpectrogram>) {
        self.pairs[rng.random_range(0..self.pairs.len())].clone()
    }
}

fn sample_batch(
    data: &dyn PairSource,
    cfg: &TrainConfig,
    sched: &SdeSchedule,
    rng: &mut dyn rand::RngCore,
) -> TrainBatch {
    let items = (0..cfg.batch_size)
        .map(|_| {
            let (source, target) = data.draw(rng);
            let nf = source.num_frames();
            let mut frames = sample_indices(rng, nf, cfg.frames_per_item.min(nf)).into_vec();
            frames.sort_unstable();
            let t = rng.random_range(sched.t_min..=sched.t_max);
            let z = normals(rng, 2 * frames.len() * source.source_spec().num_bins());
            TrainItem { source, target, frames, t, z }
        })
        .collect();
    TrainBatch { items }
}

/// Optimizer position, kept alongside checkpoints so training can resume.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub adam: Adam,
}

impl TrainState {
    pub fn new(net: &ScoreNet) -> Self {
        Self { adam: Adam::new(net.num_params()) }
    }

    pub fn step(&self) -> u64 {
        self.adam.step
    }
}

/// `(step, loss)` rows, one per optimizer step.
pub type LossLog = Vec<(u64, f64)>;

/// Runs optimizer steps until `state.step() == cfg.steps`. The minibatch of
/// step `k` is drawn from `seeded(derive_seed(seed, k))`, so a resumed run
/// continues the same sequence. `on_step` sees every step after its update.
pub fn train(
    net: &mut ScoreNet,
    data: &dyn PairSource,
    sched: &SdeSchedule,
    cfg: &TrainConfig,
    seed: u64,
    state: &mut TrainState,
    on_step: &mut dyn FnMut(&ScoreNet, &TrainState, f64) -> Result<()>,
) -> Result<LossLog> {
    cfg.validate()?;
    sched.validate()?;
    let mut log = LossLog::new();
    while (state.step() as usize) < cfg.steps {
        let k = state.step();
        let mut rng = seeded(derive_seed(seed, k));
        let batch = sample_batch(data, cfg, sched, &mut rng);
        let (loss, grad) = dsm_loss(net, &batch, sched)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step: k as usize, loss });
        }
        let lr = cfg.lr_at(k);
        state.adam.update(net.params_mut(), &grad, &cfg.adam, lr);
        log.push((k, loss));
        on_step(net, state, loss)?;
    }
    Ok(log)
}

/// Two-dimensional Gaussian task: a single complex bin with prior
/// `N(m0, s0^2 I)` and a fixed source.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub task: GaussianTask,
    pub source: Arc<SourceConditions>,
}

/// The 2-D toy used for convergence checks: `m0 = (1, -0.5)`, `s0 = 0.3`,
/// `y = (0.5, 0.5)`.
pub fn toy_task_2d(sched: SdeSchedule) -> ToyTask {
    ToyTask::new(vec![1.0, -0.5], 0.3, vec![0.5, 0.5], sched).expect("valid toy task")
}

impl ToyTask {
    pub fn new(m0: Vec<f64>, s0: f64, y: Vec<f64>, sched: SdeSchedule) -> Result<Self> {
        let cfg = StftConfig { win_length: 0, hop_length: 320, fft_size: 0 };
        let spec = ComplexSpectrogram::from_reals(&y, 1, cfg)?;
        let width = super::ModelConfig::default().acoustic_width;
        let source = Arc::new(SourceConditions::from_parts(spec, FrameMatrix::zeros(1, width), Vec::new())?);
        Ok(Self { task: GaussianTask::prior_vec(m0, s0, y, sched), source })
    }

    /// Mean cosine similarity between the network and analytic scores over
    /// a 21×21 grid spanning the marginal mean ±3 standard deviations, for
    /// each `t` in `times`. Grid points where the analytic score vanishes
    /// are skipped.
    pub fn mean_cosine(&self, net: &ScoreNet, times: &[f64]) -> Result<f64> {
        let sched = self.task.sched;
        let ctx = net.context(self.source.clone())?;
        let score = NetScore { net, sched };
        let (mut sum, mut count) = (0.0, 0usize);
        for &t in times {
            let (mu, var) = self.task.marginal(t);
            let sd = var[0].sqrt();
            for i in 0..21 {
                for j in 0..21 {
                    let x = [mu[0] + sd * 0.3 * (i as f64 - 10.0), mu[1] + sd * 0.3 * (j as f64 - 10.0)];
                    let want = self.task.analytic_score(&x, t)?;
                    let wn = (want[0] * want[0] + want[1] * want[1]).sqrt();
                    if wn == 0.0 {
                        continue;
                    }
                    let got = score.score(&x, &self.task.y, t, &ctx)?;
                    let gn = (got[0] * got[0] + got[1] * got[1]).sqrt();
                    let cos = if gn == 0.0 { 0.0 } else { (got[0] * want[0] + got[1] * want[1]) / (gn * wn) };
                    sum += cos;
                    count += 1;
                }
            }
        }
        Ok(sum / count as f64)
    }
}

impl PairSource for ToyTask {
    fn draw(&self, rng: &mut dyn rand::RngCore) -> (Arc<SourceConditions>, Arc<ComplexSpectrogram>) {
        let z = normals(rng, self.task.m0.len());
        let x0: Vec<f64> = self.task.m0.iter().zip(&z).map(|(m, z)| m + self.task.s0 * z).collect();
        let spec = ComplexSpectrogram::from_reals(&x0, 1, self.source.source_spec().config()).expect("toy shape");
        (self.source.clone(), Arc::new(spec))
    }
}

/// Trains on the toy task with one frame per item.
pub fn train_toy(net: &mut ScoreNet, toy: &ToyTask, cfg: &TrainConfig, seed: u64) -> Result<LossLog> {
    let cfg = TrainConfig { frames_per_item: 1, ..*cfg };
    let mut state = TrainState::new(net);
    train(net, toy, &toy.task.sched, &cfg, seed, &mut state, &mut |_, _, _| Ok(()))
}
