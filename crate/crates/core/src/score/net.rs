//! Small conditional score network with hand-written backpropagation.
//!
//! Per frame, log band powers of the state, the interpolated source and the
//! acoustic embedding are encoded by two tanh layers (plus a sinusoidal time
//! embedding) into `Z`. `Z` attends over the prompt's token embeddings with
//! single-head cross-attention, `Z' = Z + W_o softmax(q K^T / sqrt(d)) V`,
//! and is squeezed to a small frame code `d`.
//!
//! A head shared across frequency bins maps per-bin features and `d` to a
//! complex gain `G` and a log-variance `u_v`. The network models the clean
//! bin as `x0 ~ N(G y, e^{u_v})` given the source, so the marginal score is
//!
//! ```text
//! s = -(x_t - a G y - b y) / (a^2 e^{u_v} + sigma(t)^2)
//! ```
//!
//! with `(a, b)` the kernel mean weights.

use std::sync::Arc;

use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::features::{band_edges, band_log_powers, log_power, StaticFeatures, NUM_BIN_FEATURES, NUM_STATIC};
use crate::conditioning::{interp_weight, ConditionBundle, SourceConditions};
use crate::dsp::ComplexSpectrogram;
use crate::sde::SdeSchedule;
use crate::solver::ScoreFunction;
use crate::{Error, Result};

const F: usize = NUM_BIN_FEATURES;
/// Head outputs: gain (re, im) and log-variance.
const O: usize = 3;
const ACOUSTIC_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub enc_width: usize,
    pub attn_width: usize,
    pub text_width: usize,
    pub dec_width: usize,
    pub head_hidden: usize,
    pub time_freqs: usize,
    pub num_bands: usize,
    pub acoustic_width: usize,
    pub vocab_size: usize,
    /// Feed the interpolated source to the network; when off the raw source
    /// takes its place.
    pub use_interp: bool,
    /// Let the head see the diffusion state and time; when off, the mean
    /// and variance depend on the source and prompt only.
    pub state_features: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_width: 128,
            attn_width: 64,
            text_width: 64,
            dec_width: 16,
            head_hidden: 16,
            time_freqs: 8,
            num_bands: 13,
            acoustic_width: 13,
            vocab_size: crate::conditioning::Vocabulary::default().len(),
            use_interp: true,
            state_features: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.enc_width,
            self.attn_width,
            self.text_width,
            self.dec_width,
            self.head_hidden,
            self.time_freqs,
            self.num_bands,
            self.vocab_size,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        Ok(())
    }

    fn enc_inputs(&self) -> usize {
        2 * self.num_bands + self.acoustic_width
    }
}

/// A named parameter block of shape `rows × cols` at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceInfo {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl SliceInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
struct Layout {
    enc1_w: SliceInfo,
    enc1_b: SliceInfo,
    time_w: SliceInfo,
    enc2_w: SliceInfo,
    enc2_b: SliceInfo,
    attn_q: SliceInfo,
    attn_k: SliceInfo,
    attn_v: SliceInfo,
    attn_o: SliceInfo,
    text: SliceInfo,
    dec_w: SliceInfo,
    dec_b: SliceInfo,
    head_wf: SliceInfo,
    head_wd: SliceInfo,
    head_b: SliceInfo,
    head_out: SliceInfo,
    head_skip: SliceInfo,
    head_film: SliceInfo,
    head_out_b: SliceInfo,
    head_film_b: SliceInfo,
    total: usize,
}

impl Layout {
    fn new(c: &ModelConfig) -> Self {
        let mut off = 0;
        let mut s = |name, rows, cols| {
            let info = SliceInfo { name, rows, cols, offset: off };
            off += rows * cols;
            info
        };
        let (e, a, tw, dd, h) = (c.enc_width, c.attn_width, c.text_width, c.dec_width, c.head_hidden);
        let enc1_w = s("enc1.w", e, c.enc_inputs());
        let enc1_b = s("enc1.b", e, 1);
        let time_w = s("time.w", e, 2 * c.time_freqs);
        let enc2_w = s("enc2.w", e, e);
        let enc2_b = s("enc2.b", e, 1);
        let attn_q = s("attn.q", a, e);
        let attn_k = s("attn.k", a, tw);
        let attn_v = s("attn.v", a, tw);
        let attn_o = s("attn.o", e, a);
        let text = s("text.table", c.vocab_size, tw);
        let dec_w = s("dec.w", dd, e);
        let dec_b = s("dec.b", dd, 1);
        let head_wf = s("head.wf", h, F);
        let head_wd = s("head.wd", h, dd);
        let head_b = s("head.b", h, 1);
        let head_out = s("head.out", O, h);
        let head_skip = s("head.skip", O, F);
        let head_film = s("head.film", O * F, dd);
        let head_out_b = s("head.out_b", O, 1);
        let head_film_b = s("head.film_b", O, dd);
        Self {
            enc1_w,
            enc1_b,
            time_w,
            enc2_w,
            enc2_b,
            attn_q,
            attn_k,
            attn_v,
            attn_o,
            text,
            dec_w,
            dec_b,
            head_wf,
            head_wd,
            head_b,
            head_out,
            head_skip,
            head_film,
            head_out_b,
            head_film_b,
            total: off,
        }
    }

    fn slices(&self) -> Vec<SliceInfo> {
        vec![
            self.enc1_w,
            self.enc1_b,
            self.time_w,
            self.enc2_w,
            self.enc2_b,
            self.attn_q,
            self.attn_k,
            self.attn_v,
            self.attn_o,
            self.text,
            self.dec_w,
            self.dec_b,
            self.head_wf,
            self.head_wd,
            self.head_b,
            self.head_out,
            self.head_skip,
            self.head_film,
            self.head_out_b,
            self.head_film_b,
        ]
    }
}

/// `out += W x` for row-major `W` of shape `out.len() × x.len()`.
fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T g`.
fn matvec_t_add(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (gi, row) in g.iter().zip(w.chunks_exact(cols)) {
        if *gi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += gi * a;
            }
        }
    }
}

/// `dw += g x^T`.
fn outer_add(dw: &mut [f64], g: &[f64], x: &[f64]) {
    let cols = x.len();
    for (gi, row) in g.iter().zip(dw.chunks_exact_mut(cols)) {
        if *gi != 0.0 {
            for (d, xv) in row.iter_mut().zip(x) {
                *d += gi * xv;
            }
        }
    }
}

/// Source-dependent quantities reused across reverse steps.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub(crate) features: std::sync::Arc<StaticFeatures>,
    keys: Vec<f64>,
    values: Vec<f64>,
    tokens: Vec<usize>,
    edges: Vec<(usize, usize)>,
}

/// Activations of one frame kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct FrameTape {
    enc_in: Vec<f64>,
    tau: Vec<f64>,
    h1: Vec<f64>,
    z: Vec<f64>,
    q: Vec<f64>,
    alpha: Vec<f64>,
    att: Vec<f64>,
    z2: Vec<f64>,
    d: Vec<f64>,
    feats: Vec<f64>,
    h: Vec<f64>,
    u: Vec<f64>,
    x: Vec<Complex64>,
    y: Vec<Complex64>,
    a: f64,
    b: f64,
    var: f64,
}

/// Per-item gradient buffers for the token keys and values.
#[derive(Debug, Clone)]
pub(crate) struct TextGrads {
    dkeys: Vec<f64>,
    dvalues: Vec<f64>,
}

/// Score network parameters together with their architecture.
#[derive(Debug, Clone)]
pub struct ScoreNet {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl ScoreNet {
    /// Uniform `±1/sqrt(fan_in)` initialization (`±1` for the token table);
    /// the log-variance bias starts at a small value.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        for s in layout.slices() {
            let fan_in = match s.name {
                "text.table" => 1,
                "enc1.b" | "enc2.b" | "dec.b" | "head.b" | "head.out_b" => continue,
                "time.w" => s.cols + config.enc_inputs(),
                "head.wf" | "head.wd" => F + config.dec_width,
                _ => s.cols,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[s.range()] {
                *p = rng.random_range(-bound..bound);
            }
        }
        let ob = layout.head_out_b.offset;
        params[ob..ob + O].copy_from_slice(&[1.0, 0.0, -7.0]);
        Ok(Self { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(Error::ShapeMismatch { expected: layout.total, found: params.len() });
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::Checkpoint(format!("parameter {i} is not finite")));
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn slices(&self) -> Vec<SliceInfo> {
        self.layout.slices()
    }

    /// Parameter block by name.
    pub fn slice(&self, name: &str) -> Option<&[f64]> {
        self.layout.slices().into_iter().find(|s| s.name == name).map(|s| &self.params[s.range()])
    }

    pub fn slice_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.layout.slices().into_iter().find(|s| s.name == name)?;
        Some(&mut self.params[s.range()])
    }

    fn p(&self, s: SliceInfo) -> &[f64] {
        &self.params[s.range()]
    }

    pub(crate) fn prepare(&self, source: &SourceConditions) -> Result<Prepared> {
        let c = &self.config;
        if source.acoustic_frames().cols() != c.acoustic_width {
            return Err(Error::ShapeMismatch { expected: c.acoustic_width, found: source.acoustic_frames().cols() });
        }
        let tokens = source.text_tokens().to_vec();
        if let Some(&bad) = tokens.iter().find(|&&t| t >= c.vocab_size) {
            return Err(Error::ShapeMismatch { expected: c.vocab_size, found: bad + 1 });
        }
        let (a, tw) = (c.attn_width, c.text_width);
        let table = self.p(self.layout.text);
        let mut keys = vec![0.0; tokens.len() * a];
        let mut values = vec![0.0; tokens.len() * a];
        for (i, &tok) in tokens.iter().enumerate() {
            let e = &table[tok * tw..(tok + 1) * tw];
            matvec_add(self.p(self.layout.attn_k), e, &mut keys[i * a..(i + 1) * a]);
            matvec_add(self.p(self.layout.attn_v), e, &mut values[i * a..(i + 1) * a]);
        }
        Ok(Prepared {
            features: source.static_features(),
            keys,
            values,
            tokens,
            edges: band_edges(source.source_spec().num_bins(), c.num_bands),
        })
    }

    pub(crate) fn text_grads(&self, prep: &Prepared) -> TextGrads {
        let n = prep.tokens.len() * self.config.attn_width;
        TextGrads { dkeys: vec![0.0; n], dvalues: vec![0.0; n] }
    }

    /// Scores one frame. `x` is the state frame, `interp` the interpolated
    /// source frame, `y` the source frame.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn forward_frame(
        &self,
        prep: &Prepared,
        source: &SourceConditions,
        frame: usize,
        x: &[Complex64],
        interp: &[Complex64],
        t: f64,
        sched: &SdeSchedule,
        out: &mut [f64],
    ) -> FrameTape {
        let c = &self.config;
        let l = &self.layout;
        let (aw, hw) = (c.attn_width, c.head_hidden);
        let bins = x.len();
        let y = source.source_spec().frame(frame);
        let interp = if c.use_interp { interp } else { y };

        let nb = c.num_bands;
        let mut enc_in = vec![0.0; c.enc_inputs()];
        band_log_powers(x, &prep.edges, &mut enc_in[..nb]);
        band_log_powers(interp, &prep.edges, &mut enc_in[nb..2 * nb]);
        for (o, v) in enc_in[2 * nb..].iter_mut().zip(source.acoustic_frames().row(frame)) {
            *o = ACOUSTIC_SCALE * v;
        }
        if !c.state_features {
            enc_in[..2 * nb].iter_mut().for_each(|v| *v = 0.0);
        }
        let tau: Vec<f64> = (0..c.time_freqs)
            .flat_map(|j| {
                let w = (1u64 << j) as f64 * t;
                if c.state_features { [w.sin(), w.cos()] } else { [0.0, 0.0] }
            })
            .collect();

        let mut h1 = self.p(l.enc1_b).to_vec();
        matvec_add(self.p(l.enc1_w), &enc_in, &mut h1);
        matvec_add(self.p(l.time_w), &tau, &mut h1);
        h1.iter_mut().for_each(|v| *v = v.tanh());
        let mut z = self.p(l.enc2_b).to_vec();
        matvec_add(self.p(l.enc2_w), &h1, &mut z);
        z.iter_mut().for_each(|v| *v = v.tanh());

        let n_tok = prep.tokens.len();
        let mut q = vec![0.0; aw];
        let mut alpha = vec![0.0; n_tok];
        let mut att = vec![0.0; aw];
        let mut z2 = z.clone();
        if n_tok > 0 {
            matvec_add(self.p(l.attn_q), &z, &mut q);
            let scale = 1.0 / (aw as f64).sqrt();
            for (i, al) in alpha.iter_mut().enumerate() {
                *al = scale * q.iter().zip(&prep.keys[i * aw..(i + 1) * aw]).map(|(a, b)| a * b).sum::<f64>();
            }
            let mx = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            alpha.iter_mut().for_each(|v| *v = (*v - mx).exp());
            let sum: f64 = alpha.iter().sum();
            alpha.iter_mut().for_each(|v| *v /= sum);
            for (i, al) in alpha.iter().enumerate() {
                for (o, v) in att.iter_mut().zip(&prep.values[i * aw..(i + 1) * aw]) {
                    *o += al * v;
                }
            }
            matvec_add(self.p(l.attn_o), &att, &mut z2);
        }

        let mut d = self.p(l.dec_b).to_vec();
        matvec_add(self.p(l.dec_w), &z2, &mut d);
        d.iter_mut().for_each(|v| *v = v.tanh());

        let mut hd = self.p(l.head_b).to_vec();
        matvec_add(self.p(l.head_wd), &d, &mut hd);
        let mut skip = self.p(l.head_skip).to_vec();
        matvec_add(self.p(l.head_film), &d, &mut skip);
        let mut ub = self.p(l.head_out_b).to_vec();
        matvec_add(self.p(l.head_film_b), &d, &mut ub);

        let (a, b) = sched.mean_weights(t);
        let var = sched.variance(t);
        let half_log_sd = 0.25 * var.max(1e-300).ln();
        let wf = self.p(l.head_wf);
        let wout = self.p(l.head_out);
        let stat = prep.features.frame(frame);

        let mut feats = vec![0.0; bins * F];
        let mut hs = vec![0.0; bins * hw];
        let mut us = vec![0.0; bins * O];
        for k in 0..bins {
            let feat = &mut feats[k * F..(k + 1) * F];
            if c.state_features {
                feat[0] = log_power(x[k].norm_sqr());
                feat[1] = log_power(interp[k].norm_sqr());
                feat[2] = half_log_sd;
            }
            for (dst, src) in feat[3..].iter_mut().zip(&stat[k * NUM_STATIC..(k + 1) * NUM_STATIC]) {
                *dst = *src as f64;
            }
            let h = &mut hs[k * hw..(k + 1) * hw];
            h.copy_from_slice(&hd);
            matvec_add(wf, feat, h);
            h.iter_mut().for_each(|v| *v = v.tanh());
            let u = &mut us[k * O..(k + 1) * O];
            u.copy_from_slice(&ub);
            matvec_add(wout, h, u);
            matvec_add(&skip, feat, u);

            let g = Complex64::new(u[0], u[1]);
            let den = a * a * u[2].exp() + var;
            let err = x[k] - a * g * y[k] - b * y[k];
            out[2 * k] = -err.re / den;
            out[2 * k + 1] = -err.im / den;
        }

        FrameTape {
            enc_in,
            tau,
            h1,
            z,
            q,
            alpha,
            att,
            z2,
            d,
            feats,
            h: hs,
            u: us,
            x: x.to_vec(),
            y: y.to_vec(),
            a,
            b,
            var,
        }
    }

    /// Accumulates parameter gradients of a frame given `dL/ds` for its
    /// interleaved scores.
    pub(crate) fn backward_frame(
        &self,
        prep: &Prepared,
        tape: &FrameTape,
        gs: &[f64],
        grad: &mut [f64],
        tg: &mut TextGrads,
    ) {
        let c = &self.config;
        let l = &self.layout;
        let (aw, dw, hw) = (c.attn_width, c.dec_width, c.head_hidden);
        let bins = tape.x.len();
        let (a, b, var) = (tape.a, tape.b, tape.var);
        let wout = self.p(l.head_out);

        let mut acc_skip = vec![0.0; O * F];
        let mut acc_ub = [0.0; O];
        let mut acc_hd = vec![0.0; hw];
        let mut du = [0.0; O];
        let mut dpre = vec![0.0; hw];
        {
            let (gwf, rest) = grad.split_at_mut(l.head_out.offset);
            let gwf = &mut gwf[l.head_wf.range()];
            let gwout = &mut rest[..l.head_out.len()];
            for k in 0..bins {
                let u = &tape.u[k * O..(k + 1) * O];
                let feat = &tape.feats[k * F..(k + 1) * F];
                let h = &tape.h[k * hw..(k + 1) * hw];
                let (gr, gi) = (gs[2 * k], gs[2 * k + 1]);
                if gr == 0.0 && gi == 0.0 {
                    continue;
                }
                let y = tape.y[k];
                let g = Complex64::new(u[0], u[1]);
                let v = u[2].exp();
                let den = a * a * v + var;
                let err = tape.x[k] - a * g * y - b * y;
                // s = -err / den
                let dden = (gr * err.re + gi * err.im) / (den * den);
                let dm = Complex64::new(gr, gi) * (a / den);
                du[0] = dm.re * y.re + dm.im * y.im;
                du[1] = -dm.re * y.im + dm.im * y.re;
                du[2] = dden * a * a * v;

                outer_add(gwout, &du, h);
                for o in 0..O {
                    acc_ub[o] += du[o];
                    for f in 0..F {
                        acc_skip[o * F + f] += du[o] * feat[f];
                    }
                }
                dpre.iter_mut().for_each(|v| *v = 0.0);
                matvec_t_add(wout, &du, &mut dpre);
                for (dp, hv) in dpre.iter_mut().zip(h) {
                    *dp *= 1.0 - hv * hv;
                }
                outer_add(gwf, &dpre, feat);
                for (acc, dp) in acc_hd.iter_mut().zip(&dpre) {
                    *acc += dp;
                }
            }
        }

        let d = &tape.d;
        let mut dd = vec![0.0; dw];
        for (gv, av) in grad[l.head_skip.range()].iter_mut().zip(&acc_skip) {
            *gv += av;
        }
        outer_add(&mut grad[l.head_film.range()], &acc_skip, d);
        matvec_t_add(self.p(l.head_film), &acc_skip, &mut dd);
        for (gv, av) in grad[l.head_out_b.range()].iter_mut().zip(&acc_ub) {
            *gv += av;
        }
        outer_add(&mut grad[l.head_film_b.range()], &acc_ub, d);
        matvec_t_add(self.p(l.head_film_b), &acc_ub, &mut dd);
        for (gv, av) in grad[l.head_b.range()].iter_mut().zip(&acc_hd) {
            *gv += av;
        }
        outer_add(&mut grad[l.head_wd.range()], &acc_hd, d);
        matvec_t_add(self.p(l.head_wd), &acc_hd, &mut dd);

        // Decoder.
        for (g, dv) in dd.iter_mut().zip(d) {
            *g *= 1.0 - dv * dv;
        }
        for (gv, v) in grad[l.dec_b.range()].iter_mut().zip(&dd) {
            *gv += v;
        }
        outer_add(&mut grad[l.dec_w.range()], &dd, &tape.z2);
        let mut dz = vec![0.0; c.enc_width];
        matvec_t_add(self.p(l.dec_w), &dd, &mut dz);

        // Cross-attention; dz currently holds dL/dZ'.
        let n_tok = prep.tokens.len();
        if n_tok > 0 {
            outer_add(&mut grad[l.attn_o.range()], &dz, &tape.att);
            let mut datt = vec![0.0; aw];
            matvec_t_add(self.p(l.attn_o), &dz, &mut datt);
            let mut dalpha = vec![0.0; n_tok];
            for i in 0..n_tok {
                let vi = &prep.values[i * aw..(i + 1) * aw];
                dalpha[i] = datt.iter().zip(vi).map(|(a, b)| a * b).sum();
                for (g, da) in tg.dvalues[i * aw..(i + 1) * aw].iter_mut().zip(&datt) {
                    *g += tape.alpha[i] * da;
                }
            }
            let mean: f64 = tape.alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
            let scale = 1.0 / (aw as f64).sqrt();
            let mut dq = vec![0.0; aw];
            for i in 0..n_tok {
                let ds = tape.alpha[i] * (dalpha[i] - mean) * scale;
                let ki = &prep.keys[i * aw..(i + 1) * aw];
                for (g, kv) in dq.iter_mut().zip(ki) {
                    *g += ds * kv;
                }
                for (g, qv) in tg.dkeys[i * aw..(i + 1) * aw].iter_mut().zip(&tape.q) {
                    *g += ds * qv;
                }
            }
            outer_add(&mut grad[l.attn_q.range()], &dq, &tape.z);
            matvec_t_add(self.p(l.attn_q), &dq, &mut dz);
        }

        // Encoder.
        for (g, zv) in dz.iter_mut().zip(&tape.z) {
            *g *= 1.0 - zv * zv;
        }
        for (gv, v) in grad[l.enc2_b.range()].iter_mut().zip(&dz) {
            *gv += v;
        }
        outer_add(&mut grad[l.enc2_w.range()], &dz, &tape.h1);
        let mut dh1 = vec![0.0; c.enc_width];
        matvec_t_add(self.p(l.enc2_w), &dz, &mut dh1);
        for (g, hv) in dh1.iter_mut().zip(&tape.h1) {
            *g *= 1.0 - hv * hv;
        }
        for (gv, v) in grad[l.enc1_b.range()].iter_mut().zip(&dh1) {
            *gv += v;
        }
        outer_add(&mut grad[l.enc1_w.range()], &dh1, &tape.enc_in);
        outer_add(&mut grad[l.time_w.range()], &dh1, &tape.tau);
    }

    /// Pushes the accumulated key/value gradients of an item into the
    /// projection and token-table gradients.
    pub(crate) fn finish_text(&self, prep: &Prepared, tg: &TextGrads, grad: &mut [f64]) {
        let c = &self.config;
        let l = &self.layout;
        let (aw, tw) = (c.attn_width, c.text_width);
        let table = self.p(l.text);
        for (i, &tok) in prep.tokens.iter().enumerate() {
            let e = &table[tok * tw..(tok + 1) * tw];
            let dk = &tg.dkeys[i * aw..(i + 1) * aw];
            let dv = &tg.dvalues[i * aw..(i + 1) * aw];
            outer_add(&mut grad[l.attn_k.range()], dk, e);
            outer_add(&mut grad[l.attn_v.range()], dv, e);
            let mut de = vec![0.0; tw];
            matvec_t_add(self.p(l.attn_k), dk, &mut de);
            matvec_t_add(self.p(l.attn_v), dv, &mut de);
            let row = l.text.offset + tok * tw;
            for (g, v) in grad[row..row + tw].iter_mut().zip(&de) {
                *g += v;
            }
        }
    }

    /// Score of the whole state given a condition bundle.
    pub fn forward(
        &self,
        x_t: &ComplexSpectrogram,
        t: f64,
        bundle: &ConditionBundle,
        sched: &SdeSchedule,
    ) -> Result<ComplexSpectrogram> {
        let prep = self.prepare(&bundle.source)?;
        self.forward_prepared(&prep, x_t, t, bundle, sched)
    }

    pub(crate) fn forward_prepared(
        &self,
        prep: &Prepared,
        x_t: &ComplexSpectrogram,
        t: f64,
        bundle: &ConditionBundle,
        sched: &SdeSchedule,
    ) -> Result<ComplexSpectrogram> {
        let y = bundle.source_spec();
        if x_t.num_frames() != y.num_frames() || x_t.num_bins() != y.num_bins() {
            return Err(Error::FrameParams(format!(
                "state has {}x{} bins, condition has {}x{}",
                x_t.num_frames(),
                x_t.num_bins(),
                y.num_frames(),
                y.num_bins()
            )));
        }
        let bins = y.num_bins();
        let mut out = vec![0.0; 2 * bins * y.num_frames()];
        for (f, chunk) in out.chunks_exact_mut(2 * bins).enumerate() {
            self.forward_frame(prep, &bundle.source, f, x_t.frame(f), bundle.interp_spec.frame(f), t, sched, chunk);
        }
        ComplexSpectrogram::from_reals(&out, y.num_frames(), y.config())
    }

    /// Binds the network to an utterance for use with the reverse solver.
    pub fn context(&self, source: Arc<SourceConditions>) -> Result<NetContext> {
        let prep = self.prepare(&source)?;
        Ok(NetContext { source, prep })
    }
}

/// Source conditions with their precomputed network features.
#[derive(Debug, Clone)]
pub struct NetContext {
    source: Arc<SourceConditions>,
    prep: Prepared,
}

impl NetContext {
    pub fn source(&self) -> &Arc<SourceConditions> {
        &self.source
    }
}

/// [`ScoreFunction`] adapter: rebuilds the condition bundle at every call.
pub struct NetScore<'a> {
    pub net: &'a ScoreNet,
    pub sched: SdeSchedule,
}

impl ScoreFunction<NetContext> for NetScore<'_> {
    fn score(&self, x_t: &[f64], y: &[f64], t: f64, cond: &NetContext) -> Result<Vec<f64>> {
        let src = cond.source.source_spec();
        crate::sde::check_same_len(y, x_t)?;
        let x = ComplexSpectrogram::from_reals(x_t, src.num_frames(), src.config())?;
        let bundle = ConditionBundle::at(cond.source.clone(), t, &x, &self.sched)?;
        Ok(self.net.forward_prepared(&cond.prep, &x, t, &bundle, &self.sched)?.to_reals())
    }
}

/// Interpolated source frame at time `t`.
pub(crate) fn interp_frame(y: &[Complex64], x: &[Complex64], t: f64, sched: &SdeSchedule) -> Vec<Complex64> {
    let w = interp_weight(t, sched);
    y.iter().zip(x).map(|(y, x)| y * w + x * (1.0 - w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{FrameMatrix, Vocabulary};
    use crate::dsp::StftConfig;
    use crate::rng::{normals, seeded};

    fn small_source(tokens: Vec<usize>, seed: u64) -> Arc<SourceConditions> {
        let cfg = StftConfig { win_length: 8, hop_length: 4, fft_size: 8 };
        let frames = 3;
        let r = normals(&mut seeded(seed), 2 * frames * cfg.num_bins());
        let y = ComplexSpectrogram::from_reals(&r, frames, cfg).unwrap();
        let ac = FrameMatrix::from_vec(frames, 13, normals(&mut seeded(seed + 1), frames * 13)).unwrap();
        Arc::new(SourceConditions::from_parts(y, ac, tokens).unwrap())
    }

    fn bundle(source: &Arc<SourceConditions>, t: f64, seed: u64) -> (ComplexSpectrogram, ConditionBundle) {
        let y = source.source_spec();
        let x = ComplexSpectrogram::from_reals(&normals(&mut seeded(seed), 2 * y.data().len()), y.num_frames(), y.config())
            .unwrap();
        let b = ConditionBundle::at(source.clone(), t, &x, &SdeSchedule::default()).unwrap();
        (x, b)
    }

    #[test]
    fn output_shape_matches_state() {
        let net = ScoreNet::init(ModelConfig::default(), &mut seeded(0)).unwrap();
        let src = small_source(vec![1, 2], 3);
        let (x, b) = bundle(&src, 0.4, 5);
        let s = net.forward(&x, 0.4, &b, &SdeSchedule::default()).unwrap();
        assert_eq!((s.num_frames(), s.num_bins()), (x.num_frames(), x.num_bins()));
        assert!(s.data().iter().all(|c| c.re.is_finite() && c.im.is_finite()));
    }

    #[test]
    fn token_order_does_not_matter() {
        let net = ScoreNet::init(ModelConfig::default(), &mut seeded(1)).unwrap();
        let sched = SdeSchedule::default();
        let a = small_source(vec![1, 7, 3], 3);
        let b = small_source(vec![3, 1, 7], 3);
        let (x, ba) = bundle(&a, 0.5, 6);
        let (_, bb) = bundle(&b, 0.5, 6);
        let sa = net.forward(&x, 0.5, &ba, &sched).unwrap();
        let sb = net.forward(&x, 0.5, &bb, &sched).unwrap();
        for (p, q) in sa.data().iter().zip(sb.data()) {
            assert!((p - q).norm() <= 1e-12 * (1.0 + p.norm()));
        }
    }

    #[test]
    fn zero_attention_output_ignores_prompt() {
        let mut net = ScoreNet::init(ModelConfig::default(), &mut seeded(2)).unwrap();
        let sched = SdeSchedule::default();
        let a = small_source(vec![1, 2], 3);
        let b = small_source(vec![9, 9, 4, 5], 3);
        let (x, ba) = bundle(&a, 0.5, 6);
        let (_, bb) = bundle(&b, 0.5, 6);
        let differ = net.forward(&x, 0.5, &ba, &sched).unwrap() != net.forward(&x, 0.5, &bb, &sched).unwrap();
        assert!(differ);
        net.slice_mut("attn.o").unwrap().iter_mut().for_each(|w| *w = 0.0);
        assert_eq!(net.forward(&x, 0.5, &ba, &sched).unwrap(), net.forward(&x, 0.5, &bb, &sched).unwrap());
    }

    #[test]
    fn empty_prompt_skips_attention() {
        let net = ScoreNet::init(ModelConfig::default(), &mut seeded(3)).unwrap();
        let src = small_source(vec![], 4);
        let (x, b) = bundle(&src, 0.3, 1);
        assert!(net.forward(&x, 0.3, &b, &SdeSchedule::default()).is_ok());
    }

    #[test]
    fn rejects_bad_conditions() {
        let net = ScoreNet::init(ModelConfig::default(), &mut seeded(3)).unwrap();
        let src = small_source(vec![Vocabulary::default().len()], 4);
        let (x, b) = bundle(&src, 0.3, 1);
        assert!(net.forward(&x, 0.3, &b, &SdeSchedule::default()).is_err());
        let ok = small_source(vec![], 4);
        let (_, b) = bundle(&ok, 0.3, 1);
        let short = ComplexSpectrogram::zeros(2, x.config());
        assert!(matches!(net.forward(&short, 0.3, &b, &SdeSchedule::default()), Err(Error::FrameParams(_))));
    }

    #[test]
    fn layout_is_contiguous() {
        let net = ScoreNet::init(ModelConfig::default(), &mut seeded(0)).unwrap();
        let mut off = 0;
        for s in net.slices() {
            assert_eq!(s.offset, off);
            off += s.len();
        }
        assert_eq!(off, net.num_params());
        assert_eq!(net.slice("enc1.w").unwrap().len(), 128 * 39);
        assert_eq!(net.slice("attn.k").unwrap().len(), 64 * 64);
    }
}
