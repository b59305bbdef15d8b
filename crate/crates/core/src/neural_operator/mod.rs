//! Horizon-agnostic 1D Fourier neural operator over the time axis, mapping a
//! boundary-input sequence U (M x d_u) to the boundary-output sequence Y
//! (M x d_y) for any admitted length M. Differentiation is hand-rolled:
//! reverse mode over a recorded tape for training and input cotangents,
//! forward mode for the directional output sensitivities the filter needs.
//!
//! Composition: pointwise lifting P, `layers` kernel-integration blocks
//! sigma(W v + SpectralConv(v; R) + b), pointwise projection Q
//! (linear-GELU-linear by default).

pub mod spectral;
mod train;

pub use train::{relative_l2, train_no, write_training_log, AdamWSettings, TrainLogRow, TrainOutcome};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, fill, reset};
use crate::scalar::Real;
use rand::Rng;
use serde::{Deserialize, Serialize};
use spectral::{contract, expand, mix, TwiddleCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    /// Test hook: pass preactivations through unchanged.
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    /// linear (channels -> channels), activation, linear (channels -> d_y).
    TwoLayer,
    /// Single linear map (channels -> d_y).
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnoConfig {
    pub channels: usize,
    pub layers: usize,
    pub modes: usize,
    pub d_u: usize,
    pub d_y: usize,
    /// Append t/(M-1) as an extra lifted input channel.
    pub include_time_channel: bool,
    pub m_min: usize,
    pub m_max: usize,
    pub activation: Activation,
    pub projection: Projection,
}

impl Default for FnoConfig {
    fn default() -> Self {
        FnoConfig {
            channels: 64,
            layers: 4,
            modes: 16,
            d_u: 2,
            d_y: 2,
            include_time_channel: true,
            m_min: 40,
            m_max: 200,
            activation: Activation::Gelu,
            projection: Projection::TwoLayer,
        }
    }
}

impl FnoConfig {
    pub fn lift_in_dim(&self) -> usize {
        self.d_u + usize::from(self.include_time_channel)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 1 || self.layers < 1 || self.modes < 1 {
            return Err(Error::Config(
                "channels, layers and modes must all be >= 1".into(),
            ));
        }
        if self.d_u < 1 || self.d_y < 1 {
            return Err(Error::Config("d_u and d_y must be >= 1".into()));
        }
        if self.m_min < 2 || self.m_min > self.m_max {
            return Err(Error::Config(format!(
                "invalid admitted length range [{}, {}]",
                self.m_min, self.m_max
            )));
        }
        if self.m_min / 2 + 1 < self.modes {
            return Err(Error::Config(format!(
                "shortest admitted length {} supports only {} frequency modes, {} requested",
                self.m_min,
                self.m_min / 2 + 1,
                self.modes
            )));
        }
        Ok(())
    }

    /// Reject input lengths outside the trained range.
    pub fn admit(&self, m: usize) -> Result<()> {
        if m < self.m_min || m > self.m_max {
            return Err(Error::Config(format!(
                "input length {m} outside admitted range [{}, {}]",
                self.m_min, self.m_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SpectralBlock<S> {
    /// Complex mode-mixing weights, split planes, layout [k][c_in][c_out].
    pub r_re: Vec<S>,
    pub r_im: Vec<S>,
    /// Pointwise weights, layout [c_in][c_out].
    pub w: Vec<S>,
    pub b: Vec<S>,
}

#[derive(Debug, Clone)]
pub struct FnoModel<S> {
    pub cfg: FnoConfig,
    /// Lifting, layout [in][channels].
    pub p_w: Vec<S>,
    pub p_b: Vec<S>,
    pub blocks: Vec<SpectralBlock<S>>,
    /// Projection head; q1 is unused (and stays zero-gradient) under
    /// `Projection::Linear`.
    pub q1_w: Vec<S>,
    pub q1_b: Vec<S>,
    pub q2_w: Vec<S>,
    pub q2_b: Vec<S>,
}

/// Gradient container matching `FnoModel`'s parameter tensors.
#[derive(Debug, Clone)]
pub struct FnoGrads<S> {
    pub p_w: Vec<S>,
    pub p_b: Vec<S>,
    pub blocks: Vec<SpectralBlock<S>>,
    pub q1_w: Vec<S>,
    pub q1_b: Vec<S>,
    pub q2_w: Vec<S>,
    pub q2_b: Vec<S>,
}

fn block_zeros<S: Real>(cfg: &FnoConfig) -> SpectralBlock<S> {
    let c = cfg.channels;
    SpectralBlock {
        r_re: vec![S::zero(); cfg.modes * c * c],
        r_im: vec![S::zero(); cfg.modes * c * c],
        w: vec![S::zero(); c * c],
        b: vec![S::zero(); c],
    }
}

impl<S: Real> FnoModel<S> {
    pub fn zeros(cfg: FnoConfig) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let blocks = (0..cfg.layers).map(|_| block_zeros(&cfg)).collect();
        Ok(FnoModel {
            p_w: vec![S::zero(); cfg.lift_in_dim() * c],
            p_b: vec![S::zero(); c],
            blocks,
            q1_w: vec![S::zero(); c * c],
            q1_b: vec![S::zero(); c],
            q2_w: vec![S::zero(); c * cfg.d_y],
            q2_b: vec![S::zero(); cfg.d_y],
            cfg,
        })
    }

    /// Random init: uniform +-1/sqrt(fan_in) for linear maps, uniform
    /// [0, 1/channels^2) for both planes of the spectral weights.
    pub fn init(cfg: FnoConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(cfg)?;
        let cfg = model.cfg.clone();
        let mut rng = crate::seed::stream(seed, "fno-init", 0);
        let c = cfg.channels;
        let linear = |w: &mut Vec<S>, b: &mut Vec<S>, fan_in: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for x in w.iter_mut() {
                *x = S::of(rng.gen_range(-bound..bound));
            }
            for x in b.iter_mut() {
                *x = S::of(rng.gen_range(-bound..bound));
            }
        };
        linear(&mut model.p_w, &mut model.p_b, cfg.lift_in_dim(), &mut rng);
        for blk in model.blocks.iter_mut() {
            let scale = 1.0 / (c * c) as f64;
            for x in blk.r_re.iter_mut() {
                *x = S::of(rng.gen_range(0.0..scale));
            }
            for x in blk.r_im.iter_mut() {
                *x = S::of(rng.gen_range(0.0..scale));
            }
            linear(&mut blk.w, &mut blk.b, c, &mut rng);
        }
        linear(&mut model.q1_w, &mut model.q1_b, c, &mut rng);
        linear(&mut model.q2_w, &mut model.q2_b, c, &mut rng);
        Ok(model)
    }

    pub fn grads_zeros(&self) -> FnoGrads<S> {
        FnoGrads {
            p_w: vec![S::zero(); self.p_w.len()],
            p_b: vec![S::zero(); self.p_b.len()],
            blocks: (0..self.cfg.layers).map(|_| block_zeros(&self.cfg)).collect(),
            q1_w: vec![S::zero(); self.q1_w.len()],
            q1_b: vec![S::zero(); self.q1_b.len()],
            q2_w: vec![S::zero(); self.q2_w.len()],
            q2_b: vec![S::zero(); self.q2_b.len()],
        }
    }

    /// Parameter tensors in a fixed order (shared with `FnoGrads::tensors`).
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut t: Vec<&mut Vec<S>> = vec![&mut self.p_w, &mut self.p_b];
        for blk in self.blocks.iter_mut() {
            t.push(&mut blk.r_re);
            t.push(&mut blk.r_im);
            t.push(&mut blk.w);
            t.push(&mut blk.b);
        }
        t.push(&mut self.q1_w);
        t.push(&mut self.q1_b);
        t.push(&mut self.q2_w);
        t.push(&mut self.q2_b);
        t
    }

    /// Read-only view of the parameter tensors, same order as `tensors_mut`.
    pub fn tensors(&self) -> Vec<&Vec<S>> {
        let mut t: Vec<&Vec<S>> = vec![&self.p_w, &self.p_b];
        for blk in self.blocks.iter() {
            t.push(&blk.r_re);
            t.push(&blk.r_im);
            t.push(&blk.w);
            t.push(&blk.b);
        }
        t.push(&self.q1_w);
        t.push(&self.q1_b);
        t.push(&self.q2_w);
        t.push(&self.q2_b);
        t
    }

    pub fn n_params(&self) -> usize {
        let blocks: usize = self
            .blocks
            .iter()
            .map(|b| b.r_re.len() + b.r_im.len() + b.w.len() + b.b.len())
            .sum();
        self.p_w.len()
            + self.p_b.len()
            + blocks
            + self.q1_w.len()
            + self.q1_b.len()
            + self.q2_w.len()
            + self.q2_b.len()
    }
}

impl<S: Real> FnoGrads<S> {
    pub fn tensors(&self) -> Vec<&Vec<S>> {
        let mut t: Vec<&Vec<S>> = vec![&self.p_w, &self.p_b];
        for blk in self.blocks.iter() {
            t.push(&blk.r_re);
            t.push(&blk.r_im);
            t.push(&blk.w);
            t.push(&blk.b);
        }
        t.push(&self.q1_w);
        t.push(&self.q1_b);
        t.push(&self.q2_w);
        t.push(&self.q2_b);
        t
    }

    pub fn zero(&mut self) {
        fill(&mut self.p_w, S::zero());
        fill(&mut self.p_b, S::zero());
        for blk in self.blocks.iter_mut() {
            fill(&mut blk.r_re, S::zero());
            fill(&mut blk.r_im, S::zero());
            fill(&mut blk.w, S::zero());
            fill(&mut blk.b, S::zero());
        }
        fill(&mut self.q1_w, S::zero());
        fill(&mut self.q1_b, S::zero());
        fill(&mut self.q2_w, S::zero());
        fill(&mut self.q2_b, S::zero());
    }
}

/// Forward intermediates, reused across calls. One tape per workspace; the
/// recorded planes are sized for the most recent forward.
#[derive(Debug)]
pub struct FnoTape<S> {
    pub m: usize,
    lift_in: Vec<S>,
    /// v[0] = lifted input; v[l+1] = output of block l. L+1 planes, M x C.
    v: Vec<Vec<S>>,
    /// Preactivations per block, M x C.
    pre: Vec<Vec<S>>,
    /// tanh of the inner GELU argument per block (empty under Identity).
    tanh_u: Vec<Vec<S>>,
    /// Truncated input spectrum per block, modes x C.
    z_re: Vec<Vec<S>>,
    z_im: Vec<Vec<S>>,
    q1_pre: Vec<S>,
    q1_tanh: Vec<S>,
    q1_act: Vec<S>,
    pub out: Vec<S>,
}

impl<S> Default for FnoTape<S> {
    fn default() -> Self {
        FnoTape {
            m: 0,
            lift_in: Vec::new(),
            v: Vec::new(),
            pre: Vec::new(),
            tanh_u: Vec::new(),
            z_re: Vec::new(),
            z_im: Vec::new(),
            q1_pre: Vec::new(),
            q1_tanh: Vec::new(),
            q1_act: Vec::new(),
            out: Vec::new(),
        }
    }
}

impl<S: Real> FnoTape<S> {
    fn resize(&mut self, cfg: &FnoConfig, m: usize) {
        let c = cfg.channels;
        let l = cfg.layers;
        self.m = m;
        reset(&mut self.lift_in, m * cfg.lift_in_dim());
        self.v.resize_with(l + 1, Vec::new);
        self.pre.resize_with(l, Vec::new);
        self.tanh_u.resize_with(l, Vec::new);
        self.z_re.resize_with(l, Vec::new);
        self.z_im.resize_with(l, Vec::new);
        for plane in self.v.iter_mut() {
            reset(plane, m * c);
        }
        for plane in self.pre.iter_mut() {
            reset(plane, m * c);
        }
        let tanh_len = if cfg.activation == Activation::Gelu { m * c } else { 0 };
        for plane in self.tanh_u.iter_mut() {
            reset(plane, tanh_len);
        }
        for plane in self.z_re.iter_mut().chain(self.z_im.iter_mut()) {
            reset(plane, cfg.modes * c);
        }
        let q1_len = if cfg.projection == Projection::TwoLayer { m * c } else { 0 };
        let q1_tanh_len = if cfg.projection == Projection::TwoLayer && cfg.activation == Activation::Gelu {
            m * c
        } else {
            0
        };
        reset(&mut self.q1_pre, q1_len);
        reset(&mut self.q1_tanh, q1_tanh_len);
        reset(&mut self.q1_act, q1_len);
        reset(&mut self.out, m * cfg.d_y);
    }
}

/// Scratch buffers + twiddle cache. Each training loop, filter rollout or
/// benchmark owns one; models stay immutable and shareable.
pub struct FnoWorkspace<S> {
    cache: TwiddleCache<S>,
    pub tape: FnoTape<S>,
    mc1: Vec<S>,
    mc2: Vec<S>,
    kc1_re: Vec<S>,
    kc1_im: Vec<S>,
    kc2_re: Vec<S>,
    kc2_im: Vec<S>,
    row_buf: Vec<S>,
}

impl<S: Real> FnoWorkspace<S> {
    pub fn new(cfg: &FnoConfig) -> Self {
        FnoWorkspace {
            cache: TwiddleCache::new(cfg.modes),
            tape: FnoTape::default(),
            mc1: Vec::new(),
            mc2: Vec::new(),
            kc1_re: Vec::new(),
            kc1_im: Vec::new(),
            kc2_re: Vec::new(),
            kc2_im: Vec::new(),
            row_buf: Vec::new(),
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

#[inline(always)]
fn gelu<S: Real>(x: S) -> (S, S) {
    let u = S::of(GELU_K) * (x + S::of(GELU_A) * x * x * x);
    let t = u.tanh();
    (S::of(0.5) * x * (S::one() + t), t)
}

/// d gelu / dx reconstructed from the preactivation and the taped tanh value.
#[inline(always)]
fn gelu_dx<S: Real>(x: S, t: S) -> S {
    let half = S::of(0.5);
    let du = S::of(GELU_K) * (S::one() + S::of(3.0 * GELU_A) * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

impl<S: Real> FnoModel<S> {
    /// Evaluate on a length-m input (flattened time-major, m x d_u), recording
    /// the tape in `ws`. The prediction lands in `ws.tape.out` (m x d_y).
    pub fn forward(&self, u: &[S], m: usize, ws: &mut FnoWorkspace<S>) -> Result<()> {
        let cfg = &self.cfg;
        cfg.admit(m)?;
        if u.len() != m * cfg.d_u {
            return Err(Error::Config(format!(
                "input length {} != m ({m}) x d_u ({})",
                u.len(),
                cfg.d_u
            )));
        }
        let c = cfg.channels;
        let din = cfg.lift_in_dim();
        ws.tape.resize(cfg, m);
        let FnoWorkspace { cache, tape, kc1_re, kc1_im, .. } = ws;
        let tab = cache.get(m);

        // Lift: v0 = [U; t_norm] P + p_b.
        for j in 0..m {
            let dst = &mut tape.lift_in[j * din..(j + 1) * din];
            dst[..cfg.d_u].copy_from_slice(&u[j * cfg.d_u..(j + 1) * cfg.d_u]);
            if cfg.include_time_channel {
                dst[cfg.d_u] = S::of(j as f64 / (m as f64 - 1.0));
            }
        }
        for j in 0..m {
            let row = &mut tape.v[0][j * c..(j + 1) * c];
            row.copy_from_slice(&self.p_b);
            for (i, &x) in tape.lift_in[j * din..(j + 1) * din].iter().enumerate() {
                axpy(row, x, &self.p_w[i * c..(i + 1) * c]);
            }
        }

        for (l, blk) in self.blocks.iter().enumerate() {
            let (vin_planes, vout_planes) = tape.v.split_at_mut(l + 1);
            let vin = &vin_planes[l];
            let vout = &mut vout_planes[0];
            let z_re = &mut tape.z_re[l];
            let z_im = &mut tape.z_im[l];
            fill(z_re, S::zero());
            fill(z_im, S::zero());
            contract(vin, c, tab, &tab.ones, z_re, z_im);
            reset(kc1_re, cfg.modes * c);
            reset(kc1_im, cfg.modes * c);
            mix(z_re, z_im, &blk.r_re, &blk.r_im, cfg.modes, c, kc1_re, kc1_im);
            let pre = &mut tape.pre[l];
            for j in 0..m {
                let row = &mut pre[j * c..(j + 1) * c];
                row.copy_from_slice(&blk.b);
                for (ci, &x) in vin[j * c..(j + 1) * c].iter().enumerate() {
                    axpy(row, x, &blk.w[ci * c..(ci + 1) * c]);
                }
            }
            expand(kc1_re, kc1_im, c, tab, &tab.g, pre);
            match cfg.activation {
                Activation::Gelu => {
                    let tanh = &mut tape.tanh_u[l];
                    for ((o, &x), t) in vout.iter_mut().zip(pre.iter()).zip(tanh.iter_mut()) {
                        let (val, tv) = gelu(x);
                        *o = val;
                        *t = tv;
                    }
                }
                Activation::Identity => vout.copy_from_slice(pre),
            }
        }

        let v_last = &tape.v[cfg.layers];
        match cfg.projection {
            Projection::TwoLayer => {
                for j in 0..m {
                    let row = &mut tape.q1_pre[j * c..(j + 1) * c];
                    row.copy_from_slice(&self.q1_b);
                    for (ci, &x) in v_last[j * c..(j + 1) * c].iter().enumerate() {
                        axpy(row, x, &self.q1_w[ci * c..(ci + 1) * c]);
                    }
                }
                match cfg.activation {
                    Activation::Gelu => {
                        for ((o, &x), t) in tape
                            .q1_act
                            .iter_mut()
                            .zip(tape.q1_pre.iter())
                            .zip(tape.q1_tanh.iter_mut())
                        {
                            let (val, tv) = gelu(x);
                            *o = val;
                            *t = tv;
                        }
                    }
                    Activation::Identity => tape.q1_act.copy_from_slice(&tape.q1_pre),
                }
                project_rows(&tape.q1_act, &self.q2_w, &self.q2_b, cfg.d_y, c, &mut tape.out);
            }
            Projection::Linear => {
                project_rows(v_last, &self.q2_w, &self.q2_b, cfg.d_y, c, &mut tape.out);
            }
        }
        Ok(())
    }

    /// Convenience wrapper returning a fresh output vector.
    pub fn predict(&self, u: &[S], m: usize, ws: &mut FnoWorkspace<S>) -> Result<Vec<S>> {
        self.forward(u, m, ws)?;
        Ok(ws.tape.out.clone())
    }

    /// Reverse-mode pass over the tape recorded by the latest `forward`.
    ///
    /// `grads`: parameter gradients are accumulated when given. `input_grad`:
    /// when `(row, buf)` is given, writes d<cotangent, out>/d u[row] (a d_u
    /// vector) into buf — the constraint assembly path.
    pub fn backward(
        &self,
        cout: &[S],
        ws: &mut FnoWorkspace<S>,
        mut grads: Option<&mut FnoGrads<S>>,
        input_grad: Option<(usize, &mut [S])>,
    ) -> Result<()> {
        let cfg = &self.cfg;
        let m = ws.tape.m;
        if m == 0 {
            return Err(Error::Config("backward without a recorded forward".into()));
        }
        if cout.len() != m * cfg.d_y {
            return Err(Error::Config(format!(
                "cotangent length {} != m ({m}) x d_y ({})",
                cout.len(),
                cfg.d_y
            )));
        }
        let c = cfg.channels;
        let FnoWorkspace {
            cache,
            tape,
            mc1,
            mc2,
            kc1_re,
            kc1_im,
            kc2_re,
            kc2_im,
            ..
        } = ws;
        let tab = cache.get(m);
        reset(mc1, m * c);

        // Projection backward -> mc1 = d/d v_last.
        match cfg.projection {
            Projection::TwoLayer => {
                reset(mc2, m * c);
                // mc2 = d/d q1_act, then in place d/d q1_pre.
                for j in 0..m {
                    let crow = &cout[j * cfg.d_y..(j + 1) * cfg.d_y];
                    let arow = &mut mc2[j * c..(j + 1) * c];
                    for (o, a) in arow.iter_mut().enumerate() {
                        *a = dot(crow, &self.q2_w[o * cfg.d_y..(o + 1) * cfg.d_y]);
                    }
                }
                if let Some(g) = grads.as_deref_mut() {
                    accumulate_linear_grads(
                        &tape.q1_act,
                        cout,
                        cfg.d_y,
                        c,
                        &mut g.q2_w,
                        &mut g.q2_b,
                    );
                }
                activation_backward(cfg.activation, &tape.q1_pre, &tape.q1_tanh, mc2);
                if let Some(g) = grads.as_deref_mut() {
                    accumulate_linear_grads(
                        &tape.v[cfg.layers],
                        mc2,
                        c,
                        c,
                        &mut g.q1_w,
                        &mut g.q1_b,
                    );
                }
                for j in 0..m {
                    let crow = &mc2[j * c..(j + 1) * c];
                    let vrow = &mut mc1[j * c..(j + 1) * c];
                    for (ci, v) in vrow.iter_mut().enumerate() {
                        *v = dot(crow, &self.q1_w[ci * c..(ci + 1) * c]);
                    }
                }
            }
            Projection::Linear => {
                if let Some(g) = grads.as_deref_mut() {
                    accumulate_linear_grads(
                        &tape.v[cfg.layers],
                        cout,
                        cfg.d_y,
                        c,
                        &mut g.q2_w,
                        &mut g.q2_b,
                    );
                }
                for j in 0..m {
                    let crow = &cout[j * cfg.d_y..(j + 1) * cfg.d_y];
                    let vrow = &mut mc1[j * c..(j + 1) * c];
                    for (ci, v) in vrow.iter_mut().enumerate() {
                        *v = dot(crow, &self.q2_w[ci * cfg.d_y..(ci + 1) * cfg.d_y]);
                    }
                }
            }
        }

        // Blocks in reverse; mc1 enters as d/d v_{l+1}, leaves as d/d v_l.
        for l in (0..cfg.layers).rev() {
            let blk = &self.blocks[l];
            activation_backward(cfg.activation, &tape.pre[l], &tape.tanh_u[l], mc1);
            let cpre = &*mc1;
            if let Some(g) = grads.as_deref_mut() {
                let gb = &mut g.blocks[l];
                accumulate_linear_grads(&tape.v[l], cpre, c, c, &mut gb.w, &mut gb.b);
            }
            // Synthesis backward (adjoint of expand with weights g).
            reset(kc1_re, cfg.modes * c);
            reset(kc1_im, cfg.modes * c);
            contract(cpre, c, tab, &tab.g, kc1_re, kc1_im);
            if let Some(g) = grads.as_deref_mut() {
                let gb = &mut g.blocks[l];
                for k in 0..cfg.modes {
                    for ci in 0..c {
                        let zr = tape.z_re[l][k * c + ci];
                        let zi = tape.z_im[l][k * c + ci];
                        let base = (k * c + ci) * c;
                        let cr = &kc1_re[k * c..(k + 1) * c];
                        let cim = &kc1_im[k * c..(k + 1) * c];
                        crate::linalg::axpy2(&mut gb.r_re[base..base + c], zr, cr, zi, cim);
                        crate::linalg::axpy2(&mut gb.r_im[base..base + c], zr, cim, -zi, cr);
                    }
                }
            }
            // Mixing backward: cz = czp R^H (split-plane form).
            reset(kc2_re, cfg.modes * c);
            reset(kc2_im, cfg.modes * c);
            for k in 0..cfg.modes {
                let cr = &kc1_re[k * c..(k + 1) * c];
                let cim = &kc1_im[k * c..(k + 1) * c];
                for ci in 0..c {
                    let base = (k * c + ci) * c;
                    let rr = &blk.r_re[base..base + c];
                    let ri = &blk.r_im[base..base + c];
                    kc2_re[k * c + ci] = dot(cr, rr) + dot(cim, ri);
                    kc2_im[k * c + ci] = dot(cim, rr) - dot(cr, ri);
                }
            }
            // Analysis backward (adjoint of contract with unit weights) plus
            // the W path -> mc2 = d/d v_l.
            reset(mc2, m * c);
            expand(kc2_re, kc2_im, c, tab, &tab.ones, mc2);
            for j in 0..m {
                let crow = &cpre[j * c..(j + 1) * c];
                let vrow = &mut mc2[j * c..(j + 1) * c];
                for (ci, v) in vrow.iter_mut().enumerate() {
                    *v += dot(crow, &blk.w[ci * c..(ci + 1) * c]);
                }
            }
            std::mem::swap(mc1, mc2);
        }

        // Lifting backward.
        if let Some(g) = grads.as_deref_mut() {
            accumulate_linear_grads(&tape.lift_in, mc1, c, cfg.lift_in_dim(), &mut g.p_w, &mut g.p_b);
        }
        if let Some((row, out)) = input_grad {
            if row >= m {
                return Err(Error::Config(format!("input gradient row {row} >= m ({m})")));
            }
            if out.len() != cfg.d_u {
                return Err(Error::Config("input gradient buffer must be d_u long".into()));
            }
            let crow = &mc1[row * c..(row + 1) * c];
            for (du, o) in out.iter_mut().enumerate() {
                *o = dot(crow, &self.p_w[du * c..(du + 1) * c]);
            }
        }
        Ok(())
    }

    /// Directional derivative of the output row `row` with respect to the
    /// input row `row` only (forward mode through the recorded graph).
    pub fn output_jvp(
        &self,
        u: &[S],
        m: usize,
        row: usize,
        dir: &[S],
        ws: &mut FnoWorkspace<S>,
    ) -> Result<Vec<S>> {
        self.forward(u, m, ws)?;
        self.output_jvp_from_tape(row, dir, ws)
    }

    /// Tangent pass reusing the tape of the latest `forward`.
    pub fn output_jvp_from_tape(
        &self,
        row: usize,
        dir: &[S],
        ws: &mut FnoWorkspace<S>,
    ) -> Result<Vec<S>> {
        let cfg = &self.cfg;
        let m = ws.tape.m;
        if m == 0 {
            return Err(Error::Config("jvp without a recorded forward".into()));
        }
        if row >= m {
            return Err(Error::Config(format!("jvp row {row} >= m ({m})")));
        }
        if dir.len() != cfg.d_u {
            return Err(Error::Config("direction must be d_u long".into()));
        }
        let c = cfg.channels;
        let FnoWorkspace {
            cache,
            tape,
            mc1,
            mc2,
            kc1_re,
            kc1_im,
            kc2_re,
            kc2_im,
            row_buf,
        } = ws;
        let tab = cache.get(m);

        // Tangent of the lift: a single nonzero row (the time channel is
        // constant, so its tangent is zero).
        reset(mc1, m * c);
        {
            let vrow = &mut mc1[row * c..(row + 1) * c];
            for (du, &d) in dir.iter().enumerate() {
                axpy(vrow, d, &self.p_w[du * c..(du + 1) * c]);
            }
        }

        for (l, blk) in self.blocks.iter().enumerate() {
            reset(kc1_re, cfg.modes * c);
            reset(kc1_im, cfg.modes * c);
            contract(mc1, c, tab, &tab.ones, kc1_re, kc1_im);
            reset(kc2_re, cfg.modes * c);
            reset(kc2_im, cfg.modes * c);
            mix(kc1_re, kc1_im, &blk.r_re, &blk.r_im, cfg.modes, c, kc2_re, kc2_im);
            reset(mc2, m * c);
            for j in 0..m {
                let trow = &mut mc2[j * c..(j + 1) * c];
                for (ci, &x) in mc1[j * c..(j + 1) * c].iter().enumerate() {
                    axpy(trow, x, &blk.w[ci * c..(ci + 1) * c]);
                }
            }
            expand(kc2_re, kc2_im, c, tab, &tab.g, mc2);
            activation_backward(cfg.activation, &tape.pre[l], &tape.tanh_u[l], mc2);
            std::mem::swap(mc1, mc2);
        }

        // Pointwise projection: only the queried row matters.
        let mut out = vec![S::zero(); cfg.d_y];
        match cfg.projection {
            Projection::TwoLayer => {
                reset(row_buf, c);
                let vrow = &mc1[row * c..(row + 1) * c];
                for (ci, &x) in vrow.iter().enumerate() {
                    axpy(row_buf, x, &self.q1_w[ci * c..(ci + 1) * c]);
                }
                match cfg.activation {
                    Activation::Gelu => {
                        for (o, t) in row_buf.iter_mut().enumerate() {
                            let idx = row * c + o;
                            *t = *t * gelu_dx(tape.q1_pre[idx], tape.q1_tanh[idx]);
                        }
                    }
                    Activation::Identity => {}
                }
                for (ci, &x) in row_buf.iter().enumerate() {
                    axpy(&mut out, x, &self.q2_w[ci * cfg.d_y..(ci + 1) * cfg.d_y]);
                }
            }
            Projection::Linear => {
                let vrow = &mc1[row * c..(row + 1) * c];
                for (ci, &x) in vrow.iter().enumerate() {
                    axpy(&mut out, x, &self.q2_w[ci * cfg.d_y..(ci + 1) * cfg.d_y]);
                }
            }
        }
        Ok(out)
    }

    /// d<wy, out[row]>/d u[row]: one reverse pass with a single-row cotangent.
    /// Equals `wy^T G` where G is the row Jacobian `output_jvp` probes.
    pub fn output_vjp(
        &self,
        u: &[S],
        m: usize,
        row: usize,
        wy: &[S],
        ws: &mut FnoWorkspace<S>,
    ) -> Result<Vec<S>> {
        if wy.len() != self.cfg.d_y {
            return Err(Error::Config("output weight must be d_y long".into()));
        }
        self.forward(u, m, ws)?;
        self.output_vjp_from_tape(row, wy, ws)
    }

    /// VJP over the tape of the latest `forward`.
    pub fn output_vjp_from_tape(
        &self,
        row: usize,
        wy: &[S],
        ws: &mut FnoWorkspace<S>,
    ) -> Result<Vec<S>> {
        let m = ws.tape.m;
        let mut cout = vec![S::zero(); m * self.cfg.d_y];
        cout[row * self.cfg.d_y..(row + 1) * self.cfg.d_y].copy_from_slice(wy);
        let mut a = vec![S::zero(); self.cfg.d_u];
        self.backward(&cout, ws, None, Some((row, &mut a)))?;
        Ok(a)
    }
}

/// out[j] = rows[j] W + b with W layout [in][out_dim].
fn project_rows<S: Real>(
    rows: &[S],
    w: &[S],
    b: &[S],
    d_out: usize,
    d_in: usize,
    out: &mut [S],
) {
    for (j, orow) in out.chunks_exact_mut(d_out).enumerate() {
        orow.copy_from_slice(b);
        for (ci, &x) in rows[j * d_in..(j + 1) * d_in].iter().enumerate() {
            axpy(orow, x, &w[ci * d_out..(ci + 1) * d_out]);
        }
    }
}

/// cw[in][out] += sum_j in[j][in] c[j][out]; cb[out] += sum_j c[j][out].
fn accumulate_linear_grads<S: Real>(
    input: &[S],
    cot: &[S],
    d_out: usize,
    d_in: usize,
    cw: &mut [S],
    cb: &mut [S],
) {
    for (j, crow) in cot.chunks_exact(d_out).enumerate() {
        axpy(cb, S::one(), crow);
        for (ci, &x) in input[j * d_in..(j + 1) * d_in].iter().enumerate() {
            axpy(&mut cw[ci * d_out..(ci + 1) * d_out], x, crow);
        }
    }
}

/// In place: cot[i] *= sigma'(pre[i]) using the taped tanh values.
fn activation_backward<S: Real>(act: Activation, pre: &[S], tanh_u: &[S], cot: &mut [S]) {
    match act {
        Activation::Gelu => {
            for ((c, &x), &t) in cot.iter_mut().zip(pre).zip(tanh_u) {
                *c = *c * gelu_dx(x, t);
            }
        }
        Activation::Identity => {}
    }
}
