//! Learned boundary barrier function phi(t, Y): a small tanh MLP over the
//! stacked input [t, Y]. Sign convention: phi <= 0 means Y is inside the safe
//! set at time t. Training penalizes sign errors on labeled rollout samples
//! plus violations of the decrease condition
//! phidot + alpha phi + C phi(t0, Y0) <= 0 on safe samples, which requires
//! differentiating through the model's own input gradients (double backprop).

use crate::error::{Error, Result};
use crate::linalg::{axpy, axpy2, dot, fill};
use crate::opt::{NAdam, NAdamSettings};
use crate::pde_plant::CHANNELS;
use crate::scalar::Real;
use crate::task::{safe_contains, SafeSet};
use crate::dataset::Trajectory;
use rand::Rng;

pub const STANDARD_HIDDEN: [usize; 4] = [32, 128, 64, 32];

#[derive(Debug, Clone)]
pub struct BarrierModel<S> {
    /// Layer widths including input (1 + d_y) and scalar output.
    pub widths: Vec<usize>,
    /// Per layer, row-major [out][in].
    pub w: Vec<Vec<S>>,
    pub b: Vec<Vec<S>>,
    /// Class-K gain of the decrease condition.
    pub alpha: S,
    /// Finite-time convergence gain.
    pub c_gain: S,
}

#[derive(Debug, Clone)]
pub struct BarrierGrads<S> {
    w: Vec<Vec<S>>,
    b: Vec<Vec<S>>,
}

impl<S: Real> BarrierModel<S> {
    /// Zero-initialized model with custom widths (first entry is the input
    /// dimension 1 + d_y, last must be 1).
    pub fn with_widths(widths: &[usize], alpha: S, c_gain: S) -> Result<Self> {
        if widths.len() < 2 || *widths.last().unwrap() != 1 {
            return Err(Error::Config(
                "barrier widths need >= 2 entries and a scalar output".into(),
            ));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("barrier widths must be positive".into()));
        }
        if alpha <= S::zero() || c_gain < S::zero() {
            return Err(Error::Config("barrier needs alpha > 0 and C >= 0".into()));
        }
        let w = widths
            .windows(2)
            .map(|p| vec![S::zero(); p[0] * p[1]])
            .collect();
        let b = widths[1..].iter().map(|&n| vec![S::zero(); n]).collect();
        Ok(BarrierModel {
            widths: widths.to_vec(),
            w,
            b,
            alpha,
            c_gain,
        })
    }

    /// Standard architecture [1+d_y, 32, 128, 64, 32, 1], zero weights.
    pub fn zeros(d_y: usize, alpha: S, c_gain: S) -> Result<Self> {
        let mut widths = vec![1 + d_y];
        widths.extend_from_slice(&STANDARD_HIDDEN);
        widths.push(1);
        Self::with_widths(&widths, alpha, c_gain)
    }

    /// Standard architecture with uniform +-1/sqrt(fan_in) init.
    pub fn init(d_y: usize, alpha: S, c_gain: S, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(d_y, alpha, c_gain)?;
        let mut rng = crate::seed::stream(seed, "bcbf-init", 0);
        for (k, (w, b)) in model.w.iter_mut().zip(model.b.iter_mut()).enumerate() {
            let bound = 1.0 / (model.widths[k] as f64).sqrt();
            for x in w.iter_mut() {
                *x = S::of(rng.gen_range(-bound..bound));
            }
            for x in b.iter_mut() {
                *x = S::of(rng.gen_range(-bound..bound));
            }
        }
        Ok(model)
    }

    pub fn d_y(&self) -> usize {
        self.widths[0] - 1
    }

    pub fn n_params(&self) -> usize {
        self.w.iter().map(Vec::len).sum::<usize>() + self.b.iter().map(Vec::len).sum::<usize>()
    }

    pub fn grads_zeros(&self) -> BarrierGrads<S> {
        BarrierGrads {
            w: self.w.iter().map(|w| vec![S::zero(); w.len()]).collect(),
            b: self.b.iter().map(|b| vec![S::zero(); b.len()]).collect(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<S>> {
        let mut t = Vec::with_capacity(2 * self.w.len());
        for (w, b) in self.w.iter_mut().zip(self.b.iter_mut()) {
            t.push(w);
            t.push(b);
        }
        t
    }

    /// Read-only view of the parameter tensors, same order as `tensors_mut`.
    pub fn tensors(&self) -> Vec<&Vec<S>> {
        let mut t = Vec::with_capacity(2 * self.w.len());
        for (w, b) in self.w.iter().zip(self.b.iter()) {
            t.push(w);
            t.push(b);
        }
        t
    }

    /// Activations per plane; planes[0] is the input, planes[K] the scalar
    /// output. Hidden planes hold tanh values.
    fn forward_planes(&self, x: &[S], planes: &mut Vec<Vec<S>>) -> S {
        let layers = self.w.len();
        planes.resize_with(layers + 1, Vec::new);
        planes[0].clear();
        planes[0].extend_from_slice(x);
        for k in 0..layers {
            let (prev, rest) = planes.split_at_mut(k + 1);
            let ain = &prev[k];
            let aout = &mut rest[0];
            let n_out = self.widths[k + 1];
            let n_in = self.widths[k];
            aout.clear();
            for o in 0..n_out {
                let z = self.b[k][o] + dot(&self.w[k][o * n_in..(o + 1) * n_in], ain);
                aout.push(if k < layers - 1 { z.tanh() } else { z });
            }
        }
        planes[layers][0]
    }

    /// Primal and tangent pass: returns (phi, directional derivative of phi
    /// along xdot). Tangent planes mirror the activations.
    fn dual_forward_planes(
        &self,
        x: &[S],
        xdot: &[S],
        planes: &mut Vec<Vec<S>>,
        tplanes: &mut Vec<Vec<S>>,
    ) -> (S, S) {
        let layers = self.w.len();
        planes.resize_with(layers + 1, Vec::new);
        tplanes.resize_with(layers + 1, Vec::new);
        planes[0].clear();
        planes[0].extend_from_slice(x);
        tplanes[0].clear();
        tplanes[0].extend_from_slice(xdot);
        for k in 0..layers {
            let (aprev, arest) = planes.split_at_mut(k + 1);
            let (tprev, trest) = tplanes.split_at_mut(k + 1);
            let ain = &aprev[k];
            let tin = &tprev[k];
            let aout = &mut arest[0];
            let tout = &mut trest[0];
            let n_out = self.widths[k + 1];
            let n_in = self.widths[k];
            aout.clear();
            tout.clear();
            for o in 0..n_out {
                let row = &self.w[k][o * n_in..(o + 1) * n_in];
                let z = self.b[k][o] + dot(row, ain);
                let zd = dot(row, tin);
                if k < layers - 1 {
                    let a = z.tanh();
                    aout.push(a);
                    tout.push((S::one() - a * a) * zd);
                } else {
                    aout.push(z);
                    tout.push(zd);
                }
            }
        }
        (planes[layers][0], tplanes[layers][0])
    }

    /// Reverse pass for a plain evaluation; returns the input cotangent and
    /// optionally accumulates parameter gradients scaled by `cphi`.
    fn backward_planes(
        &self,
        planes: &[Vec<S>],
        cphi: S,
        mut grads: Option<&mut BarrierGrads<S>>,
    ) -> Vec<S> {
        let layers = self.w.len();
        let mut ca = vec![cphi];
        for k in (0..layers).rev() {
            let n_out = self.widths[k + 1];
            let n_in = self.widths[k];
            // Through the activation of layer k (final layer is linear).
            let mut cz = ca;
            if k < layers - 1 {
                for (c, &a) in cz.iter_mut().zip(&planes[k + 1]) {
                    *c = *c * (S::one() - a * a);
                }
            }
            if let Some(g) = grads.as_deref_mut() {
                for o in 0..n_out {
                    axpy(&mut g.w[k][o * n_in..(o + 1) * n_in], cz[o], &planes[k]);
                    g.b[k][o] += cz[o];
                }
            }
            let mut cprev = vec![S::zero(); n_in];
            for o in 0..n_out {
                axpy(&mut cprev, cz[o], &self.w[k][o * n_in..(o + 1) * n_in]);
            }
            ca = cprev;
        }
        ca
    }

    /// Reverse pass through the primal + tangent graph with cotangents on
    /// both outputs (double backprop for the decrease-condition loss).
    fn backward_dual_planes(
        &self,
        planes: &[Vec<S>],
        tplanes: &[Vec<S>],
        cphi: S,
        cphidot: S,
        grads: &mut BarrierGrads<S>,
    ) {
        let layers = self.w.len();
        let mut ca = vec![cphi];
        let mut cad = vec![cphidot];
        for k in (0..layers).rev() {
            let n_out = self.widths[k + 1];
            let n_in = self.widths[k];
            let (mut cz, mut czd) = (ca, cad);
            if k < layers - 1 {
                let a = &planes[k + 1];
                let ad = &tplanes[k + 1];
                for o in 0..n_out {
                    let s = S::one() - a[o] * a[o];
                    let two = S::of(2.0);
                    // cz = (1-a^2) ca - 2 a adot cadot; czd = (1-a^2) cadot.
                    let c = cz[o] * s - two * a[o] * ad[o] * czd[o];
                    czd[o] = czd[o] * s;
                    cz[o] = c;
                }
            }
            for o in 0..n_out {
                axpy2(
                    &mut grads.w[k][o * n_in..(o + 1) * n_in],
                    cz[o],
                    &planes[k],
                    czd[o],
                    &tplanes[k],
                );
                grads.b[k][o] += cz[o];
            }
            let mut cprev = vec![S::zero(); n_in];
            let mut cprevd = vec![S::zero(); n_in];
            for o in 0..n_out {
                let row = &self.w[k][o * n_in..(o + 1) * n_in];
                axpy(&mut cprev, cz[o], row);
                axpy(&mut cprevd, czd[o], row);
            }
            ca = cprev;
            cad = cprevd;
        }
    }

    /// phi(t, Y).
    pub fn eval(&self, t: S, y: &[S]) -> S {
        let mut x = vec![t];
        x.extend_from_slice(y);
        let mut planes = Vec::new();
        self.forward_planes(&x, &mut planes)
    }

    /// (phi, dphi/dt, dphi/dY) — exact reverse-mode input gradients.
    pub fn eval_grad(&self, t: S, y: &[S]) -> (S, S, Vec<S>) {
        let mut x = vec![t];
        x.extend_from_slice(y);
        let mut planes = Vec::new();
        let phi = self.forward_planes(&x, &mut planes);
        let cin = self.backward_planes(&planes, S::one(), None);
        (phi, cin[0], cin[1..].to_vec())
    }
}

impl<S: Real> BarrierGrads<S> {
    pub fn zero(&mut self) {
        for t in self.w.iter_mut().chain(self.b.iter_mut()) {
            fill(t, S::zero());
        }
    }

    pub fn tensors(&self) -> Vec<&Vec<S>> {
        let mut t = Vec::with_capacity(2 * self.w.len());
        for (w, b) in self.w.iter().zip(self.b.iter()) {
            t.push(w);
            t.push(b);
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierSample<S> {
    pub t: S,
    pub y: [S; CHANNELS],
    /// Finite-difference dY/dt: central in the interior, one-sided at the
    /// trajectory endpoints.
    pub ydot: [S; CHANNELS],
    pub safe: bool,
    pub t0: S,
    pub y0: [S; CHANNELS],
}

/// One sample per recorded time point of every trajectory.
pub fn make_barrier_samples<S: Real>(
    trajs: &[Trajectory<S>],
    safe_set: &SafeSet<S>,
) -> Result<Vec<BarrierSample<S>>> {
    let dt = match trajs.first() {
        Some(t) => t.dt,
        None => return Ok(Vec::new()),
    };
    let mut out = Vec::with_capacity(trajs.iter().map(Trajectory::len).sum());
    for traj in trajs {
        if (traj.dt - dt).abs() > S::of(1e-12) {
            return Err(Error::Config(format!(
                "trajectory {} has dt {} but the batch uses {}",
                traj.task_id, traj.dt, dt
            )));
        }
        let m = traj.len();
        if m < 2 {
            return Err(Error::Config(format!(
                "trajectory {} has {m} steps; need at least 2 for finite differences",
                traj.task_id
            )));
        }
        let t0 = traj.t[0];
        let y0 = traj.y[0];
        for i in 0..m {
            let mut ydot = [S::zero(); CHANNELS];
            for ch in 0..CHANNELS {
                ydot[ch] = if i == 0 {
                    (traj.y[1][ch] - traj.y[0][ch]) / dt
                } else if i == m - 1 {
                    (traj.y[m - 1][ch] - traj.y[m - 2][ch]) / dt
                } else {
                    (traj.y[i + 1][ch] - traj.y[i - 1][ch]) / (S::of(2.0) * dt)
                };
            }
            out.push(BarrierSample {
                t: traj.t[i],
                y: traj.y[i],
                ydot,
                safe: safe_contains(safe_set, &traj.y[i]),
                t0,
                y0,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcbfLossSettings {
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub lambda_d: f64,
    /// Classification margin gamma.
    pub gamma: f64,
}

impl Default for BcbfLossSettings {
    fn default() -> Self {
        BcbfLossSettings {
            lambda_s: 1.0,
            lambda_u: 1.0,
            lambda_d: 0.5,
            gamma: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcbfLogRow {
    pub epoch: usize,
    pub loss: f64,
    /// Fraction of samples with sign(phi) matching the label.
    pub sign_agreement: f64,
    /// Fraction of safe samples violating the decrease condition.
    pub deriv_violation: f64,
}

/// Full-set loss value (means over safe / unsafe subsets; empty means are 0).
pub fn bcbf_loss<S: Real>(
    model: &BarrierModel<S>,
    samples: &[BarrierSample<S>],
    cfg: &BcbfLossSettings,
) -> f64 {
    let mut planes = Vec::new();
    let mut tplanes = Vec::new();
    let (mut s_sum, mut u_sum, mut d_sum) = (0.0f64, 0.0f64, 0.0f64);
    let (mut n_s, mut n_u) = (0usize, 0usize);
    for s in samples {
        let (x, xdot) = sample_inputs(s);
        let (phi, phidot) = model.dual_forward_planes(&x, &xdot, &mut planes, &mut tplanes);
        if s.safe {
            n_s += 1;
            s_sum += (phi.as_f64() + cfg.gamma).max(0.0);
            let mut x0 = vec![s.t0];
            x0.extend_from_slice(&s.y0);
            let phi0 = model.forward_planes(&x0, &mut planes);
            let viol = phidot + model.alpha * phi + model.c_gain * phi0;
            d_sum += viol.as_f64().max(0.0);
        } else {
            n_u += 1;
            u_sum += (cfg.gamma - phi.as_f64()).max(0.0);
        }
    }
    let mean = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
    cfg.lambda_s * mean(s_sum, n_s) + cfg.lambda_u * mean(u_sum, n_u) + cfg.lambda_d * mean(d_sum, n_s)
}

/// Full-batch loss gradients; the batch-local means coincide with
/// `bcbf_loss` when the chunk is the whole sample set.
pub fn bcbf_loss_grads<S: Real>(
    model: &BarrierModel<S>,
    samples: &[BarrierSample<S>],
    cfg: &BcbfLossSettings,
) -> BarrierGrads<S> {
    let chunk: Vec<usize> = (0..samples.len()).collect();
    let mut grads = model.grads_zeros();
    let mut scratch = TrainScratch::default();
    chunk_loss_grads(model, samples, &chunk, cfg, &mut grads, &mut scratch);
    grads
}

/// Sign agreement and derivative-violation rate over a sample set.
pub fn bcbf_metrics<S: Real>(
    model: &BarrierModel<S>,
    samples: &[BarrierSample<S>],
) -> (f64, f64) {
    let mut planes = Vec::new();
    let mut tplanes = Vec::new();
    let mut agree = 0usize;
    let (mut n_s, mut viol) = (0usize, 0usize);
    for s in samples {
        let (x, xdot) = sample_inputs(s);
        let (phi, phidot) = model.dual_forward_planes(&x, &xdot, &mut planes, &mut tplanes);
        if (phi <= S::zero()) == s.safe {
            agree += 1;
        }
        if s.safe {
            n_s += 1;
            let mut x0 = vec![s.t0];
            x0.extend_from_slice(&s.y0);
            let phi0 = model.forward_planes(&x0, &mut planes);
            if phidot + model.alpha * phi + model.c_gain * phi0 > S::zero() {
                viol += 1;
            }
        }
    }
    let n = samples.len().max(1);
    (agree as f64 / n as f64, viol as f64 / n_s.max(1) as f64)
}

fn sample_inputs<S: Real>(s: &BarrierSample<S>) -> (Vec<S>, Vec<S>) {
    let mut x = vec![s.t];
    x.extend_from_slice(&s.y);
    let mut xdot = vec![S::one()];
    xdot.extend_from_slice(&s.ydot);
    (x, xdot)
}

/// Train the barrier with NAdam on the hinge surrogate. Loss means are per
/// minibatch; the per-epoch log aggregates training loss and running
/// sign/derivative statistics.
pub fn train_bcbf<S: Real>(
    samples: &[BarrierSample<S>],
    model_init: BarrierModel<S>,
    loss_cfg: &BcbfLossSettings,
    opt: &NAdamSettings,
    seed: u64,
) -> Result<(BarrierModel<S>, Vec<BcbfLogRow>)> {
    if samples.is_empty() {
        return Err(Error::Config("no barrier samples".into()));
    }
    if samples.iter().all(|s| s.safe) || samples.iter().all(|s| !s.safe) {
        // Still trainable (empty means are zero) but almost surely a task
        // configuration bug; surface it early.
        return Err(Error::Config(
            "barrier samples need both safe and unsafe labels".into(),
        ));
    }
    let mut model = model_init;
    let mut grads = model.grads_zeros();
    let mut optimizer = NAdam::<S>::new(opt);
    let mut rng = crate::seed::stream(seed, "bcbf-train", 0);
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    let mut scratch = TrainScratch::default();
    let mut log = Vec::with_capacity(opt.epochs);

    for epoch in 0..opt.epochs {
        // Fisher-Yates reshuffle each epoch.
        for i in (1..idx.len()).rev() {
            let j = rng.gen_range(0..=i);
            idx.swap(i, j);
        }
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        let mut agree = 0usize;
        let (mut n_safe_total, mut viol_total) = (0usize, 0usize);
        for chunk in idx.chunks(opt.batch_size.max(1)) {
            grads.zero();
            let stats = chunk_loss_grads(&model, samples, chunk, loss_cfg, &mut grads, &mut scratch);
            agree += stats.agree;
            n_safe_total += stats.n_safe;
            viol_total += stats.viol;
            let lf = stats.loss.as_f64();
            if !lf.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite barrier loss at epoch {epoch}, batch {batches}"
                )));
            }
            epoch_loss += lf;
            batches += 1;
            let g = grads.tensors();
            let mut p = model.tensors_mut();
            optimizer.step(&mut p, &g)?;
        }
        log.push(BcbfLogRow {
            epoch,
            loss: epoch_loss / batches.max(1) as f64,
            sign_agreement: agree as f64 / samples.len() as f64,
            deriv_violation: viol_total as f64 / n_safe_total.max(1) as f64,
        });
    }
    Ok((model, log))
}

struct TrainScratch<S> {
    planes: Vec<Vec<S>>,
    tplanes: Vec<Vec<S>>,
    planes0: Vec<Vec<S>>,
}

impl<S> Default for TrainScratch<S> {
    fn default() -> Self {
        TrainScratch {
            planes: Vec::new(),
            tplanes: Vec::new(),
            planes0: Vec::new(),
        }
    }
}

struct ChunkStats<S> {
    loss: S,
    agree: usize,
    n_safe: usize,
    viol: usize,
}

/// Minibatch hinge loss with gradients accumulated into `grads` (caller
/// zeroes). Means are batch-local: each term is weighted by lambda / count
/// over this chunk's safe (resp. unsafe) subset.
fn chunk_loss_grads<S: Real>(
    model: &BarrierModel<S>,
    samples: &[BarrierSample<S>],
    chunk: &[usize],
    loss_cfg: &BcbfLossSettings,
    grads: &mut BarrierGrads<S>,
    scratch: &mut TrainScratch<S>,
) -> ChunkStats<S> {
    let gamma = S::of(loss_cfg.gamma);
    let n_s = chunk.iter().filter(|&&i| samples[i].safe).count();
    let n_u = chunk.len() - n_s;
    let ws = if n_s > 0 { S::of(loss_cfg.lambda_s / n_s as f64) } else { S::zero() };
    let wu = if n_u > 0 { S::of(loss_cfg.lambda_u / n_u as f64) } else { S::zero() };
    let wd = if n_s > 0 { S::of(loss_cfg.lambda_d / n_s as f64) } else { S::zero() };
    let mut stats = ChunkStats {
        loss: S::zero(),
        agree: 0,
        n_safe: 0,
        viol: 0,
    };
    for &i in chunk {
        let s = &samples[i];
        let (x, xdot) = sample_inputs(s);
        let (phi, phidot) =
            model.dual_forward_planes(&x, &xdot, &mut scratch.planes, &mut scratch.tplanes);
        if (phi <= S::zero()) == s.safe {
            stats.agree += 1;
        }
        let mut cphi = S::zero();
        let mut cphidot = S::zero();
        let mut cphi0 = S::zero();
        let mut phi0_planes_used = false;
        if s.safe {
            stats.n_safe += 1;
            if phi + gamma > S::zero() {
                stats.loss += ws * (phi + gamma);
                cphi += ws;
            }
            let mut x0 = vec![s.t0];
            x0.extend_from_slice(&s.y0);
            let phi0 = model.forward_planes(&x0, &mut scratch.planes0);
            phi0_planes_used = true;
            let viol = phidot + model.alpha * phi + model.c_gain * phi0;
            if viol > S::zero() {
                stats.viol += 1;
                stats.loss += wd * viol;
                cphidot += wd;
                cphi += wd * model.alpha;
                cphi0 += wd * model.c_gain;
            }
        } else if gamma - phi > S::zero() {
            stats.loss += wu * (gamma - phi);
            cphi -= wu;
        }
        if cphi != S::zero() || cphidot != S::zero() {
            model.backward_dual_planes(
                &scratch.planes,
                &scratch.tplanes,
                cphi,
                cphidot,
                grads,
            );
        }
        if cphi0 != S::zero() && phi0_planes_used {
            model.backward_planes(&scratch.planes0, cphi0, Some(grads));
        }
    }
    stats
}

/// Barrier-training log CSV.
pub fn write_bcbf_log(path: &std::path::Path, log: &[BcbfLogRow]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "epoch,loss,sign_agreement,deriv_violation")?;
    for r in log {
        writeln!(
            f,
            "{},{:.10e},{:.6},{:.6}",
            r.epoch, r.loss, r.sign_agreement, r.deriv_violation
        )?;
    }
    Ok(())
}
