//! First-order optimizers over flat tensor lists. Both follow the PyTorch
//! update rules exactly (bias correction, decoupled vs. coupled weight decay)
//! so published hyperparameters transfer unchanged.

use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for AdamWSettings {
    fn default() -> Self {
        AdamWSettings {
            lr: 1e-3,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 200,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NAdamSettings {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for NAdamSettings {
    fn default() -> Self {
        NAdamSettings {
            lr: 0.01,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 300,
            batch_size: 256,
        }
    }
}

/// AdamW with decoupled weight decay: theta *= (1 - lr wd) before the Adam
/// step, decay never enters the moment estimates.
#[derive(Debug)]
pub struct AdamW<S> {
    lr: f64,
    wd: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u32,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Real> AdamW<S> {
    pub fn new(s: &AdamWSettings) -> Self {
        AdamW {
            lr: s.lr,
            wd: s.weight_decay,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: s.eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Vec<S>], grads: &[&Vec<S>]) -> Result<()> {
        ensure_state(&mut self.m, &mut self.v, params, grads)?;
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let (c1, c2) = (S::of(1.0 - self.beta1), S::of(1.0 - self.beta2));
        let decay = S::of(1.0 - self.lr * self.wd);
        let lr1 = S::of(self.lr / bc1);
        let ibc2 = S::of(1.0 / bc2);
        let eps = S::of(self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i];
                p[i] *= decay;
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                let vhat = (v[i] * ibc2).sqrt() + eps;
                p[i] -= lr1 * m[i] / vhat;
            }
        }
        Ok(())
    }
}

/// NAdam (Nesterov-momentum Adam) with the PyTorch schedule
/// mu_t = beta1 (1 - 0.5 * 0.96^(t psi)), psi = 0.004, and coupled (L2-style)
/// weight decay folded into the gradient.
#[derive(Debug)]
pub struct NAdam<S> {
    lr: f64,
    wd: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    psi: f64,
    t: u32,
    mu_product: f64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Real> NAdam<S> {
    pub fn new(s: &NAdamSettings) -> Self {
        NAdam {
            lr: s.lr,
            wd: s.weight_decay,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: s.eps,
            psi: 0.004,
            t: 0,
            mu_product: 1.0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Vec<S>], grads: &[&Vec<S>]) -> Result<()> {
        ensure_state(&mut self.m, &mut self.v, params, grads)?;
        self.t += 1;
        let t = self.t as f64;
        let mu_t = self.beta1 * (1.0 - 0.5 * 0.96f64.powf(t * self.psi));
        let mu_next = self.beta1 * (1.0 - 0.5 * 0.96f64.powf((t + 1.0) * self.psi));
        self.mu_product *= mu_t;
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (S::of(self.beta1), S::of(self.beta2));
        let (c1, c2) = (S::of(1.0 - self.beta1), S::of(1.0 - self.beta2));
        let wd = S::of(self.wd);
        // theta -= lr [ mu_{t+1} m / (1 - prod_{<=t+1} mu) + (1 - mu_t) g / (1 - prod_{<=t} mu) ] / (sqrt(vhat) + eps)
        let wm = S::of(self.lr * mu_next / (1.0 - self.mu_product * mu_next));
        let wg = S::of(self.lr * (1.0 - mu_t) / (1.0 - self.mu_product));
        let ibc2 = S::of(1.0 / bc2);
        let eps = S::of(self.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                let denom = (v[i] * ibc2).sqrt() + eps;
                p[i] -= (wm * m[i] + wg * gi) / denom;
            }
        }
        Ok(())
    }
}

fn ensure_state<S: Real>(
    m: &mut Vec<Vec<S>>,
    v: &mut Vec<Vec<S>>,
    params: &[&mut Vec<S>],
    grads: &[&Vec<S>],
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Config(format!(
            "optimizer got {} parameter tensors but {} gradient tensors",
            params.len(),
            grads.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.len() != g.len() {
            return Err(Error::Config(
                "parameter/gradient tensor shape mismatch".into(),
            ));
        }
    }
    if m.is_empty() {
        *m = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
        *v = params.iter().map(|p| vec![S::zero(); p.len()]).collect();
    } else if m.len() != params.len() {
        return Err(Error::Config(
            "optimizer state does not match parameter list".into(),
        ));
    }
    Ok(())
}
