//! Desk-scale 1D PDE plants with Dirichlet boundary actuation.
//!
//! Two channels of a scalar field on [0,1] evolve under explicit FTCS
//! diffusion; the control U sets the left boundary value of each channel at
//! every substep, the right boundary is zero-flux, and the observation is the
//! field value at a fixed interior coordinate x_b. `TransportHeat` runs the two
//! channels independently; `CoupledGather` adds a symmetric relaxation
//! kappa*(z_other - z_this) that pulls the channels together.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Boundary input/output dimension; both plant kinds expose two channels.
pub const CHANNELS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    TransportHeat,
    CoupledGather,
}

#[derive(Debug, Clone)]
pub struct PlantParams<S> {
    pub kind: PlantKind,
    /// Diffusivity per channel.
    pub nu: [S; CHANNELS],
    /// Coupling gain; only read by `CoupledGather`.
    pub kappa: S,
    /// Observation coordinate in (0, 1].
    pub x_b: S,
    /// Simulation substeps per control step.
    pub substeps: u32,
}

impl<S: Real> Default for PlantParams<S> {
    fn default() -> Self {
        PlantParams {
            kind: PlantKind::TransportHeat,
            nu: [S::of(0.1), S::of(0.1)],
            kappa: S::of(0.5),
            x_b: S::of(0.75),
            substeps: 4,
        }
    }
}

/// Initial condition z(x, 0), sampled per channel on the grid.
#[derive(Debug, Clone)]
pub enum InitialField<S> {
    Zero,
    /// Constant value per channel.
    Const([S; CHANNELS]),
    /// sin(pi x) on every channel.
    SinPi,
}

impl<S: Real> InitialField<S> {
    fn value(&self, channel: usize, x: S) -> S {
        match self {
            InitialField::Zero => S::zero(),
            InitialField::Const(c) => c[channel],
            InitialField::SinPi => (S::of(std::f64::consts::PI) * x).sin(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantState<S> {
    /// One spatial field per channel, N nodes each.
    pub fields: [Vec<S>; CHANNELS],
    pub n: usize,
    pub dx: S,
    pub sim_time: S,
    /// Grid index observed by `plant_output`.
    pub obs_index: usize,
    scratch: Vec<S>,
}

impl<S: Real> PlantParams<S> {
    /// Explicit-scheme stability ratio nu * (dt/substeps) / dx^2 for channel c.
    pub fn stability_ratio(&self, c: usize, n: usize, dt: S) -> S {
        let dx = S::one() / S::of((n - 1) as f64);
        self.nu[c] * (dt / S::of(self.substeps as f64)) / (dx * dx)
    }
}

pub fn plant_init<S: Real>(
    params: &PlantParams<S>,
    n: usize,
    z0: &InitialField<S>,
    dt: S,
) -> Result<PlantState<S>> {
    if n < 16 {
        return Err(Error::Config(format!("grid size {n} < 16")));
    }
    if params.substeps < 1 {
        return Err(Error::Config("substeps must be >= 1".into()));
    }
    if dt <= S::zero() {
        return Err(Error::Config("control step dt must be positive".into()));
    }
    for c in 0..CHANNELS {
        let r = params.stability_ratio(c, n, dt);
        if !(r <= S::of(0.5)) {
            return Err(Error::Config(format!(
                "explicit scheme unstable on channel {c}: nu*(dt/substeps)/dx^2 = {} > 0.5 \
                 (nu={}, dt={}, substeps={}, N={})",
                r.as_f64(),
                params.nu[c],
                dt,
                params.substeps,
                n
            )));
        }
    }
    let xb = params.x_b.as_f64();
    if !(xb > 0.0 && xb <= 1.0) {
        return Err(Error::Config(format!("x_b = {xb} outside (0, 1]")));
    }
    let obs_index = (xb * (n - 1) as f64).round() as usize;
    if obs_index == 0 || obs_index >= n {
        return Err(Error::Config(format!(
            "x_b = {xb} maps to boundary/out-of-grid index {obs_index}"
        )));
    }
    let dx = S::one() / S::of((n - 1) as f64);
    let mut fields = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for (c, field) in fields.iter_mut().enumerate() {
        for k in 0..n {
            field.push(z0.value(c, S::of(k as f64) * dx));
        }
    }
    Ok(PlantState {
        fields,
        n,
        dx,
        sim_time: S::zero(),
        obs_index,
        scratch: vec![S::zero(); n],
    })
}

/// Advance one control step (= `substeps` FTCS steps). The boundary value
/// z(0) is clamped to U at every substep; the right edge uses a zero-flux
/// ghost node (z_N = z_{N-1}).
pub fn plant_step<S: Real>(
    state: &mut PlantState<S>,
    params: &PlantParams<S>,
    u: &[S; CHANNELS],
    dt: S,
) -> Result<()> {
    let dts = dt / S::of(params.substeps as f64);
    let inv_dx2 = S::one() / (state.dx * state.dx);
    for _ in 0..params.substeps {
        // Dirichlet actuation.
        for c in 0..CHANNELS {
            state.fields[c][0] = u[c];
        }
        match params.kind {
            PlantKind::TransportHeat => {
                for c in 0..CHANNELS {
                    let r = params.nu[c] * dts * inv_dx2;
                    diffuse(&mut state.fields[c], &mut state.scratch, r);
                }
            }
            PlantKind::CoupledGather => {
                let k = params.kappa * dts;
                let (a, b) = state.fields.split_at_mut(1);
                couple(&mut a[0], &mut b[0], k);
                for c in 0..CHANNELS {
                    let r = params.nu[c] * dts * inv_dx2;
                    diffuse(&mut state.fields[c], &mut state.scratch, r);
                }
            }
        }
    }
    state.sim_time += dt;
    for c in 0..CHANNELS {
        if state.fields[c].iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability(format!(
                "non-finite field value on channel {c} at t = {}",
                state.sim_time
            )));
        }
    }
    Ok(())
}

/// One FTCS diffusion substep with ratio r = nu*dt_sub/dx^2; node 0 is held
/// (Dirichlet), node N-1 sees a zero-flux ghost.
fn diffuse<S: Real>(z: &mut Vec<S>, scratch: &mut Vec<S>, r: S) {
    let n = z.len();
    scratch.clear();
    scratch.extend_from_slice(z);
    let zp = &scratch[..];
    for j in 1..n - 1 {
        z[j] = zp[j] + r * (zp[j + 1] - S::of(2.0) * zp[j] + zp[j - 1]);
    }
    z[n - 1] = zp[n - 1] + r * (zp[n - 2] - zp[n - 1]);
}

/// Symmetric relaxation z1 += k (z2 - z1), z2 += k (z1 - z2) from the same
/// snapshot, applied to every node except the actuated boundary.
fn couple<S: Real>(z1: &mut [S], z2: &mut [S], k: S) {
    for (a, b) in z1.iter_mut().zip(z2.iter_mut()).skip(1) {
        let d = k * (*b - *a);
        *a += d;
        *b -= d;
    }
}

pub fn plant_output<S: Real>(state: &PlantState<S>) -> [S; CHANNELS] {
    [
        state.fields[0][state.obs_index],
        state.fields[1][state.obs_index],
    ]
}
