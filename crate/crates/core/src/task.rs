//! Task definitions: safe sets over the boundary output, noisy base policies,
//! and the rollout loop that drives a plant under any controller.

use crate::error::{Error, Result};
use crate::pde_plant::{self, InitialField, PlantParams, CHANNELS};
use crate::scalar::Real;
use rand::Rng;

#[derive(Debug, Clone)]
pub enum SafeSet<S> {
    /// Closed per-dimension intervals.
    Box { lo: [S; CHANNELS], hi: [S; CHANNELS] },
    /// |Y1 - Y2| < delta (strict).
    Distance { delta: S },
}

impl<S: Real> SafeSet<S> {
    pub fn validate(&self) -> Result<()> {
        match self {
            SafeSet::Box { lo, hi } => {
                for j in 0..CHANNELS {
                    if !(lo[j] < hi[j]) {
                        return Err(Error::Config(format!(
                            "box interval {j} empty: [{}, {}]",
                            lo[j], hi[j]
                        )));
                    }
                }
                Ok(())
            }
            SafeSet::Distance { delta } => {
                if *delta > S::zero() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("distance threshold {delta} <= 0")))
                }
            }
        }
    }
}

pub fn safe_contains<S: Real>(s: &SafeSet<S>, y: &[S; CHANNELS]) -> bool {
    match s {
        SafeSet::Box { lo, hi } => (0..CHANNELS).all(|j| y[j] >= lo[j] && y[j] <= hi[j]),
        SafeSet::Distance { delta } => (y[0] - y[1]).abs() < *delta,
    }
}

#[derive(Debug, Clone)]
pub enum PolicyKind<S> {
    /// Per channel j: u_j = clip(k_p (setpoint_j - Y_j) + eta_j) when the
    /// error exceeds the deadband d, else 0.
    DeadbandProportional { setpoint: [S; CHANNELS], d: S },
    /// Track r(t) = center + amp (cos(2 pi t rho / period), sin(...)).
    PeriodicTracking {
        center: [S; CHANNELS],
        amp: S,
        period: S,
        rho: S,
    },
}

#[derive(Debug, Clone)]
pub struct PolicyParams<S> {
    pub kind: PolicyKind<S>,
    pub k_p: S,
    /// Std of the Gaussian control noise, per channel.
    pub noise_sigma: S,
    pub clip: [S; 2],
}

impl<S: Real> PolicyParams<S> {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip[0] < self.clip[1]) {
            return Err(Error::Config(format!(
                "empty clip range [{}, {}]",
                self.clip[0], self.clip[1]
            )));
        }
        if self.noise_sigma < S::zero() {
            return Err(Error::Config("noise_sigma must be >= 0".into()));
        }
        if let PolicyKind::PeriodicTracking { period, .. } = &self.kind {
            if !(*period > S::zero()) {
                return Err(Error::Config(format!("period {period} <= 0")));
            }
        }
        Ok(())
    }
}

/// Nominal control. Noise is drawn for every channel on every call — also
/// inside the deadband — so matched-seed streams stay aligned no matter which
/// branch a variant takes.
pub fn base_policy<S: Real, R: Rng + ?Sized>(
    p: &PolicyParams<S>,
    y: &[S; CHANNELS],
    t: S,
    rng: &mut R,
) -> [S; CHANNELS] {
    let eta = [
        S::sample_standard_normal(rng) * p.noise_sigma,
        S::sample_standard_normal(rng) * p.noise_sigma,
    ];
    let clip = |v: S| v.max(p.clip[0]).min(p.clip[1]);
    let mut u = [S::zero(); CHANNELS];
    match &p.kind {
        PolicyKind::DeadbandProportional { setpoint, d } => {
            for j in 0..CHANNELS {
                let e = setpoint[j] - y[j];
                if e.abs() > *d {
                    u[j] = clip(p.k_p * e + eta[j]);
                }
            }
        }
        PolicyKind::PeriodicTracking {
            center,
            amp,
            period,
            rho,
        } => {
            let th = S::of(2.0 * std::f64::consts::PI) * t * *rho / *period;
            let r = [center[0] + *amp * th.cos(), center[1] + *amp * th.sin()];
            for j in 0..CHANNELS {
                u[j] = clip(p.k_p * (r[j] - y[j]) + eta[j]);
            }
        }
    }
    u
}

#[derive(Debug, Clone)]
pub struct TaskSpec<S> {
    pub name: String,
    pub plant: PlantParams<S>,
    pub n_grid: usize,
    pub z0: InitialField<S>,
    pub safe_set: SafeSet<S>,
    pub policy: PolicyParams<S>,
    /// Control steps per rollout.
    pub m: usize,
    pub dt: S,
    pub seed: u64,
}

impl<S: Real> TaskSpec<S> {
    pub fn validate(&self) -> Result<()> {
        self.safe_set.validate()?;
        self.policy.validate()?;
        if !(self.dt > S::zero()) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if self.m < 2 {
            return Err(Error::Config("horizon M must be >= 2".into()));
        }
        Ok(())
    }
}

/// One recorded control step; the output is observed before the control is
/// applied, so y is the plant state at t and u acts over [t, t + dt).
#[derive(Debug, Clone, Copy)]
pub struct StepRecord<S> {
    pub t: S,
    pub u: [S; CHANNELS],
    pub y: [S; CHANNELS],
}

/// Simulate M steps of `spec` under `controller(y_i, t_i, u_prev) -> u_i`.
pub fn rollout<S: Real>(
    spec: &TaskSpec<S>,
    mut controller: impl FnMut(&[S; CHANNELS], S, &[S; CHANNELS]) -> [S; CHANNELS],
) -> Result<Vec<StepRecord<S>>> {
    spec.validate()?;
    let mut state = pde_plant::plant_init(&spec.plant, spec.n_grid, &spec.z0, spec.dt)?;
    let mut records = Vec::with_capacity(spec.m);
    let mut u_prev = [S::zero(); CHANNELS];
    for i in 0..spec.m {
        let t = S::of(i as f64) * spec.dt;
        let y = pde_plant::plant_output(&state);
        let u = controller(&y, t, &u_prev);
        records.push(StepRecord { t, u, y });
        pde_plant::plant_step(&mut state, &spec.plant, &u, spec.dt)?;
        u_prev = u;
    }
    Ok(records)
}
