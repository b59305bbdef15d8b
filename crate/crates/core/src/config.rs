//! TOML experiment files: one file describes a task end to end — plant,
//! safe set, base policy, operator and barrier architecture, filter gains
//! and training recipes. Sections other than [task], [plant], [safe_set]
//! and [policy] are optional and fall back to library defaults.

use crate::bcbf::BcbfLossSettings;
use crate::error::{Error, Result};
use crate::neural_operator::{Activation, FnoConfig, Projection};
use crate::opt::{AdamWSettings, NAdamSettings};
use crate::pde_plant::{InitialField, PlantKind, PlantParams, CHANNELS};
use crate::safety_filter::{FilterConfig, PrefixMode};
use crate::task::{PolicyKind, PolicyParams, SafeSet, TaskSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskSection,
    pub plant: PlantSection,
    pub safe_set: SafeSetSection,
    pub policy: PolicySection,
    #[serde(default)]
    pub operator: OperatorSection,
    #[serde(default)]
    pub barrier: BarrierSection,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub collect: CollectSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    pub name: String,
    /// Steps per rollout.
    pub m: usize,
    pub dt: f64,
    pub seed: u64,
    pub n_grid: usize,
    #[serde(default)]
    pub z0: Z0Section,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Z0Section {
    #[default]
    Zero,
    Const {
        value: [f64; CHANNELS],
    },
    SinPi,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub kind: PlantKind,
    pub nu: [f64; CHANNELS],
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub x_b: f64,
    pub substeps: u32,
}

fn default_kappa() -> f64 {
    0.5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SafeSetSection {
    Box { lo: [f64; CHANNELS], hi: [f64; CHANNELS] },
    Distance { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKindTag {
    Deadband,
    Periodic,
}

/// Per-kind fields stay optional at parse time (serde's flatten cannot be
/// combined with deny_unknown_fields); [`PolicySection::policy_kind`] then
/// enforces exactly the right set for the chosen kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub kind: PolicyKindTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub setpoint: Option<[f64; CHANNELS]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<[f64; CHANNELS]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<f64>,
    pub k_p: f64,
    pub noise_sigma: f64,
    pub clip: [f64; 2],
}

impl PolicySection {
    pub fn policy_kind(&self) -> Result<PolicyKind<f64>> {
        fn need<T: Copy>(v: &Option<T>, name: &str, kind: &str) -> Result<T> {
            v.ok_or_else(|| {
                Error::Config(format!("policy kind '{kind}' requires field '{name}'"))
            })
        }
        fn refuse<T>(v: &Option<T>, name: &str, kind: &str) -> Result<()> {
            if v.is_some() {
                return Err(Error::Config(format!(
                    "field '{name}' does not apply to policy kind '{kind}'"
                )));
            }
            Ok(())
        }
        match self.kind {
            PolicyKindTag::Deadband => {
                refuse(&self.center, "center", "deadband")?;
                refuse(&self.amp, "amp", "deadband")?;
                refuse(&self.period, "period", "deadband")?;
                refuse(&self.rho, "rho", "deadband")?;
                Ok(PolicyKind::DeadbandProportional {
                    setpoint: need(&self.setpoint, "setpoint", "deadband")?,
                    d: need(&self.d, "d", "deadband")?,
                })
            }
            PolicyKindTag::Periodic => {
                refuse(&self.setpoint, "setpoint", "periodic")?;
                refuse(&self.d, "d", "periodic")?;
                Ok(PolicyKind::PeriodicTracking {
                    center: need(&self.center, "center", "periodic")?,
                    amp: need(&self.amp, "amp", "periodic")?,
                    period: need(&self.period, "period", "periodic")?,
                    rho: need(&self.rho, "rho", "periodic")?,
                })
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorSection {
    pub channels: usize,
    pub layers: usize,
    pub modes: usize,
    pub m_min: usize,
    pub m_max: usize,
    pub include_time_channel: bool,
    pub projection: Projection,
}

impl Default for OperatorSection {
    fn default() -> Self {
        let d = FnoConfig::default();
        OperatorSection {
            channels: d.channels,
            layers: d.layers,
            modes: d.modes,
            m_min: d.m_min,
            m_max: d.m_max,
            include_time_channel: d.include_time_channel,
            projection: d.projection,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierSection {
    pub alpha: f64,
    pub c: f64,
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub lambda_d: f64,
    pub gamma: f64,
}

impl Default for BarrierSection {
    fn default() -> Self {
        let l = BcbfLossSettings::default();
        BarrierSection {
            alpha: 1.0,
            c: 0.5,
            lambda_s: l.lambda_s,
            lambda_u: l.lambda_u,
            lambda_d: l.lambda_d,
            gamma: l.gamma,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterSection {
    pub beta: f64,
    pub warmup: usize,
    pub clip_phi0: bool,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            beta: 50.0,
            warmup: FnoConfig::default().m_min,
            clip_phi0: false,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub operator: OperatorTrainingSection,
    pub barrier: BarrierTrainingSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OperatorTrainingSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for OperatorTrainingSection {
    fn default() -> Self {
        let d = AdamWSettings::default();
        OperatorTrainingSection {
            lr: d.lr,
            weight_decay: d.weight_decay,
            epochs: d.epochs,
            batch_size: d.batch_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierTrainingSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Keep at most this many barrier samples (seeded subsample); 0 = all.
    pub max_samples: usize,
}

impl Default for BarrierTrainingSection {
    fn default() -> Self {
        let d = NAdamSettings::default();
        BarrierTrainingSection {
            lr: d.lr,
            weight_decay: d.weight_decay,
            epochs: d.epochs,
            batch_size: d.batch_size,
            max_samples: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSection {
    /// Fraction of collected trajectories held out for testing.
    pub test_fraction: f64,
}

impl Default for CollectSection {
    fn default() -> Self {
        CollectSection { test_fraction: 0.2 }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::Missing(format!("config {}", path.display())))?;
        let cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: None,
            msg: e.to_string(),
        })?;
        cfg.task_spec()?; // surface semantic errors at load time
        Ok(cfg)
    }

    pub fn task_spec(&self) -> Result<TaskSpec<f64>> {
        let z0 = match self.task.z0 {
            Z0Section::Zero => InitialField::Zero,
            Z0Section::Const { value } => InitialField::Const(value),
            Z0Section::SinPi => InitialField::SinPi,
        };
        let safe_set = match self.safe_set {
            SafeSetSection::Box { lo, hi } => SafeSet::Box { lo, hi },
            SafeSetSection::Distance { delta } => SafeSet::Distance { delta },
        };
        let kind = self.policy.policy_kind()?;
        let spec = TaskSpec {
            name: self.task.name.clone(),
            plant: PlantParams {
                kind: self.plant.kind,
                nu: self.plant.nu,
                kappa: self.plant.kappa,
                x_b: self.plant.x_b,
                substeps: self.plant.substeps,
            },
            n_grid: self.task.n_grid,
            z0,
            safe_set,
            policy: PolicyParams {
                kind,
                k_p: self.policy.k_p,
                noise_sigma: self.policy.noise_sigma,
                clip: self.policy.clip,
            },
            m: self.task.m,
            dt: self.task.dt,
            seed: self.task.seed,
        };
        spec.validate()?;
        if self.task.m < self.operator.m_max {
            return Err(Error::Config(format!(
                "rollout length {} is shorter than the operator's m_max {}",
                self.task.m, self.operator.m_max
            )));
        }
        Ok(spec)
    }

    pub fn fno_config(&self) -> FnoConfig {
        FnoConfig {
            channels: self.operator.channels,
            layers: self.operator.layers,
            modes: self.operator.modes,
            d_u: CHANNELS,
            d_y: CHANNELS,
            include_time_channel: self.operator.include_time_channel,
            m_min: self.operator.m_min,
            m_max: self.operator.m_max,
            activation: Activation::Gelu,
            projection: self.operator.projection,
        }
    }

    /// Fixed-horizon ablation: single admitted length = the rollout length.
    pub fn offline_fno_config(&self) -> FnoConfig {
        FnoConfig {
            m_min: self.task.m,
            m_max: self.task.m,
            ..self.fno_config()
        }
    }

    pub fn filter_config(&self, mode: PrefixMode) -> FilterConfig<f64> {
        FilterConfig {
            alpha: Some(self.barrier.alpha),
            c_gain: Some(self.barrier.c),
            beta: self.filter.beta,
            warmup: self.filter.warmup,
            clip_phi0: self.filter.clip_phi0,
            mode,
        }
    }

    pub fn adamw(&self) -> AdamWSettings {
        AdamWSettings {
            lr: self.training.operator.lr,
            weight_decay: self.training.operator.weight_decay,
            epochs: self.training.operator.epochs,
            batch_size: self.training.operator.batch_size,
            ..AdamWSettings::default()
        }
    }

    pub fn nadam(&self) -> NAdamSettings {
        NAdamSettings {
            lr: self.training.barrier.lr,
            weight_decay: self.training.barrier.weight_decay,
            epochs: self.training.barrier.epochs,
            batch_size: self.training.barrier.batch_size,
            ..NAdamSettings::default()
        }
    }

    pub fn bcbf_loss(&self) -> BcbfLossSettings {
        BcbfLossSettings {
            lambda_s: self.barrier.lambda_s,
            lambda_u: self.barrier.lambda_u,
            lambda_d: self.barrier.lambda_d,
            gamma: self.barrier.gamma,
        }
    }
}
