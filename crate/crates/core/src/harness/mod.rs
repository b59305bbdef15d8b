//! Experiment orchestration: dataset collection, model training entry
//! points, matched-seed evaluation of the base / filtered / offline-filtered
//! variants, and run-directory artifacts (manifest, metrics, per-rollout and
//! per-step CSVs).

mod plot;
mod report;

pub use report::write_report;

use crate::bcbf::{make_barrier_samples, train_bcbf, BarrierModel, BcbfLogRow};
use crate::config::ExperimentConfig;
use crate::dataset::{load_trajectories, save_trajectories, split, Trajectory};
use crate::error::{Error, Result};
use crate::neural_operator::{
    train_no, FnoModel, FnoWorkspace, TrainOutcome,
};
use crate::pde_plant::CHANNELS;
use crate::safety_filter::{
    filter_step, FilterConfig, FilterState, PrefixMode, StepDiagnostics,
};
use crate::scalar::Real;
use crate::task::{base_policy, rollout, safe_contains, SafeSet, StepRecord, TaskSpec};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const RUN_SCHEMA: &str = "opguard-run-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Filtered,
    Offline,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Filtered => "filtered",
            Variant::Offline => "offline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "filtered" => Ok(Variant::Filtered),
            "offline" => Ok(Variant::Offline),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected base|filtered|offline)"
            ))),
        }
    }
}

/// First index k such that Y_j is safe for every j >= k; y.len() when even
/// the final step is unsafe.
pub fn convergence_step<S: Real>(y: &[[S; CHANNELS]], safe: &SafeSet<S>) -> usize {
    let mut k = y.len();
    for i in (0..y.len()).rev() {
        if safe_contains(safe, &y[i]) {
            k = i;
        } else {
            break;
        }
    }
    k
}

pub fn unsafe_count<S: Real>(y: &[[S; CHANNELS]], safe: &SafeSet<S>) -> usize {
    y.iter().filter(|yi| !safe_contains(safe, yi)).count()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Fraction of rollouts whose convergence step is < M.
    pub safe_traj_rate: f64,
    /// Mean convergence step (first index after which the output stays safe).
    pub avg_unsafe_steps: f64,
    /// Mean number of steps with Y outside the safe set.
    pub mean_unsafe_count: f64,
    pub n_rollouts: usize,
    /// Per-rollout policy-noise seeds (matched across variants).
    pub seeds: Vec<u64>,
}

#[derive(Debug)]
pub struct RolloutArtifacts<S> {
    pub index: usize,
    pub noise_seed: u64,
    pub records: Vec<StepRecord<S>>,
    /// Empty for the base variant.
    pub diags: Vec<StepDiagnostics<S>>,
}

/// Metrics over a batch of recorded rollouts — a pure function of the
/// records, so stored runs re-evaluate to identical numbers.
pub fn metrics_from_records<S: Real>(
    rollouts: &[Vec<StepRecord<S>>],
    safe: &SafeSet<S>,
    seeds: Vec<u64>,
) -> EvalMetrics {
    let n = rollouts.len();
    let mut safe_count = 0usize;
    let mut conv_sum = 0.0f64;
    let mut unsafe_sum = 0.0f64;
    for recs in rollouts {
        let y: Vec<[S; CHANNELS]> = recs.iter().map(|r| r.y).collect();
        let k = convergence_step(&y, safe);
        if k < recs.len() {
            safe_count += 1;
        }
        conv_sum += k as f64;
        unsafe_sum += unsafe_count(&y, safe) as f64;
    }
    EvalMetrics {
        safe_traj_rate: if n == 0 { 0.0 } else { safe_count as f64 / n as f64 },
        avg_unsafe_steps: if n == 0 { 0.0 } else { conv_sum / n as f64 },
        mean_unsafe_count: if n == 0 { 0.0 } else { unsafe_sum / n as f64 },
        n_rollouts: n,
        seeds,
    }
}

/// Models a variant needs at rollout time.
#[derive(Clone, Copy)]
pub struct VariantModels<'a> {
    pub fno: Option<&'a FnoModel<f64>>,
    pub bcbf: Option<&'a BarrierModel<f64>>,
}

fn filter_runtime<'a>(
    cfg: &ExperimentConfig,
    variant: Variant,
    models: VariantModels<'a>,
) -> Result<Option<(&'a FnoModel<f64>, &'a BarrierModel<f64>, FilterConfig<f64>)>> {
    match variant {
        Variant::Base => Ok(None),
        Variant::Filtered | Variant::Offline => {
            let fno = models.fno.ok_or_else(|| {
                Error::Missing("operator checkpoint required for this variant".into())
            })?;
            let bcbf = models.bcbf.ok_or_else(|| {
                Error::Missing("barrier checkpoint required for this variant".into())
            })?;
            let mode = match variant {
                Variant::Offline => {
                    let m = cfg.task.m;
                    if fno.cfg.m_min != m || fno.cfg.m_max != m {
                        return Err(Error::Config(format!(
                            "offline variant needs a fixed-horizon operator at M = {m}, \
                             got admitted range [{}, {}] (train with --fixed-horizon)",
                            fno.cfg.m_min, fno.cfg.m_max
                        )));
                    }
                    PrefixMode::ZeroPadded { m }
                }
                _ => PrefixMode::Online,
            };
            let fcfg = cfg.filter_config(mode);
            fcfg.validate(&fno.cfg)?;
            Ok(Some((fno, bcbf, fcfg)))
        }
    }
}

/// One seeded rollout of a variant. The policy-noise stream depends only on
/// (master seed, rollout index), so variants consume identical noise.
pub fn run_rollout(
    spec: &TaskSpec<f64>,
    runtime: Option<(&FnoModel<f64>, &BarrierModel<f64>, &FilterConfig<f64>)>,
    master_seed: u64,
    index: usize,
) -> Result<RolloutArtifacts<f64>> {
    let noise_seed = crate::seed::derive(master_seed, "eval.policy", index as u64);
    let mut rng = crate::seed::stream(master_seed, "eval.policy", index as u64);
    let mut diags: Vec<StepDiagnostics<f64>> = Vec::new();
    let mut step_err: Option<Error> = None;

    let records = match runtime {
        None => rollout(spec, |y, t, _u_prev| base_policy(&spec.policy, y, t, &mut rng))?,
        Some((fno, bcbf, fcfg)) => {
            let mut state = FilterState::new(spec.dt, CHANNELS, CHANNELS)?;
            let mut ws = FnoWorkspace::new(&fno.cfg);
            rollout(spec, |y, t, _u_prev| {
                let u_nom = base_policy(&spec.policy, y, t, &mut rng);
                if step_err.is_some() {
                    return u_nom;
                }
                match filter_step(fno, bcbf, fcfg, &mut state, y, &u_nom, t, &mut ws) {
                    Ok((u_hat, diag)) => {
                        diags.push(diag);
                        [u_hat[0], u_hat[1]]
                    }
                    Err(e) => {
                        step_err = Some(e);
                        u_nom
                    }
                }
            })?
        }
    };
    if let Some(e) = step_err {
        return Err(e);
    }
    Ok(RolloutArtifacts {
        index,
        noise_seed,
        records,
        diags,
    })
}

/// Matched-seed evaluation of one variant over n rollouts.
pub fn evaluate_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    models: VariantModels,
    n: usize,
    master_seed: u64,
) -> Result<(EvalMetrics, Vec<RolloutArtifacts<f64>>)> {
    let spec = cfg.task_spec()?;
    let runtime = filter_runtime(cfg, variant, models)?;
    let mut artifacts = Vec::with_capacity(n);
    for r in 0..n {
        let rt = runtime.as_ref().map(|(f, b, c)| (*f, *b, c));
        artifacts.push(run_rollout(&spec, rt, master_seed, r)?);
    }
    let rollouts: Vec<Vec<StepRecord<f64>>> =
        artifacts.iter().map(|a| a.records.clone()).collect();
    let seeds = artifacts.iter().map(|a| a.noise_seed).collect();
    let metrics = metrics_from_records(&rollouts, &spec.safe_set, seeds);
    Ok((metrics, artifacts))
}

/// Collect n base-policy rollouts into a dataset directory.
pub fn collect_dataset(
    cfg: &ExperimentConfig,
    n: usize,
    out: &Path,
    master_seed: u64,
) -> Result<()> {
    let spec = cfg.task_spec()?;
    let mut trajs = Vec::with_capacity(n);
    for r in 0..n {
        let noise_seed = crate::seed::derive(master_seed, "collect.policy", r as u64);
        let mut rng = crate::seed::stream(master_seed, "collect.policy", r as u64);
        let records = rollout(&spec, |y, t, _| base_policy(&spec.policy, y, t, &mut rng))?;
        trajs.push(Trajectory::from_records(
            &format!("{}-{r:04}", spec.name),
            noise_seed,
            spec.dt,
            &records,
        ));
    }
    std::fs::create_dir_all(out)?;
    save_trajectories(&trajs, out)
}

/// Seeded train/test split of a dataset directory per the config's
/// test fraction.
pub fn load_split(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    seed: u64,
) -> Result<(Vec<Trajectory<f64>>, Vec<Trajectory<f64>>)> {
    let trajs = load_trajectories::<f64>(data_dir)?;
    let n = trajs.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "dataset at {} holds {n} trajectories; need at least 2",
            data_dir.display()
        )));
    }
    let n_test = ((n as f64 * cfg.collect.test_fraction).ceil() as usize).clamp(1, n - 1);
    split(trajs, n - n_test, n_test, seed)
}

/// Train the operator from a dataset directory; `fixed_horizon` trains the
/// offline ablation (single admitted length M).
pub fn train_operator(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    out_ckpt: &Path,
    seed: u64,
    fixed_horizon: bool,
) -> Result<TrainOutcome<f64>> {
    let (train, test) = load_split(cfg, data_dir, seed)?;
    let fno_cfg = if fixed_horizon {
        cfg.offline_fno_config()
    } else {
        cfg.fno_config()
    };
    let outcome = train_no(&train, &test, fno_cfg, &cfg.adamw(), seed)?;
    if let Some(dir) = out_ckpt.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    crate::ckpt::save_fno(out_ckpt, &outcome.model)?;
    crate::neural_operator::write_training_log(
        &out_ckpt.with_extension("log.csv"),
        &outcome.probes,
        &outcome.log,
    )?;
    Ok(outcome)
}

/// Train the barrier from a dataset directory.
pub fn train_barrier(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    out_ckpt: &Path,
    seed: u64,
) -> Result<(BarrierModel<f64>, Vec<BcbfLogRow>)> {
    let (train, test) = load_split(cfg, data_dir, seed)?;
    let spec = cfg.task_spec()?;
    let mut samples = make_barrier_samples(&train, &spec.safe_set)?;
    let held_out = make_barrier_samples(&test, &spec.safe_set)?;
    let max = cfg.training.barrier.max_samples;
    if max > 0 && samples.len() > max {
        // Seeded thinning keeps the recipe's cost bounded on big datasets.
        let mut rng = crate::seed::stream(seed, "bcbf-subsample", 0);
        for i in (1..samples.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            samples.swap(i, j);
        }
        samples.truncate(max);
    }
    let init = BarrierModel::init(CHANNELS, cfg.barrier.alpha, cfg.barrier.c, seed)?;
    let (model, log) = train_bcbf(&samples, init, &cfg.bcbf_loss(), &cfg.nadam(), seed)?;
    if let Some(dir) = out_ckpt.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    crate::ckpt::save_bcbf(out_ckpt, &model)?;
    crate::bcbf::write_bcbf_log(&out_ckpt.with_extension("log.csv"), &log)?;
    // Record held-out quality alongside the checkpoint.
    let (sign, viol) = crate::bcbf::bcbf_metrics(&model, &held_out);
    std::fs::write(
        out_ckpt.with_extension("heldout.json"),
        format!(
            "{{\"sign_agreement\":{sign:.6},\"deriv_violation\":{viol:.6},\"n_samples\":{}}}\n",
            held_out.len()
        ),
    )?;
    Ok((model, log))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub variant: Variant,
    pub n_rollouts: usize,
    pub seed: u64,
    pub task: ExperimentConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub operator_ckpt: Option<CheckpointRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub barrier_ckpt: Option<CheckpointRef>,
    pub version: String,
}

fn ckpt_ref(path: Option<&Path>) -> Result<Option<CheckpointRef>> {
    match path {
        None => Ok(None),
        Some(p) => Ok(Some(CheckpointRef {
            path: p.display().to_string(),
            sha256: crate::ckpt::sha256_hex(p)?,
        })),
    }
}

/// Execute a variant and persist the full run directory:
/// manifest.json, metrics.json, rollouts.csv, traj/rollout_NNNN.csv and
/// (for filtered variants) diag/rollout_NNNN.csv.
#[allow(clippy::too_many_arguments)]
pub fn run_variant(
    cfg: &ExperimentConfig,
    variant: Variant,
    fno_path: Option<&Path>,
    bcbf_path: Option<&Path>,
    n: usize,
    out_dir: &Path,
    master_seed: u64,
) -> Result<EvalMetrics> {
    let fno = match fno_path {
        Some(p) => Some(crate::ckpt::load_fno::<f64>(p)?),
        None => None,
    };
    let bcbf = match bcbf_path {
        Some(p) => Some(crate::ckpt::load_bcbf::<f64>(p)?),
        None => None,
    };
    let models = VariantModels {
        fno: fno.as_ref(),
        bcbf: bcbf.as_ref(),
    };
    let (metrics, artifacts) = evaluate_variant(cfg, variant, models, n, master_seed)?;

    std::fs::create_dir_all(out_dir)?;
    let manifest = RunManifest {
        schema: RUN_SCHEMA.into(),
        variant,
        n_rollouts: n,
        seed: master_seed,
        task: cfg.clone(),
        operator_ckpt: ckpt_ref(fno_path)?,
        barrier_ckpt: ckpt_ref(bcbf_path)?,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    write_json(&out_dir.join("metrics.json"), &metrics)?;
    write_rollout_index(&out_dir.join("rollouts.csv"), cfg, &artifacts)?;

    let traj_dir = out_dir.join("traj");
    std::fs::create_dir_all(&traj_dir)?;
    let spec = cfg.task_spec()?;
    let trajs: Vec<Trajectory<f64>> = artifacts
        .iter()
        .map(|a| {
            Trajectory::from_records(
                &format!("{}-{}-{:04}", spec.name, variant.as_str(), a.index),
                a.noise_seed,
                spec.dt,
                &a.records,
            )
        })
        .collect();
    save_trajectories(&trajs, &traj_dir)?;
    if artifacts.iter().any(|a| !a.diags.is_empty()) {
        let diag_dir = out_dir.join("diag");
        std::fs::create_dir_all(&diag_dir)?;
        for a in &artifacts {
            crate::safety_filter::write_diagnostics(
                &diag_dir.join(format!("rollout_{:04}.csv", a.index)),
                &a.diags,
            )?;
        }
    }
    Ok(metrics)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Corrupt(format!("serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn write_rollout_index(
    path: &Path,
    cfg: &ExperimentConfig,
    artifacts: &[RolloutArtifacts<f64>],
) -> Result<()> {
    use std::io::Write;
    let spec = cfg.task_spec()?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "index,noise_seed,convergence_step,unsafe_count,safe")?;
    for a in artifacts {
        let y: Vec<[f64; CHANNELS]> = a.records.iter().map(|r| r.y).collect();
        let k = convergence_step(&y, &spec.safe_set);
        let c = unsafe_count(&y, &spec.safe_set);
        writeln!(
            f,
            "{},{},{},{},{}",
            a.index,
            a.noise_seed,
            k,
            c,
            u8::from(k < y.len())
        )?;
    }
    Ok(())
}

/// Recompute metrics from a stored run directory (pure function of the
/// recorded trajectories) and cross-check against the stored metrics.json.
pub fn eval_run_dir(dir: &Path) -> Result<EvalMetrics> {
    let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.schema != RUN_SCHEMA {
        return Err(Error::Corrupt(format!(
            "{}: unknown run schema {}",
            dir.display(),
            manifest.schema
        )));
    }
    let spec = manifest.task.task_spec()?;
    let trajs = load_trajectories::<f64>(&dir.join("traj"))?;
    let rollouts: Vec<Vec<StepRecord<f64>>> = trajs
        .iter()
        .map(|tr| {
            (0..tr.len())
                .map(|i| StepRecord {
                    t: tr.t[i],
                    u: tr.u[i],
                    y: tr.y[i],
                })
                .collect()
        })
        .collect();
    let seeds = trajs.iter().map(|t| t.seed).collect();
    let recomputed = metrics_from_records(&rollouts, &spec.safe_set, seeds);
    let stored: EvalMetrics = read_json(&dir.join("metrics.json"))?;
    if stored.safe_traj_rate != recomputed.safe_traj_rate
        || stored.avg_unsafe_steps != recomputed.avg_unsafe_steps
        || stored.mean_unsafe_count != recomputed.mean_unsafe_count
    {
        return Err(Error::Corrupt(format!(
            "{}: stored metrics disagree with the recorded trajectories \
             (stored rate {}, recomputed {})",
            dir.display(),
            stored.safe_traj_rate,
            recomputed.safe_traj_rate
        )));
    }
    Ok(recomputed)
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|_| Error::Missing(format!("file {}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: None,
        msg: e.to_string(),
    })
}
