//! Horizon-agnostic training: every batch draws one prefix length
//! M ~ U{m_min..m_max}, crops all sampled trajectories to it and minimizes
//! (1/B) sum_b (1/M) sum_m ||Y_b(t_m) - F(U_b^{1:M})(t_m)||^2.

pub use crate::opt::AdamWSettings;

use super::{FnoConfig, FnoModel, FnoWorkspace};
use crate::dataset::{sample_prefix_batch, PrefixBatch, Trajectory};
use crate::error::{Error, Result};
use crate::opt::AdamW;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub train_loss: f64,
    /// Held-out relative L2 at each probed prefix length, same order as
    /// `TrainOutcome::probes`.
    pub test_rel_l2: Vec<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome<S> {
    pub model: FnoModel<S>,
    pub log: Vec<TrainLogRow>,
    pub probes: Vec<usize>,
    pub best_epoch: usize,
    /// Mean probed relative L2 of the returned checkpoint.
    pub best_score: f64,
}

/// Mean-squared batch loss plus the matching output cotangents
/// (2 (out - y) / (B M) per element).
pub(crate) fn batch_loss<S: Real>(
    model: &FnoModel<S>,
    batch: &PrefixBatch<S>,
    ws: &mut FnoWorkspace<S>,
    mut couts: Option<&mut Vec<Vec<S>>>,
) -> Result<S> {
    let m = batch.prefix_len;
    let b = batch.inputs.len();
    if let Some(c) = couts.as_deref_mut() {
        c.clear();
    }
    let scale = S::of(2.0 / (b as f64 * m as f64));
    let mut loss = S::zero();
    for (u, y) in batch.inputs.iter().zip(&batch.targets) {
        model.forward(u, m, ws)?;
        let mut sq = S::zero();
        for (o, t) in ws.tape.out.iter().zip(y) {
            let d = *o - *t;
            sq += d * d;
        }
        loss += sq / S::of(m as f64);
        if let Some(c) = couts.as_deref_mut() {
            c.push(
                ws.tape
                    .out
                    .iter()
                    .zip(y)
                    .map(|(o, t)| scale * (*o - *t))
                    .collect(),
            );
        }
    }
    Ok(loss / S::of(b as f64))
}

/// Pooled relative L2 of the model over `data` cropped to prefix length `m`:
/// sqrt(sum ||Y - F(U)||^2 / sum ||Y||^2) across all steps of all
/// trajectories.
pub fn relative_l2<S: Real>(
    model: &FnoModel<S>,
    data: &[Trajectory<S>],
    m: usize,
    ws: &mut FnoWorkspace<S>,
) -> Result<f64> {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut u = Vec::new();
    for traj in data {
        if traj.len() < m {
            return Err(Error::Config(format!(
                "trajectory {} has {} steps, shorter than probe length {m}",
                traj.task_id,
                traj.len()
            )));
        }
        u.clear();
        for row in traj.u.iter().take(m) {
            u.extend_from_slice(row);
        }
        model.forward(&u, m, ws)?;
        for (j, row) in traj.y.iter().take(m).enumerate() {
            for (dy, &yv) in row.iter().enumerate() {
                let e = ws.tape.out[j * row.len() + dy].as_f64() - yv.as_f64();
                num += e * e;
                den += yv.as_f64() * yv.as_f64();
            }
        }
    }
    if den == 0.0 {
        return Ok(num.sqrt());
    }
    Ok((num / den).sqrt())
}

/// Train the operator, tracking held-out relative L2 at probe lengths
/// {m_min, (m_min + m_max)/2, m_max} and returning the best-scoring epoch's
/// checkpoint.
pub fn train_no<S: Real>(
    train: &[Trajectory<S>],
    test: &[Trajectory<S>],
    cfg: FnoConfig,
    opt: &AdamWSettings,
    seed: u64,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("train and test splits must be non-empty".into()));
    }
    for traj in train.iter().chain(test) {
        if traj.len() < cfg.m_max {
            return Err(Error::Config(format!(
                "trajectory {} has {} steps but the operator admits prefixes up to {}",
                traj.task_id,
                traj.len(),
                cfg.m_max
            )));
        }
    }
    let mut probes = vec![cfg.m_min, (cfg.m_min + cfg.m_max) / 2, cfg.m_max];
    probes.dedup();

    let mut model = FnoModel::<S>::init(cfg.clone(), seed)?;
    let mut best = model.clone();
    let mut best_epoch = 0usize;
    let mut best_score = f64::INFINITY;
    let mut grads = model.grads_zeros();
    let mut optimizer = AdamW::<S>::new(opt);
    let mut ws = FnoWorkspace::new(&cfg);
    let mut rng = crate::seed::stream(seed, "fno-train-batches", 0);
    let mut couts: Vec<Vec<S>> = Vec::new();
    let mut log = Vec::with_capacity(opt.epochs);

    let batches_per_epoch = (train.len() + opt.batch_size - 1) / opt.batch_size;
    for epoch in 0..opt.epochs {
        let mut epoch_loss = 0.0f64;
        for bi in 0..batches_per_epoch {
            let batch =
                sample_prefix_batch(train, opt.batch_size, cfg.m_min, cfg.m_max, &mut rng)?;
            let loss = batch_loss(&model, &batch, &mut ws, Some(&mut couts))?;
            let lf = loss.as_f64();
            if !lf.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite training loss at epoch {epoch}, batch {bi} (prefix length {})",
                    batch.prefix_len
                )));
            }
            epoch_loss += lf;
            grads.zero();
            for (u, cout) in batch.inputs.iter().zip(&couts) {
                model.forward(u, batch.prefix_len, &mut ws)?;
                model.backward(cout, &mut ws, Some(&mut grads), None)?;
            }
            let g = grads.tensors();
            let mut p = model.tensors_mut();
            optimizer.step(&mut p, &g)?;
        }
        epoch_loss /= batches_per_epoch as f64;

        let mut rel = Vec::with_capacity(probes.len());
        for &m in &probes {
            rel.push(relative_l2(&model, test, m, &mut ws)?);
        }
        let score = rel.iter().sum::<f64>() / rel.len() as f64;
        if !score.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite held-out relative L2 at epoch {epoch}: {rel:?}"
            )));
        }
        if score < best_score {
            best_score = score;
            best_epoch = epoch;
            best = model.clone();
        }
        log.push(TrainLogRow {
            epoch,
            train_loss: epoch_loss,
            test_rel_l2: rel,
        });
    }

    Ok(TrainOutcome {
        model: best,
        log,
        probes,
        best_epoch,
        best_score,
    })
}

/// Training-log CSV: epoch, train_loss, rel_l2@{probe} columns.
pub fn write_training_log(path: &std::path::Path, probes: &[usize], log: &[TrainLogRow]) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = ["epoch".into(), "train_loss".into()]
        .into_iter()
        .chain(probes.iter().map(|p| format!("test_rel_l2@{p}")))
        .collect();
    writeln!(f, "{}", header.join(","))?;
    for row in log {
        let mut cols = vec![row.epoch.to_string(), format!("{:.10e}", row.train_loss)];
        cols.extend(row.test_rel_l2.iter().map(|v| format!("{v:.10e}")));
        writeln!(f, "{}", cols.join(","))?;
    }
    Ok(())
}
