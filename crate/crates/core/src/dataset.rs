//! Trajectory persistence and horizon-agnostic prefix batching.
//!
//! On disk a dataset is a directory: one CSV per trajectory with header
//! `t,u0,u1,y0,y1`, plus `manifest.json` listing the files with their task id,
//! seed, dt and length. Floats are written with Rust's shortest round-trip
//! formatting, so a save/load cycle is exact at 64-bit precision.

use crate::error::{Error, Result};
use crate::pde_plant::CHANNELS;
use crate::scalar::Real;
use crate::task::StepRecord;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub const CSV_SCHEMA: [&str; 5] = ["t", "u0", "u1", "y0", "y1"];

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S> {
    pub task_id: String,
    pub seed: u64,
    pub dt: S,
    pub t: Vec<S>,
    pub u: Vec<[S; CHANNELS]>,
    pub y: Vec<[S; CHANNELS]>,
}

impl<S: Real> Trajectory<S> {
    pub fn from_records(task_id: &str, seed: u64, dt: S, recs: &[StepRecord<S>]) -> Self {
        Trajectory {
            task_id: task_id.to_string(),
            seed,
            dt,
            t: recs.iter().map(|r| r.t).collect(),
            u: recs.iter().map(|r| r.u).collect(),
            y: recs.iter().map(|r| r.y).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.u.len() != self.t.len() || self.y.len() != self.t.len() {
            return Err(Error::Config(format!(
                "trajectory column lengths differ: t={} u={} y={}",
                self.t.len(),
                self.u.len(),
                self.y.len()
            )));
        }
        for (i, &t) in self.t.iter().enumerate() {
            let want = S::of(i as f64) * self.dt;
            if (t - want).abs().as_f64() > 1e-12 {
                return Err(Error::Config(format!(
                    "time grid broken at row {i}: t = {t}, expected {want}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    task_id: String,
    seed: u64,
    dt: f64,
    m: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema: Vec<String>,
    trajectories: Vec<ManifestEntry>,
}

pub fn save_trajectories<S: Real>(trajs: &[Trajectory<S>], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(trajs.len());
    for (k, traj) in trajs.iter().enumerate() {
        let name = format!("traj_{k:04}.csv");
        let mut w = std::io::BufWriter::new(fs::File::create(dir.join(&name))?);
        writeln!(w, "{}", CSV_SCHEMA.join(","))?;
        for i in 0..traj.len() {
            // `Display` for floats is the shortest exact round-trip form.
            writeln!(
                w,
                "{},{},{},{},{}",
                traj.t[i].as_f64(),
                traj.u[i][0].as_f64(),
                traj.u[i][1].as_f64(),
                traj.y[i][0].as_f64(),
                traj.y[i][1].as_f64()
            )?;
        }
        w.flush()?;
        entries.push(ManifestEntry {
            file: name,
            task_id: traj.task_id.clone(),
            seed: traj.seed,
            dt: traj.dt.as_f64(),
            m: traj.len(),
        });
    }
    let manifest = Manifest {
        schema: CSV_SCHEMA.iter().map(|s| s.to_string()).collect(),
        trajectories: entries,
    };
    let mut f = fs::File::create(dir.join("manifest.json"))?;
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Corrupt(format!("manifest encode: {e}")))?;
    f.write_all(body.as_bytes())?;
    Ok(())
}

pub fn load_trajectories<S: Real>(dir: &Path) -> Result<Vec<Trajectory<S>>> {
    let manifest_path = dir.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::Missing(manifest_path.display().to_string()));
    }
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::Parse {
            path: manifest_path.display().to_string(),
            line: Some(e.line() as u64),
            msg: e.to_string(),
        })?;
    if manifest.schema != CSV_SCHEMA {
        return Err(Error::Corrupt(format!(
            "manifest schema {:?} does not match {:?}",
            manifest.schema, CSV_SCHEMA
        )));
    }
    let mut out = Vec::with_capacity(manifest.trajectories.len());
    for entry in &manifest.trajectories {
        let path = dir.join(&entry.file);
        if !path.exists() {
            return Err(Error::Missing(path.display().to_string()));
        }
        let traj = load_one_csv(&path, entry)?;
        if traj.len() != entry.m {
            return Err(Error::Corrupt(format!(
                "{}: manifest says {} rows, file has {}",
                entry.file,
                entry.m,
                traj.len()
            )));
        }
        out.push(traj);
    }
    Ok(out)
}

fn load_one_csv<S: Real>(path: &Path, entry: &ManifestEntry) -> Result<Trajectory<S>> {
    let pathstr = path.display().to_string();
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: pathstr.clone(),
        line: Some(line),
        msg,
    };
    let reader = BufReader::new(fs::File::open(path)?);
    let mut traj = Trajectory {
        task_id: entry.task_id.clone(),
        seed: entry.seed,
        dt: S::of(entry.dt),
        t: Vec::with_capacity(entry.m),
        u: Vec::with_capacity(entry.m),
        y: Vec::with_capacity(entry.m),
    };
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx as u64 + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if idx == 0 {
            if line != CSV_SCHEMA.join(",") {
                return Err(parse_err(lineno, format!("bad header `{line}`")));
            }
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != CSV_SCHEMA.len() {
            return Err(parse_err(
                lineno,
                format!("{} columns, expected {}", cells.len(), CSV_SCHEMA.len()),
            ));
        }
        let mut vals = [0.0f64; 5];
        for (j, cell) in cells.iter().enumerate() {
            vals[j] = cell.parse::<f64>().map_err(|e| {
                parse_err(lineno, format!("column `{}`: {e}", CSV_SCHEMA[j]))
            })?;
        }
        traj.t.push(S::of(vals[0]));
        traj.u.push([S::of(vals[1]), S::of(vals[2])]);
        traj.y.push([S::of(vals[3]), S::of(vals[4])]);
    }
    Ok(traj)
}

/// Disjoint seeded-shuffle split into (train, test).
pub fn split<S: Real>(
    mut trajs: Vec<Trajectory<S>>,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<(Vec<Trajectory<S>>, Vec<Trajectory<S>>)> {
    if n_train + n_test > trajs.len() {
        return Err(Error::Config(format!(
            "split ({n_train}, {n_test}) needs {} trajectories, have {}",
            n_train + n_test,
            trajs.len()
        )));
    }
    let mut rng = crate::seed::stream(seed, "split", 0);
    // Fisher-Yates.
    for i in (1..trajs.len()).rev() {
        let j = rng.gen_range(0..=i);
        trajs.swap(i, j);
    }
    let test = trajs.split_off(trajs.len() - n_test);
    trajs.truncate(n_train);
    Ok((trajs, test))
}

/// One training batch: B trajectories cropped to a shared prefix length.
#[derive(Debug, Clone)]
pub struct PrefixBatch<S> {
    pub prefix_len: usize,
    /// B rows, each prefix_len x d_u, flattened time-major.
    pub inputs: Vec<Vec<S>>,
    pub targets: Vec<Vec<S>>,
}

/// Draw M~ uniformly on [m_min, m_max], sample B trajectories with
/// replacement, crop inputs and targets to the first M~ steps.
pub fn sample_prefix_batch<S: Real, R: Rng + ?Sized>(
    train: &[Trajectory<S>],
    b: usize,
    m_min: usize,
    m_max: usize,
    rng: &mut R,
) -> Result<PrefixBatch<S>> {
    if b < 1 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if m_min < 1 || m_min > m_max {
        return Err(Error::Config(format!(
            "invalid prefix range [{m_min}, {m_max}]"
        )));
    }
    if train.is_empty() {
        return Err(Error::Config("empty training set".into()));
    }
    for (k, tr) in train.iter().enumerate() {
        if tr.len() < m_max {
            return Err(Error::Config(format!(
                "trajectory {k} shorter ({}) than m_max ({m_max})",
                tr.len()
            )));
        }
    }
    let prefix_len = rng.gen_range(m_min..=m_max);
    let mut inputs = Vec::with_capacity(b);
    let mut targets = Vec::with_capacity(b);
    for _ in 0..b {
        let k = rng.gen_range(0..train.len());
        let tr = &train[k];
        let mut uraw = Vec::with_capacity(prefix_len * CHANNELS);
        let mut yraw = Vec::with_capacity(prefix_len * CHANNELS);
        for m in 0..prefix_len {
            uraw.extend_from_slice(&tr.u[m]);
            yraw.extend_from_slice(&tr.y[m]);
        }
        inputs.push(uraw);
        targets.push(yraw);
    }
    Ok(PrefixBatch {
        prefix_len,
        inputs,
        targets,
    })
}
