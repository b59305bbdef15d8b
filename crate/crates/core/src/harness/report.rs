//! Aggregate stored run directories into a markdown summary table plus
//! trajectory / barrier-value plots.

use super::plot::{line_plot, Series, COLORS};
use super::{read_json, EvalMetrics, RunManifest, Variant};
use crate::dataset::load_trajectories;
use crate::error::{Error, Result};
use crate::task::SafeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

struct RunSummary {
    dir: PathBuf,
    task: String,
    variant: Variant,
    metrics: EvalMetrics,
    manifest: RunManifest,
}

fn variant_rank(v: Variant) -> u8 {
    match v {
        Variant::Base => 0,
        Variant::Filtered => 1,
        Variant::Offline => 2,
    }
}

/// Build `report.md` (+ `plots/`) in `out` from a set of run directories.
/// An empty input list still yields the header-only table.
pub fn write_report(in_dirs: &[PathBuf], out: &Path) -> Result<()> {
    let mut runs = Vec::new();
    for dir in in_dirs {
        let manifest: RunManifest = read_json(&dir.join("manifest.json"))?;
        if manifest.schema != super::RUN_SCHEMA {
            return Err(Error::Corrupt(format!(
                "{}: unknown run schema {}",
                dir.display(),
                manifest.schema
            )));
        }
        let metrics: EvalMetrics = read_json(&dir.join("metrics.json"))?;
        runs.push(RunSummary {
            dir: dir.clone(),
            task: manifest.task.task.name.clone(),
            variant: manifest.variant,
            metrics,
            manifest,
        });
    }
    runs.sort_by(|a, b| {
        a.task
            .cmp(&b.task)
            .then(variant_rank(a.variant).cmp(&variant_rank(b.variant)))
    });

    std::fs::create_dir_all(out)?;
    let plots_dir = out.join("plots");

    let mut md = String::new();
    md.push_str("# Safety filter evaluation\n\n");
    md.push_str(
        "| Task | Variant | Safe rate | Convergence step (mean) | Unsafe steps (mean) | Rollouts |\n",
    );
    md.push_str("|---|---|---:|---:|---:|---:|\n");
    for r in &runs {
        md.push_str(&format!(
            "| {} | {} | {:.3} | {:.1} | {:.1} | {} |\n",
            r.task,
            r.variant.as_str(),
            r.metrics.safe_traj_rate,
            r.metrics.avg_unsafe_steps,
            r.metrics.mean_unsafe_count,
            r.metrics.n_rollouts,
        ));
    }
    md.push('\n');

    if !runs.is_empty() {
        std::fs::create_dir_all(&plots_dir)?;
        md.push_str("## Plots\n\n");
    }
    for r in &runs {
        let stem = format!("{}_{}", r.task, r.variant.as_str());
        if let Some(name) = plot_trajectory(r, &plots_dir, &stem)? {
            md.push_str(&format!(
                "- `plots/{name}` — first rollout outputs over time ({}, {})\n",
                r.task,
                r.variant.as_str()
            ));
        }
        if let Some(name) = plot_phi(r, &plots_dir, &stem)? {
            md.push_str(&format!(
                "- `plots/{name}` — barrier value along the first rollout ({}, {})\n",
                r.task,
                r.variant.as_str()
            ));
        }
    }

    md.push_str("\n## Runs\n\n");
    for r in &runs {
        md.push_str(&format!(
            "- `{}`: {} / {} — seed {}, n = {}\n",
            r.dir.display(),
            r.task,
            r.variant.as_str(),
            r.manifest.seed,
            r.manifest.n_rollouts,
        ));
    }

    let mut f = std::fs::File::create(out.join("report.md"))?;
    f.write_all(md.as_bytes())?;
    Ok(())
}

fn plot_trajectory(r: &RunSummary, plots_dir: &Path, stem: &str) -> Result<Option<String>> {
    let traj_dir = r.dir.join("traj");
    if !traj_dir.is_dir() {
        return Ok(None);
    }
    let trajs = load_trajectories::<f64>(&traj_dir)?;
    let Some(tr) = trajs.first() else {
        return Ok(None);
    };
    let y0: Vec<(f64, f64)> = tr.t.iter().zip(&tr.y).map(|(&t, y)| (t, y[0])).collect();
    let y1: Vec<(f64, f64)> = tr.t.iter().zip(&tr.y).map(|(&t, y)| (t, y[1])).collect();
    let band = match r.manifest.task.task_spec()?.safe_set {
        SafeSet::Box { lo, hi } => Some((lo[0], hi[0])),
        SafeSet::Distance { .. } => None,
    };
    let name = format!("{stem}_traj.png");
    line_plot(
        &plots_dir.join(&name),
        &[
            Series {
                points: &y0,
                color: COLORS[0],
            },
            Series {
                points: &y1,
                color: COLORS[1],
            },
        ],
        band,
        stem,
    )?;
    Ok(Some(name))
}

fn plot_phi(r: &RunSummary, plots_dir: &Path, stem: &str) -> Result<Option<String>> {
    let diag = r.dir.join("diag").join("rollout_0000.csv");
    if !diag.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&diag)?;
    let mut pts = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 3 {
            continue;
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Parse {
                path: diag.display().to_string(),
                line: Some(i as u64 + 1),
                msg: format!("bad float '{s}'"),
            })
        };
        pts.push((parse(cols[1])?, parse(cols[2])?));
    }
    if pts.is_empty() {
        return Ok(None);
    }
    let name = format!("{stem}_phi.png");
    line_plot(
        &plots_dir.join(&name),
        &[Series {
            points: &pts,
            color: COLORS[3],
        }],
        Some((0.0, 0.0)),
        stem,
    )?;
    Ok(Some(name))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_input_still_writes_header_only_table() {
        let dir = std::env::temp_dir().join(format!("opguard-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        write_report(&[], &dir).unwrap();
        let text = std::fs::read_to_string(dir.join("report.md")).unwrap();
        assert!(text.contains("| Task | Variant |"));
        // Header + separator only: no data rows.
        let rows = text.lines().filter(|l| l.starts_with("| ")).count();
        assert_eq!(rows, 1);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn missing_manifest_is_a_clear_error() {
        let dir = std::env::temp_dir().join(format!("opguard-report2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let err = write_report(&[dir.clone()], &dir).unwrap_err();
        assert!(matches!(err, Error::Missing(_)));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
