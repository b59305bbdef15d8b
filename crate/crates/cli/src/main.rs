//! Command line for the opguard experiments: collect base-policy datasets,
//! train the operator and the barrier, run evaluations, and build reports.
//! Every path through here is seeded; re-running a command with the same
//! arguments reproduces its artifacts bitwise.

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use opguard::config::ExperimentConfig;
use opguard::harness::{self, Variant};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "opguard",
    version,
    about = "Online safety filtering for boundary-controlled PDE systems"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Task description (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Master seed; defaults to the seed recorded in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, u64)> {
        let cfg = ExperimentConfig::load(&self.config)
            .with_context(|| format!("loading {}", self.config.display()))?;
        let seed = self.seed.unwrap_or(cfg.task.seed);
        Ok((cfg, seed))
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Roll out the base policy and store the trajectories as a dataset.
    Collect {
        #[command(flatten)]
        common: Common,
        /// Number of rollouts to collect.
        #[arg(long)]
        n: usize,
        /// Dataset directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the neural operator on a collected dataset.
    TrainNo {
        #[command(flatten)]
        common: Common,
        /// Dataset directory produced by `collect`.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Train the fixed-horizon ablation (no prefix sampling).
        #[arg(long)]
        fixed_horizon: bool,
    },
    /// Train the barrier function on a collected dataset.
    TrainBcbf {
        #[command(flatten)]
        common: Common,
        /// Dataset directory produced by `collect`.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a variant over matched-seed rollouts and store the run.
    Run {
        #[command(flatten)]
        common: Common,
        /// Operator checkpoint (required for filtered and offline).
        #[arg(long = "no")]
        no_ckpt: Option<PathBuf>,
        /// Barrier checkpoint (required for filtered and offline).
        #[arg(long = "bcbf")]
        bcbf_ckpt: Option<PathBuf>,
        /// Override the mismatch gate threshold from the config.
        #[arg(long)]
        beta: Option<f64>,
        /// Override the class-K gain alpha from the config.
        #[arg(long)]
        alpha: Option<f64>,
        /// Override the finite-time gain C from the config.
        #[arg(long = "C")]
        c_gain: Option<f64>,
        /// One of base|filtered|offline.
        #[arg(long)]
        variant: String,
        /// Number of evaluation rollouts.
        #[arg(long)]
        n: usize,
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute metrics from a stored run directory and print them.
    Eval {
        /// Accepted for interface symmetry; the run's stored manifest governs.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accepted for interface symmetry; evaluation is seed-free.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory produced by `run`.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Summarize stored runs into a Markdown table and trajectory plots.
    Report {
        /// Accepted for interface symmetry; the runs' manifests govern.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Accepted for interface symmetry; reporting is seed-free.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directories produced by `run`.
        #[arg(long = "in", num_args = 1.., required = true)]
        input: Vec<PathBuf>,
        /// Report directory to create.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = dispatch(Cli::parse().cmd) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn print_metrics(m: &harness::EvalMetrics) {
    println!(
        "rollouts {}  safe rate {:.3}  mean convergence step {:.2}  mean unsafe count {:.2}",
        m.n_rollouts, m.safe_traj_rate, m.avg_unsafe_steps, m.mean_unsafe_count
    );
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Collect { common, n, out } => {
            let (cfg, seed) = common.load()?;
            harness::collect_dataset(&cfg, n, &out, seed)?;
            println!("collected {n} rollouts into {}", out.display());
        }
        Cmd::TrainNo {
            common,
            data,
            out,
            fixed_horizon,
        } => {
            let (cfg, seed) = common.load()?;
            let outcome = harness::train_operator(&cfg, &data, &out, seed, fixed_horizon)?;
            println!(
                "saved operator to {} (epoch {}, held-out rel L2 {:.4})",
                out.display(),
                outcome.best_epoch,
                outcome.best_score
            );
        }
        Cmd::TrainBcbf { common, data, out } => {
            let (cfg, seed) = common.load()?;
            let (_, log) = harness::train_barrier(&cfg, &data, &out, seed)?;
            let last = log.last().context("barrier training produced no epochs")?;
            println!(
                "saved barrier to {} (sign agreement {:.3}, decrease violation {:.3})",
                out.display(),
                last.sign_agreement,
                last.deriv_violation
            );
        }
        Cmd::Run {
            common,
            no_ckpt,
            bcbf_ckpt,
            beta,
            alpha,
            c_gain,
            variant,
            n,
            out,
        } => {
            let (mut cfg, seed) = common.load()?;
            if let Some(b) = beta {
                cfg.filter.beta = b;
            }
            if let Some(a) = alpha {
                cfg.barrier.alpha = a;
            }
            if let Some(c) = c_gain {
                cfg.barrier.c = c;
            }
            let variant = Variant::parse(&variant)?;
            let metrics = harness::run_variant(
                &cfg,
                variant,
                no_ckpt.as_deref(),
                bcbf_ckpt.as_deref(),
                n,
                &out,
                seed,
            )?;
            print_metrics(&metrics);
            println!("run stored in {}", out.display());
        }
        Cmd::Eval { input, .. } => {
            let metrics = harness::eval_run_dir(&input)?;
            print_metrics(&metrics);
        }
        Cmd::Report { input, out, .. } => {
            harness::write_report(&input, &out)?;
            println!("report written to {}", out.join("report.md").display());
        }
    }
    Ok(())
}
