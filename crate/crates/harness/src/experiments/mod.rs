//! The six experiments. Each `run` trains or integrates on a worker pool,
//! then writes every artifact from the calling thread in a fixed order, so
//! output bytes never depend on scheduling.

pub mod ablation;
pub mod bandit_flow;
pub mod bandit_stochastic;
pub mod equal_reward;
pub mod hypergrid;
pub mod oracle_dump;

use anyhow::{Context, Result};
use ipslab::grid::GridEnv;
use ipslab::policy::{sample_with_masks, ActionMasks, TabularPolicy};
use ipslab::sampling::{seeded_rng, LabRng};
use rayon::prelude::*;
use serde_json::Value;

use crate::artifacts::{Check, Output, Report, Stamp};
use crate::config::{Experiment, ExperimentConfig};

/// Generator streams derived from a run seed. Stream 0 drives training.
pub const SAMPLED_L1_STREAM: u64 = 1;
pub const RECOVERY_STREAM: u64 = 2;
pub const INIT_STREAM: u64 = 3;

pub fn stream_rng(seed: u64, stream: u64) -> LabRng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}

pub struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub hash: String,
    pub dry_run: bool,
    pool: rayon::ThreadPool,
}

impl<'a> Ctx<'a> {
    /// `jobs = 0` lets the pool pick one thread per core.
    pub fn new(cfg: &'a ExperimentConfig, jobs: usize, dry_run: bool) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("building worker pool")?;
        Ok(Self { cfg, hash: cfg.hash(), dry_run, pool })
    }

    pub fn stamp(&self, seed: Option<u64>) -> Stamp {
        Stamp { config_hash: self.hash.clone(), seed }
    }

    /// Order-preserving parallel map.
    pub fn par_map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    pub fn output(&self) -> Result<Output> {
        Output::new(&self.cfg.output_dir)
    }

    pub fn report(&self, out: Option<&Output>, checks: Vec<Check>, summary: Value) -> Report {
        Report {
            experiment: self.cfg.experiment.name().to_string(),
            config_hash: self.hash.clone(),
            dry_run: self.dry_run,
            checks,
            files: out.map(|o| o.files().to_vec()).unwrap_or_default(),
            summary,
        }
    }

    /// Echo of the effective configuration for dry runs.
    pub fn dry_report(&self, extra: Value) -> Report {
        let summary = serde_json::json!({ "config": self.cfg, "plan": extra });
        self.report(None, Vec::new(), summary)
    }
}

/// Runs whichever experiment `cfg` names and returns its report.
pub fn run(cfg: &ExperimentConfig, jobs: usize, dry_run: bool) -> Result<Report> {
    let ctx = Ctx::new(cfg, jobs, dry_run)?;
    Ok(match cfg.experiment {
        Experiment::BanditFlow => bandit_flow::run(&ctx)?.report,
        Experiment::BanditStochastic => bandit_stochastic::run(&ctx)?.report,
        Experiment::Hypergrid => hypergrid::run(&ctx)?.report,
        Experiment::EqualReward => equal_reward::run(&ctx)?.report,
        Experiment::Ablation => ablation::run(&ctx)?.report,
        Experiment::OracleDump => oracle_dump::run(&ctx)?.report,
    })
}

/// Terminal cells of `n` fresh trajectories.
pub fn sample_terminals<E: GridEnv + ?Sized>(
    pol: &TabularPolicy,
    masks: &ActionMasks,
    env: &E,
    n: usize,
    rng: &mut LabRng,
) -> Result<Vec<usize>> {
    (0..n).map(|_| Ok(sample_with_masks(pol, masks, env, rng)?.terminal_cell)).collect()
}

/// More than half of `flags` are set.
pub fn majority(flags: &[bool]) -> bool {
    2 * flags.iter().filter(|f| **f).count() > flags.len()
}

pub fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

pub fn coords_label(c: &[usize]) -> String {
    let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
    format!("({})", parts.join(","))
}
