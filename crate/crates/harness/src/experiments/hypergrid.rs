//! GRPO against IPS-GRPO on the hyper-grid under identical budgets.

use anyhow::Result;
use ipslab::grid::{enumerate_target, GridEnv, GridSpec, ENUMERATION_CAP};
use ipslab::metrics::{mean_recovery_curve, mean_std, median, mode_recovery_curve, sampling_density, ModeSet, RunLog};
use ipslab::policy::{ActionMasks, TabularPolicy};
use ipslab::render::{heatmap_svg, line_chart_svg, Series};
use ipslab::simplex::{l1, Simplex};
use ipslab::trainer::{train_from_uniform, Algorithm};
use serde::Serialize;
use serde_json::json;

use super::{coords_label, majority, sample_terminals, stream_rng, Ctx, RECOVERY_STREAM, SAMPLED_L1_STREAM};
use crate::artifacts::{csv_body, num, Check, Report};
use crate::config::ExperimentConfig;

pub const ALGORITHMS: [Algorithm; 2] = [Algorithm::Grpo, Algorithm::IpsGrpo];

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub l1_exact: f64,
    pub l1_sampled: f64,
    /// `l1_exact` divided by the number of cells.
    pub l1_per_cell: f64,
    pub modes_recovered: usize,
    #[serde(skip)]
    pub recovery: Vec<(usize, usize)>,
    #[serde(skip)]
    pub terminal: Simplex,
    #[serde(skip)]
    pub policy: TabularPolicy,
    #[serde(skip)]
    pub log: RunLog,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub runs: usize,
    pub l1_mean: f64,
    pub l1_std: f64,
    pub l1_median: f64,
    pub l1_sampled_mean: f64,
    pub l1_per_cell_mean: f64,
    pub modes_recovered_mean: f64,
}

pub struct HypergridOutcome {
    pub runs: Vec<RunResult>,
    pub summaries: Vec<AlgorithmSummary>,
    pub modes: ModeSet,
    pub report: Report,
}

impl HypergridOutcome {
    pub fn summary(&self, alg: Algorithm) -> &AlgorithmSummary {
        self.summaries.iter().find(|s| s.algorithm == alg).expect("both algorithms run")
    }

    pub fn runs_of(&self, alg: Algorithm) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.algorithm == alg)
    }
}

/// Trains one algorithm on one seed and evaluates the final policy.
pub fn train_and_evaluate(cfg: &ExperimentConfig, env: &GridSpec, alg: Algorithm, seed: u64) -> Result<RunResult> {
    let eval = cfg.eval();
    let train = cfg.train().to_train(alg, seed);
    let (policy, log) = train_from_uniform(env, &train)?;
    let masks = ActionMasks::new(env)?;
    let target = enumerate_target(env)?;
    let modes = ModeSet::from_env(env)?;
    let terminal = ipslab::policy::terminal_distribution_with_masks(&policy, &masks);
    let l1_exact = l1(terminal.probs(), target.probs());

    let mut rng = stream_rng(seed, SAMPLED_L1_STREAM);
    let samples = sample_terminals(&policy, &masks, env, eval.samples, &mut rng)?;
    let density = sampling_density(&samples, env.lattice())?;
    let l1_sampled = l1(&density.probs, target.probs());

    let mut rng = stream_rng(seed, RECOVERY_STREAM);
    let stream = sample_terminals(&policy, &masks, env, eval.recovery_budget, &mut rng)?;
    let recovery = mode_recovery_curve(&stream, &modes);
    let modes_recovered = recovery.last().map_or(0, |p| p.1);

    Ok(RunResult {
        algorithm: alg,
        seed,
        l1_exact,
        l1_sampled,
        l1_per_cell: l1_exact / env.lattice().num_cells() as f64,
        modes_recovered,
        recovery,
        terminal,
        policy,
        log,
    })
}

fn summarize(alg: Algorithm, runs: &[RunResult]) -> AlgorithmSummary {
    let pick = |f: fn(&RunResult) -> f64| -> Vec<f64> { runs.iter().filter(|r| r.algorithm == alg).map(f).collect() };
    let exact = pick(|r| r.l1_exact);
    let (l1_mean, l1_std) = mean_std(&exact);
    AlgorithmSummary {
        algorithm: alg,
        runs: exact.len(),
        l1_mean,
        l1_std,
        l1_median: median(&exact),
        l1_sampled_mean: mean_std(&pick(|r| r.l1_sampled)).0,
        l1_per_cell_mean: mean_std(&pick(|r| r.l1_per_cell)).0,
        modes_recovered_mean: mean_std(&pick(|r| r.modes_recovered as f64)).0,
    }
}

pub fn run(ctx: &Ctx) -> Result<HypergridOutcome> {
    let cfg = ctx.cfg;
    let env = *cfg.grid();
    let eval = cfg.eval();
    let lattice = env.lattice();
    lattice.ensure_enumerable(ENUMERATION_CAP)?;
    let target = enumerate_target(&env)?;
    let modes = ModeSet::from_env(&env)?;

    if ctx.dry_run {
        let mode_mass: f64 = modes.cells.iter().map(|&c| target.probs()[c]).sum();
        let report = ctx.dry_report(json!({
            "cells": lattice.num_cells(),
            "modes": modes.coords,
            "target_mass_per_mode": target.probs()[modes.cells[0]],
            "target_mass_on_modes": mode_mass,
            "runs": ALGORITHMS.len() * cfg.seeds.len(),
        }));
        return Ok(HypergridOutcome { runs: Vec::new(), summaries: Vec::new(), modes, report });
    }

    let jobs: Vec<(Algorithm, u64)> = ALGORITHMS.iter().flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let runs = ctx
        .par_map(&jobs, |&(alg, seed)| train_and_evaluate(cfg, &env, alg, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let summaries: Vec<AlgorithmSummary> = ALGORITHMS.iter().map(|&a| summarize(a, &runs)).collect();

    let mut out = ctx.output()?;
    let two_d = env.n == 2;
    for r in &runs {
        let stamp = ctx.stamp(Some(r.seed));
        let stem = format!("{}_seed{}", r.algorithm, r.seed);
        out.csv(&format!("{stem}_log.csv"), &stamp, &r.log.to_csv(""))?;
        out.json(&format!("{stem}_policy.json"), &stamp, &r.policy.to_table())?;
        let rows = r.recovery.iter().map(|&(n, m)| vec![n.to_string(), m.to_string()]);
        out.csv(&format!("{stem}_recovery.csv"), &stamp, &csv_body(&["samples", "modes_recovered"], rows))?;
        if two_d {
            let title = format!("{} seed {} terminal distribution (exact)", r.algorithm, r.seed);
            out.svg(&format!("{stem}_density.svg"), &heatmap_svg(&lattice, r.terminal.probs(), &stamp.render_meta(title))?)?;
        }
    }

    let all = ctx.stamp(None);
    if two_d {
        out.svg("target_density.svg", &heatmap_svg(&lattice, target.probs(), &all.render_meta("target r / Σ r"))?)?;
    }
    let series: Vec<Series> = ALGORITHMS
        .iter()
        .map(|&a| {
            let curves: Vec<Vec<(usize, usize)>> = runs.iter().filter(|r| r.algorithm == a).map(|r| r.recovery.clone()).collect();
            Series {
                label: a.to_string(),
                points: mean_recovery_curve(&curves).into_iter().map(|(n, m)| (n as f64, m)).collect(),
            }
        })
        .collect();
    out.svg(
        "recovery.svg",
        &line_chart_svg(&series, "samples from trained policy", "modes recovered", &all.render_meta("mode recovery"))?,
    )?;
    let run_rows = runs.iter().map(|r| {
        vec![
            r.algorithm.to_string(),
            r.seed.to_string(),
            num(r.l1_exact),
            num(r.l1_sampled),
            num(r.l1_per_cell),
            r.modes_recovered.to_string(),
        ]
    });
    out.csv(
        "runs.csv",
        &all,
        &csv_body(&["algorithm", "seed", "l1_exact", "l1_sampled", "l1_per_cell", "modes_recovered"], run_rows),
    )?;
    let summary_rows = summaries.iter().map(|s| {
        vec![
            s.algorithm.to_string(),
            s.runs.to_string(),
            num(s.l1_mean),
            num(s.l1_std),
            num(s.l1_median),
            num(s.l1_sampled_mean),
            num(s.l1_per_cell_mean),
            num(s.modes_recovered_mean),
        ]
    });
    out.csv(
        "summary.csv",
        &all,
        &csv_body(
            &[
                "algorithm",
                "runs",
                "l1_mean",
                "l1_std",
                "l1_median",
                "l1_sampled_mean",
                "l1_per_cell_mean",
                "modes_recovered_mean",
            ],
            summary_rows,
        ),
    )?;

    let grpo = &summaries[0];
    let ips = &summaries[1];
    let ratio = grpo.l1_median / ips.l1_median;
    let mut checks = vec![
        Check::new(
            "ordering",
            ips.l1_median <= grpo.l1_median,
            format!("median final l1: ips-grpo {:.4e}, grpo {:.4e}", ips.l1_median, grpo.l1_median),
        ),
        Check::new(
            "l1_ratio",
            ratio >= eval.min_l1_ratio,
            format!("grpo / ips-grpo median l1 = {ratio:.3} (required >= {})", eval.min_l1_ratio),
        ),
    ];
    if eval.recovery_check {
        let ips_counts: Vec<usize> = runs.iter().filter(|r| r.algorithm == Algorithm::IpsGrpo).map(|r| r.modes_recovered).collect();
        let grpo_counts: Vec<usize> = runs.iter().filter(|r| r.algorithm == Algorithm::Grpo).map(|r| r.modes_recovered).collect();
        let fewer: Vec<bool> = grpo_counts.iter().zip(&ips_counts).map(|(g, i)| g < i).collect();
        checks.push(Check::new(
            "ips_recovers_all_modes",
            ips_counts.iter().all(|&c| c == modes.len()),
            format!("ips-grpo modes recovered per seed {ips_counts:?} of {} within {} samples", modes.len(), eval.recovery_budget),
        ));
        checks.push(Check::new(
            "grpo_recovers_fewer",
            majority(&fewer),
            format!("grpo modes recovered per seed {grpo_counts:?}"),
        ));
    }

    let summary = json!({
        "modes": modes.coords.iter().map(|c| coords_label(c)).collect::<Vec<_>>(),
        "algorithms": summaries,
        "runs": runs,
        "l1_ratio": ratio,
        "checks": checks,
        "config": cfg,
    });
    out.json("summary.json", &all, &summary)?;
    let report = ctx.report(Some(&out), checks, summary);
    Ok(HypergridOutcome { runs, summaries, modes, report })
}
