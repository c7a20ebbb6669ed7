//! Group size × clipping threshold sweep of IPS-GRPO on the hyper-grid.

use anyhow::Result;
use ipslab::grid::{enumerate_target, GridEnv, ENUMERATION_CAP};
use ipslab::metrics::{mean_std, mode_recovery_curve, ModeSet, UpdateRecord};
use ipslab::policy::{terminal_distribution_with_masks, ActionMasks};
use ipslab::simplex::l1;
use ipslab::trainer::{train_from_uniform, Algorithm};
use serde::Serialize;
use serde_json::json;

use super::{sample_terminals, stream_rng, Ctx, RECOVERY_STREAM};
use crate::artifacts::{csv_body, num, Check, Report};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Job {
    Cell { group_size: usize, clip_eps: f64, seed: u64 },
    Reference { group_size: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
struct Trained {
    l1: f64,
    modes_recovered: usize,
    records: Vec<UpdateRecord>,
    logits: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellResult {
    pub group_size: usize,
    pub clip_eps: f64,
    pub runs: usize,
    pub failures: Vec<String>,
    pub l1_mean: f64,
    pub l1_std: f64,
    pub modes_recovered_mean: f64,
    pub modes_recovered_std: f64,
    pub per_seed_l1: Vec<Option<f64>>,
}

pub struct AblationOutcome {
    pub cells: Vec<CellResult>,
    /// `(group_size, seed, identical)` for every `ε = 1` comparison.
    pub reductions: Vec<(usize, u64, bool)>,
    pub report: Report,
}

pub fn run(ctx: &Ctx) -> Result<AblationOutcome> {
    let cfg = ctx.cfg;
    let env = *cfg.grid();
    let sweep = cfg.ablation.clone().expect("validated");
    let eval = cfg.eval();
    env.lattice().ensure_enumerable(ENUMERATION_CAP)?;

    let mut eps_list = sweep.clip_eps.clone();
    if sweep.reduction_check && !eps_list.contains(&1.0) {
        eps_list.push(1.0);
    }
    let mut jobs = Vec::new();
    for &group_size in &sweep.group_sizes {
        for &clip_eps in &eps_list {
            jobs.extend(cfg.seeds.iter().map(|&seed| Job::Cell { group_size, clip_eps, seed }));
        }
        if sweep.reduction_check {
            jobs.extend(cfg.seeds.iter().map(|&seed| Job::Reference { group_size, seed }));
        }
    }

    if ctx.dry_run {
        let report = ctx.dry_report(json!({
            "cells": sweep.group_sizes.len() * eps_list.len(),
            "clip_eps_columns": eps_list,
            "runs": jobs.len(),
        }));
        return Ok(AblationOutcome { cells: Vec::new(), reductions: Vec::new(), report });
    }

    let target = enumerate_target(&env)?;
    let modes = ModeSet::from_env(&env)?;
    let masks = ActionMasks::new(&env)?;
    let results: Vec<Result<Trained, String>> = ctx.par_map(&jobs, |job| {
        let (alg, group_size, clip_eps, seed) = match *job {
            Job::Cell { group_size, clip_eps, seed } => (Algorithm::IpsGrpo, group_size, clip_eps, seed),
            Job::Reference { group_size, seed } => (Algorithm::Grpo, group_size, 1.0, seed),
        };
        let mut train = cfg.train().to_train(alg, seed);
        train.group_size = group_size;
        train.clip_eps = clip_eps;
        let go = || -> Result<Trained> {
            let (pol, log) = train_from_uniform(&env, &train)?;
            let p = terminal_distribution_with_masks(&pol, &masks);
            let mut rng = stream_rng(seed, RECOVERY_STREAM);
            let stream = sample_terminals(&pol, &masks, &env, eval.recovery_budget, &mut rng)?;
            let modes_recovered = mode_recovery_curve(&stream, &modes).last().map_or(0, |p| p.1);
            Ok(Trained {
                l1: l1(p.probs(), target.probs()),
                modes_recovered,
                records: log.records,
                logits: pol.logits().iter().map(|z| z.to_bits()).collect(),
            })
        };
        go().map_err(|e| format!("{e:#}"))
    });

    let find = |want: &Job| jobs.iter().position(|j| j == want).expect("job exists");
    let mut cells = Vec::new();
    for &group_size in &sweep.group_sizes {
        for &clip_eps in &eps_list {
            let per_seed: Vec<&Result<Trained, String>> =
                cfg.seeds.iter().map(|&seed| &results[find(&Job::Cell { group_size, clip_eps, seed })]).collect();
            let ok: Vec<&Trained> = per_seed.iter().filter_map(|r| r.as_ref().ok()).collect();
            let failures = cfg
                .seeds
                .iter()
                .zip(&per_seed)
                .filter_map(|(s, r)| r.as_ref().err().map(|e| format!("seed {s}: {e}")))
                .collect();
            let (l1_mean, l1_std) = mean_std(&ok.iter().map(|t| t.l1).collect::<Vec<_>>());
            let (modes_recovered_mean, modes_recovered_std) =
                mean_std(&ok.iter().map(|t| t.modes_recovered as f64).collect::<Vec<_>>());
            cells.push(CellResult {
                group_size,
                clip_eps,
                runs: per_seed.len(),
                failures,
                l1_mean,
                l1_std,
                modes_recovered_mean,
                modes_recovered_std,
                per_seed_l1: per_seed.iter().map(|r| r.as_ref().ok().map(|t| t.l1)).collect(),
            });
        }
    }

    let mut reductions = Vec::new();
    if sweep.reduction_check {
        for &group_size in &sweep.group_sizes {
            for &seed in &cfg.seeds {
                let a = &results[find(&Job::Cell { group_size, clip_eps: 1.0, seed })];
                let b = &results[find(&Job::Reference { group_size, seed })];
                let same = matches!((a, b), (Ok(x), Ok(y)) if x.logits == y.logits && bitwise_equal(&x.records, &y.records));
                reductions.push((group_size, seed, same));
            }
        }
    }

    let mut out = ctx.output()?;
    let all = ctx.stamp(None);
    let rows = cells.iter().map(|c| {
        vec![
            c.group_size.to_string(),
            num(c.clip_eps),
            c.runs.to_string(),
            c.failures.len().to_string(),
            num(c.l1_mean),
            num(c.l1_std),
            num(c.modes_recovered_mean),
            num(c.modes_recovered_std),
        ]
    });
    out.csv(
        "ablation.csv",
        &all,
        &csv_body(
            &[
                "group_size",
                "clip_eps",
                "runs",
                "failures",
                "l1_mean",
                "l1_std",
                "modes_recovered_mean",
                "modes_recovered_std",
            ],
            rows,
        ),
    )?;

    // Rows are group sizes, columns clipping thresholds.
    let mut header = vec!["group_size".to_string()];
    header.extend(eps_list.iter().map(|e| format!("eps={e}")));
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = sweep.group_sizes.iter().map(|&g| {
        std::iter::once(g.to_string())
            .chain(eps_list.iter().map(|&e| {
                let c = cells.iter().find(|c| c.group_size == g && c.clip_eps == e).expect("cell");
                format!("{:.4e} ± {:.1e}", c.l1_mean, c.l1_std)
            }))
            .collect::<Vec<_>>()
    });
    out.csv("ablation_table.csv", &all, &csv_body(&header_refs, rows))?;

    let run_rows = jobs.iter().zip(&results).map(|(job, r)| {
        let (alg, g, e, s) = match *job {
            Job::Cell { group_size, clip_eps, seed } => ("ips-grpo", group_size, clip_eps, seed),
            Job::Reference { group_size, seed } => ("grpo", group_size, 1.0, seed),
        };
        let (l, m, err) = match r {
            Ok(t) => (num(t.l1), t.modes_recovered.to_string(), String::new()),
            Err(e) => (String::new(), String::new(), e.clone()),
        };
        vec![alg.to_string(), g.to_string(), num(e), s.to_string(), l, m, err]
    });
    out.csv(
        "runs.csv",
        &all,
        &csv_body(&["algorithm", "group_size", "clip_eps", "seed", "l1_exact", "modes_recovered", "error"], run_rows),
    )?;

    let failed: usize = cells.iter().map(|c| c.failures.len()).sum();
    let mut checks = vec![Check::new(
        "all_runs_completed",
        failed == 0,
        format!("{} runs over {} cells, {failed} failed", jobs.len(), cells.len()),
    )];
    if sweep.reduction_check {
        let same = reductions.iter().filter(|r| r.2).count();
        checks.push(Check::new(
            "eps_one_matches_grpo_bitwise",
            same == reductions.len(),
            format!("{same} of {} (group size, seed) pairs identical", reductions.len()),
        ));
    }
    let summary = json!({ "cells": cells, "reductions": reductions, "checks": checks, "config": cfg });
    out.json("summary.json", &all, &summary)?;
    let report = ctx.report(Some(&out), checks, summary);
    Ok(AblationOutcome { cells, reductions, report })
}

fn bitwise_equal(a: &[UpdateRecord], b: &[UpdateRecord]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.outcomes == y.outcomes
                && x.edges == y.edges
                && x.l1_exact.to_bits() == y.l1_exact.to_bits()
                && x.entropy.to_bits() == y.entropy.to_bits()
                && x.kl.to_bits() == y.kl.to_bits()
        })
}
