//! Two goals with equal reward but unequal path multiplicity: GRPO drifts
//! to the goal with more paths, IPS-GRPO keeps both.

use anyhow::{ensure, Result};
use ipslab::grid::{count_paths, EqualRewardGrid, GridEnv};
use ipslab::metrics::{force_field, mode_frequency_trace, path_exploration, sampling_density, ModeSet, RunLog};
use ipslab::policy::{ActionMasks, TabularPolicy};
use ipslab::render::{heatmap_svg, line_chart_svg, quiver_svg, Series};
use ipslab::trainer::{train_from_uniform, Algorithm};
use serde::Serialize;
use serde_json::json;

use super::{coords_label, fmt_list, majority, sample_terminals, stream_rng, Ctx, SAMPLED_L1_STREAM};
use crate::artifacts::{csv_body, num, Check, Report};
use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Mean group frequency of each goal over the trailing window, in goal order.
    pub final_frequencies: Vec<f64>,
    #[serde(skip)]
    pub trace: Vec<Vec<f64>>,
    #[serde(skip)]
    pub exploration: Vec<usize>,
    #[serde(skip)]
    pub density: Vec<f64>,
    #[serde(skip)]
    pub policy: TabularPolicy,
    #[serde(skip)]
    pub log: RunLog,
}

pub struct EqualRewardOutcome {
    pub goals: ModeSet,
    pub path_counts: Vec<u64>,
    pub runs: Vec<RunResult>,
    pub report: Report,
}

impl EqualRewardOutcome {
    pub fn runs_of(&self, alg: Algorithm) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.algorithm == alg)
    }
}

/// The goals as a mode set, kept in configuration order.
pub fn goal_modes(env: &EqualRewardGrid) -> ModeSet {
    let lattice = env.lattice();
    ModeSet { cells: env.goals.iter().map(|g| lattice.index(g)).collect(), coords: env.goals.clone() }
}

fn train_one(cfg: &ExperimentConfig, env: &EqualRewardGrid, alg: Algorithm, seed: u64) -> Result<RunResult> {
    let eval = cfg.eval();
    let goals = goal_modes(env);
    let (policy, log) = train_from_uniform(env, &cfg.train().to_train(alg, seed))?;
    let trace = mode_frequency_trace(&log, &goals)?;
    let tail = ((trace.len() as f64 * eval.final_fraction).ceil() as usize).clamp(1, trace.len());
    let window = &trace[trace.len() - tail..];
    let final_frequencies =
        (0..goals.len()).map(|i| window.iter().map(|row| row[i]).sum::<f64>() / window.len() as f64).collect();
    let exploration = path_exploration(&log, eval.exploration_window)?;
    let masks = ActionMasks::new(env)?;
    let mut rng = stream_rng(seed, SAMPLED_L1_STREAM);
    let samples = sample_terminals(&policy, &masks, env, eval.samples, &mut rng)?;
    let density = sampling_density(&samples, env.lattice())?.probs;
    Ok(RunResult { algorithm: alg, seed, final_frequencies, trace, exploration, density, policy, log })
}

pub fn run(ctx: &Ctx) -> Result<EqualRewardOutcome> {
    let cfg = ctx.cfg;
    let env = cfg.equal_reward.clone().expect("validated");
    ensure!(env.lattice().dims == 2, "the equal-reward study runs on a 2-D grid");
    let lattice = env.lattice();
    let goals = goal_modes(&env);
    let path_counts = env.goals.iter().map(|g| count_paths(&lattice, g)).collect::<Result<Vec<_>, _>>()?;
    let preflight: Vec<String> =
        env.goals.iter().zip(&path_counts).map(|(g, n)| format!("{} has {n} monotone paths", coords_label(g))).collect();

    if ctx.dry_run {
        let report = ctx.dry_report(json!({ "preflight": preflight, "runs": 2 * cfg.seeds.len() }));
        return Ok(EqualRewardOutcome { goals, path_counts, runs: Vec::new(), report });
    }

    let jobs: Vec<(Algorithm, u64)> =
        [Algorithm::Grpo, Algorithm::IpsGrpo].iter().flat_map(|&a| cfg.seeds.iter().map(move |&s| (a, s))).collect();
    let runs = ctx
        .par_map(&jobs, |&(alg, seed)| train_one(cfg, &env, alg, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let eval = cfg.eval();
    let labels: Vec<String> = env.goals.iter().map(|g| format!("goal_{}_{}", g[0], g[1])).collect();
    let mut out = ctx.output()?;
    for r in &runs {
        let stamp = ctx.stamp(Some(r.seed));
        let stem = format!("{}_seed{}", r.algorithm, r.seed);
        out.csv(&format!("{stem}_log.csv"), &stamp, &r.log.to_csv(""))?;

        // (a) sampling density
        let rows = (0..lattice.num_cells()).map(|c| {
            let x = lattice.coords(c);
            vec![x[0].to_string(), x[1].to_string(), num(r.density[c])]
        });
        out.csv(&format!("{stem}_density.csv"), &stamp, &csv_body(&["x_1", "x_2", "frequency"], rows))?;
        let meta = stamp.render_meta(format!("{} seed {} sampling density", r.algorithm, r.seed));
        out.svg(&format!("{stem}_density.svg"), &heatmap_svg(&lattice, &r.density, &meta)?)?;

        // (b) force field
        let field = force_field(&r.policy, &env)?;
        let rows = field.vectors.iter().enumerate().map(|(c, v)| {
            let x = lattice.coords(c);
            vec![x[0].to_string(), x[1].to_string(), num(v[0]), num(v[1])]
        });
        out.csv(&format!("{stem}_force_field.csv"), &stamp, &csv_body(&["x_1", "x_2", "dx_1", "dx_2"], rows))?;
        let meta = stamp.render_meta(format!("{} seed {} force field", r.algorithm, r.seed));
        out.svg(&format!("{stem}_force_field.svg"), &quiver_svg(&field, &meta)?)?;

        // (c) mode frequency
        let mut header = vec!["update"];
        header.extend(labels.iter().map(String::as_str));
        let rows = r.trace.iter().enumerate().map(|(u, f)| std::iter::once(u.to_string()).chain(f.iter().map(|v| num(*v))).collect::<Vec<_>>());
        out.csv(&format!("{stem}_mode_frequency.csv"), &stamp, &csv_body(&header, rows))?;
        let series: Vec<Series> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| Series { label: l.clone(), points: r.trace.iter().enumerate().map(|(u, f)| (u as f64, f[i])).collect() })
            .collect();
        let meta = stamp.render_meta(format!("{} seed {} mode frequency", r.algorithm, r.seed));
        out.svg(&format!("{stem}_mode_frequency.svg"), &line_chart_svg(&series, "update", "group frequency", &meta)?)?;

        // (d) path exploration
        let w = eval.exploration_window;
        let rows = r.exploration.iter().enumerate().map(|(i, n)| vec![(i * w).to_string(), ((i + 1) * w).min(r.trace.len()).to_string(), n.to_string()]);
        out.csv(
            &format!("{stem}_path_exploration.csv"),
            &stamp,
            &csv_body(&["window_start", "window_end", "distinct_edges"], rows),
        )?;
        let series = [Series {
            label: "distinct edges".into(),
            points: r.exploration.iter().enumerate().map(|(i, n)| ((i * w) as f64, *n as f64)).collect(),
        }];
        let meta = stamp.render_meta(format!("{} seed {} path exploration", r.algorithm, r.seed));
        out.svg(&format!("{stem}_path_exploration.svg"), &line_chart_svg(&series, "update", "distinct edges per window", &meta)?)?;
    }

    let [lo, hi] = eval.balance_band;
    let collapse: Vec<bool> =
        runs.iter().filter(|r| r.algorithm == Algorithm::Grpo).map(|r| r.final_frequencies[0] >= eval.collapse_freq).collect();
    let balance: Vec<bool> = runs
        .iter()
        .filter(|r| r.algorithm == Algorithm::IpsGrpo)
        .map(|r| r.final_frequencies.iter().all(|f| (lo..=hi).contains(f)))
        .collect();
    let first_freqs = |alg| -> Vec<f64> { runs.iter().filter(|r| r.algorithm == alg).map(|r| r.final_frequencies[0]).collect() };
    let checks = vec![
        Check::new(
            "grpo_collapses_to_first_goal",
            majority(&collapse),
            format!(
                "grpo {} frequency per seed {} (required >= {} on a majority)",
                labels[0],
                fmt_list(&first_freqs(Algorithm::Grpo)),
                eval.collapse_freq
            ),
        ),
        Check::new(
            "ips_keeps_goals_balanced",
            majority(&balance),
            format!(
                "ips-grpo {} frequency per seed {} (every goal in [{lo}, {hi}] on a majority)",
                labels[0],
                fmt_list(&first_freqs(Algorithm::IpsGrpo))
            ),
        ),
    ];
    let all = ctx.stamp(None);
    let rows = runs.iter().map(|r| {
        [r.algorithm.to_string(), r.seed.to_string()].into_iter().chain(r.final_frequencies.iter().map(|f| num(*f))).collect::<Vec<_>>()
    });
    let mut header = vec!["algorithm", "seed"];
    header.extend(labels.iter().map(String::as_str));
    out.csv("summary.csv", &all, &csv_body(&header, rows))?;
    let summary = json!({
        "preflight": preflight,
        "goals": env.goals,
        "path_counts": path_counts,
        "window_fraction": eval.final_fraction,
        "runs": runs,
        "checks": checks,
        "config": cfg,
    });
    out.json("summary.json", &all, &summary)?;
    let report = ctx.report(Some(&out), checks, summary);
    Ok(EqualRewardOutcome { goals, path_counts, runs, report })
}
