//! Sampled group updates on a bandit with equal rewards: expected return
//! collapses onto one arm, IPS stays near uniform.

use anyhow::Result;
use ipslab::flow::{
    detect_collapse, perturbed_uniform_logits, simulate_stochastic, stationary_distribution, CollapseReport,
    Objective, StochasticRunConfig, StochasticTrace,
};
use ipslab::simplex::{l1, Logits, RewardVector};
use serde::Serialize;
use serde_json::json;

use super::bandit_flow::{objective_label, OBJECTIVES};
use super::{stream_rng, Ctx, INIT_STREAM};
use crate::artifacts::{csv_body, num, Check, Report};
use crate::config::StochasticSection;

#[derive(Debug, Clone, Serialize)]
pub struct StochasticRun {
    pub objective: Objective,
    pub seed: u64,
    pub final_probs: Vec<f64>,
    pub collapse: CollapseReport,
    pub l1_to_target: f64,
    #[serde(skip)]
    pub trace: StochasticTrace,
}

pub struct StochasticOutcome {
    pub runs: Vec<StochasticRun>,
    /// Fraction of expected-return seeds that collapsed.
    pub collapse_fraction: f64,
    /// Fraction of IPS seeds that finished within the target ℓ1.
    pub on_target_fraction: f64,
    pub report: Report,
}

pub fn simulate_one(sec: &StochasticSection, objective: Objective, seed: u64) -> Result<StochasticRun> {
    let rewards = RewardVector::new(sec.rewards.clone())?;
    let init_logits = match &sec.init_logits {
        Some(z) => Logits::new(z.clone())?,
        None => perturbed_uniform_logits(sec.rewards.len(), sec.init_noise, &mut stream_rng(seed, INIT_STREAM))?,
    };
    let trace = simulate_stochastic(&StochasticRunConfig {
        rewards: rewards.clone(),
        init_logits,
        objective,
        group_size: sec.group_size,
        learning_rate: sec.learning_rate,
        updates: sec.updates,
        seed,
        clip_eps: sec.clip_eps,
        baseline: sec.baseline,
    })?;
    let collapse = detect_collapse(&trace.simplexes, sec.collapse_threshold)?;
    let l1_to_target = l1(trace.final_simplex().probs(), stationary_distribution(&rewards)?.probs());
    Ok(StochasticRun {
        objective,
        seed,
        final_probs: trace.final_simplex().probs().to_vec(),
        collapse,
        l1_to_target,
        trace,
    })
}

pub fn run(ctx: &Ctx) -> Result<StochasticOutcome> {
    let cfg = ctx.cfg;
    let sec = cfg.stochastic.clone().expect("validated");
    let k = sec.rewards.len();

    if ctx.dry_run {
        let report = ctx.dry_report(json!({
            "arms": k,
            "updates_per_run": sec.updates,
            "runs": OBJECTIVES.len() * cfg.seeds.len(),
        }));
        return Ok(StochasticOutcome { runs: Vec::new(), collapse_fraction: 0.0, on_target_fraction: 0.0, report });
    }

    let jobs: Vec<(Objective, u64)> =
        OBJECTIVES.iter().flat_map(|&o| cfg.seeds.iter().map(move |&s| (o, s))).collect();
    let runs = ctx
        .par_map(&jobs, |&(o, seed)| simulate_one(&sec, o, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut out = ctx.output()?;
    let mut header = vec!["update".to_string()];
    header.extend((0..k).map(|i| format!("p_{i}")));
    header.extend((0..k).map(|i| format!("count_{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    for r in &runs {
        let stamp = ctx.stamp(Some(r.seed));
        let stem = format!("{}_seed{}", objective_label(r.objective), r.seed);
        let t = &r.trace;
        let last = t.simplexes.len() - 1;
        let rows = (0..t.simplexes.len()).filter(|u| u % sec.record_every == 0 || *u == last).map(|u| {
            // Counts at row u are the group that produced simplex u.
            let counts = if u == 0 { vec![String::new(); k] } else { t.counts[u - 1].iter().map(|c| c.to_string()).collect() };
            std::iter::once(u.to_string())
                .chain(t.simplexes[u].probs().iter().map(|v| num(*v)))
                .chain(counts)
                .collect::<Vec<_>>()
        });
        out.csv(&format!("{stem}_trace.csv"), &stamp, &csv_body(&header, rows))?;
    }

    let all = ctx.stamp(None);
    let rows = runs.iter().map(|r| {
        let mut row = vec![objective_label(r.objective).to_string(), r.seed.to_string()];
        row.extend(r.final_probs.iter().map(|p| num(*p)));
        row.push(r.collapse.collapsed().to_string());
        row.push(num(r.l1_to_target));
        row
    });
    let mut head = vec!["objective".to_string(), "seed".to_string()];
    head.extend((0..k).map(|i| format!("final_p_{i}")));
    head.extend(["collapsed".to_string(), "l1_to_target".to_string()]);
    let head: Vec<&str> = head.iter().map(String::as_str).collect();
    out.csv("runs.csv", &all, &csv_body(&head, rows))?;

    let fraction = |o: Objective, pred: &dyn Fn(&StochasticRun) -> bool| {
        let of: Vec<&StochasticRun> = runs.iter().filter(|r| r.objective == o).collect();
        of.iter().filter(|r| pred(r)).count() as f64 / of.len() as f64
    };
    let collapse_fraction = fraction(Objective::ExpectedReturn, &|r| r.collapse.collapsed());
    let on_target_fraction = fraction(Objective::Ips, &|r| r.l1_to_target <= sec.target_l1);
    let checks = vec![
        Check::new(
            "expected_return_collapses",
            collapse_fraction >= sec.min_pass_fraction,
            format!(
                "{:.0}% of seeds reach max p >= {} (required {:.0}%)",
                100.0 * collapse_fraction,
                sec.collapse_threshold,
                100.0 * sec.min_pass_fraction
            ),
        ),
        Check::new(
            "ips_stays_near_target",
            on_target_fraction >= sec.min_pass_fraction,
            format!(
                "{:.0}% of seeds end within l1 {} of r / sum r (required {:.0}%)",
                100.0 * on_target_fraction,
                sec.target_l1,
                100.0 * sec.min_pass_fraction
            ),
        ),
    ];
    let summary = json!({
        "collapse_fraction": collapse_fraction,
        "on_target_fraction": on_target_fraction,
        "runs": runs,
        "checks": checks,
        "config": cfg,
    });
    out.json("summary.json", &all, &summary)?;
    let report = ctx.report(Some(&out), checks, summary);
    Ok(StochasticOutcome { runs, collapse_fraction, on_target_fraction, report })
}
