//! Deterministic logit flow on a K-armed bandit under both objectives.

use anyhow::Result;
use ipslab::flow::{
    integrate_flow, max_log_ratio_residual, perturbed_uniform_logits, stationary_distribution, CollapseReport,
    FlowConfig, FlowTrace, Objective,
};
use ipslab::simplex::{l1, Logits, RewardVector};
use serde::Serialize;
use serde_json::json;

use super::{stream_rng, Ctx, INIT_STREAM};
use crate::artifacts::{csv_body, num, Check, Report};
use crate::config::FlowSection;

pub const OBJECTIVES: [Objective; 2] = [Objective::ExpectedReturn, Objective::Ips];

pub fn objective_label(o: Objective) -> &'static str {
    match o {
        Objective::ExpectedReturn => "expected-return",
        Objective::Ips => "ips",
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowRun {
    pub objective: Objective,
    pub seed: u64,
    pub final_probs: Vec<f64>,
    pub collapse: CollapseReport,
    pub collapse_time: Option<f64>,
    /// Largest log-ratio identity residual and the number of steps it covers.
    pub max_residual: f64,
    pub residual_steps: usize,
    /// Largest single-step rise of the potential; `None` without a proportional target.
    pub max_potential_rise: Option<f64>,
    /// ℓ1 to `r / Σ r` at the horizon, when that target exists.
    pub l1_to_target: Option<f64>,
    #[serde(skip)]
    pub trace: FlowTrace,
}

pub struct FlowOutcome {
    pub runs: Vec<FlowRun>,
    pub report: Report,
}

pub fn initial_logits(sec: &FlowSection, seed: u64) -> Result<Logits> {
    Ok(match &sec.init_logits {
        Some(z) => Logits::new(z.clone())?,
        None => perturbed_uniform_logits(sec.rewards.len(), sec.init_noise, &mut stream_rng(seed, INIT_STREAM))?,
    })
}

pub fn integrate_one(sec: &FlowSection, objective: Objective, seed: u64) -> Result<FlowRun> {
    let rewards = RewardVector::new(sec.rewards.clone())?;
    let cfg = FlowConfig {
        rewards: rewards.clone(),
        init_logits: initial_logits(sec, seed)?,
        objective,
        step_size: sec.step_size,
        horizon: sec.horizon,
        integrator: sec.integrator,
    };
    let trace = integrate_flow(&cfg)?;
    let (collapse, collapse_time) = trace.collapse(sec.collapse_threshold)?;
    let (max_residual, residual_steps) = max_log_ratio_residual(&trace, &rewards, sec.min_prob)?;
    let max_potential_rise = trace
        .potential
        .as_ref()
        .map(|psi| psi.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max));
    let l1_to_target = if rewards.admits_proportional_target() {
        Some(l1(trace.final_simplex().probs(), stationary_distribution(&rewards)?.probs()))
    } else {
        None
    };
    Ok(FlowRun {
        objective,
        seed,
        final_probs: trace.final_simplex().probs().to_vec(),
        collapse,
        collapse_time,
        max_residual,
        residual_steps,
        max_potential_rise,
        l1_to_target,
        trace,
    })
}

pub fn run(ctx: &Ctx) -> Result<FlowOutcome> {
    let cfg = ctx.cfg;
    let sec = cfg.flow.clone().expect("validated");
    let k = sec.rewards.len();
    let steps = (sec.horizon / sec.step_size).round() as usize;

    if ctx.dry_run {
        let report = ctx.dry_report(json!({
            "arms": k,
            "steps_per_run": steps,
            "recorded_rows_per_run": steps / sec.record_every + 1,
            "runs": OBJECTIVES.len() * cfg.seeds.len(),
        }));
        return Ok(FlowOutcome { runs: Vec::new(), report });
    }

    let jobs: Vec<(Objective, u64)> =
        OBJECTIVES.iter().flat_map(|&o| cfg.seeds.iter().map(move |&s| (o, s))).collect();
    let runs = ctx
        .par_map(&jobs, |&(o, seed)| integrate_one(&sec, o, seed))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut out = ctx.output()?;
    let mut header = vec!["t".to_string()];
    header.extend((0..k).map(|i| format!("z_{i}")));
    header.extend((0..k).map(|i| format!("p_{i}")));
    header.push("potential".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    for r in &runs {
        let stamp = ctx.stamp(Some(r.seed));
        let stem = format!("{}_seed{}", objective_label(r.objective), r.seed);
        let t = &r.trace;
        let rows = (0..t.len()).filter(|s| s % sec.record_every == 0 || *s + 1 == t.len()).map(|s| {
            std::iter::once(num(t.times[s]))
                .chain(t.logits[s].as_slice().iter().map(|v| num(*v)))
                .chain(t.simplexes[s].probs().iter().map(|v| num(*v)))
                .chain(std::iter::once(t.potential.as_ref().map_or(String::new(), |psi| num(psi[s]))))
                .collect::<Vec<_>>()
        });
        out.csv(&format!("{stem}_trace.csv"), &stamp, &csv_body(&header, rows))?;
        out.json(&format!("{stem}_collapse.json"), &stamp, r)?;
    }

    let all = ctx.stamp(None);
    let rows = runs.iter().map(|r| {
        vec![
            objective_label(r.objective).to_string(),
            r.seed.to_string(),
            num(r.max_residual),
            r.residual_steps.to_string(),
            r.max_potential_rise.map_or(String::new(), num),
            r.collapse.collapsed().to_string(),
            r.collapse_time.map_or(String::new(), num),
            r.l1_to_target.map_or(String::new(), num),
        ]
    });
    out.csv(
        "residuals.csv",
        &all,
        &csv_body(
            &[
                "objective",
                "seed",
                "max_identity_residual",
                "steps_checked",
                "max_potential_rise",
                "collapsed",
                "collapse_time",
                "l1_to_target",
            ],
            rows,
        ),
    )?;

    let mut checks = Vec::new();
    for o in OBJECTIVES {
        let worst = runs.iter().filter(|r| r.objective == o).map(|r| r.max_residual).fold(0.0, f64::max);
        checks.push(Check::new(
            format!("{}_log_ratio_identity", objective_label(o).replace('-', "_")),
            worst <= sec.identity_tol,
            format!("max residual {worst:.3e} (tolerance {:.0e})", sec.identity_tol),
        ));
    }
    let rises: Vec<f64> = runs.iter().filter_map(|r| r.max_potential_rise).collect();
    if !rises.is_empty() {
        let worst = rises.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        checks.push(Check::new(
            "ips_potential_nonincreasing",
            worst <= sec.potential_tol,
            format!("largest single-step rise {worst:.3e} (tolerance {:.0e})", sec.potential_tol),
        ));
    }
    let summary = json!({ "runs": runs, "checks": checks, "config": cfg });
    out.json("summary.json", &all, &summary)?;
    let report = ctx.report(Some(&out), checks, summary);
    Ok(FlowOutcome { runs, report })
}
