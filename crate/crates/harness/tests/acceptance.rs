//! Acceptance suite: one line per criterion, each with its runtime budget.
//!
//! Criteria listed in `KNOWN_GAPS` are reported as measured but do not fail
//! the process; every other criterion must pass. A known gap that starts
//! passing is flagged so the list can be pruned.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use ipslab::flow::{
    integrate_flow, max_log_ratio_residual, stationary_distribution, FlowConfig, Integrator, Objective,
};
use ipslab::grid::{count_paths, GridEnv, GridSpec, Lattice};
use ipslab::policy::{sample_with_masks, terminal_distribution_with_masks, ActionMasks, TabularPolicy};
use ipslab::sampling::seeded_rng;
use ipslab::simplex::{l1, Logits, RewardVector};
use ipslab::trainer::{group_advantages, ips_scale_rewards, Surrogate, TrainConfig, Trainer};
use ipslab_harness::config::{Experiment, ExperimentConfig};
use ipslab_harness::experiments::{self, Ctx};
use rand::Rng;

/// Criteria that fail at desk scale; see README "Known gaps".
const KNOWN_GAPS: [u32; 3] = [5, 7, 10];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict { passed, detail: detail.into() }
}

fn config(exp: Experiment, toml: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(toml, exp).expect("acceptance config");
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn random_flow(objective: Objective, seed: u64) -> (FlowConfig, RewardVector) {
    let mut rng = seeded_rng(seed);
    let rewards = RewardVector::new((0..5).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap();
    let init = Logits::new((0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let cfg = FlowConfig {
        rewards: rewards.clone(),
        init_logits: init,
        objective,
        step_size: 1e-3,
        horizon: 5.0,
        integrator: Integrator::Rk4,
    };
    (cfg, rewards)
}

fn identity(objective: Objective) -> Verdict {
    let mut worst = 0.0f64;
    let mut steps = 0;
    for seed in 1..=5 {
        let (cfg, r) = random_flow(objective, seed);
        let trace = integrate_flow(&cfg).unwrap();
        let (res, n) = max_log_ratio_residual(&trace, &r, 1e-6).unwrap();
        worst = worst.max(res);
        steps += n;
    }
    verdict(worst <= 1e-6, format!("max residual {worst:.2e} over {steps} pair-steps, 5 random draws (tol 1e-6)"))
}

fn c1() -> Verdict {
    identity(Objective::ExpectedReturn)
}

fn c2() -> Verdict {
    identity(Objective::Ips)
}

fn c3() -> Verdict {
    let r = RewardVector::new(vec![2.0, 1.0, 1.0]).unwrap();
    let target = stationary_distribution(&r).unwrap();
    let mut worst_l1 = 0.0f64;
    let mut worst_rise = f64::NEG_INFINITY;
    for seed in 1..=10 {
        let mut rng = seeded_rng(seed);
        let init = Logits::new((0..3).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let trace = integrate_flow(&FlowConfig {
            rewards: r.clone(),
            init_logits: init,
            objective: Objective::Ips,
            step_size: 1e-2,
            horizon: 100.0,
            integrator: Integrator::Rk4,
        })
        .unwrap();
        worst_l1 = worst_l1.max(l1(trace.final_simplex().probs(), target.probs()));
        let psi = trace.potential.as_ref().unwrap();
        worst_rise = psi.windows(2).map(|w| w[1] - w[0]).fold(worst_rise, f64::max);
    }
    verdict(
        worst_l1 <= 1e-4 && worst_rise <= 1e-10,
        format!("worst l1 to (0.5, 0.25, 0.25) {worst_l1:.2e}, largest potential rise {worst_rise:.2e}"),
    )
}

fn c4() -> Verdict {
    let trace = integrate_flow(&FlowConfig {
        rewards: RewardVector::new(vec![1.0, 0.9]).unwrap(),
        init_logits: Logits::zeros(2).unwrap(),
        objective: Objective::ExpectedReturn,
        step_size: 1e-2,
        horizon: 1000.0,
        integrator: Integrator::Rk4,
    })
    .unwrap();
    let (collapse, time) = trace.collapse(0.99).unwrap();
    let ratios: Vec<f64> = trace.logits.iter().map(|z| z.as_slice()[0] - z.as_slice()[1]).collect();
    let increasing = ratios.windows(2).all(|w| w[1] > w[0]);
    verdict(
        collapse.collapsed() && increasing,
        format!(
            "max p = {:.4} (onset t = {}), log-ratio strictly increasing over {} steps: {increasing}",
            collapse.final_max,
            time.map_or("none".into(), |t| format!("{t:.1}")),
            ratios.len()
        ),
    )
}

fn c5(out: &Path) -> Verdict {
    let cfg = config(Experiment::BanditStochastic, "", out);
    let ctx = Ctx::new(&cfg, 0, false).unwrap();
    let o = experiments::bandit_stochastic::run(&ctx).unwrap();
    verdict(
        o.report.passed(),
        format!(
            "{} seeds: expected return collapsed on {:.0}%, IPS within l1 0.2 of uniform on {:.0}% (each needs 80%)",
            cfg.seeds.len(),
            100.0 * o.collapse_fraction,
            100.0 * o.on_target_fraction
        ),
    )
}

fn gradient_mismatches(seed: u64) -> (usize, usize) {
    let env = GridSpec::new(2, 3, 0.1, 0.5, 2.0).unwrap();
    let lat = env.lattice();
    let masks = ActionMasks::new(&env).unwrap();
    let mut rng = seeded_rng(seed);
    let mut logits = || -> Vec<f64> { (0..lat.num_cells() * lat.num_actions()).map(|_| rng.gen_range(-0.8..0.8)).collect() };
    let behaviour = TabularPolicy::from_logits(lat, logits()).unwrap();
    let reference = TabularPolicy::from_logits(lat, logits()).unwrap();
    let trainer = Trainer::new(&env, TrainConfig { group_size: 12, ..TrainConfig::default() }).unwrap();
    let batch = trainer.sample_group(&behaviour, &mut seeded_rng(seed + 100)).unwrap();
    let advantages = group_advantages(&ips_scale_rewards(&batch, 0.2).unwrap());
    let old: Vec<f64> = batch.trajectories.iter().map(|t| t.logprob).collect();
    let s = Surrogate {
        batch: &batch,
        advantages: &advantages,
        old_logprobs: &old,
        reference: &reference,
        entropy_coef: 0.01,
        kl_coef: 0.05,
        ppo_clip_ratio: None,
    };
    let mut current = behaviour.clone();
    let mut drift = seeded_rng(seed + 200);
    for z in current.logits_mut() {
        *z += drift.gen_range(-0.05..0.05);
    }
    let grad = s.gradient(&current, &masks).unwrap();
    let h = 1e-6;
    let (mut bad, mut checked) = (0, 0);
    for k in 0..grad.len() {
        if !masks.row(k / lat.num_actions())[k % lat.num_actions()] {
            continue;
        }
        let mut up = current.clone();
        up.logits_mut()[k] += h;
        let mut dn = current.clone();
        dn.logits_mut()[k] -= h;
        let numeric = (s.objective(&up, &masks).unwrap() - s.objective(&dn, &masks).unwrap()) / (2.0 * h);
        if (numeric - grad[k]).abs() > 1e-4 * numeric.abs().max(grad[k].abs()).max(1e-3) {
            bad += 1;
        }
        checked += 1;
    }
    (bad, checked)
}

fn c6() -> Verdict {
    let lat = Lattice::new(2, 7).unwrap();
    let a = count_paths(&lat, &[4, 3]).unwrap();
    let b = count_paths(&lat, &[6, 1]).unwrap();

    let env = GridSpec::default();
    let glat = env.lattice();
    let masks = ActionMasks::new(&env).unwrap();
    let mut rng = seeded_rng(6);
    let pol = TabularPolicy::from_logits(
        glat,
        (0..glat.num_cells() * glat.num_actions()).map(|_| rng.gen_range(-1.5..1.5)).collect(),
    )
    .unwrap();
    let exact = terminal_distribution_with_masks(&pol, &masks);
    let n = 100_000;
    let mut counts = vec![0.0; glat.num_cells()];
    for _ in 0..n {
        counts[sample_with_masks(&pol, &masks, &env, &mut rng).unwrap().terminal_cell] += 1.0;
    }
    let mc: Vec<f64> = counts.iter().map(|c| c / n as f64).collect();
    let mc_l1 = l1(exact.probs(), &mc);

    let (mut bad, mut checked) = (0, 0);
    for seed in 1..=3 {
        let (b_, c_) = gradient_mismatches(seed);
        bad += b_;
        checked += c_;
    }
    verdict(
        a == 35 && b == 7 && mc_l1 <= 0.02 && bad == 0,
        format!(
            "paths (4,3) = {a}, (6,1) = {b}; exact vs 1e5-sample l1 {mc_l1:.4}; {bad} of {checked} logits off finite differences on 3x3"
        ),
    )
}

/// Criterion 7 and criterion 10 share the n = 2 run.
fn c7_and_10(out: &Path) -> ((Verdict, Duration), (Verdict, Duration)) {
    let start = Instant::now();
    let cfg = config(Experiment::Hypergrid, "", &out.join("n2"));
    let ctx = Ctx::new(&cfg, 0, false).unwrap();
    let n2 = experiments::hypergrid::run(&ctx).unwrap();
    let shared = start.elapsed();

    let cfg4 = config(Experiment::Hypergrid, "[grid]\nn = 4\n[eval]\nrecovery_check = false\n", &out.join("n4"));
    let ctx4 = Ctx::new(&cfg4, 0, false).unwrap();
    let n4 = experiments::hypergrid::run(&ctx4).unwrap();
    let t7 = start.elapsed();

    let check = |report: &ipslab_harness::artifacts::Report, name: &str| {
        report.checks.iter().find(|c| c.name == name).map(|c| (c.passed, c.detail.clone())).unwrap()
    };
    let (ratio_ok, ratio) = check(&n2.report, "l1_ratio");
    let (order_ok, order) = check(&n4.report, "ordering");
    let v7 = verdict(ratio_ok && order_ok, format!("n=2: {ratio}; n=4: {order}"));

    let (all_ok, all) = check(&n2.report, "ips_recovers_all_modes");
    let (fewer_ok, fewer) = check(&n2.report, "grpo_recovers_fewer");
    let v10 = verdict(all_ok && fewer_ok, format!("{all}; {fewer}"));
    ((v7, t7), (v10, shared))
}

fn c8(out: &Path) -> Verdict {
    let cfg = config(Experiment::EqualReward, "", out);
    let ctx = Ctx::new(&cfg, 0, false).unwrap();
    let o = experiments::equal_reward::run(&ctx).unwrap();
    let lines: Vec<String> = o.report.checks.iter().map(|c| format!("{}: {}", c.name, c.detail)).collect();
    verdict(o.report.passed(), lines.join("; "))
}

fn c9(out: &Path) -> Verdict {
    let toml = "[ablation]\ngroup_sizes = [4, 16]\nclip_eps = [0.2]\n[train]\nupdates = 500\n";
    let cfg = config(Experiment::Ablation, toml, out);
    let ctx = Ctx::new(&cfg, 0, false).unwrap();
    let o = experiments::ablation::run(&ctx).unwrap();
    let same = o.reductions.iter().filter(|r| r.2).count();
    verdict(
        !o.reductions.is_empty() && same == o.reductions.len(),
        format!("{same} of {} (group size, seed) runs at eps = 1 bitwise identical to GRPO", o.reductions.len()),
    )
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let timed = |f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = f();
        (v, start.elapsed())
    };
    let mut results: Vec<(u32, &str, Duration, Verdict, Duration)> = Vec::new();
    let secs = Duration::from_secs;
    let (v, t) = timed(&c1);
    results.push((1, "expected-return log-ratio identity", secs(5), v, t));
    let (v, t) = timed(&c2);
    results.push((2, "IPS log-ratio identity", secs(5), v, t));
    let (v, t) = timed(&c3);
    results.push((3, "IPS flow converges to r / sum r", secs(10), v, t));
    let (v, t) = timed(&c4);
    results.push((4, "deterministic collapse with a reward gap", secs(5), v, t));
    let (v, t) = timed(&|| c5(&dir.path().join("c5")));
    results.push((5, "stochastic rich-get-richer", secs(60), v, t));
    let (v, t) = timed(&c6);
    results.push((6, "oracles: path counts, exact vs sampled, gradients", secs(60), v, t));
    let ((v7, t7), (v10, t10)) = c7_and_10(&dir.path().join("c7"));
    results.push((7, "hyper-grid l1 ordering and ratio", secs(600), v7, t7));
    let (v, t) = timed(&|| c8(&dir.path().join("c8")));
    results.push((8, "equal-reward mechanism", secs(300), v, t));
    let (v, t) = timed(&|| c9(&dir.path().join("c9")));
    results.push((9, "eps = 1 reduces to GRPO", secs(60), v, t));
    results.push((10, "mode recovery", secs(300), v10, t10));

    let mut blocking = 0;
    for (id, name, budget, v, took) in &results {
        let in_time = took <= budget;
        let ok = v.passed && in_time;
        let gap = KNOWN_GAPS.contains(id);
        let note = match (ok, gap) {
            (false, true) => " [known gap]",
            (true, true) => " [known gap now passing]",
            _ => "",
        };
        println!(
            "[{}] criterion {id} {name} ({:.2}s of {}s): {}{note}",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs(),
            v.detail
        );
        if !ok && !gap {
            blocking += 1;
        }
    }
    let passed = results.iter().filter(|r| r.3.passed && r.4 <= r.2).count();
    println!("acceptance: {passed} of {} criteria pass, {blocking} unexpected failures", results.len());
    if blocking == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
