//! Closed-form surrogate gradient against central finite differences.

use ipslab::grid::{GridEnv, GridSpec};
use ipslab::policy::{ActionMasks, TabularPolicy};
use ipslab::sampling::seeded_rng;
use ipslab::trainer::{group_advantages, ips_scale_rewards, GroupBatch, Surrogate, TrainConfig, Trainer};
use rand::Rng;

fn random_policy(env: &GridSpec, seed: u64, scale: f64) -> TabularPolicy {
    let lat = env.lattice();
    let mut rng = seeded_rng(seed);
    let logits = (0..lat.num_cells() * lat.num_actions()).map(|_| scale * rng.gen_range(-1.0..1.0)).collect();
    TabularPolicy::from_logits(lat, logits).unwrap()
}

struct Case {
    current: TabularPolicy,
    reference: TabularPolicy,
    batch: GroupBatch,
    advantages: Vec<f64>,
    old: Vec<f64>,
}

fn case(seed: u64, drift: f64) -> Case {
    let env = GridSpec::new(2, 3, 0.1, 0.5, 2.0).unwrap();
    let behaviour = random_policy(&env, seed, 0.8);
    let trainer = Trainer::new(&env, TrainConfig { group_size: 12, ..TrainConfig::default() }).unwrap();
    let mut rng = seeded_rng(seed + 1000);
    let batch = trainer.sample_group(&behaviour, &mut rng).unwrap();
    let advantages = group_advantages(&ips_scale_rewards(&batch, 0.2).unwrap());
    let old = batch.trajectories.iter().map(|t| t.logprob).collect();
    // Evaluate away from the behaviour policy so that ratios differ from one.
    let mut current = behaviour.clone();
    let mut r = seeded_rng(seed + 2000);
    for z in current.logits_mut() {
        *z += drift * r.gen_range(-1.0..1.0);
    }
    Case { current, reference: random_policy(&env, seed + 3000, 0.5), batch, advantages, old }
}

fn check(c: &Case, clip: Option<f64>, entropy_coef: f64, kl_coef: f64) -> usize {
    let env = GridSpec::new(2, 3, 0.1, 0.5, 2.0).unwrap();
    let masks = ActionMasks::new(&env).unwrap();
    let s = Surrogate {
        batch: &c.batch,
        advantages: &c.advantages,
        old_logprobs: &c.old,
        reference: &c.reference,
        entropy_coef,
        kl_coef,
        ppo_clip_ratio: clip,
    };
    let grad = s.gradient(&c.current, &masks).unwrap();
    let h = 1e-6;
    let a = env.lattice().num_actions();
    let mut checked = 0;
    for k in 0..grad.len() {
        // Logits of unreachable actions have no effect at all.
        if !masks.row(k / a)[k % a] {
            assert_eq!(grad[k], 0.0);
            continue;
        }
        let mut up = c.current.clone();
        up.logits_mut()[k] += h;
        let mut dn = c.current.clone();
        dn.logits_mut()[k] -= h;
        let fu = s.objective(&up, &masks).unwrap();
        let fd = s.objective(&dn, &masks).unwrap();
        let numeric = (fu - fd) / (2.0 * h);
        let tol = 1e-4 * numeric.abs().max(grad[k].abs()).max(1e-3);
        assert!((numeric - grad[k]).abs() <= tol, "logit {k}: analytic {} numeric {numeric}", grad[k]);
        checked += 1;
    }
    checked
}

#[test]
fn on_policy_gradient_matches_finite_differences() {
    let c = case(1, 0.0);
    assert!(check(&c, Some(0.2), 0.0, 0.0) > 0);
    check(&c, None, 0.01, 0.0);
}

#[test]
fn off_policy_ratio_gradient_matches() {
    for seed in 2..6 {
        let c = case(seed, 0.05);
        check(&c, None, 0.0, 0.0);
        check(&c, None, 0.05, 0.1);
    }
}

#[test]
fn clipped_gradient_matches_away_from_kinks() {
    // A large drift pushes several ratios out of [0.8, 1.2]; the surrogate is
    // then flat in those members and the closed form must drop them.
    let mut clipped = 0;
    for seed in 10..14 {
        let c = case(seed, 0.6);
        let env = GridSpec::new(2, 3, 0.1, 0.5, 2.0).unwrap();
        let masks = ActionMasks::new(&env).unwrap();
        let ratios: Vec<f64> = c
            .batch
            .trajectories
            .iter()
            .zip(&c.old)
            .map(|(t, old)| (ipslab::policy::logprob_with_masks(&c.current, &masks, t).unwrap() - old).exp())
            .collect();
        if ratios.iter().any(|r| (r - 1.2).abs() < 1e-3 || (r - 0.8).abs() < 1e-3) {
            continue;
        }
        clipped += ratios.iter().filter(|r| **r > 1.2 || **r < 0.8).count();
        check(&c, Some(0.2), 0.01, 0.02);
    }
    assert!(clipped > 0, "no member left the clip interval");
}
