//! GRPO and IPS-GRPO on tabular grid policies.
//!
//! One update:
//!
//! 1. sample `G` episodes on-policy,
//! 2. count the group frequency `p̂(o)` of each terminal outcome,
//! 3. (IPS-GRPO only) rescale `r̃_g = r_g / max(p̂(o_g), ε)`,
//! 4. normalize within the group, `Â_g = (r̃_g - mean) / (std + 1e-8)`,
//! 5. ascend the clipped surrogate plus entropy bonus minus KL penalty.
//!
//! Gradients are the closed-form softmax score functions per visited state.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridEnv, ENUMERATION_CAP};
use crate::metrics::{ModeSet, RunLog, UpdateRecord};
use crate::policy::{
    entropy, kl, logprob_with_masks, masked_softmax, sample_with_masks, terminal_distribution_with_masks,
    ActionMasks, TabularPolicy, Trajectory,
};
use crate::sampling::seeded_rng;
use crate::simplex::{l1, Simplex};

/// Guard added to the group standard deviation.
pub const ADVANTAGE_STD_EPS: f64 = 1e-8;

/// Tolerance for matching stored against recomputed log-probabilities.
pub const ON_POLICY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Grpo,
    IpsGrpo,
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Grpo => "grpo",
            Algorithm::IpsGrpo => "ips-grpo",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub group_size: usize,
    /// Floor `ε` on the group frequency; only read by IPS-GRPO.
    pub clip_eps: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub kl_coef: f64,
    pub updates: usize,
    pub seed: u64,
    /// PPO ratio clip `c`; `None` disables clipping.
    pub ppo_clip_ratio: Option<f64>,
    pub inner_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::IpsGrpo,
            group_size: 16,
            clip_eps: 0.2,
            learning_rate: 0.1,
            entropy_coef: 0.01,
            kl_coef: 0.0,
            updates: 1000,
            seed: 1,
            ppo_clip_ratio: Some(0.2),
            inner_epochs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(invalid("group_size must be >= 1"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps <= 1.0) {
            return Err(invalid(format!("clip_eps = {} outside (0, 1]", self.clip_eps)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(self.entropy_coef >= 0.0 && self.kl_coef >= 0.0) {
            return Err(invalid("entropy_coef and kl_coef must be >= 0"));
        }
        if let Some(c) = self.ppo_clip_ratio {
            if !(c > 0.0 && c.is_finite()) {
                return Err(invalid("ppo_clip_ratio must be positive"));
            }
        }
        if self.inner_epochs == 0 {
            return Err(invalid("inner_epochs must be >= 1"));
        }
        Ok(())
    }
}

/// `G` on-policy episodes with their outcomes and rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub trajectories: Vec<Trajectory>,
    pub outcomes: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    pub scaled_rewards: Option<Vec<f64>>,
}

impl GroupBatch {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(invalid("a group needs at least one trajectory"));
        }
        let outcomes = trajectories.iter().map(|t| t.terminal_outcome.clone()).collect();
        let rewards = trajectories.iter().map(|t| t.reward).collect();
        Ok(Self { trajectories, outcomes, rewards, scaled_rewards: None })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// `p̂(o) = count(o) / G` over the outcomes present in the group.
pub fn empirical_outcome_frequencies<T: Ord + Clone>(outcomes: &[T]) -> Result<BTreeMap<T, f64>> {
    if outcomes.is_empty() {
        return Err(invalid("empty group"));
    }
    let g = outcomes.len() as f64;
    let mut freq = BTreeMap::new();
    for o in outcomes {
        *freq.entry(o.clone()).or_insert(0.0) += 1.0;
    }
    freq.values_mut().for_each(|c| *c /= g);
    Ok(freq)
}

/// `r_g / max(p̂(o_g), ε)` for each member of a group.
pub fn ips_scale<T: Ord>(rewards: &[f64], outcomes: &[T], freq: &BTreeMap<T, f64>, eps: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(outcomes)
        .map(|(r, o)| r / freq[o].max(eps))
        .collect()
}

pub fn ips_scale_rewards(batch: &GroupBatch, eps: f64) -> Result<Vec<f64>> {
    let freq = empirical_outcome_frequencies(&batch.outcomes)?;
    Ok(ips_scale(&batch.rewards, &batch.outcomes, &freq, eps))
}

/// `(r_g - mean) / (std + 1e-8)` with the population standard deviation.
/// A group with zero spread gets all-zero advantages.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    if rewards.is_empty() {
        return Vec::new();
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / (std + ADVANTAGE_STD_EPS)).collect()
}

/// Fixed inputs of one surrogate evaluation: the batch, its advantages,
/// the behaviour log-probabilities and the KL reference.
#[derive(Debug, Clone, Copy)]
pub struct Surrogate<'a> {
    pub batch: &'a GroupBatch,
    pub advantages: &'a [f64],
    pub old_logprobs: &'a [f64],
    pub reference: &'a TabularPolicy,
    pub entropy_coef: f64,
    pub kl_coef: f64,
    pub ppo_clip_ratio: Option<f64>,
}

impl<'a> Surrogate<'a> {
    /// Distinct cells where the group took an action.
    pub fn visited_cells(&self) -> Vec<usize> {
        let mut cells: Vec<usize> = self.batch.trajectories.iter().flat_map(|t| t.cells.iter().copied()).collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    fn ratio(&self, pol: &TabularPolicy, masks: &ActionMasks, g: usize) -> Result<f64> {
        let lp = logprob_with_masks(pol, masks, &self.batch.trajectories[g])?;
        Ok((lp - self.old_logprobs[g]).exp())
    }

    /// Mean entropy and mean KL to the reference over visited cells.
    pub fn regularizers(&self, pol: &TabularPolicy, masks: &ActionMasks) -> (f64, f64) {
        let cells = self.visited_cells();
        let a = masks.lattice().num_actions();
        let (mut p, mut q) = (vec![0.0; a], vec![0.0; a]);
        let (mut ent, mut div) = (0.0, 0.0);
        for &c in &cells {
            masked_softmax(pol.state_logits(c), masks.row(c), &mut p);
            masked_softmax(self.reference.state_logits(c), masks.row(c), &mut q);
            ent += entropy(&p);
            div += kl(&p, &q).unwrap_or(f64::INFINITY);
        }
        let n = cells.len().max(1) as f64;
        (ent / n, div / n)
    }

    /// `(1/G) Σ_g min(ρ_g Â_g, clip(ρ_g) Â_g) + λ_H · H̄ - β · KL̄`.
    pub fn objective(&self, pol: &TabularPolicy, masks: &ActionMasks) -> Result<f64> {
        let g = self.batch.len() as f64;
        let mut pg = 0.0;
        for (i, adv) in self.advantages.iter().enumerate() {
            let rho = self.ratio(pol, masks, i)?;
            let clipped = match self.ppo_clip_ratio {
                Some(c) => rho.clamp(1.0 - c, 1.0 + c),
                None => rho,
            };
            pg += (rho * adv).min(clipped * adv);
        }
        let (ent, div) = self.regularizers(pol, masks);
        Ok(pg / g + self.entropy_coef * ent - self.kl_coef * div)
    }

    /// Gradient of [`Surrogate::objective`] with respect to every logit.
    pub fn gradient(&self, pol: &TabularPolicy, masks: &ActionMasks) -> Result<Vec<f64>> {
        let lattice = masks.lattice();
        let a = lattice.num_actions();
        let dims = lattice.dims;
        let g = self.batch.len() as f64;
        let mut grad = vec![0.0; pol.logits().len()];
        let mut p = vec![0.0; a];

        for (i, traj) in self.batch.trajectories.iter().enumerate() {
            let adv = self.advantages[i];
            if adv == 0.0 {
                continue;
            }
            let rho = self.ratio(pol, masks, i)?;
            let active = match self.ppo_clip_ratio {
                None => true,
                Some(c) if adv >= 0.0 => rho <= 1.0 + c,
                Some(c) => rho >= 1.0 - c,
            };
            if !active {
                continue;
            }
            let coef = adv * rho / g;
            for (&cell, action) in traj.cells.iter().zip(&traj.actions) {
                let mask = masks.row(cell);
                masked_softmax(pol.state_logits(cell), mask, &mut p);
                let taken = action.index(dims);
                let row = &mut grad[cell * a..(cell + 1) * a];
                for b in 0..a {
                    if mask[b] {
                        let indicator = if b == taken { 1.0 } else { 0.0 };
                        row[b] += coef * (indicator - p[b]);
                    }
                }
            }
        }

        if self.entropy_coef != 0.0 || self.kl_coef != 0.0 {
            let cells = self.visited_cells();
            let n = cells.len() as f64;
            let mut q = vec![0.0; a];
            for &cell in &cells {
                let mask = masks.row(cell);
                masked_softmax(pol.state_logits(cell), mask, &mut p);
                let row = &mut grad[cell * a..(cell + 1) * a];
                if self.entropy_coef != 0.0 {
                    let h = entropy(&p);
                    for b in 0..a {
                        if p[b] > 0.0 {
                            row[b] -= self.entropy_coef / n * p[b] * (p[b].ln() + h);
                        }
                    }
                }
                if self.kl_coef != 0.0 {
                    masked_softmax(self.reference.state_logits(cell), mask, &mut q);
                    let d = kl(&p, &q).ok_or_else(|| Error::Domain("reference policy lacks support".into()))?;
                    for b in 0..a {
                        if p[b] > 0.0 {
                            row[b] -= self.kl_coef / n * p[b] * ((p[b] / q[b]).ln() - d);
                        }
                    }
                }
            }
        }
        Ok(grad)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateDiagnostics {
    /// Rewards fed into the normalization (scaled under IPS-GRPO).
    pub learning_rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    /// Mean state entropy over visited cells before the update.
    pub entropy: f64,
    /// Mean KL to the reference over visited cells before the update.
    pub kl: f64,
    /// Fraction of trajectories whose ratio was clipped in the last epoch.
    pub clipped_fraction: f64,
}

/// Owns everything a run needs besides the policy and the generator.
pub struct Trainer<'e, E: GridEnv + ?Sized> {
    env: &'e E,
    masks: ActionMasks,
    reference: TabularPolicy,
    target: Simplex,
    modes: ModeSet,
    cfg: TrainConfig,
}

impl<'e, E: GridEnv + ?Sized> Trainer<'e, E> {
    /// Uses the uniform-over-valid-actions policy as the KL reference.
    pub fn new(env: &'e E, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let masks = ActionMasks::new(env)?;
        let reference = TabularPolicy::uniform(env.lattice());
        let target = crate::grid::enumerate_target_capped(env, ENUMERATION_CAP)?;
        let modes = ModeSet::from_env(env)?;
        Ok(Self { env, masks, reference, target, modes, cfg })
    }

    pub fn with_reference(mut self, reference: TabularPolicy) -> Result<Self> {
        if reference.lattice() != self.env.lattice() {
            return Err(invalid("reference policy has a different lattice"));
        }
        self.reference = reference;
        Ok(self)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn masks(&self) -> &ActionMasks {
        &self.masks
    }

    pub fn target(&self) -> &Simplex {
        &self.target
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn sample_group<R: Rng + ?Sized>(&self, pol: &TabularPolicy, rng: &mut R) -> Result<GroupBatch> {
        let trajectories = (0..self.cfg.group_size)
            .map(|_| sample_with_masks(pol, &self.masks, self.env, rng))
            .collect::<Result<Vec<_>>>()?;
        GroupBatch::new(trajectories)
    }

    /// One GRPO / IPS-GRPO update on an on-policy batch.
    pub fn update(&self, pol: &mut TabularPolicy, batch: &mut GroupBatch) -> Result<UpdateDiagnostics> {
        if pol.lattice() != self.env.lattice() {
            return Err(invalid("policy lattice does not match the environment"));
        }
        let old_logprobs: Vec<f64> = batch.trajectories.iter().map(|t| t.logprob).collect();
        for (g, traj) in batch.trajectories.iter().enumerate() {
            let now = logprob_with_masks(pol, &self.masks, traj)?;
            if (now - traj.logprob).abs() > ON_POLICY_TOL {
                return Err(Error::Inconsistency(format!(
                    "trajectory {g} is off-policy: stored logprob {} vs current {now}",
                    traj.logprob
                )));
            }
        }

        let learning_rewards = match self.cfg.algorithm {
            Algorithm::Grpo => {
                batch.scaled_rewards = None;
                batch.rewards.clone()
            }
            Algorithm::IpsGrpo => {
                let scaled = ips_scale_rewards(batch, self.cfg.clip_eps)?;
                batch.scaled_rewards = Some(scaled.clone());
                scaled
            }
        };
        let advantages = group_advantages(&learning_rewards);

        let surrogate = Surrogate {
            batch,
            advantages: &advantages,
            old_logprobs: &old_logprobs,
            reference: &self.reference,
            entropy_coef: self.cfg.entropy_coef,
            kl_coef: self.cfg.kl_coef,
            ppo_clip_ratio: self.cfg.ppo_clip_ratio,
        };
        let (entropy, kl) = surrogate.regularizers(pol, &self.masks);

        let mut clipped_fraction = 0.0;
        for _ in 0..self.cfg.inner_epochs {
            if let Some(c) = self.cfg.ppo_clip_ratio {
                let mut clipped = 0usize;
                for g in 0..batch.len() {
                    let rho = surrogate.ratio(pol, &self.masks, g)?;
                    if rho > 1.0 + c || rho < 1.0 - c {
                        clipped += 1;
                    }
                }
                clipped_fraction = clipped as f64 / batch.len() as f64;
            }
            let grad = surrogate.gradient(pol, &self.masks)?;
            for (z, d) in pol.logits_mut().iter_mut().zip(&grad) {
                *z += self.cfg.learning_rate * d;
            }
        }
        Ok(UpdateDiagnostics { learning_rewards, advantages, entropy, kl, clipped_fraction })
    }

    /// Exact terminal distribution of `pol` and its ℓ1 distance to the target.
    pub fn exact_l1(&self, pol: &TabularPolicy) -> (Simplex, f64) {
        let p = terminal_distribution_with_masks(pol, &self.masks);
        let d = l1(p.probs(), self.target.probs());
        (p, d)
    }

    /// Runs `cfg.updates` sample/scale/update rounds, logging each one.
    pub fn train<R: Rng + ?Sized>(&self, pol: &mut TabularPolicy, rng: &mut R) -> Result<RunLog> {
        let a = self.masks.lattice().num_actions();
        let mut log = RunLog::new(self.cfg.clone(), self.modes.clone());
        for update in 0..self.cfg.updates {
            let mut batch = self.sample_group(pol, rng)?;
            let diag = self.update(pol, &mut batch)?;
            let (_, l1_exact) = self.exact_l1(pol);

            let outcomes: Vec<usize> = batch.trajectories.iter().map(|t| t.terminal_cell).collect();
            let mut edges: Vec<u64> = batch
                .trajectories
                .iter()
                .flat_map(|t| t.cells.iter().zip(&t.actions).map(move |(&c, act)| (c * a + act.index(a - 1)) as u64))
                .collect();
            edges.sort_unstable();
            edges.dedup();

            log.records.push(UpdateRecord::new(update, outcomes, &self.modes, l1_exact, diag.entropy, diag.kl, edges));
        }
        Ok(log)
    }
}

/// One update with a uniform KL reference; see [`Trainer::update`].
pub fn grpo_update<E: GridEnv + ?Sized>(
    pol: &mut TabularPolicy,
    env: &E,
    batch: &mut GroupBatch,
    cfg: &TrainConfig,
) -> Result<UpdateDiagnostics> {
    Trainer::new(env, cfg.clone())?.update(pol, batch)
}

/// Trains `pol` in place with the caller's generator.
pub fn train<E: GridEnv + ?Sized, R: Rng + ?Sized>(
    pol: &mut TabularPolicy,
    env: &E,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<RunLog> {
    Trainer::new(env, cfg.clone())?.train(pol, rng)
}

/// [`train`] from a uniform policy with the generator seeded by `cfg.seed`.
pub fn train_from_uniform<E: GridEnv + ?Sized>(env: &E, cfg: &TrainConfig) -> Result<(TabularPolicy, RunLog)> {
    let mut pol = TabularPolicy::uniform(env.lattice());
    let mut rng = seeded_rng(cfg.seed);
    let log = train(&mut pol, env, cfg, &mut rng)?;
    Ok((pol, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    #[test]
    fn frequency_examples() {
        let f = empirical_outcome_frequencies(&['A', 'A', 'B', 'C']).unwrap();
        assert_eq!(f[&'A'], 0.5);
        assert_eq!(f[&'B'], 0.25);
        assert_eq!(f[&'C'], 0.25);
        let f = empirical_outcome_frequencies(&[7, 7, 7]).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f[&7], 1.0);
        let f = empirical_outcome_frequencies(&[1, 2, 3, 4, 5]).unwrap();
        assert!(f.values().all(|v| *v == 0.2));
        assert!(empirical_outcome_frequencies::<u8>(&[]).is_err());
    }

    #[test]
    fn ips_scale_examples() {
        let f = BTreeMap::from([('A', 0.25), ('B', 0.05)]);
        assert_eq!(ips_scale(&[1.0], &['A'], &f, 0.1), vec![4.0]);
        assert_eq!(ips_scale(&[1.0], &['B'], &f, 0.1), vec![10.0]);
        let out = ['A', 'A', 'B', 'C'];
        let f = empirical_outcome_frequencies(&out).unwrap();
        assert_eq!(ips_scale(&[1.0; 4], &out, &f, 0.01), vec![2.0, 2.0, 4.0, 4.0]);
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(group_advantages(&[1.0; 4]), vec![0.0; 4]);
        let a = group_advantages(&[1.0, 0.0]);
        // (±0.5) / (0.5 + 1e-8)
        let want = 0.5 / (0.5 + 1e-8);
        assert!((a[0] - want).abs() < 1e-15 && (a[1] + want).abs() < 1e-15);
        let a = group_advantages(&[2.0, 2.0, 4.0, 4.0]);
        assert!((a[0] + 1.0).abs() < 1e-7 && (a[3] - 1.0).abs() < 1e-7);
        let a = group_advantages(&[0.3, 9.1, -2.0, 4.4, 0.0]);
        assert!(a.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { group_size: 0, ..Default::default() },
            TrainConfig { clip_eps: 0.0, ..Default::default() },
            TrainConfig { clip_eps: 1.5, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { entropy_coef: -1.0, ..Default::default() },
            TrainConfig { inner_epochs: 0, ..Default::default() },
            TrainConfig { ppo_clip_ratio: Some(0.0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn zero_updates_leave_policy_untouched() {
        let env = GridSpec::default();
        let cfg = TrainConfig { updates: 0, ..Default::default() };
        let (pol, log) = train_from_uniform(&env, &cfg).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(pol, TabularPolicy::uniform(env.lattice()));
    }

    #[test]
    fn off_policy_batch_is_rejected() {
        let env = GridSpec::default();
        let cfg = TrainConfig::default();
        let trainer = Trainer::new(&env, cfg).unwrap();
        let mut pol = TabularPolicy::uniform(env.lattice());
        let mut rng = seeded_rng(3);
        let mut batch = trainer.sample_group(&pol, &mut rng).unwrap();
        pol.state_logits_mut(0)[2] += 1.0;
        assert!(matches!(trainer.update(&mut pol, &mut batch), Err(Error::Inconsistency(_))));
    }
}
