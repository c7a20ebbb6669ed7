//! The outcome-selection bandit under expected-return and IPS objectives.
//!
//! Two regimes are simulated. [`integrate_flow`] follows the continuous-time
//! gradient flow `dz/dt = v(softmax(z))` with a fixed-step integrator, where
//!
//! * expected return: `v_i = p_i · a_i` with `a_i = r_i - Σ_k p_k r_k`,
//! * inverse probability scaling: `v_i = r_i - p_i · Σ_k r_k`.
//!
//! [`simulate_stochastic`] replaces the exact gradient with a group of
//! on-policy samples and the score-function estimator, which is where ties
//! between equal-reward outcomes get broken.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::sampling::{sample_categorical, seeded_rng};
use crate::simplex::{
    advantage, log_ratio, log_sum_exp, softmax, Logits, RewardVector, Simplex,
};
use crate::trainer::{empirical_outcome_frequencies, ips_scale};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    ExpectedReturn,
    Ips,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    Euler,
    #[default]
    Rk4,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub rewards: RewardVector,
    pub init_logits: Logits,
    pub objective: Objective,
    pub step_size: f64,
    pub horizon: f64,
    pub integrator: Integrator,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rewards.len() != self.init_logits.len() {
            return Err(invalid(format!(
                "rewards have K = {} but init_logits have K = {}",
                self.rewards.len(),
                self.init_logits.len()
            )));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("step_size must be positive"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        if self.step_size > self.horizon {
            return Err(invalid("step_size exceeds horizon"));
        }
        Ok(())
    }
}

/// Everything recorded along one integrated trajectory, one entry per step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub objective: Objective,
    pub times: Vec<f64>,
    pub logits: Vec<Logits>,
    pub simplexes: Vec<Simplex>,
    pub velocities: Vec<Vec<f64>>,
    /// Lyapunov potential toward `r / Σ r`; present for IPS runs whose rewards
    /// admit that target.
    pub potential: Option<Vec<f64>>,
}

impl FlowTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_simplex(&self) -> &Simplex {
        self.simplexes.last().expect("traces hold at least the initial state")
    }

    /// [`detect_collapse`] with the onset index mapped to flow time.
    pub fn collapse(&self, threshold: f64) -> Result<(CollapseReport, Option<f64>)> {
        let report = detect_collapse(&self.simplexes, threshold)?;
        let time = report.onset.map(|o| self.times[o.index]);
        Ok((report, time))
    }
}

fn check_dims(a: &Simplex, r: &RewardVector) -> Result<()> {
    if a.len() != r.len() {
        return Err(invalid(format!("dimension mismatch: p has {} entries, r has {}", a.len(), r.len())));
    }
    Ok(())
}

/// `v_i = p_i · a_i`, the gradient of `Σ p_k r_k` with respect to the logits.
pub fn expected_return_velocity(p: &Simplex, r: &RewardVector) -> Result<Vec<f64>> {
    let a = advantage(p, r)?;
    Ok(p.probs().iter().zip(a.as_slice()).map(|(p, a)| p * a).collect())
}

/// `v_i = r_i - p_i · Σ_k r_k`.
pub fn ips_velocity(p: &Simplex, r: &RewardVector) -> Result<Vec<f64>> {
    check_dims(p, r)?;
    let total = r.total();
    Ok(p.probs().iter().zip(r.as_slice()).map(|(p, r)| r - p * total).collect())
}

pub fn velocity(objective: Objective, p: &Simplex, r: &RewardVector) -> Result<Vec<f64>> {
    match objective {
        Objective::ExpectedReturn => expected_return_velocity(p, r),
        Objective::Ips => ips_velocity(p, r),
    }
}

/// `p*_i = r_i / Σ_k r_k`, the stationary point of the IPS flow.
pub fn stationary_distribution(r: &RewardVector) -> Result<Simplex> {
    if let Some(i) = r.as_slice().iter().position(|v| *v < 0.0) {
        return Err(Error::Domain(format!(
            "reward-proportional target requires r_i >= 0 for every outcome; r_{i} = {}",
            r.as_slice()[i]
        )));
    }
    if !(r.total() > 0.0) {
        return Err(Error::Domain("reward-proportional target requires Σ r > 0".into()));
    }
    Simplex::from_weights(r.as_slice())
}

fn potential_unchecked(z: &[f64], target: &[f64]) -> f64 {
    log_sum_exp(z) - z.iter().zip(target).map(|(z, t)| z * t).sum::<f64>()
}

/// `Ψ(z) = log Σ exp(z_k) - Σ target_k z_k`, nonincreasing along the IPS flow
/// when `target = r / Σ r`.
pub fn lyapunov_potential(z: &Logits, target: &Simplex) -> Result<f64> {
    if z.len() != target.len() {
        return Err(invalid("lyapunov_potential: dimension mismatch"));
    }
    if let Some(i) = target.probs().iter().position(|t| *t <= 0.0) {
        return Err(invalid(format!("target must be strictly positive; entry {i} is {}", target.probs()[i])));
    }
    Ok(potential_unchecked(z.as_slice(), target.probs()))
}

fn axpy(base: &[f64], scale: f64, dir: &[f64]) -> Vec<f64> {
    base.iter().zip(dir).map(|(b, d)| b + scale * d).collect()
}

fn field(objective: Objective, r: &RewardVector, z: &[f64]) -> Vec<f64> {
    let p = Simplex::from_raw(crate::simplex::softmax_slice(z).expect("finite state"));
    velocity(objective, &p, r).expect("dimensions checked at config time")
}

fn advance(cfg: &FlowConfig, z: &[f64], h: f64) -> Vec<f64> {
    let f = |z: &[f64]| field(cfg.objective, &cfg.rewards, z);
    match cfg.integrator {
        Integrator::Euler => axpy(z, h, &f(z)),
        Integrator::Rk4 => {
            let k1 = f(z);
            let k2 = f(&axpy(z, 0.5 * h, &k1));
            let k3 = f(&axpy(z, 0.5 * h, &k2));
            let k4 = f(&axpy(z, h, &k3));
            z.iter()
                .enumerate()
                .map(|(i, zi)| zi + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
                .collect()
        }
    }
}

/// Integrates the logit flow from `init_logits` to `horizon` with a fixed step.
///
/// The step count is `round(horizon / step_size)`; step `k` sits at `t = k·h`.
pub fn integrate_flow(cfg: &FlowConfig) -> Result<FlowTrace> {
    cfg.validate()?;
    let h = cfg.step_size;
    let steps = ((cfg.horizon / h).round() as usize).max(1);
    let target = match cfg.objective {
        Objective::Ips if cfg.rewards.admits_proportional_target() => {
            Some(stationary_distribution(&cfg.rewards)?)
        }
        _ => None,
    };

    let mut trace = FlowTrace {
        objective: cfg.objective,
        times: Vec::with_capacity(steps + 1),
        logits: Vec::with_capacity(steps + 1),
        simplexes: Vec::with_capacity(steps + 1),
        velocities: Vec::with_capacity(steps + 1),
        potential: target.as_ref().map(|_| Vec::with_capacity(steps + 1)),
    };

    let mut z = cfg.init_logits.as_slice().to_vec();
    for k in 0..=steps {
        let t = k as f64 * h;
        if k > 0 {
            z = advance(cfg, &z, h);
        }
        let logits = Logits::new(z.clone()).map_err(|_| Error::NumericDivergence { time: t })?;
        let p = softmax(&logits);
        let v = velocity(cfg.objective, &p, &cfg.rewards)?;
        if let (Some(psi), Some(target)) = (trace.potential.as_mut(), target.as_ref()) {
            psi.push(potential_unchecked(&z, target.probs()));
        }
        trace.times.push(t);
        trace.logits.push(logits);
        trace.simplexes.push(p);
        trace.velocities.push(v);
    }
    Ok(trace)
}

/// Right-hand side of the log-ratio dynamics for outcomes `i`, `j` at `p`.
pub fn log_ratio_rate(objective: Objective, p: &Simplex, r: &RewardVector, i: usize, j: usize) -> Result<f64> {
    match objective {
        Objective::ExpectedReturn => {
            let a = advantage(p, r)?;
            let (pr, a) = (p.probs(), a.as_slice());
            Ok(pr[i] * a[i] - pr[j] * a[j])
        }
        Objective::Ips => {
            check_dims(p, r)?;
            let (pr, rv) = (p.probs(), r.as_slice());
            Ok((rv[i] - rv[j]) - (pr[i] - pr[j]) * r.total())
        }
    }
}

/// `|d/dt log(p_i/p_j) - predicted rate|` at steps `2..len-2`, with the
/// derivative taken by the five-point central stencil. Its `O(h^4)` error
/// matches the order of the RK4 trace, so the residual measures the identity
/// rather than the difference scheme.
pub fn log_ratio_residual(trace: &FlowTrace, r: &RewardVector, i: usize, j: usize) -> Result<Vec<f64>> {
    let k = r.len();
    if i >= k || j >= k {
        return Err(invalid(format!("outcome index out of range for K = {k}")));
    }
    if trace.len() < 5 {
        return Err(invalid("trace too short for a five-point difference"));
    }
    let ratios = trace
        .simplexes
        .iter()
        .map(|p| log_ratio(p, i, j))
        .collect::<Result<Vec<_>>>()?;
    (2..trace.len() - 2)
        .map(|s| {
            // Fixed-step traces: the stencil spacing is the local step.
            let h = (trace.times[s + 2] - trace.times[s - 2]) / 4.0;
            let fd = (-ratios[s + 2] + 8.0 * ratios[s + 1] - 8.0 * ratios[s - 1] + ratios[s - 2]) / (12.0 * h);
            let rhs = log_ratio_rate(trace.objective, &trace.simplexes[s], r, i, j)?;
            Ok((fd - rhs).abs())
        })
        .collect()
}

/// Worst log-ratio residual over all pairs `i < j`, skipping steps where
/// either probability in the difference stencil falls below `min_prob`.
/// Returns `(max residual, residuals checked)`.
pub fn max_log_ratio_residual(trace: &FlowTrace, r: &RewardVector, min_prob: f64) -> Result<(f64, usize)> {
    let k = r.len();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..k {
        for j in i + 1..k {
            let res = log_ratio_residual(trace, r, i, j)?;
            for (s, v) in res.iter().enumerate() {
                let ok = trace.simplexes[s..s + 5].iter().all(|p| p.probs()[i].min(p.probs()[j]) >= min_prob);
                if ok {
                    worst = worst.max(*v);
                    checked += 1;
                }
            }
        }
    }
    Ok((worst, checked))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapseOnset {
    pub index: usize,
    pub winner: usize,
}

/// Outcome of [`detect_collapse`]; `onset` is `None` when the threshold is never hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CollapseReport {
    pub onset: Option<CollapseOnset>,
    pub final_max: f64,
    pub final_argmax: usize,
}

impl CollapseReport {
    pub fn collapsed(&self) -> bool {
        self.onset.is_some()
    }
}

pub fn detect_collapse(trace: &[Simplex], threshold: f64) -> Result<CollapseReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(invalid(format!("collapse threshold {threshold} outside (0, 1)")));
    }
    let last = trace.last().ok_or_else(|| invalid("empty trace"))?;
    let onset = trace.iter().enumerate().find_map(|(index, p)| {
        let (winner, max) = p.argmax();
        (max >= threshold).then_some(CollapseOnset { index, winner })
    });
    let (final_argmax, final_max) = last.argmax();
    Ok(CollapseReport { onset, final_max, final_argmax })
}

/// Uniform logits plus i.i.d. uniform noise in `[-scale, scale]`.
pub fn perturbed_uniform_logits<R: Rng + ?Sized>(k: usize, scale: f64, rng: &mut R) -> Result<Logits> {
    Logits::new((0..k).map(|_| scale * (2.0 * rng.gen::<f64>() - 1.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StochasticRunConfig {
    pub rewards: RewardVector,
    pub init_logits: Logits,
    pub objective: Objective,
    pub group_size: usize,
    pub learning_rate: f64,
    pub updates: usize,
    pub seed: u64,
    /// Floor on the group frequency in the IPS divisor.
    pub clip_eps: f64,
    /// Subtract the group-mean weight before the score-function update.
    #[serde(default)]
    pub baseline: bool,
}

impl StochasticRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rewards.len() != self.init_logits.len() {
            return Err(invalid("rewards and init_logits differ in K"));
        }
        if self.group_size == 0 {
            return Err(invalid("group_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps <= 1.0) {
            return Err(invalid("clip_eps must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StochasticTrace {
    /// Initial simplex followed by one entry per update.
    pub simplexes: Vec<Simplex>,
    /// Per-update sample counts for each outcome.
    pub counts: Vec<Vec<usize>>,
}

impl StochasticTrace {
    pub fn final_simplex(&self) -> &Simplex {
        self.simplexes.last().expect("trace holds the initial state")
    }
}

/// Sampled score-function ascent on the bandit.
///
/// Each update draws `G` outcomes from the current softmax, weights each by
/// its reward (or by `r / max(p̂, ε)` under IPS), optionally subtracts the
/// group-mean weight, and steps `z += lr · (1/G) Σ_g w_g (e_{o_g} - p)`.
pub fn simulate_stochastic(cfg: &StochasticRunConfig) -> Result<StochasticTrace> {
    cfg.validate()?;
    let k = cfg.rewards.len();
    let g = cfg.group_size;
    let mut rng = seeded_rng(cfg.seed);
    let mut z = cfg.init_logits.as_slice().to_vec();
    let mut p = softmax(&cfg.init_logits);
    let mut trace = StochasticTrace {
        simplexes: Vec::with_capacity(cfg.updates + 1),
        counts: Vec::with_capacity(cfg.updates),
    };
    trace.simplexes.push(p.clone());

    let mut outcomes = vec![0usize; g];
    for update in 0..cfg.updates {
        for o in outcomes.iter_mut() {
            *o = sample_categorical(p.probs(), &mut rng);
        }
        let raw: Vec<f64> = outcomes.iter().map(|&o| cfg.rewards.as_slice()[o]).collect();
        let mut weights = match cfg.objective {
            Objective::ExpectedReturn => raw,
            Objective::Ips => {
                let freq = empirical_outcome_frequencies(&outcomes)?;
                ips_scale(&raw, &outcomes, &freq, cfg.clip_eps)
            }
        };
        if cfg.baseline {
            let mean = weights.iter().sum::<f64>() / g as f64;
            weights.iter_mut().for_each(|w| *w -= mean);
        }

        let mut grad = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&o, w) in outcomes.iter().zip(&weights) {
            counts[o] += 1;
            for (i, gi) in grad.iter_mut().enumerate() {
                let indicator = if i == o { 1.0 } else { 0.0 };
                *gi += w * (indicator - p.probs()[i]);
            }
        }
        for (zi, gi) in z.iter_mut().zip(&grad) {
            *zi += cfg.learning_rate * gi / g as f64;
        }
        let logits = Logits::new(z.clone()).map_err(|_| Error::NumericDivergence { time: (update + 1) as f64 })?;
        p = softmax(&logits);
        trace.simplexes.push(p.clone());
        trace.counts.push(counts);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sx(v: &[f64]) -> Simplex {
        Simplex::new(v.to_vec()).unwrap()
    }

    fn rv(v: &[f64]) -> RewardVector {
        RewardVector::new(v.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn flow(r: &[f64], z: &[f64], objective: Objective, h: f64, t: f64) -> FlowConfig {
        FlowConfig {
            rewards: rv(r),
            init_logits: Logits::new(z.to_vec()).unwrap(),
            objective,
            step_size: h,
            horizon: t,
            integrator: Integrator::Rk4,
        }
    }

    #[test]
    fn expected_return_velocity_examples() {
        let v = expected_return_velocity(&sx(&[0.5, 0.5]), &rv(&[1.0, 0.0])).unwrap();
        assert!(close(&v, &[0.25, -0.25], 1e-15));
        let v = expected_return_velocity(&sx(&[0.2, 0.3, 0.5]), &rv(&[0.7; 3])).unwrap();
        assert!(close(&v, &[0.0; 3], 1e-15));
        let v = expected_return_velocity(&sx(&[0.25, 0.25, 0.5]), &rv(&[2.0, 1.0, 1.0])).unwrap();
        assert!(close(&v, &[0.1875, -0.0625, -0.125], 1e-15));
        assert!(expected_return_velocity(&sx(&[0.5, 0.5]), &rv(&[1.0])).is_err());
    }

    #[test]
    fn expected_return_velocity_is_the_objective_gradient() {
        // central differences of J(z) = Σ softmax(z)_k r_k
        let r = rv(&[2.0, 1.0, 1.0]);
        let z = [0.0, 0.0, 2f64.ln()];
        let j = |z: &[f64]| -> f64 {
            let p = crate::simplex::softmax_slice(z).unwrap();
            p.iter().zip(r.as_slice()).map(|(p, r)| p * r).sum()
        };
        let eps = 1e-6;
        let fd: Vec<f64> = (0..3)
            .map(|i| {
                let mut hi = z.to_vec();
                let mut lo = z.to_vec();
                hi[i] += eps;
                lo[i] -= eps;
                (j(&hi) - j(&lo)) / (2.0 * eps)
            })
            .collect();
        let p = softmax(&Logits::new(z.to_vec()).unwrap());
        let v = expected_return_velocity(&p, &r).unwrap();
        assert!(close(&v, &fd, 1e-9), "{v:?} vs {fd:?}");
        assert!(close(&v, &[0.1875, -0.0625, -0.125], 1e-12));
    }

    #[test]
    fn ips_velocity_examples() {
        let r = rv(&[2.0, 1.0, 1.0]);
        let star = stationary_distribution(&r).unwrap();
        assert!(close(&ips_velocity(&star, &r).unwrap(), &[0.0; 3], 1e-15));
        let v = ips_velocity(&sx(&[0.5, 0.5]), &rv(&[2.0, 1.0])).unwrap();
        assert!(close(&v, &[0.5, -0.5], 1e-15));
        let v = ips_velocity(&sx(&[0.5, 0.5]), &rv(&[3.0, 3.0])).unwrap();
        assert!(close(&v, &[0.0, 0.0], 1e-15));
    }

    #[test]
    fn stationary_distribution_examples() {
        assert!(close(stationary_distribution(&rv(&[1.0; 4])).unwrap().probs(), &[0.25; 4], 1e-15));
        assert!(close(stationary_distribution(&rv(&[2.0, 1.0, 1.0])).unwrap().probs(), &[0.5, 0.25, 0.25], 1e-15));
        let p = stationary_distribution(&rv(&[0.1, 0.5, 2.0])).unwrap();
        assert!(close(p.probs(), &[0.1 / 2.6, 0.5 / 2.6, 2.0 / 2.6], 1e-15));
        match stationary_distribution(&rv(&[1.0, -0.5])) {
            Err(Error::Domain(m)) => assert!(m.contains("r_i >= 0")),
            other => panic!("{other:?}"),
        }
        match stationary_distribution(&rv(&[0.0, 0.0])) {
            Err(Error::Domain(m)) => assert!(m.contains("Σ r > 0")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn potential_examples() {
        let k = 5;
        let psi = lyapunov_potential(&Logits::zeros(k).unwrap(), &Simplex::uniform(k).unwrap()).unwrap();
        assert!((psi - (k as f64).ln()).abs() < 1e-15);
        let z = Logits::new(vec![0.3, -1.2, 2.0]).unwrap();
        let t = sx(&[0.5, 0.25, 0.25]);
        let a = lyapunov_potential(&z, &t).unwrap();
        let b = lyapunov_potential(&z.shifted(17.5).unwrap(), &t).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(lyapunov_potential(&z, &sx(&[1.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn ips_flow_reaches_reward_proportional_target() {
        let trace = integrate_flow(&flow(&[2.0, 1.0, 1.0], &[1.3, -0.7, 0.4], Objective::Ips, 0.01, 100.0)).unwrap();
        let d = crate::simplex::l1_distance(trace.final_simplex(), &sx(&[0.5, 0.25, 0.25])).unwrap();
        assert!(d <= 1e-4, "l1 = {d}");
        let psi = trace.potential.as_ref().unwrap();
        assert!(psi.windows(2).all(|w| w[1] <= w[0] + 1e-10));
    }

    #[test]
    fn expected_return_flow_drifts_to_the_better_outcome() {
        let trace = integrate_flow(&flow(&[1.0, 0.0], &[0.0, 0.0], Objective::ExpectedReturn, 0.01, 20.0)).unwrap();
        let p1: Vec<f64> = trace.simplexes.iter().map(|p| p.probs()[0]).collect();
        assert!(p1.windows(2).all(|w| w[1] > w[0]));
        assert!(*p1.last().unwrap() > 0.95);
    }

    #[test]
    fn rk4_error_shrinks_by_order_four() {
        // reference at a much finer step
        let base = flow(&[1.0, 0.4, 0.2], &[0.1, 0.0, -0.3], Objective::ExpectedReturn, 0.2, 4.0);
        let at = |h: f64| {
            let t = integrate_flow(&FlowConfig { step_size: h, ..base.clone() }).unwrap();
            t.logits.last().unwrap().as_slice().to_vec()
        };
        let reference = at(0.2 / 64.0);
        let e1 = crate::simplex::l1(&at(0.2), &reference);
        let e2 = crate::simplex::l1(&at(0.1), &reference);
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "error ratio {ratio}");
    }

    #[test]
    fn residuals_vanish_for_equal_reward_ips_from_uniform() {
        let trace = integrate_flow(&flow(&[1.0, 1.0, 1.0], &[0.0; 3], Objective::Ips, 1e-3, 1.0)).unwrap();
        let res = log_ratio_residual(&trace, &rv(&[1.0, 1.0, 1.0]), 0, 2).unwrap();
        assert!(res.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn residuals_small_at_fine_step() {
        let r = rv(&[2.0, 1.0, 1.0]);
        let trace = integrate_flow(&flow(r.as_slice(), &[0.5, -0.5, 0.1], Objective::Ips, 1e-3, 3.0)).unwrap();
        let max = log_ratio_residual(&trace, &r, 0, 1).unwrap().into_iter().fold(0.0, f64::max);
        assert!(max <= 1e-6, "{max}");
        let r = rv(&[1.0, 0.0]);
        let trace = integrate_flow(&flow(r.as_slice(), &[0.0, 0.0], Objective::ExpectedReturn, 1e-3, 3.0)).unwrap();
        let max = log_ratio_residual(&trace, &r, 0, 1).unwrap().into_iter().fold(0.0, f64::max);
        assert!(max <= 1e-6, "{max}");
    }

    #[test]
    fn shift_of_initial_logits_does_not_move_the_simplex_path() {
        let a = integrate_flow(&flow(&[1.0, 0.5, 0.2], &[0.2, 0.1, 0.0], Objective::ExpectedReturn, 0.01, 5.0)).unwrap();
        let b = integrate_flow(&flow(&[1.0, 0.5, 0.2], &[40.2, 40.1, 40.0], Objective::ExpectedReturn, 0.01, 5.0)).unwrap();
        for (p, q) in a.simplexes.iter().zip(&b.simplexes) {
            assert!(close(p.probs(), q.probs(), 1e-9));
        }
    }

    #[test]
    fn invalid_flow_configs_rejected() {
        assert!(integrate_flow(&flow(&[1.0, 0.0, 2.0], &[0.0, 0.0], Objective::Ips, 0.1, 1.0)).is_err());
        assert!(integrate_flow(&flow(&[1.0, 0.0], &[0.0, 0.0], Objective::Ips, 2.0, 1.0)).is_err());
        assert!(integrate_flow(&flow(&[1.0, 0.0], &[0.0, 0.0], Objective::Ips, -0.1, 1.0)).is_err());
    }

    #[test]
    fn divergence_carries_the_failing_time() {
        // Euler on the IPS flow with a huge reward blows the logits up.
        let mut cfg = flow(&[1e306, 0.0], &[0.0, 0.0], Objective::Ips, 1e3, 1e5);
        cfg.integrator = Integrator::Euler;
        match integrate_flow(&cfg) {
            Err(Error::NumericDivergence { time }) => assert!(time > 0.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn collapse_detection() {
        let flat = vec![Simplex::uniform(3).unwrap(); 10];
        let rep = detect_collapse(&flat, 0.9).unwrap();
        assert!(!rep.collapsed());
        let tr = vec![sx(&[0.5, 0.5]), sx(&[0.9, 0.1]), sx(&[0.999, 0.001])];
        let rep = detect_collapse(&tr, 0.99).unwrap();
        assert_eq!(rep.onset, Some(CollapseOnset { index: 2, winner: 0 }));
        assert!(detect_collapse(&[], 0.9).is_err());
        assert!(detect_collapse(&tr, 1.0).is_err());
    }

    #[test]
    fn collapse_comes_sooner_with_a_larger_gap() {
        let time = |gap: f64| {
            let t = integrate_flow(&flow(&[1.0, 1.0 - gap], &[0.0, 0.0], Objective::ExpectedReturn, 0.01, 2000.0)).unwrap();
            t.collapse(0.99).unwrap().1.expect("collapses")
        };
        let (a, b, c) = (time(0.1), time(0.5), time(1.0));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn single_sample_updates_never_push_a_rewarded_outcome_down() {
        let cfg = StochasticRunConfig {
            rewards: rv(&[1.0, 0.0]),
            init_logits: Logits::zeros(2).unwrap(),
            objective: Objective::ExpectedReturn,
            group_size: 1,
            learning_rate: 0.3,
            updates: 200,
            seed: 9,
            clip_eps: 0.1,
            baseline: false,
        };
        let trace = simulate_stochastic(&cfg).unwrap();
        for (u, counts) in trace.counts.iter().enumerate() {
            if counts[0] == 1 {
                assert!(trace.simplexes[u + 1].probs()[0] >= trace.simplexes[u].probs()[0]);
            }
        }
    }

    #[test]
    fn stochastic_runs_are_deterministic() {
        let cfg = StochasticRunConfig {
            rewards: rv(&[1.0; 4]),
            init_logits: Logits::zeros(4).unwrap(),
            objective: Objective::Ips,
            group_size: 8,
            learning_rate: 0.5,
            updates: 300,
            seed: 4,
            clip_eps: 0.1,
            baseline: false,
        };
        assert_eq!(simulate_stochastic(&cfg).unwrap(), simulate_stochastic(&cfg).unwrap());
    }
}
