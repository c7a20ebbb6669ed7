//! Probability vectors over a finite outcome set and the softmax map onto them.
//!
//! Every dynamical statement in this crate is phrased on the simplex
//! `p = softmax(z)`; this module holds the primitives those statements share.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Tolerance on `Σ p_i = 1` accepted by [`Simplex::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Probabilities at or below this are treated as zero by [`log_ratio`].
pub const MIN_LOG_PROB: f64 = 1e-300;

/// Unconstrained logit vector with at least two finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Logits(Vec<f64>);

impl Logits {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(invalid(format!("logits need K >= 2 entries, got {}", values.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("logit {i} is not finite ({})", values[i])));
        }
        Ok(Self(values))
    }

    pub fn zeros(k: usize) -> Result<Self> {
        Self::new(vec![0.0; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Adds `c` to every entry.
    pub fn shifted(&self, c: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|z| z + c).collect())
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Logits {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Logits> for Vec<f64> {
    fn from(z: Logits) -> Self {
        z.0
    }
}

/// A probability vector: entries are nonnegative and sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Simplex(Vec<f64>);

impl Simplex {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("empty probability vector"));
        }
        if let Some(i) = probs.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid(format!("probability {i} is {} (must be finite and >= 0)", probs[i])));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(invalid(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(invalid("uniform simplex over zero outcomes"));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    /// Normalizes nonnegative weights with positive total.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("weights have zero total"));
        }
        Self::new(weights.iter().map(|w| w / total).collect())
    }

    pub(crate) fn from_raw(probs: Vec<f64>) -> Self {
        debug_assert!((probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
        Self(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index and value of the largest entry (first one on ties).
    pub fn argmax(&self) -> (usize, f64) {
        self.0
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, p)| if p > best.1 { (i, p) } else { best })
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Simplex {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Simplex> for Vec<f64> {
    fn from(p: Simplex) -> Self {
        p.0
    }
}

/// Per-outcome rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RewardVector(Vec<f64>);

impl RewardVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("empty reward vector"));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("reward {i} is not finite")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn all_nonnegative(&self) -> bool {
        self.0.iter().all(|r| *r >= 0.0)
    }

    /// Whether the reward-proportional distribution is a stationary point
    /// of the IPS flow: all rewards nonnegative with positive total.
    pub fn admits_proportional_target(&self) -> bool {
        self.all_nonnegative() && self.total() > 0.0
    }
}

impl TryFrom<Vec<f64>> for RewardVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<RewardVector> for Vec<f64> {
    fn from(r: RewardVector) -> Self {
        r.0
    }
}

/// `a_i = r_i - E_p[r]`; has zero mean under the generating simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageVector(Vec<f64>);

impl AdvantageVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// `log Σ exp(x_k)` with max subtraction. Empty input gives `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Stable softmax over a raw slice; used for masked per-state action logits
/// where the number of entries may be one.
pub fn softmax_slice(z: &[f64]) -> Result<Vec<f64>> {
    if z.is_empty() {
        return Err(invalid("softmax of an empty vector"));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(invalid(format!("softmax input {i} is not finite")));
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    Ok(out)
}

pub fn softmax(z: &Logits) -> Simplex {
    // Logits are finite and nonempty by construction.
    Simplex::from_raw(softmax_slice(z.as_slice()).expect("validated logits"))
}

fn check_dims(what: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(invalid(format!("{what}: dimension mismatch ({a} vs {b})")));
    }
    Ok(())
}

/// Mean reward under `p`.
pub fn mean_reward(p: &Simplex, r: &RewardVector) -> Result<f64> {
    check_dims("mean_reward", p.len(), r.len())?;
    Ok(p.probs().iter().zip(r.as_slice()).map(|(p, r)| p * r).sum())
}

pub fn advantage(p: &Simplex, r: &RewardVector) -> Result<AdvantageVector> {
    let baseline = mean_reward(p, r)?;
    Ok(AdvantageVector(r.as_slice().iter().map(|r| r - baseline).collect()))
}

pub fn l1_distance(p: &Simplex, q: &Simplex) -> Result<f64> {
    check_dims("l1_distance", p.len(), q.len())?;
    Ok(l1(p.probs(), q.probs()))
}

/// Unchecked `Σ |a_i - b_i|` over the common prefix.
pub fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// `log(p_i / p_j)`, rejecting vanishing probabilities.
pub fn log_ratio(p: &Simplex, i: usize, j: usize) -> Result<f64> {
    let probs = p.probs();
    for idx in [i, j] {
        if idx >= probs.len() {
            return Err(invalid(format!("index {idx} out of range for K = {}", probs.len())));
        }
        if probs[idx] <= MIN_LOG_PROB {
            return Err(Error::Domain(format!("probability of outcome {idx} vanished ({})", probs[idx])));
        }
    }
    if i == j {
        return Ok(0.0);
    }
    Ok(probs[i].ln() - probs[j].ln())
}
