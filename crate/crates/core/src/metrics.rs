//! Evaluation quantities: mode sets, run logs, recovery curves, per-mode
//! frequency traces, the policy force field and sampling densities.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{argmax_cells, GridEnv, Lattice};
use crate::policy::{masked_softmax, ActionMasks, TabularPolicy};
use crate::trainer::TrainConfig;

/// The argmax-reward cells of an environment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSet {
    pub cells: Vec<usize>,
    pub coords: Vec<Vec<usize>>,
}

impl ModeSet {
    pub fn from_env<E: GridEnv + ?Sized>(env: &E) -> Result<Self> {
        let cells = argmax_cells(env)?;
        if cells.is_empty() {
            return Err(invalid("environment has no terminable cell"));
        }
        let lattice = env.lattice();
        let coords = cells.iter().map(|&c| lattice.coords(c)).collect();
        Ok(Self { cells, coords })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn position(&self, cell: usize) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }

    pub fn label(&self, i: usize) -> String {
        let parts: Vec<String> = self.coords[i].iter().map(|v| v.to_string()).collect();
        format!("mode_{}", parts.join("_"))
    }
}

/// One logged update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    /// Terminal cell of every group member.
    pub outcomes: Vec<usize>,
    /// Group members terminating in each mode, in [`ModeSet`] order.
    pub mode_counts: Vec<usize>,
    /// Distinct modes present in the group.
    pub modes_in_group: usize,
    /// ℓ1 between the exact terminal distribution after the update and the target.
    pub l1_exact: f64,
    pub entropy: f64,
    pub kl: f64,
    /// Distinct `(cell, action)` edges traversed by the group, encoded `cell·A + a`.
    pub edges: Vec<u64>,
}

impl UpdateRecord {
    pub fn new(
        update: usize,
        outcomes: Vec<usize>,
        modes: &ModeSet,
        l1_exact: f64,
        entropy: f64,
        kl: f64,
        edges: Vec<u64>,
    ) -> Self {
        let mut mode_counts = vec![0; modes.len()];
        for &o in &outcomes {
            if let Some(i) = modes.position(o) {
                mode_counts[i] += 1;
            }
        }
        let modes_in_group = mode_counts.iter().filter(|c| **c > 0).count();
        Self { update, outcomes, mode_counts, modes_in_group, l1_exact, entropy, kl, edges }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: TrainConfig,
    pub seed: u64,
    pub modes: ModeSet,
    pub records: Vec<UpdateRecord>,
}

impl RunLog {
    pub fn new(config: TrainConfig, modes: ModeSet) -> Self {
        let seed = config.seed;
        Self { config, seed, modes, records: Vec::new() }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn final_l1(&self) -> Option<f64> {
        self.records.last().map(|r| r.l1_exact)
    }

    /// Columns `update, l1_exact, modes_in_group, entropy, kl, mode_*`,
    /// preceded by `preamble` lines verbatim (expected to be `#` comments).
    pub fn to_csv(&self, preamble: &str) -> String {
        let mut out = String::from(preamble);
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> =
            ["update", "l1_exact", "modes_in_group", "entropy", "kl"].iter().map(|s| s.to_string()).collect();
        header.extend((0..self.modes.len()).map(|i| self.modes.label(i)));
        wtr.write_record(&header).expect("in-memory csv");
        for r in &self.records {
            let mut row = vec![
                r.update.to_string(),
                format!("{:e}", r.l1_exact),
                r.modes_in_group.to_string(),
                format!("{:e}", r.entropy),
                format!("{:e}", r.kl),
            ];
            row.extend(r.mode_counts.iter().map(|c| c.to_string()));
            wtr.write_record(&row).expect("in-memory csv");
        }
        out.push_str(&String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8"));
        out
    }
}

/// `(samples drawn, distinct modes seen so far)` after each sample.
pub fn mode_recovery_curve(stream: &[usize], modes: &ModeSet) -> Vec<(usize, usize)> {
    let mut seen = BTreeSet::new();
    stream
        .iter()
        .enumerate()
        .map(|(i, &cell)| {
            if modes.position(cell).is_some() {
                seen.insert(cell);
            }
            (i + 1, seen.len())
        })
        .collect()
}

/// Pointwise arithmetic mean of recovery curves, truncated to the shortest.
pub fn mean_recovery_curve(curves: &[Vec<(usize, usize)>]) -> Vec<(usize, f64)> {
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..len)
        .map(|i| {
            let mean = curves.iter().map(|c| c[i].1 as f64).sum::<f64>() / curves.len() as f64;
            (curves[0][i].0, mean)
        })
        .collect()
}

/// Per update, the fraction of the group terminating in each mode.
pub fn mode_frequency_trace(log: &RunLog, modes: &ModeSet) -> Result<Vec<Vec<f64>>> {
    if log.is_empty() {
        return Err(invalid("mode_frequency_trace of an empty log"));
    }
    Ok(log
        .records
        .iter()
        .map(|r| {
            let g = r.outcomes.len() as f64;
            let mut freq = vec![0.0; modes.len()];
            for &o in &r.outcomes {
                if let Some(i) = modes.position(o) {
                    freq[i] += 1.0 / g;
                }
            }
            freq
        })
        .collect())
}

/// Distinct edges traversed within consecutive windows of `window` updates.
pub fn path_exploration(log: &RunLog, window: usize) -> Result<Vec<usize>> {
    if window == 0 {
        return Err(invalid("window must be >= 1"));
    }
    Ok(log
        .records
        .chunks(window)
        .map(|chunk| chunk.iter().flat_map(|r| r.edges.iter().copied()).collect::<BTreeSet<_>>().len())
        .collect())
}

/// Expected one-step displacement `Σ_a π(a|s) Δ(a)` for every cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ForceField {
    pub lattice: Lattice,
    pub vectors: Vec<Vec<f64>>,
}

impl ForceField {
    pub fn at(&self, x: &[usize]) -> &[f64] {
        &self.vectors[self.lattice.index(x)]
    }
}

pub fn force_field<E: GridEnv + ?Sized>(pol: &TabularPolicy, env: &E) -> Result<ForceField> {
    let masks = ActionMasks::new(env)?;
    let lattice = masks.lattice();
    if pol.lattice() != lattice {
        return Err(invalid("policy lattice does not match the environment"));
    }
    let mut p = vec![0.0; lattice.num_actions()];
    let vectors = (0..lattice.num_cells())
        .map(|c| {
            masked_softmax(pol.state_logits(c), masks.row(c), &mut p);
            p[..lattice.dims].to_vec()
        })
        .collect();
    Ok(ForceField { lattice, vectors })
}

/// Empirical frequency of each cell in a sample of terminal cells.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Density {
    pub lattice: Lattice,
    pub probs: Vec<f64>,
}

pub fn sampling_density(samples: &[usize], lattice: Lattice) -> Result<Density> {
    if samples.is_empty() {
        return Err(invalid("sampling density of an empty sample"));
    }
    let cells = lattice.num_cells();
    let mut probs = vec![0.0; cells];
    for &s in samples {
        if s >= cells {
            return Err(invalid(format!("cell {s} outside the grid")));
        }
        probs[s] += 1.0;
    }
    let n = samples.len() as f64;
    probs.iter_mut().for_each(|p| *p /= n);
    Ok(Density { lattice, probs })
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}
