//! Tabular softmax policies over grid cells.
//!
//! A [`TabularPolicy`] stores one logit per (cell, action column). Invalid
//! actions are dropped before the softmax, so they get probability exactly
//! zero and their logits never receive gradient.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{GridAction, GridEnv, GridState, Lattice, ENUMERATION_CAP};
use crate::sampling::sample_categorical;
use crate::simplex::Simplex;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    lattice: Lattice,
    logits: Vec<f64>,
}

impl TabularPolicy {
    /// All-zero logits: uniform over the valid actions of every cell.
    pub fn uniform(lattice: Lattice) -> Self {
        let len = lattice.num_cells() * lattice.num_actions();
        Self { lattice, logits: vec![0.0; len] }
    }

    pub fn from_logits(lattice: Lattice, logits: Vec<f64>) -> Result<Self> {
        let want = lattice
            .checked_cells()
            .and_then(|c| c.checked_mul(lattice.num_actions()))
            .ok_or_else(|| invalid("policy table too large"))?;
        if logits.len() != want {
            return Err(invalid(format!("policy table needs {want} logits, got {}", logits.len())));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(invalid("policy logits must be finite"));
        }
        Ok(Self { lattice, logits })
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn state_logits(&self, cell: usize) -> &[f64] {
        let a = self.lattice.num_actions();
        &self.logits[cell * a..(cell + 1) * a]
    }

    pub fn state_logits_mut(&mut self, cell: usize) -> &mut [f64] {
        let a = self.lattice.num_actions();
        &mut self.logits[cell * a..(cell + 1) * a]
    }
}

/// Per-cell action validity, enumerated once from an environment.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionMasks {
    lattice: Lattice,
    valid: Vec<bool>,
}

impl ActionMasks {
    pub fn new<E: GridEnv + ?Sized>(env: &E) -> Result<Self> {
        let lattice = env.lattice();
        let cells = lattice.ensure_enumerable(ENUMERATION_CAP)?;
        let mut valid = Vec::with_capacity(cells * lattice.num_actions());
        for idx in 0..cells {
            valid.extend(env.action_mask(&lattice.coords(idx)));
        }
        Ok(Self { lattice, valid })
    }

    pub fn lattice(&self) -> Lattice {
        self.lattice
    }

    pub fn row(&self, cell: usize) -> &[bool] {
        let a = self.lattice.num_actions();
        &self.valid[cell * a..(cell + 1) * a]
    }

    pub fn can_terminate(&self, cell: usize) -> bool {
        self.row(cell)[self.lattice.dims]
    }
}

/// Softmax over the entries where `mask` is set; masked entries get 0.
pub(crate) fn masked_softmax(logits: &[f64], mask: &[bool], out: &mut [f64]) {
    let m = logits
        .iter()
        .zip(mask)
        .filter(|(_, ok)| **ok)
        .map(|(z, _)| *z)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for ((o, z), ok) in out.iter_mut().zip(logits).zip(mask) {
        *o = if *ok { (z - m).exp() } else { 0.0 };
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn check_policy_fits(pol: &TabularPolicy, lattice: Lattice) -> Result<()> {
    if pol.lattice != lattice {
        return Err(invalid(format!("policy is for {:?}, environment is {:?}", pol.lattice, lattice)));
    }
    Ok(())
}

fn live_cell(lattice: Lattice, s: &GridState) -> Result<usize> {
    if s.terminated {
        return Err(Error::State("terminated state has no action distribution".into()));
    }
    lattice.check(&s.coords)?;
    Ok(lattice.index(&s.coords))
}

fn state_probs<E: GridEnv + ?Sized>(pol: &TabularPolicy, env: &E, s: &GridState) -> Result<Vec<f64>> {
    let lattice = env.lattice();
    check_policy_fits(pol, lattice)?;
    let cell = live_cell(lattice, s)?;
    let mask = env.action_mask(&s.coords);
    let mut out = vec![0.0; lattice.num_actions()];
    masked_softmax(pol.state_logits(cell), &mask, &mut out);
    Ok(out)
}

/// Action distribution at `s` over the columns `[Inc(0), .., Inc(n-1), Terminate]`.
pub fn action_distribution<E: GridEnv + ?Sized>(pol: &TabularPolicy, env: &E, s: &GridState) -> Result<Simplex> {
    Simplex::new(state_probs(pol, env, s)?)
}

/// Shannon entropy of the action distribution at `s`, with `0 log 0 = 0`.
pub fn policy_entropy<E: GridEnv + ?Sized>(pol: &TabularPolicy, env: &E, s: &GridState) -> Result<f64> {
    Ok(entropy(&state_probs(pol, env, s)?))
}

pub(crate) fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// `KL(π(·|s) ‖ π_ref(·|s))`.
pub fn kl_to_reference<E: GridEnv + ?Sized>(
    pol: &TabularPolicy,
    reference: &TabularPolicy,
    env: &E,
    s: &GridState,
) -> Result<f64> {
    let p = state_probs(pol, env, s)?;
    let q = state_probs(reference, env, s)?;
    kl(&p, &q).ok_or_else(|| Error::Domain(format!("reference assigns zero probability to a policy action at {:?}", s.coords)))
}

pub(crate) fn kl(p: &[f64], q: &[f64]) -> Option<f64> {
    let mut total = 0.0;
    for (p, q) in p.iter().zip(q) {
        if *p > 0.0 {
            if *q <= 0.0 {
                return None;
            }
            total += p * (p / q).ln();
        }
    }
    Some(total)
}

/// One episode: the cell before each action, the actions, and the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Flat cell index of the state in which each action was taken.
    pub cells: Vec<usize>,
    pub actions: Vec<GridAction>,
    pub terminal_cell: usize,
    pub terminal_outcome: Vec<usize>,
    pub reward: f64,
    /// `Σ_t log π(a_t | s_t)` under the sampling policy.
    pub logprob: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn states(&self, lattice: Lattice) -> Vec<GridState> {
        self.cells.iter().map(|&c| GridState::at(lattice.coords(c))).collect()
    }
}

pub fn sample_trajectory<E, R>(pol: &TabularPolicy, env: &E, rng: &mut R) -> Result<Trajectory>
where
    E: GridEnv + ?Sized,
    R: Rng + ?Sized,
{
    let masks = ActionMasks::new(env)?;
    check_policy_fits(pol, masks.lattice())?;
    sample_with_masks(pol, &masks, env, rng)
}

/// Samples an episode using precomputed masks.
pub fn sample_with_masks<E, R>(pol: &TabularPolicy, masks: &ActionMasks, env: &E, rng: &mut R) -> Result<Trajectory>
where
    E: GridEnv + ?Sized,
    R: Rng + ?Sized,
{
    let lattice = masks.lattice();
    let dims = lattice.dims;
    let mut probs = vec![0.0; lattice.num_actions()];
    let mut cell = 0usize;
    let mut cells = Vec::new();
    let mut actions = Vec::new();
    let mut logprob = 0.0;
    loop {
        masked_softmax(pol.state_logits(cell), masks.row(cell), &mut probs);
        let a = sample_categorical(&probs, rng);
        logprob += probs[a].ln();
        cells.push(cell);
        let action = GridAction::from_index(a, dims);
        actions.push(action);
        match action {
            GridAction::Terminate => break,
            GridAction::Increment(d) => cell += lattice.stride(d),
        }
    }
    let terminal_outcome = lattice.coords(cell);
    let reward = env.terminal_reward(&terminal_outcome)?;
    Ok(Trajectory { cells, actions, terminal_cell: cell, terminal_outcome, reward, logprob })
}

/// Recomputes `Σ_t log π(a_t | s_t)`, checking that the trajectory is a
/// legal episode of `env`.
pub fn trajectory_logprob<E: GridEnv + ?Sized>(pol: &TabularPolicy, env: &E, traj: &Trajectory) -> Result<f64> {
    let masks = ActionMasks::new(env)?;
    check_policy_fits(pol, masks.lattice())?;
    logprob_with_masks(pol, &masks, traj)
}

pub fn logprob_with_masks(pol: &TabularPolicy, masks: &ActionMasks, traj: &Trajectory) -> Result<f64> {
    let lattice = masks.lattice();
    let dims = lattice.dims;
    if traj.cells.len() != traj.actions.len() || traj.is_empty() {
        return Err(Error::Inconsistency("trajectory states and actions differ in length".into()));
    }
    if traj.cells[0] != 0 {
        return Err(Error::Inconsistency("trajectory does not start at the origin".into()));
    }
    let mut probs = vec![0.0; lattice.num_actions()];
    let mut total = 0.0;
    for (t, (&cell, &action)) in traj.cells.iter().zip(&traj.actions).enumerate() {
        if cell >= lattice.num_cells() {
            return Err(Error::Inconsistency(format!("step {t}: cell {cell} outside the grid")));
        }
        let a = action.index(dims);
        if a > dims || !masks.row(cell)[a] {
            return Err(Error::Inconsistency(format!(
                "step {t}: action {action:?} is invalid at {:?}",
                lattice.coords(cell)
            )));
        }
        masked_softmax(pol.state_logits(cell), masks.row(cell), &mut probs);
        total += probs[a].ln();
        let next = match action {
            GridAction::Terminate => {
                if t + 1 != traj.len() || cell != traj.terminal_cell {
                    return Err(Error::Inconsistency("terminate must be the final action".into()));
                }
                continue;
            }
            GridAction::Increment(d) => cell + lattice.stride(d),
        };
        if traj.cells.get(t + 1).is_some_and(|&c| c != next) {
            return Err(Error::Inconsistency(format!("step {t}: state sequence breaks the dynamics")));
        }
    }
    if traj.actions.last() != Some(&GridAction::Terminate) {
        return Err(Error::Inconsistency("trajectory does not end with terminate".into()));
    }
    Ok(total)
}

/// Exact terminal-outcome distribution by forward propagation of reach
/// probability in ascending cell order.
pub fn terminal_distribution_exact<E: GridEnv + ?Sized>(pol: &TabularPolicy, env: &E) -> Result<Simplex> {
    let masks = ActionMasks::new(env)?;
    check_policy_fits(pol, masks.lattice())?;
    Ok(terminal_distribution_with_masks(pol, &masks))
}

pub fn terminal_distribution_with_masks(pol: &TabularPolicy, masks: &ActionMasks) -> Simplex {
    let lattice = masks.lattice();
    let dims = lattice.dims;
    let cells = lattice.num_cells();
    let mut reach = vec![0.0; cells];
    let mut out = vec![0.0; cells];
    let mut probs = vec![0.0; lattice.num_actions()];
    reach[0] = 1.0;
    for cell in 0..cells {
        let mass = reach[cell];
        if mass == 0.0 {
            continue;
        }
        masked_softmax(pol.state_logits(cell), masks.row(cell), &mut probs);
        for d in 0..dims {
            if probs[d] > 0.0 {
                reach[cell + lattice.stride(d)] += mass * probs[d];
            }
        }
        out[cell] += mass * probs[dims];
    }
    Simplex::from_raw(out)
}

/// Serialized row: a cell and its action logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub coords: Vec<usize>,
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub dims: usize,
    pub side: usize,
    pub rows: Vec<PolicyRow>,
}

impl TabularPolicy {
    pub fn to_table(&self) -> PolicyTable {
        let rows = (0..self.lattice.num_cells())
            .map(|c| PolicyRow { coords: self.lattice.coords(c), logits: self.state_logits(c).to_vec() })
            .collect();
        PolicyTable { dims: self.lattice.dims, side: self.lattice.side, rows }
    }

    pub fn from_table(table: &PolicyTable) -> Result<Self> {
        let lattice = Lattice::new(table.dims, table.side)?;
        let mut pol = Self::uniform(lattice);
        let mut seen = vec![false; lattice.num_cells()];
        for row in &table.rows {
            lattice.check(&row.coords)?;
            if row.logits.len() != lattice.num_actions() {
                return Err(invalid(format!("row {:?} has {} logits", row.coords, row.logits.len())));
            }
            let cell = lattice.index(&row.coords);
            if std::mem::replace(&mut seen[cell], true) {
                return Err(invalid(format!("duplicate row for {:?}", row.coords)));
            }
            pol.state_logits_mut(cell).copy_from_slice(&row.logits);
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(invalid(format!("missing row for {:?}", lattice.coords(c))));
        }
        Self::from_logits(lattice, pol.logits)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_table()).expect("policy tables serialize")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let table: PolicyTable = serde_json::from_str(s).map_err(|e| invalid(format!("policy json: {e}")))?;
        Self::from_table(&table)
    }

    /// CSV with columns `x_1..x_n, inc_1..inc_n, terminate`; the side length
    /// travels in a leading `# side=H` comment line.
    pub fn to_csv(&self) -> String {
        let dims = self.lattice.dims;
        let mut out = format!("# side={}\n", self.lattice.side);
        let mut wtr = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> = (1..=dims)
            .map(|d| format!("x_{d}"))
            .chain((1..=dims).map(|d| format!("inc_{d}")))
            .chain(std::iter::once("terminate".to_string()))
            .collect();
        wtr.write_record(&header).expect("in-memory csv");
        for c in 0..self.lattice.num_cells() {
            let rec: Vec<String> = self
                .lattice
                .coords(c)
                .iter()
                .map(|v| v.to_string())
                .chain(self.state_logits(c).iter().map(|v| format!("{v:e}")))
                .collect();
            wtr.write_record(&rec).expect("in-memory csv");
        }
        out.push_str(&String::from_utf8(wtr.into_inner().expect("flush")).expect("utf8"));
        out
    }

    pub fn from_csv(s: &str) -> Result<Self> {
        let (first, body) = s.split_once('\n').ok_or_else(|| invalid("empty policy csv"))?;
        let side: usize = first
            .trim()
            .strip_prefix("# side=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| invalid("policy csv must start with '# side=H'"))?;
        let mut rdr = csv::Reader::from_reader(body.as_bytes());
        let headers = rdr.headers().map_err(|e| invalid(format!("policy csv: {e}")))?.clone();
        if headers.len() < 3 || headers.len() % 2 == 0 {
            return Err(invalid("policy csv header must have 2n+1 columns"));
        }
        let dims = (headers.len() - 1) / 2;
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| invalid(format!("policy csv: {e}")))?;
            let parse_err = |e: &dyn std::fmt::Display| invalid(format!("policy csv value: {e}"));
            let coords = (0..dims)
                .map(|i| rec[i].parse::<usize>().map_err(|e| parse_err(&e)))
                .collect::<Result<Vec<_>>>()?;
            let logits = (dims..=2 * dims)
                .map(|i| rec[i].parse::<f64>().map_err(|e| parse_err(&e)))
                .collect::<Result<Vec<_>>>()?;
            rows.push(PolicyRow { coords, logits });
        }
        Self::from_table(&PolicyTable { dims, side, rows })
    }
}
