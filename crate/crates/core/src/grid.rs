//! Increment-only lattice environments with terminal rewards.
//!
//! Episodes start at the origin of `{0..H-1}^n`. Each step either increments
//! one coordinate or terminates; the reward depends only on the cell where
//! the episode terminates. Two tasks implement [`GridEnv`]:
//!
//! * [`GridSpec`], the multimodal hyper-grid with `2^n` corner modes and an
//!   enclosing ring, on which `Terminate` is valid everywhere;
//! * [`EqualRewardGrid`], a 2-D grid with two absorbing goal cells of equal
//!   reward but different path multiplicity.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::simplex::Simplex;

/// Default limit on `H^n` for exhaustive enumeration.
pub const ENUMERATION_CAP: usize = 1_000_000;

/// Shape of the lattice `{0..side-1}^dims` with a flat cell index
/// `Σ_d x_d · side^d`. Incrementing any coordinate increases the index, so
/// ascending index order is a topological order of the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    pub dims: usize,
    pub side: usize,
}

impl Lattice {
    pub fn new(dims: usize, side: usize) -> Result<Self> {
        if dims == 0 {
            return Err(invalid("grid needs at least one dimension"));
        }
        if side < 2 {
            return Err(invalid(format!("grid side length must be >= 2, got {side}")));
        }
        Ok(Self { dims, side })
    }

    /// `side^dims`, or `None` on overflow.
    pub fn checked_cells(&self) -> Option<usize> {
        (0..self.dims).try_fold(1usize, |acc, _| acc.checked_mul(self.side))
    }

    pub fn num_cells(&self) -> usize {
        self.checked_cells().expect("lattice size overflows usize")
    }

    pub fn ensure_enumerable(&self, cap: usize) -> Result<usize> {
        match self.checked_cells() {
            Some(c) if c <= cap => Ok(c),
            _ => Err(Error::Resource(format!(
                "{}^{} cells exceed the enumeration cap of {cap}; use a smaller grid",
                self.side, self.dims
            ))),
        }
    }

    /// Number of actions per state: one increment per dimension plus terminate.
    pub fn num_actions(&self) -> usize {
        self.dims + 1
    }

    pub fn check(&self, x: &[usize]) -> Result<()> {
        if x.len() != self.dims {
            return Err(invalid(format!("expected {} coordinates, got {}", self.dims, x.len())));
        }
        if let Some(d) = x.iter().position(|&v| v >= self.side) {
            return Err(invalid(format!("coordinate {d} = {} outside 0..{}", x[d], self.side)));
        }
        Ok(())
    }

    pub fn index(&self, x: &[usize]) -> usize {
        x.iter().rev().fold(0, |acc, &v| acc * self.side + v)
    }

    pub fn coords(&self, mut idx: usize) -> Vec<usize> {
        (0..self.dims)
            .map(|_| {
                let v = idx % self.side;
                idx /= self.side;
                v
            })
            .collect()
    }

    /// Cell reached by incrementing dimension `d` of cell `idx`.
    pub fn stride(&self, d: usize) -> usize {
        self.side.pow(d as u32)
    }

    pub fn coord(&self, idx: usize, d: usize) -> usize {
        (idx / self.stride(d)) % self.side
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GridAction {
    Increment(usize),
    Terminate,
}

impl GridAction {
    /// Column in a per-state action table: increments first, terminate last.
    pub fn index(self, dims: usize) -> usize {
        match self {
            GridAction::Increment(d) => d,
            GridAction::Terminate => dims,
        }
    }

    pub fn from_index(i: usize, dims: usize) -> Self {
        if i == dims {
            GridAction::Terminate
        } else {
            GridAction::Increment(i)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub coords: Vec<usize>,
    pub terminated: bool,
}

impl GridState {
    pub fn origin(dims: usize) -> Self {
        Self { coords: vec![0; dims], terminated: false }
    }

    pub fn at(coords: Vec<usize>) -> Self {
        Self { coords, terminated: false }
    }
}

/// An increment-only lattice task with a terminal reward.
pub trait GridEnv: Send + Sync {
    fn lattice(&self) -> Lattice;

    /// Reward received when terminating at `x`.
    fn terminal_reward(&self, x: &[usize]) -> Result<f64>;

    /// Whether `Terminate` is available at `x`.
    fn can_terminate(&self, x: &[usize]) -> bool;

    /// Whether `Increment(d)` is available at `x`.
    fn can_increment(&self, x: &[usize], d: usize) -> bool {
        x[d] + 1 < self.lattice().side
    }

    fn is_valid(&self, x: &[usize], a: GridAction) -> bool {
        match a {
            GridAction::Terminate => self.can_terminate(x),
            GridAction::Increment(d) => d < x.len() && self.can_increment(x, d),
        }
    }

    /// Validity mask over the `dims + 1` action columns.
    fn action_mask(&self, x: &[usize]) -> Vec<bool> {
        let dims = self.lattice().dims;
        (0..=dims).map(|i| self.is_valid(x, GridAction::from_index(i, dims))).collect()
    }

    fn valid_actions(&self, s: &GridState) -> Result<Vec<GridAction>> {
        if s.terminated {
            return Err(Error::State("no actions from a terminated state".into()));
        }
        self.lattice().check(&s.coords)?;
        let dims = self.lattice().dims;
        Ok((0..=dims)
            .map(|i| GridAction::from_index(i, dims))
            .filter(|a| self.is_valid(&s.coords, *a))
            .collect())
    }

    /// Applies `a`; the reward is `Some` exactly when `a` terminates.
    fn step(&self, s: &GridState, a: GridAction) -> Result<(GridState, Option<f64>)> {
        if s.terminated {
            return Err(Error::State("step from a terminated state".into()));
        }
        self.lattice().check(&s.coords)?;
        if !self.is_valid(&s.coords, a) {
            return Err(invalid(format!("action {a:?} is not valid at {:?}", s.coords)));
        }
        match a {
            GridAction::Terminate => {
                let r = self.terminal_reward(&s.coords)?;
                Ok((GridState { coords: s.coords.clone(), terminated: true }, Some(r)))
            }
            GridAction::Increment(d) => {
                let mut coords = s.coords.clone();
                coords[d] += 1;
                Ok((GridState::at(coords), None))
            }
        }
    }
}

/// The target `p(x) ∝ R(x)` over cells where termination is possible; all
/// other cells get probability zero.
pub fn enumerate_target<E: GridEnv + ?Sized>(env: &E) -> Result<Simplex> {
    enumerate_target_capped(env, ENUMERATION_CAP)
}

pub fn enumerate_target_capped<E: GridEnv + ?Sized>(env: &E, cap: usize) -> Result<Simplex> {
    let lat = env.lattice();
    let cells = lat.ensure_enumerable(cap)?;
    let weights = (0..cells)
        .map(|idx| {
            let x = lat.coords(idx);
            if env.can_terminate(&x) {
                env.terminal_reward(&x)
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Simplex::from_weights(&weights)
}

/// Number of increment sequences from the origin to `x`, by dynamic
/// programming over the box `∏_d [0, x_d]`.
pub fn count_paths(lattice: &Lattice, x: &[usize]) -> Result<u64> {
    lattice.check(x)?;
    let extents: Vec<usize> = x.iter().map(|v| v + 1).collect();
    let size: usize = extents.iter().product();
    let mut strides = vec![1usize; x.len()];
    for d in 1..x.len() {
        strides[d] = strides[d - 1] * extents[d - 1];
    }
    let mut ways = vec![0u64; size];
    ways[0] = 1;
    let mut local = vec![0usize; x.len()];
    for idx in 1..size {
        let mut rem = idx;
        for d in 0..x.len() {
            local[d] = rem % extents[d];
            rem /= extents[d];
        }
        let mut total = 0u64;
        for d in 0..x.len() {
            if local[d] > 0 {
                total = total.checked_add(ways[idx - strides[d]]).ok_or_else(|| Error::BigCount(x.to_vec()))?;
            }
        }
        ways[idx] = total;
    }
    Ok(ways[size - 1])
}

/// Path counts for every cell in one pass; `None` where the count overflows `u64`.
pub fn path_count_table(lattice: &Lattice) -> Result<Vec<Option<u64>>> {
    let cells = lattice.ensure_enumerable(ENUMERATION_CAP)?;
    let mut ways: Vec<Option<u64>> = vec![None; cells];
    ways[0] = Some(1);
    for idx in 1..cells {
        let mut total = Some(0u64);
        for d in 0..lattice.dims {
            if lattice.coord(idx, d) > 0 {
                total = total.zip(ways[idx - lattice.stride(d)]).and_then(|(a, b)| a.checked_add(b));
            }
        }
        ways[idx] = total;
    }
    Ok(ways)
}

/// Cells attaining the maximum terminal reward among terminable cells.
pub fn argmax_cells<E: GridEnv + ?Sized>(env: &E) -> Result<Vec<usize>> {
    let lat = env.lattice();
    let cells = lat.ensure_enumerable(ENUMERATION_CAP)?;
    let mut best = f64::NEG_INFINITY;
    let mut out = Vec::new();
    for idx in 0..cells {
        let x = lat.coords(idx);
        if !env.can_terminate(&x) {
            continue;
        }
        let r = env.terminal_reward(&x)?;
        if r > best {
            best = r;
            out.clear();
        }
        if r == best {
            out.push(idx);
        }
    }
    Ok(out)
}

/// The hyper-grid: `R(x) = R0 + R1·∏ 1(|a_d| > 0.5) + R2·∏ 1(0.6 < |a_d| < 0.8)`
/// with `a_d = 2 x_d / (H - 1) - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    #[serde(rename = "side")]
    pub h: usize,
    pub r0: f64,
    pub r1: f64,
    pub r2: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { n: 2, h: 8, r0: 0.1, r1: 0.5, r2: 2.0 }
    }
}

impl GridSpec {
    pub fn new(n: usize, h: usize, r0: f64, r1: f64, r2: f64) -> Result<Self> {
        let spec = Self { n, h, r0, r1, r2 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        Lattice::new(self.n, self.h)?;
        if ![self.r0, self.r1, self.r2].iter().all(|v| v.is_finite()) {
            return Err(invalid("reward levels must be finite"));
        }
        if !(0.0 < self.r0 && self.r0 < self.r1 && self.r1 < self.r2) {
            return Err(invalid(format!(
                "reward levels must satisfy 0 < R0 < R1 < R2, got ({}, {}, {})",
                self.r0, self.r1, self.r2
            )));
        }
        Ok(())
    }

    pub fn normalized_coord(&self, x: &[usize]) -> Result<Vec<f64>> {
        self.lattice().check(x)?;
        let span = (self.h - 1) as f64;
        Ok(x.iter().map(|&v| 2.0 * v as f64 / span - 1.0).collect())
    }

    pub fn max_reward(&self) -> f64 {
        self.r0 + self.r1 + self.r2
    }
}

impl GridEnv for GridSpec {
    fn lattice(&self) -> Lattice {
        Lattice { dims: self.n, side: self.h }
    }

    fn terminal_reward(&self, x: &[usize]) -> Result<f64> {
        let a = self.normalized_coord(x)?;
        let outer = a.iter().all(|v| v.abs() > 0.5);
        let ring = a.iter().all(|v| 0.6 < v.abs() && v.abs() < 0.8);
        Ok(self.r0 + if outer { self.r1 } else { 0.0 } + if ring { self.r2 } else { 0.0 })
    }

    fn can_terminate(&self, _x: &[usize]) -> bool {
        true
    }
}

/// Two absorbing goal cells with equal reward on a 2-D increment grid.
///
/// Only increments are available until the walk enters a goal (where it must
/// terminate) or a dead end with no increments left (where it terminates
/// with the floor reward).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EqualRewardGrid {
    pub side: usize,
    pub goals: Vec<Vec<usize>>,
    pub goal_reward: f64,
    pub floor_reward: f64,
}

impl Default for EqualRewardGrid {
    /// 7×7 grid, goals A = (4, 3) with 35 paths and B = (6, 1) with 7.
    fn default() -> Self {
        Self { side: 7, goals: vec![vec![4, 3], vec![6, 1]], goal_reward: 1.0, floor_reward: 0.001 }
    }
}

impl EqualRewardGrid {
    pub fn validate(&self) -> Result<()> {
        let lat = Lattice::new(2, self.side)?;
        if self.goals.is_empty() {
            return Err(invalid("equal-reward grid needs at least one goal"));
        }
        for g in &self.goals {
            lat.check(g)?;
        }
        if !(self.floor_reward > 0.0 && self.goal_reward > self.floor_reward) {
            return Err(invalid("need 0 < floor_reward < goal_reward"));
        }
        Ok(())
    }

    fn is_goal(&self, x: &[usize]) -> bool {
        self.goals.iter().any(|g| g == x)
    }

    fn is_dead_end(&self, x: &[usize]) -> bool {
        x.iter().all(|&v| v + 1 >= self.side)
    }
}

impl GridEnv for EqualRewardGrid {
    fn lattice(&self) -> Lattice {
        Lattice { dims: 2, side: self.side }
    }

    fn terminal_reward(&self, x: &[usize]) -> Result<f64> {
        self.lattice().check(x)?;
        Ok(if self.is_goal(x) { self.goal_reward } else { self.floor_reward })
    }

    fn can_terminate(&self, x: &[usize]) -> bool {
        self.is_goal(x) || self.is_dead_end(x)
    }

    fn can_increment(&self, x: &[usize], d: usize) -> bool {
        !self.is_goal(x) && x[d] + 1 < self.side
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard_spec() -> GridSpec {
        GridSpec::new(2, 8, 0.1, 0.5, 2.0).unwrap()
    }

    #[test]
    fn normalized_coord_examples() {
        let s = standard_spec();
        assert_eq!(s.normalized_coord(&[0, 0]).unwrap(), vec![-1.0, -1.0]);
        assert_eq!(s.normalized_coord(&[7, 7]).unwrap(), vec![1.0, 1.0]);
        let a = s.normalized_coord(&[6, 1]).unwrap();
        assert!((a[0] - 5.0 / 7.0).abs() < 1e-15 && (a[1] + 5.0 / 7.0).abs() < 1e-15);
        assert!(s.normalized_coord(&[8, 0]).is_err());
        assert!(s.normalized_coord(&[1, 1, 1]).is_err());
    }

    #[test]
    fn terminal_reward_examples() {
        let s = standard_spec();
        assert!((s.terminal_reward(&[3, 3]).unwrap() - 0.1).abs() < 1e-15);
        assert!((s.terminal_reward(&[0, 0]).unwrap() - 0.6).abs() < 1e-15);
        assert!((s.terminal_reward(&[6, 1]).unwrap() - 2.6).abs() < 1e-15);
        assert!(s.terminal_reward(&[0, 9]).is_err());
    }

    #[test]
    fn reward_levels_must_be_ordered() {
        assert!(GridSpec::new(2, 8, 0.0, 0.5, 2.0).is_err());
        assert!(GridSpec::new(2, 8, 0.1, 2.5, 2.0).is_err());
        assert!(GridSpec::new(2, 1, 0.1, 0.5, 2.0).is_err());
        assert!(GridSpec::new(0, 8, 0.1, 0.5, 2.0).is_err());
    }

    #[test]
    fn valid_action_examples() {
        let s = standard_spec();
        use GridAction::*;
        assert_eq!(s.valid_actions(&GridState::origin(2)).unwrap(), vec![Increment(0), Increment(1), Terminate]);
        assert_eq!(s.valid_actions(&GridState::at(vec![7, 7])).unwrap(), vec![Terminate]);
        assert_eq!(s.valid_actions(&GridState::at(vec![7, 0])).unwrap(), vec![Increment(1), Terminate]);
        let done = GridState { coords: vec![0, 0], terminated: true };
        assert!(matches!(s.valid_actions(&done), Err(Error::State(_))));
    }

    #[test]
    fn step_examples() {
        let s = standard_spec();
        let (next, r) = s.step(&GridState::origin(2), GridAction::Increment(0)).unwrap();
        assert_eq!(next, GridState::at(vec![1, 0]));
        assert_eq!(r, None);
        let (next, r) = s.step(&GridState::at(vec![6, 1]), GridAction::Terminate).unwrap();
        assert!(next.terminated);
        assert!((r.unwrap() - 2.6).abs() < 1e-15);
        let (_, r) = s.step(&GridState::origin(2), GridAction::Terminate).unwrap();
        assert!((r.unwrap() - 0.6).abs() < 1e-15);
        assert!(matches!(s.step(&GridState::at(vec![7, 3]), GridAction::Increment(0)), Err(Error::InvalidArgument(_))));
        assert!(s.step(&GridState::origin(2), GridAction::Increment(2)).is_err());
    }

    #[test]
    fn target_examples() {
        let one = GridSpec::new(1, 2, 0.1, 0.5, 2.0).unwrap();
        let t = enumerate_target(&one).unwrap();
        assert_eq!(t.probs(), &[0.5, 0.5]);
        assert!((one.terminal_reward(&[0]).unwrap() - 0.6).abs() < 1e-15);

        let s = standard_spec();
        let t = enumerate_target(&s).unwrap();
        assert_eq!(t.len(), 64);
        assert!(t.probs().iter().all(|p| *p > 0.0));
        let modes = argmax_cells(&s).unwrap();
        let coords: Vec<Vec<usize>> = modes.iter().map(|&i| s.lattice().coords(i)).collect();
        assert_eq!(coords, vec![vec![1, 1], vec![6, 1], vec![1, 6], vec![6, 6]]);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let big = GridSpec::new(7, 8, 0.1, 0.5, 2.0).unwrap();
        assert!(matches!(enumerate_target(&big), Err(Error::Resource(_))));
        assert!(matches!(enumerate_target_capped(&standard_spec(), 10), Err(Error::Resource(_))));
    }

    #[test]
    fn path_count_examples() {
        let lat = Lattice::new(2, 7).unwrap();
        assert_eq!(count_paths(&lat, &[0, 0]).unwrap(), 1);
        assert_eq!(count_paths(&lat, &[4, 3]).unwrap(), 35);
        assert_eq!(count_paths(&lat, &[6, 1]).unwrap(), 7);
        assert!(count_paths(&lat, &[7, 0]).is_err());
    }

    #[test]
    fn path_count_overflow_is_reported() {
        // C(80, 40) > 2^64
        let lat = Lattice::new(2, 41).unwrap();
        assert!(matches!(count_paths(&lat, &[40, 40]), Err(Error::BigCount(_))));
        assert_eq!(count_paths(&lat, &[30, 30]).unwrap(), 118_264_581_564_861_424);
    }

    #[test]
    fn path_count_table_agrees_with_single_counts() {
        let lat = Lattice::new(3, 4).unwrap();
        let table = path_count_table(&lat).unwrap();
        for (idx, n) in table.iter().enumerate() {
            assert_eq!(*n, Some(count_paths(&lat, &lat.coords(idx)).unwrap()));
        }
        let wide = path_count_table(&Lattice::new(2, 41).unwrap()).unwrap();
        assert_eq!(wide[Lattice::new(2, 41).unwrap().index(&[40, 40])], None);
    }

    #[test]
    fn lattice_index_round_trip() {
        let lat = Lattice::new(3, 5).unwrap();
        for idx in 0..lat.num_cells() {
            let x = lat.coords(idx);
            assert_eq!(lat.index(&x), idx);
            for d in 0..3 {
                assert_eq!(lat.coord(idx, d), x[d]);
            }
        }
    }

    #[test]
    fn equal_reward_grid_structure() {
        let env = EqualRewardGrid::default();
        env.validate().unwrap();
        let terminal: Vec<Vec<usize>> = (0..49)
            .map(|i| env.lattice().coords(i))
            .filter(|x| env.can_terminate(x))
            .collect();
        assert_eq!(terminal, vec![vec![6, 1], vec![4, 3], vec![6, 6]]);
        use GridAction::*;
        assert_eq!(env.valid_actions(&GridState::at(vec![4, 3])).unwrap(), vec![Terminate]);
        assert_eq!(env.valid_actions(&GridState::at(vec![6, 0])).unwrap(), vec![Increment(1)]);
        assert_eq!(env.valid_actions(&GridState::at(vec![6, 6])).unwrap(), vec![Terminate]);
        assert_eq!(env.terminal_reward(&[6, 6]).unwrap(), 0.001);
        let modes = argmax_cells(&env).unwrap();
        assert_eq!(modes.len(), 2);
    }
}
