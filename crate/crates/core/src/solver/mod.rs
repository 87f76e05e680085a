//! Exact desk-scale MILP solving: LP relaxations by bounded-variable
//! simplex, best-bound branch-and-bound with diving, a solution pool, and
//! a brute-force enumeration oracle.

mod bnb;
mod brute;
mod simplex;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::milp::{MilpInstance, Solution};

pub use bnb::{solve_milp, solve_milp_with};
pub use brute::{brute_force, BruteForce, BRUTE_FORCE_LIMIT};
pub use simplex::{solve_lp, LpOutcome};

/// Default rate of the deterministic clock, in simplex iterations per
/// simulated second. Roughly matches a single core on the desk-scale
/// independent-set instances.
pub const DEFAULT_ITERATIONS_PER_SECOND: f64 = 20_000.0;

/// How solve time is measured.
///
/// `Work` counts simplex iterations and makes every time-limited run
/// reproducible bit for bit; `Wall` uses real elapsed time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClockMode {
    Wall,
    Work { iterations_per_second: f64 },
}

impl Default for ClockMode {
    fn default() -> Self {
        ClockMode::Work { iterations_per_second: DEFAULT_ITERATIONS_PER_SECOND }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Clock {
    mode: ClockMode,
    start: Instant,
}

impl Clock {
    pub(crate) fn start(mode: ClockMode) -> Self {
        Clock { mode, start: Instant::now() }
    }

    /// Simplex limit matching `time_limit` seconds on this clock.
    pub(crate) fn lp_limit(&self, time_limit: f64) -> simplex::LpLimit {
        let mut limit = simplex::LpLimit::default();
        if time_limit.is_finite() && time_limit < 1e9 {
            match self.mode {
                ClockMode::Wall => {
                    limit.deadline = Some(self.start + std::time::Duration::from_secs_f64(time_limit.max(0.0)))
                }
                ClockMode::Work { iterations_per_second } => {
                    limit.max_work = (time_limit * iterations_per_second).ceil().max(0.0) as u64
                }
            }
        }
        limit
    }

    pub(crate) fn elapsed(&self, work: u64) -> f64 {
        match self.mode {
            ClockMode::Wall => self.start.elapsed().as_secs_f64(),
            ClockMode::Work { iterations_per_second } => work as f64 / iterations_per_second,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveParams {
    /// Seconds on `clock`; `f64::INFINITY` disables the limit (`null` in JSON).
    #[serde(with = "unlimited_as_null")]
    pub time_limit: f64,
    pub pool_size: usize,
    pub rel_gap_tol: f64,
    pub int_tol: f64,
    pub node_limit: Option<u64>,
    pub seed: u64,
    pub clock: ClockMode,
    /// Depth-first dive to a leaf after every best-bound node.
    pub dive: bool,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            time_limit: f64::INFINITY,
            pool_size: 100,
            rel_gap_tol: 1e-6,
            int_tol: 1e-6,
            node_limit: None,
            seed: 0,
            clock: ClockMode::default(),
            dive: true,
        }
    }
}

impl SolveParams {
    pub fn with_time_limit(mut self, seconds: f64) -> Self {
        self.time_limit = seconds;
        self
    }

    pub fn with_clock(mut self, clock: ClockMode) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_pool_size(mut self, pool_size: usize) -> Self {
        self.pool_size = pool_size;
        self
    }
}

mod unlimited_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Optimal,
    /// A limit was hit with an incumbent available.
    FeasibleTimeLimit,
    /// A limit was hit before any feasible solution was found.
    NoSolutionTimeLimit,
    Infeasible,
    Unbounded,
    /// The simplex lost accuracy; the incumbent (if any) is still feasible.
    Numerics,
}

impl Status {
    pub fn has_solution(self) -> bool {
        matches!(self, Status::Optimal | Status::FeasibleTimeLimit)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub x: Vec<f64>,
    pub objective: f64,
}

/// Best distinct (on the binary subvector) integral solutions seen,
/// sorted by objective ascending.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionPool {
    pub capacity: usize,
    pub entries: Vec<PoolEntry>,
    #[serde(skip)]
    keys: Vec<Vec<u8>>,
}

impl SolutionPool {
    pub fn new(capacity: usize) -> Self {
        SolutionPool { capacity: capacity.max(1), entries: Vec::new(), keys: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn key(x: &[f64], q: usize) -> Vec<u8> {
        x[..q].iter().map(|v| u8::from(*v > 0.5)).collect()
    }

    /// Offers a solution; returns whether the pool changed.
    pub fn insert(&mut self, x: &[f64], objective: f64, q: usize) -> bool {
        if self.keys.len() != self.entries.len() {
            self.keys = self.entries.iter().map(|e| Self::key(&e.x, q)).collect();
        }
        if self.entries.len() == self.capacity
            && self.entries.last().is_some_and(|w| objective >= w.objective)
        {
            return false;
        }
        let key = Self::key(x, q);
        if let Some(pos) = self.keys.iter().position(|k| *k == key) {
            if objective >= self.entries[pos].objective {
                return false;
            }
            self.entries.remove(pos);
            self.keys.remove(pos);
        }
        let pos = self
            .entries
            .iter()
            .zip(&self.keys)
            .position(|(e, k)| (objective, &key) < (e.objective, k))
            .unwrap_or(self.entries.len());
        self.entries.insert(pos, PoolEntry { x: x.to_vec(), objective });
        self.keys.insert(pos, key);
        if self.entries.len() > self.capacity {
            self.entries.pop();
            self.keys.pop();
        }
        true
    }

    /// Drops trailing components, e.g. auxiliary variables added to a model.
    pub fn truncate_vars(&mut self, keep: impl Fn(&[f64]) -> Vec<f64>) {
        for e in &mut self.entries {
            e.x = keep(&e.x);
        }
        self.keys.clear();
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes: u64,
    pub lp_iterations: u64,
    /// Seconds on the configured clock.
    pub time: f64,
}

/// One improvement of the incumbent, on the solve clock.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncumbentEvent {
    pub time: f64,
    pub objective: f64,
}

/// Result of a solve. Objectives and bound are in the internal
/// minimization form; see [`SolveResult::report`] for the original sense.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub status: Status,
    pub incumbent: Option<Solution>,
    pub bound: f64,
    pub pool: SolutionPool,
    pub stats: SolveStats,
    pub trace: Vec<IncumbentEvent>,
}

impl SolveResult {
    pub fn objective(&self) -> Option<f64> {
        self.incumbent.as_ref().map(|s| s.objective)
    }

    pub fn report(&self, inst: &MilpInstance) -> SolveReport {
        let flip = |v: f64| inst.to_original(v);
        SolveReport {
            instance: inst.name.clone(),
            sense: inst.sense,
            status: self.status,
            objective: self.objective().map(flip),
            bound: flip(self.bound),
            solution: self.incumbent.as_ref().map(|s| s.values.clone()),
            pool: self
                .pool
                .entries
                .iter()
                .map(|e| PoolEntry { x: e.x.clone(), objective: flip(e.objective) })
                .collect(),
            stats: self.stats,
            trace: self
                .trace
                .iter()
                .map(|e| IncumbentEvent { time: e.time, objective: flip(e.objective) })
                .collect(),
        }
    }
}

/// JSON-facing view of a [`SolveResult`] with every objective in the
/// sense the instance was read in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub instance: String,
    pub sense: crate::milp::ObjSense,
    pub status: Status,
    pub objective: Option<f64>,
    pub bound: f64,
    pub solution: Option<Vec<f64>>,
    pub pool: Vec<PoolEntry>,
    pub stats: SolveStats,
    pub trace: Vec<IncumbentEvent>,
}
