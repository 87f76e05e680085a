//! Best-bound branch-and-bound over the binary variables.
//!
//! Branching picks the most fractional binary (lowest index on ties).
//! After every node taken from the queue the search dives depth first,
//! rounding toward the LP value, until it reaches a leaf; siblings along the
//! dive go back to the queue. Each dive step re-solves from the parent basis
//! with the dual simplex. The time limit also interrupts a running LP.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::simplex::{LpModel, LpOutcome, WarmStart};
use super::{Clock, IncumbentEvent, SolutionPool, SolveParams, SolveResult, SolveStats, Status};
use crate::error::Error;
use crate::milp::{MilpInstance, Solution};

struct OpenNode {
    bound: f64,
    id: u64,
    fixings: Vec<(u32, bool)>,
}

impl PartialEq for OpenNode {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for OpenNode {}
impl PartialOrd for OpenNode {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for OpenNode {
    // BinaryHeap is a max-heap: smallest bound, then oldest id, pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

enum Eval {
    Pruned,
    Leaf,
    Fractional { x: Vec<f64>, objective: f64, branch: usize },
    Unbounded,
}

enum Stop {
    Limit,
    Numerics,
}

struct Search<'a, F> {
    inst: &'a MilpInstance,
    params: &'a SolveParams,
    model: LpModel,
    q: usize,
    integral_objective: bool,
    pure_binary: bool,
    clock: Clock,
    work: u64,
    nodes: u64,
    next_id: u64,
    heap: BinaryHeap<OpenNode>,
    incumbent: Option<Solution>,
    pool: SolutionPool,
    trace: Vec<IncumbentEvent>,
    on_incumbent: F,
}

/// Solves `inst` to optimality or until a limit is reached.
pub fn solve_milp(inst: &MilpInstance, params: &SolveParams) -> SolveResult {
    solve_milp_with(inst, params, |_, _| {})
}

/// Like [`solve_milp`], calling `on_incumbent` on every improvement.
pub fn solve_milp_with<F>(inst: &MilpInstance, params: &SolveParams, on_incumbent: F) -> SolveResult
where
    F: FnMut(&IncumbentEvent, &Solution),
{
    let q = inst.num_binary();
    let pure_binary = inst.is_pure_binary();
    let integral_objective =
        pure_binary && inst.objective.iter().all(|c| c.fract() == 0.0 && c.abs() < 1e15);
    let clock = Clock::start(params.clock);
    let mut model = LpModel::new(inst);
    model.set_limit(clock.lp_limit(params.time_limit));
    let mut search = Search {
        inst,
        params,
        model,
        q,
        integral_objective,
        pure_binary,
        clock,
        work: 0,
        nodes: 0,
        next_id: 0,
        heap: BinaryHeap::new(),
        incumbent: None,
        pool: SolutionPool::new(params.pool_size),
        trace: Vec::new(),
        on_incumbent,
    };
    search.run()
}

impl<F> Search<'_, F>
where
    F: FnMut(&IncumbentEvent, &Solution),
{
    fn run(&mut self) -> SolveResult {
        let root = OpenNode { bound: f64::NEG_INFINITY, id: self.fresh_id(), fixings: Vec::new() };
        self.heap.push(root);
        let mut unbounded = false;
        let stop = loop {
            let Some(node) = self.heap.pop() else { break None };
            if self.prunable(node.bound) {
                continue;
            }
            if self.gap_closed(node.bound) {
                self.heap.push(node);
                break None;
            }
            if self.limit_reached() {
                self.heap.push(node);
                break Some(Stop::Limit);
            }
            match self.dive(node) {
                Ok(true) => {}
                Ok(false) => {
                    unbounded = true;
                    break None;
                }
                Err(stop) => break Some(stop),
            }
        };

        let open_bound = self.heap.iter().map(|n| self.round_bound(n.bound)).fold(f64::INFINITY, f64::min);
        let inc_obj = self.incumbent.as_ref().map(|s| s.objective);
        let bound = match inc_obj {
            Some(z) => open_bound.min(z),
            None => open_bound,
        };
        let status = match (stop, unbounded, inc_obj) {
            (_, true, _) => Status::Unbounded,
            (Some(Stop::Numerics), _, _) => Status::Numerics,
            (Some(Stop::Limit), _, Some(_)) => Status::FeasibleTimeLimit,
            (Some(Stop::Limit), _, None) => Status::NoSolutionTimeLimit,
            (None, _, Some(_)) => Status::Optimal,
            (None, _, None) => Status::Infeasible,
        };
        let bound = match status {
            Status::Infeasible => f64::INFINITY,
            Status::Unbounded => f64::NEG_INFINITY,
            _ => bound,
        };
        SolveResult {
            status,
            incumbent: self.incumbent.take(),
            bound,
            pool: std::mem::replace(&mut self.pool, SolutionPool::new(1)),
            stats: SolveStats { nodes: self.nodes, lp_iterations: self.work, time: self.clock.elapsed(self.work) },
            trace: std::mem::take(&mut self.trace),
        }
    }

    fn fresh_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id - 1
    }

    /// With integer costs on a pure binary model every objective value is
    /// an integer, so LP bounds can be rounded up.
    fn round_bound(&self, bound: f64) -> f64 {
        if self.integral_objective && bound.is_finite() {
            (bound - 1e-6).ceil()
        } else {
            bound
        }
    }

    fn prunable(&self, bound: f64) -> bool {
        match &self.incumbent {
            Some(inc) => self.round_bound(bound) >= inc.objective - 1e-9 * inc.objective.abs().max(1.0),
            None => false,
        }
    }

    fn gap_closed(&self, best_open: f64) -> bool {
        match &self.incumbent {
            Some(inc) => {
                let b = self.round_bound(best_open);
                inc.objective - b <= self.params.rel_gap_tol * (1.0 + b.abs())
            }
            None => false,
        }
    }

    fn limit_reached(&self) -> bool {
        if self.params.node_limit.is_some_and(|limit| self.nodes >= limit) {
            return true;
        }
        self.clock.elapsed(self.work) >= self.params.time_limit
    }

    /// Processes `node` and dives below it. Returns `Ok(false)` if the
    /// relaxation is unbounded.
    fn dive(&mut self, node: OpenNode) -> Result<bool, Stop> {
        let mut fixings = node.fixings;
        let mut bound = node.bound;
        let mut warm = None;
        loop {
            let eval = match self.evaluate(&fixings, &mut warm) {
                Ok(eval) => eval,
                Err(Stop::Limit) => {
                    // keep the unsolved node so the final bound stays valid
                    let id = self.fresh_id();
                    self.heap.push(OpenNode { bound, id, fixings });
                    return Err(Stop::Limit);
                }
                Err(stop) => return Err(stop),
            };
            match eval {
                Eval::Unbounded => return Ok(false),
                Eval::Pruned | Eval::Leaf => return Ok(true),
                Eval::Fractional { x, objective, branch } => {
                    let up_first = x[branch] >= 0.5;
                    let mut sibling = fixings.clone();
                    sibling.push((branch as u32, !up_first));
                    let id = self.fresh_id();
                    self.heap.push(OpenNode { bound: objective, id, fixings: sibling });
                    fixings.push((branch as u32, up_first));
                    bound = objective;
                    if !self.params.dive || self.limit_reached() || self.prunable(objective) {
                        let id = self.fresh_id();
                        self.heap.push(OpenNode { bound: objective, id, fixings });
                        return Ok(true);
                    }
                }
            }
        }
    }

    /// Solves the relaxation under `fixings`. When `warm` holds the basis of
    /// the parent (all fixings but the last) it is re-solved from there.
    fn evaluate(&mut self, fixings: &[(u32, bool)], warm: &mut Option<WarmStart>) -> Result<Eval, Stop> {
        self.nodes += 1;
        let value = |up: bool| if up { 1.0 } else { 0.0 };
        let mut outcome = None;
        if let (Some(ws), Some(&(j, up))) = (warm.as_mut(), fixings.last()) {
            match self.model.resolve(ws, &[(j as usize, value(up), value(up))], &mut self.work) {
                Ok(o) => outcome = Some(Ok(o)),
                Err(e) => log::debug!("{}: warm start failed ({e}), solving cold", self.inst.name),
            }
        }
        let outcome = match outcome {
            Some(o) => o,
            None => {
                let mut lower = self.inst.lower.clone();
                let mut upper = self.inst.upper.clone();
                for &(j, up) in fixings {
                    lower[j as usize] = value(up);
                    upper[j as usize] = value(up);
                }
                self.model.solve_keep(&lower, &upper, &mut self.work).map(|solved| {
                    solved.map(|(o, ws)| {
                        *warm = ws;
                        o
                    })
                })
            }
        };
        let outcome = match outcome {
            Ok(Some(o)) => o,
            Ok(None) => return Err(Stop::Limit),
            Err(Error::Numerics(msg)) => {
                log::warn!("{}: {msg}", self.inst.name);
                return Err(Stop::Numerics);
            }
            Err(e) => {
                log::warn!("{}: unexpected LP error {e}", self.inst.name);
                return Err(Stop::Numerics);
            }
        };
        let (x, objective) = match outcome {
            LpOutcome::Infeasible => return Ok(Eval::Pruned),
            LpOutcome::Unbounded => return Ok(Eval::Unbounded),
            LpOutcome::Optimal { x, objective } => (x, objective),
        };
        if self.prunable(objective) {
            return Ok(Eval::Pruned);
        }

        let int_tol = self.params.int_tol;
        let mut branch = None;
        let mut best_frac = 0.0;
        for (j, v) in x[..self.q].iter().enumerate() {
            let frac = (v - v.floor()).min(v.ceil() - v);
            if frac > int_tol && frac > best_frac + 1e-12 {
                best_frac = frac;
                branch = Some(j);
            }
        }
        match branch {
            None => {
                let mut values = x;
                for v in &mut values[..self.q] {
                    *v = v.round();
                }
                self.offer(values);
                Ok(Eval::Leaf)
            }
            Some(branch) => {
                if self.pure_binary {
                    self.round_heuristics(&x);
                }
                Ok(Eval::Fractional { x, objective, branch })
            }
        }
    }

    fn round_heuristics(&mut self, x: &[f64]) {
        let int_tol = self.params.int_tol;
        let down: Vec<f64> = x.iter().map(|v| if v.ceil() - v <= int_tol { v.ceil() } else { v.floor() }).collect();
        let nearest: Vec<f64> = x.iter().map(|v| v.round()).collect();
        self.offer(down);
        self.offer(nearest);
    }

    fn offer(&mut self, values: Vec<f64>) {
        let Ok(sol) = Solution::evaluate(self.inst, values) else { return };
        if !sol.feasible {
            return;
        }
        self.pool.insert(&sol.values, sol.objective, self.q);
        let improves = self.incumbent.as_ref().is_none_or(|inc| sol.objective < inc.objective - 1e-12);
        if improves {
            let event = IncumbentEvent { time: self.clock.elapsed(self.work), objective: sol.objective };
            (self.on_incumbent)(&event, &sol);
            self.trace.push(event);
            self.incumbent = Some(sol);
        }
    }
}
