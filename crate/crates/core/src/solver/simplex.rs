//! Dense two-phase bounded-variable primal simplex.
//!
//! Every row `a_i x (sense) b_i` becomes `a_i x + s_i = b_i` with a bounded
//! slack (`[0, inf)` for LE, `(-inf, 0]` for GE, `[0, 0]` for EQ). The
//! method works on the dictionary `x_B = rhs - T x_N`, where `T` holds only
//! the nonbasic columns. Rows whose slack cannot absorb the residual of the
//! starting point get an artificial variable; phase one drives their sum
//! to zero. Dantzig pricing with a Harris ratio test, switching to Bland's
//! rule after `2 (n + m)` consecutive degenerate pivots.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::milp::{MilpInstance, RowSense};

const PIVOT_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const PRIMAL_TOL: f64 = 1e-9;
const PHASE1_TOL: f64 = 1e-7;
const CHECK_TOL: f64 = 1e-6;
const RECOMPUTE_EVERY: u64 = 100;

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, objective: f64 },
    Infeasible,
    Unbounded,
}

impl LpOutcome {
    pub fn objective(&self) -> Option<f64> {
        match self {
            LpOutcome::Optimal { objective, .. } => Some(*objective),
            _ => None,
        }
    }
}

/// LP relaxation of `inst`, optionally with replaced variable bounds.
pub fn solve_lp(inst: &MilpInstance, bounds_override: Option<&[(f64, f64)]>) -> Result<LpOutcome> {
    let model = LpModel::new(inst);
    let (lower, upper): (Vec<f64>, Vec<f64>) = match bounds_override {
        Some(b) => {
            if b.len() != inst.num_vars() {
                return Err(Error::Dimension { expected: inst.num_vars(), got: b.len() });
            }
            b.iter().copied().unzip()
        }
        None => (inst.lower.clone(), inst.upper.clone()),
    };
    let mut work = 0;
    model.solve(&lower, &upper, &mut work)
}

/// Dense copy of the constraint data, reused across many bound changes.
#[derive(Clone, Debug)]
pub(crate) struct LpModel {
    m: usize,
    n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    slack_lo: Vec<f64>,
    slack_hi: Vec<f64>,
    c: Vec<f64>,
    limit: LpLimit,
}

/// Stops the simplex once the running work counter or the wall clock passes
/// a threshold.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LpLimit {
    pub max_work: u64,
    pub deadline: Option<Instant>,
}

impl Default for LpLimit {
    fn default() -> Self {
        LpLimit { max_work: u64::MAX, deadline: None }
    }
}

impl LpLimit {
    fn hit(&self, work: u64, iter: u64) -> bool {
        work >= self.max_work || (iter % 16 == 0 && self.deadline.is_some_and(|d| Instant::now() >= d))
    }
}

impl LpModel {
    pub(crate) fn new(inst: &MilpInstance) -> Self {
        let (m, n) = (inst.num_rows(), inst.num_vars());
        let mut a = vec![0.0; m * n];
        let mut b = Vec::with_capacity(m);
        let mut slack_lo = Vec::with_capacity(m);
        let mut slack_hi = Vec::with_capacity(m);
        for (i, row) in inst.rows.iter().enumerate() {
            for &(j, v) in &row.coeffs {
                a[i * n + j] = v;
            }
            b.push(row.rhs);
            let (lo, hi) = match row.sense {
                RowSense::Le => (0.0, f64::INFINITY),
                RowSense::Ge => (f64::NEG_INFINITY, 0.0),
                RowSense::Eq => (0.0, 0.0),
            };
            slack_lo.push(lo);
            slack_hi.push(hi);
        }
        LpModel { m, n, a, b, slack_lo, slack_hi, c: inst.objective.clone(), limit: LpLimit::default() }
    }

    pub(crate) fn set_limit(&mut self, limit: LpLimit) {
        self.limit = limit;
    }

    /// Solves `min c x` under the given variable bounds. `work` is
    /// incremented by the number of simplex iterations performed.
    pub(crate) fn solve(&self, lower: &[f64], upper: &[f64], work: &mut u64) -> Result<LpOutcome> {
        match self.solve_keep(lower, upper, work)? {
            Some((outcome, _)) => Ok(outcome),
            None => Err(Error::Numerics("interrupted by the iteration limit".into())),
        }
    }

    /// Like [`LpModel::solve`], also returning the optimal basis for
    /// [`LpModel::resolve`]. `None` if the limit interrupted the solve.
    pub(crate) fn solve_keep(
        &self,
        lower: &[f64],
        upper: &[f64],
        work: &mut u64,
    ) -> Result<Option<(LpOutcome, Option<WarmStart>)>> {
        let (m, n) = (self.m, self.n);
        if lower.iter().zip(upper).any(|(l, u)| l > u) {
            return Ok(Some((LpOutcome::Infeasible, None)));
        }
        let mut tab = Tableau::build(self, lower, upper);
        let degenerate_limit = 2 * (n + m) as u64;

        if tab.num_art > 0 {
            let mut cost = vec![0.0; tab.lo.len()];
            for c in &mut cost[n + m..] {
                *c = 1.0;
            }
            match tab.run(&cost, degenerate_limit, work)? {
                Phase::Optimal => {}
                Phase::Interrupted => return Ok(None),
                _ => return Err(Error::Numerics("phase one reported unbounded".into())),
            }
            tab.recompute_basics();
            let infeas: f64 = tab.x[n + m..].iter().sum();
            if infeas > PHASE1_TOL * (1.0 + tab.rhs_scale) {
                return Ok(Some((LpOutcome::Infeasible, None)));
            }
            for v in n + m..tab.lo.len() {
                tab.hi[v] = 0.0;
                if !tab.is_basic[v] {
                    tab.x[v] = 0.0;
                }
            }
        }

        let mut cost = vec![0.0; tab.lo.len()];
        cost[..n].copy_from_slice(&self.c);
        match tab.run(&cost, degenerate_limit, work)? {
            Phase::Optimal => {}
            Phase::Interrupted => return Ok(None),
            _ => return Ok(Some((LpOutcome::Unbounded, None))),
        }
        tab.recompute_basics();
        let outcome = self.extract(&tab, lower, upper)?;
        Ok(Some((outcome, Some(WarmStart { tab, lower: lower.to_vec(), upper: upper.to_vec() }))))
    }

    /// Tightens the bounds in `changes` (`(var, lower, upper)`) and re-solves
    /// from the basis in `warm` with the dual simplex. `None` if the limit
    /// interrupted the solve.
    pub(crate) fn resolve(
        &self,
        warm: &mut WarmStart,
        changes: &[(usize, f64, f64)],
        work: &mut u64,
    ) -> Result<Option<LpOutcome>> {
        let tab = &mut warm.tab;
        let k = tab.k;
        for &(j, l, u) in changes {
            if l > u {
                return Ok(Some(LpOutcome::Infeasible));
            }
            warm.lower[j] = l;
            warm.upper[j] = u;
            tab.lo[j] = l;
            tab.hi[j] = u;
            if !tab.is_basic[j] {
                let col = tab.nonbasic.iter().position(|&v| v == j).expect("nonbasic variable has a column");
                let old = tab.x[j];
                let new = old.clamp(l, u);
                if new != old {
                    tab.x[j] = new;
                    for i in 0..tab.m {
                        let t = tab.t[i * k + col];
                        if t != 0.0 {
                            tab.x[tab.basis[i]] -= t * (new - old);
                        }
                    }
                }
            }
        }
        match tab.dual_run(work)? {
            Phase::Optimal => {}
            Phase::Infeasible => return Ok(Some(LpOutcome::Infeasible)),
            _ => return Ok(None),
        }
        let mut cost = vec![0.0; tab.lo.len()];
        cost[..self.n].copy_from_slice(&self.c);
        match tab.run(&cost, 2 * (self.n + self.m) as u64, work)? {
            Phase::Optimal => {}
            Phase::Interrupted => return Ok(None),
            _ => return Ok(Some(LpOutcome::Unbounded)),
        }
        tab.recompute_basics();
        self.extract(tab, &warm.lower, &warm.upper).map(Some)
    }

    /// Reads the solution off an optimal tableau and checks it against the
    /// original rows and bounds.
    fn extract(&self, tab: &Tableau, lower: &[f64], upper: &[f64]) -> Result<LpOutcome> {
        let (m, n) = (self.m, self.n);
        let mut x: Vec<f64> = tab.x[..n].to_vec();
        for j in 0..n {
            let (l, u) = (lower[j], upper[j]);
            if x[j] < l - CHECK_TOL * (1.0 + l.abs()) || x[j] > u + CHECK_TOL * (1.0 + u.abs()) {
                return Err(Error::Numerics(format!("variable {j} leaves its bounds by a wide margin")));
            }
            x[j] = x[j].clamp(l, u);
        }
        for i in 0..m {
            let act: f64 = self.a[i * n..(i + 1) * n].iter().zip(&x).map(|(a, v)| a * v).sum();
            let s = self.b[i] - act;
            let tol = CHECK_TOL * (1.0 + self.b[i].abs());
            if s < self.slack_lo[i] - tol || s > self.slack_hi[i] + tol {
                return Err(Error::Numerics(format!("row {i} violated by the final basis")));
            }
        }
        let objective = self.c.iter().zip(&x).map(|(c, v)| c * v).sum();
        Ok(LpOutcome::Optimal { x, objective })
    }
}

enum Phase {
    Optimal,
    Unbounded,
    Infeasible,
    Interrupted,
}

/// Optimal tableau of a solved relaxation with the bounds it was solved under.
pub(crate) struct WarmStart {
    tab: Tableau,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

struct Tableau {
    m: usize,
    /// Number of nonbasic columns.
    k: usize,
    num_art: usize,
    t: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    nonbasic: Vec<usize>,
    is_basic: Vec<bool>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    d: Vec<f64>,
    rhs_scale: f64,
    pivots_since_recompute: u64,
    limit: LpLimit,
}

impl Tableau {
    fn build(model: &LpModel, lower: &[f64], upper: &[f64]) -> Self {
        let (m, n) = (model.m, model.n);
        let mut lo: Vec<f64> = lower.to_vec();
        let mut hi: Vec<f64> = upper.to_vec();
        lo.extend_from_slice(&model.slack_lo);
        hi.extend_from_slice(&model.slack_hi);

        let mut x = vec![0.0; n + m];
        for j in 0..n {
            x[j] = if lo[j].is_finite() {
                lo[j]
            } else if hi[j].is_finite() {
                hi[j]
            } else {
                0.0
            };
        }

        // residual r_i = b_i - a_i x; slack takes it if within its bounds
        let mut art_rows = Vec::new();
        let mut sigma = vec![0.0; m];
        let mut art_value = vec![0.0; m];
        for i in 0..m {
            let row = &model.a[i * n..(i + 1) * n];
            let r = model.b[i] - row.iter().zip(&x[..n]).map(|(a, v)| a * v).sum::<f64>();
            let s = r.clamp(model.slack_lo[i], model.slack_hi[i]);
            x[n + i] = s;
            if (r - s).abs() > PRIMAL_TOL {
                sigma[i] = (r - s).signum();
                art_value[i] = (r - s).abs();
                art_rows.push(i);
            }
        }
        let num_art = art_rows.len();
        for &i in &art_rows {
            lo.push(0.0);
            hi.push(f64::INFINITY);
            x.push(art_value[i]);
        }

        let k = n + num_art;
        let mut t = vec![0.0; m * k];
        let mut rhs = vec![0.0; m];
        let mut basis = vec![0usize; m];
        let mut nonbasic: Vec<usize> = (0..n).collect();
        let mut is_basic = vec![false; n + m + num_art];
        let mut art_of_row = vec![usize::MAX; m];
        for (a, &i) in art_rows.iter().enumerate() {
            art_of_row[i] = a;
            nonbasic.push(n + i);
        }
        for i in 0..m {
            let src = &model.a[i * n..(i + 1) * n];
            let dst = &mut t[i * k..(i + 1) * k];
            if art_of_row[i] == usize::MAX {
                dst[..n].copy_from_slice(src);
                rhs[i] = model.b[i];
                basis[i] = n + i;
            } else {
                let sg = sigma[i];
                for (d, s) in dst[..n].iter_mut().zip(src) {
                    *d = sg * s;
                }
                dst[n + art_of_row[i]] = sg;
                rhs[i] = sg * model.b[i];
                basis[i] = n + m + art_of_row[i];
            }
            is_basic[basis[i]] = true;
        }
        let rhs_scale = model.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

        Tableau {
            m,
            k,
            num_art,
            t,
            rhs,
            basis,
            nonbasic,
            is_basic,
            lo,
            hi,
            x,
            d: vec![0.0; k],
            rhs_scale,
            pivots_since_recompute: 0,
            limit: model.limit,
        }
    }

    fn recompute_basics(&mut self) {
        let k = self.k;
        for i in 0..self.m {
            let row = &self.t[i * k..(i + 1) * k];
            let mut v = self.rhs[i];
            for (c, &var) in row.iter().zip(&self.nonbasic) {
                v -= c * self.x[var];
            }
            self.x[self.basis[i]] = v;
        }
        self.pivots_since_recompute = 0;
    }

    fn compute_reduced_costs(&mut self, cost: &[f64]) {
        let k = self.k;
        for (col, &var) in self.nonbasic.iter().enumerate() {
            self.d[col] = cost[var];
        }
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.t[i * k..(i + 1) * k];
                for (d, t) in self.d.iter_mut().zip(row) {
                    *d -= cb * t;
                }
            }
        }
    }

    /// Entering column and direction (+1 increase, -1 decrease).
    fn price(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for (col, &var) in self.nonbasic.iter().enumerate() {
            let (l, u) = (self.lo[var], self.hi[var]);
            if l == u {
                continue;
            }
            let d = self.d[col];
            let xv = self.x[var];
            let dir = if d < -DUAL_TOL && xv < u {
                1.0
            } else if d > DUAL_TOL && xv > l {
                -1.0
            } else {
                continue;
            };
            let score = d.abs();
            let better = match best {
                None => true,
                Some((bc, _, bs)) => {
                    if bland {
                        var < self.nonbasic[bc]
                    } else {
                        score > bs
                    }
                }
            };
            if better {
                best = Some((col, dir, score));
            }
        }
        best.map(|(c, dir, _)| (c, dir))
    }

    fn run(&mut self, cost: &[f64], degenerate_limit: u64, work: &mut u64) -> Result<Phase> {
        self.compute_reduced_costs(cost);
        let max_iter = 50 * (self.m + self.k) as u64 + 10_000;
        let mut degenerate = 0u64;
        let mut bland = false;
        let k = self.k;
        let mut pivot_row = vec![0.0; k];
        for iter in 0.. {
            if iter > max_iter {
                return Err(Error::Numerics("simplex iteration limit exceeded".into()));
            }
            if self.pivots_since_recompute >= RECOMPUTE_EVERY {
                self.recompute_basics();
                self.compute_reduced_costs(cost);
            }
            let Some((e, dir)) = self.price(bland) else {
                return Ok(Phase::Optimal);
            };
            if self.limit.hit(*work, iter) {
                return Ok(Phase::Interrupted);
            }
            *work += 1;
            let entering = self.nonbasic[e];

            // Harris pass one: largest step with bounds relaxed by PRIMAL_TOL.
            let mut relaxed = f64::INFINITY;
            for i in 0..self.m {
                let alpha = -self.t[i * k + e] * dir;
                let bv = self.basis[i];
                if alpha > PIVOT_TOL && self.hi[bv].is_finite() {
                    relaxed = relaxed.min((self.hi[bv] + PRIMAL_TOL - self.x[bv]) / alpha);
                } else if alpha < -PIVOT_TOL && self.lo[bv].is_finite() {
                    relaxed = relaxed.min((self.lo[bv] - PRIMAL_TOL - self.x[bv]) / alpha);
                }
            }
            // pass two: among rows blocking within `relaxed`, largest |alpha|
            let mut leave: Option<(usize, f64, f64)> = None;
            if relaxed.is_finite() {
                for i in 0..self.m {
                    let alpha = -self.t[i * k + e] * dir;
                    let bv = self.basis[i];
                    let step = if alpha > PIVOT_TOL && self.hi[bv].is_finite() {
                        (self.hi[bv] - self.x[bv]) / alpha
                    } else if alpha < -PIVOT_TOL && self.lo[bv].is_finite() {
                        (self.lo[bv] - self.x[bv]) / alpha
                    } else {
                        continue;
                    };
                    if step > relaxed {
                        continue;
                    }
                    let better = match leave {
                        None => true,
                        Some((r, _, a)) => {
                            if bland {
                                bv < self.basis[r]
                            } else {
                                alpha.abs() > a
                            }
                        }
                    };
                    if better {
                        leave = Some((i, step.max(0.0), alpha.abs()));
                    }
                }
            }
            let range = self.hi[entering] - self.lo[entering];

            let theta = match leave {
                Some((_, step, _)) if step < range => step,
                _ if range.is_finite() => {
                    // bound flip, no basis change
                    let theta = range;
                    self.x[entering] = if dir > 0.0 { self.hi[entering] } else { self.lo[entering] };
                    for i in 0..self.m {
                        let alpha = -self.t[i * k + e] * dir;
                        self.x[self.basis[i]] += alpha * theta;
                    }
                    degenerate = 0;
                    continue;
                }
                Some((_, step, _)) => step,
                None => return Ok(Phase::Unbounded),
            };
            let (r, _, _) = leave.expect("a blocking row when theta is finite");

            if theta <= 1e-12 {
                degenerate += 1;
                if degenerate > degenerate_limit {
                    bland = true;
                }
            } else {
                degenerate = 0;
            }

            self.x[entering] += dir * theta;
            for i in 0..self.m {
                let alpha = -self.t[i * k + e] * dir;
                if alpha != 0.0 {
                    self.x[self.basis[i]] += alpha * theta;
                }
            }
            let leaving = self.basis[r];
            let alpha_r = -self.t[r * k + e] * dir;
            self.x[leaving] = if alpha_r > 0.0 { self.hi[leaving] } else { self.lo[leaving] };

            self.pivot(r, e, &mut pivot_row);
        }
        unreachable!()
    }

    /// Exchanges basic row `r` with nonbasic column `e` and updates the
    /// dictionary and reduced costs. Values in `x` are left to the caller.
    fn pivot(&mut self, r: usize, e: usize, pivot_row: &mut [f64]) {
        let k = self.k;
        let entering = self.nonbasic[e];
        let leaving = self.basis[r];
        let piv = self.t[r * k + e];
        {
            let row = &mut self.t[r * k..(r + 1) * k];
            let inv = 1.0 / piv;
            for v in row.iter_mut() {
                *v *= inv;
            }
            row[e] = inv;
            pivot_row.copy_from_slice(row);
        }
        self.rhs[r] /= piv;
        let rhs_r = self.rhs[r];
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * k + e];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * k..(i + 1) * k];
            row[e] = 0.0;
            for (v, p) in row.iter_mut().zip(pivot_row.iter()) {
                *v -= f * p;
            }
            self.rhs[i] -= f * rhs_r;
        }
        let f = self.d[e];
        self.d[e] = 0.0;
        for (v, p) in self.d.iter_mut().zip(pivot_row.iter()) {
            *v -= f * p;
        }
        self.basis[r] = entering;
        self.nonbasic[e] = leaving;
        self.is_basic[entering] = true;
        self.is_basic[leaving] = false;
        self.pivots_since_recompute += 1;
    }

    /// Dual simplex from a dual feasible basis: repairs basic variables
    /// outside their bounds.
    fn dual_run(&mut self, work: &mut u64) -> Result<Phase> {
        let k = self.k;
        let max_iter = 50 * (self.m + self.k) as u64 + 10_000;
        let mut pivot_row = vec![0.0; k];
        for iter in 0.. {
            if iter > max_iter {
                return Err(Error::Numerics("dual simplex iteration limit exceeded".into()));
            }
            if self.pivots_since_recompute >= RECOMPUTE_EVERY {
                self.recompute_basics();
            }
            // leaving row: largest bound violation
            let mut leave: Option<(usize, f64, f64)> = None;
            for i in 0..self.m {
                let bv = self.basis[i];
                let (xv, l, u) = (self.x[bv], self.lo[bv], self.hi[bv]);
                let (viol, target) = if xv < l - PRIMAL_TOL * (1.0 + l.abs()) {
                    (l - xv, l)
                } else if xv > u + PRIMAL_TOL * (1.0 + u.abs()) {
                    (xv - u, u)
                } else {
                    continue;
                };
                if leave.is_none_or(|(_, v, _)| viol > v) {
                    leave = Some((i, viol, target));
                }
            }
            let Some((r, _, target)) = leave else { return Ok(Phase::Optimal) };
            if self.limit.hit(*work, iter) {
                return Ok(Phase::Interrupted);
            }
            *work += 1;
            let bv = self.basis[r];
            // +1: the basic variable must increase
            let need = if target > self.x[bv] { 1.0 } else { -1.0 };

            let mut enter: Option<(usize, f64, f64)> = None;
            for col in 0..k {
                let var = self.nonbasic[col];
                let (l, u) = (self.lo[var], self.hi[var]);
                if l == u {
                    continue;
                }
                let a = self.t[r * k + col];
                if a.abs() <= PIVOT_TOL {
                    continue;
                }
                // moving x_var by +1 changes x_bv by -a
                let dir = -a.signum() * need;
                let xv = self.x[var];
                let can_move = if dir > 0.0 { xv < u } else { xv > l };
                if !can_move {
                    continue;
                }
                let ratio = (self.d[col] * dir).max(0.0) / a.abs();
                let better = match enter {
                    None => true,
                    Some((_, br, ba)) => ratio < br - 1e-12 || (ratio <= br + 1e-12 && a.abs() > ba),
                };
                if better {
                    enter = Some((col, ratio, a.abs()));
                }
            }
            let Some((e, _, _)) = enter else { return Ok(Phase::Infeasible) };

            let a = self.t[r * k + e];
            let step = (self.x[bv] - target) / a;
            let entering = self.nonbasic[e];
            self.x[entering] += step;
            for i in 0..self.m {
                let t = self.t[i * k + e];
                if t != 0.0 {
                    self.x[self.basis[i]] -= t * step;
                }
            }
            self.x[bv] = target;
            self.pivot(r, e, &mut pivot_row);
        }
        unreachable!()
    }
}
