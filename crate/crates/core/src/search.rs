//! Predict-and-search: pick the most confident binaries from a prediction,
//! then solve the instance once inside a Hamming ball around that partial
//! assignment (or, as a baseline, with the assignment fixed outright).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::featurize;
use crate::gnn::GnnModel;
use crate::milp::{MilpInstance, RowSense};
use crate::solver::{solve_milp, SolveParams, SolveResult};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Search,
    Fix,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    /// One auxiliary binary per selected variable bounding its deviation.
    #[default]
    Indicator,
    /// A single row counting deviations directly.
    Compact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub k0: usize,
    pub k1: usize,
    pub delta: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub formulation: Formulation,
    #[serde(default)]
    pub solve: SolveParams,
}

impl SearchConfig {
    pub fn new(k0: usize, k1: usize, delta: usize) -> Self {
        SearchConfig { k0, k1, delta, mode: Mode::Search, formulation: Formulation::Indicator, solve: SolveParams::default() }
    }

    /// Defaults scaled to `q` binaries. At full scale these correspond to
    /// (300, 300, 15) for 1500-node independent sets and (400, 0, 10) for
    /// auctions with 1500 bids.
    pub fn for_family(family: &str, q: usize) -> Result<Self> {
        let frac = |f: f64| ((f * q as f64).round() as usize).min(q);
        let ratio_ceil = |num: usize| (num * q).div_ceil(1500);
        match family {
            "independent_set" => {
                let (k0, k1) = (frac(0.2), frac(0.2));
                let k1 = k1.min(q - k0);
                Ok(Self::new(k0, k1, ratio_ceil(15).min(k0 + k1)))
            }
            "combinatorial_auction" => {
                let k0 = frac(0.27);
                Ok(Self::new(k0, 0, ratio_ceil(10).max(1).min(k0)))
            }
            other => Err(Error::invalid(format!("unknown family {other}"))),
        }
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_formulation(mut self, formulation: Formulation) -> Self {
        self.formulation = formulation;
        self
    }

    pub fn with_solve(mut self, solve: SolveParams) -> Self {
        self.solve = solve;
        self
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        if self.k0 + self.k1 > q {
            return Err(Error::invalid(format!("k0 + k1 = {} exceeds {q} binaries", self.k0 + self.k1)));
        }
        if self.mode == Mode::Search && self.delta > self.k0 + self.k1 {
            return Err(Error::invalid("delta exceeds k0 + k1"));
        }
        Ok(())
    }
}

/// Binaries predicted 0 (`i0`) and 1 (`i1`), each sorted ascending.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialSolution {
    pub i0: Vec<usize>,
    pub i1: Vec<usize>,
}

impl PartialSolution {
    pub fn new(mut i0: Vec<usize>, mut i1: Vec<usize>) -> Self {
        i0.sort_unstable();
        i1.sort_unstable();
        PartialSolution { i0, i1 }
    }

    pub fn len(&self) -> usize {
        self.i0.len() + self.i1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(index, value)` pairs, zeros first.
    pub fn assignments(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.i0.iter().map(|&d| (d, 0.0)).chain(self.i1.iter().map(|&d| (d, 1.0)))
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let mut seen = vec![false; q];
        for (d, _) in self.assignments() {
            if d >= q {
                return Err(Error::invalid(format!("index {d} is not a binary (q = {q})")));
            }
            if std::mem::replace(&mut seen[d], true) {
                return Err(Error::invalid(format!("index {d} assigned twice")));
            }
        }
        Ok(())
    }

    /// Hamming distance of `x` from the assignment on the selected indices.
    pub fn distance(&self, x: &[f64]) -> usize {
        self.i0.iter().filter(|&&d| x[d] > 0.5).count() + self.i1.iter().filter(|&&d| x[d] < 0.5).count()
    }
}

/// `i0`: the `k0` lowest probabilities; `i1`: the `k1` highest among the
/// rest. Ties go to the lower index.
pub fn select_partial(probs: &[f64], k0: usize, k1: usize) -> Result<PartialSolution> {
    let q = probs.len();
    if k0 + k1 > q {
        return Err(Error::invalid(format!("k0 + k1 = {} exceeds {q} binaries", k0 + k1)));
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::invalid("NaN probability"));
    }
    let mut order: Vec<usize> = (0..q).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(a.cmp(&b)));
    let i0: Vec<usize> = order[..k0].to_vec();
    let mut rest = order[k0..].to_vec();
    rest.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    Ok(PartialSolution::new(i0, rest[..k1].to_vec()))
}

/// Adds the neighbourhood constraint `Σ_{I0} x_d + Σ_{I1} (1 - x_d) ≤ Δ`.
/// With the indicator formulation the auxiliary binaries sit right after
/// the original binaries, so continuous indices shift by `ps.len()`.
pub fn build_trust_region(inst: &MilpInstance, ps: &PartialSolution, delta: usize, formulation: Formulation) -> MilpInstance {
    let mut out = inst.clone();
    out.name = format!("{}_tr", inst.name);
    let k = ps.len();
    match formulation {
        Formulation::Indicator => {
            let first = out.insert_binaries(ps.assignments().map(|(d, _)| format!("delta_{}", inst.var_names[d])));
            for (i, (d, v)) in ps.assignments().enumerate() {
                let aux = first + i;
                // x_d ≤ δ  or  1 - x_d ≤ δ
                let (sign, rhs) = if v == 0.0 { (1.0, 0.0) } else { (-1.0, -1.0) };
                out.add_row(format!("tr_{}", inst.var_names[d]), [(d, sign), (aux, -1.0)], RowSense::Le, rhs)
                    .expect("indices are in range");
            }
            out.add_row("tr_ball", (first..first + k).map(|j| (j, 1.0)), RowSense::Le, delta as f64)
                .expect("indices are in range");
        }
        Formulation::Compact => {
            let coeffs = ps.assignments().map(|(d, v)| (d, if v == 0.0 { 1.0 } else { -1.0 }));
            out.add_row("tr_ball", coeffs, RowSense::Le, delta as f64 - ps.i1.len() as f64)
                .expect("indices are in range");
        }
    }
    let aux = if formulation == Formulation::Indicator { k } else { 0 };
    out.metadata.insert("tr_k0".into(), ps.i0.len().to_string());
    out.metadata.insert("tr_k1".into(), ps.i1.len().to_string());
    out.metadata.insert("tr_delta".into(), delta.to_string());
    out.metadata.insert("tr_aux_binaries".into(), aux.to_string());
    out
}

/// Fixes every selected binary to its assigned value.
pub fn build_fixing(inst: &MilpInstance, ps: &PartialSolution) -> MilpInstance {
    let mut out = inst.clone();
    if !ps.is_empty() {
        out.name = format!("{}_fix", inst.name);
    }
    for (d, v) in ps.assignments() {
        out.lower[d] = v;
        out.upper[d] = v;
    }
    out
}

/// The restricted problem for `cfg`, and how many auxiliary binaries it
/// inserted at position `q`.
pub fn restricted_problem(inst: &MilpInstance, ps: &PartialSolution, cfg: &SearchConfig) -> (MilpInstance, usize) {
    match cfg.mode {
        Mode::Fix => (build_fixing(inst, ps), 0),
        Mode::Search => {
            let m = build_trust_region(inst, ps, cfg.delta, cfg.formulation);
            let aux = m.num_vars() - inst.num_vars();
            (m, aux)
        }
    }
}

fn strip(x: &[f64], q: usize, aux: usize) -> Vec<f64> {
    x[..q].iter().chain(&x[q + aux..]).copied().collect()
}

/// Removes the auxiliary binaries from every vector in `res`.
fn strip_result(res: &mut SolveResult, q: usize, aux: usize) {
    if aux == 0 {
        return;
    }
    if let Some(s) = res.incumbent.as_mut() {
        s.values = strip(&s.values, q, aux);
    }
    res.pool.truncate_vars(|x| strip(x, q, aux));
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub probs: Vec<f64>,
    pub partial: PartialSolution,
    /// Solved in the original variable space; see [`SolveResult::report`].
    pub result: SolveResult,
}

/// Restricted solve around the assignment derived from `probs`.
pub fn search_with_probs(inst: &MilpInstance, probs: &[f64], cfg: &SearchConfig) -> Result<SearchOutcome> {
    let q = inst.num_binary();
    if probs.len() != q {
        return Err(Error::Dimension { expected: q, got: probs.len() });
    }
    cfg.validate(q)?;
    let partial = select_partial(probs, cfg.k0, cfg.k1)?;
    let result = solve_restricted(inst, &partial, cfg);
    Ok(SearchOutcome { probs: probs.to_vec(), partial, result })
}

/// Solves the restricted problem once and maps the result back.
pub fn solve_restricted(inst: &MilpInstance, ps: &PartialSolution, cfg: &SearchConfig) -> SolveResult {
    let (sub, aux) = restricted_problem(inst, ps, cfg);
    let mut res = solve_milp(&sub, &cfg.solve);
    strip_result(&mut res, inst.num_binary(), aux);
    res
}

pub fn predict_and_search(inst: &MilpInstance, model: &GnnModel, cfg: &SearchConfig) -> Result<SearchOutcome> {
    let probs = model.predict(&featurize(inst))?;
    search_with_probs(inst, &probs, cfg)
}
