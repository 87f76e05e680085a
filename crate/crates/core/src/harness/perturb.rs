//! Simulated prediction errors: flip `k` binaries of a known optimum, fix
//! them, and see how often the fixed problem stays feasible.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instgen::derive_seed;
use crate::milp::MilpInstance;
use crate::search::{build_fixing, PartialSolution};
use crate::solver::{solve_milp, SolveParams, Status};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbSummary {
    pub instance: String,
    pub k: usize,
    pub trials: usize,
    pub infeasible: usize,
    pub infeasible_pct: f64,
    /// Absolute gaps to the optimum over feasible trials.
    pub gap_min: Option<f64>,
    pub gap_avg: Option<f64>,
    pub gap_max: Option<f64>,
}

/// Fixed binaries per trial: all of them, or a random `(k0, k1)` subset of
/// the optimum's zeros and ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbScope {
    #[default]
    All,
    Partial { k0: usize, k1: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub trials: usize,
    pub k: usize,
    #[serde(default)]
    pub scope: PerturbScope,
    pub seed: u64,
    #[serde(default)]
    pub solve: SolveParams,
}

impl PerturbConfig {
    pub fn new(trials: usize, k: usize, seed: u64) -> Self {
        PerturbConfig { trials, k, scope: PerturbScope::All, seed, solve: SolveParams::default() }
    }
}

/// Runs `cfg.trials` perturbations of `x_opt` (objective `opt`, internal
/// sense) with `cfg.k` flips each. Trial `t` draws from its own seeded
/// stream.
pub fn perturb_experiment(inst: &MilpInstance, x_opt: &[f64], opt: f64, cfg: &PerturbConfig) -> Result<PerturbSummary> {
    let PerturbConfig { trials, k, scope, seed, solve: ref params } = *cfg;
    if x_opt.len() != inst.num_vars() {
        return Err(Error::Dimension { expected: inst.num_vars(), got: x_opt.len() });
    }
    let q = inst.num_binary();
    let (zeros, ones): (Vec<usize>, Vec<usize>) = (0..q).partition(|&d| x_opt[d] < 0.5);
    if let PerturbScope::Partial { k0, k1 } = scope {
        if k0 > zeros.len() || k1 > ones.len() {
            return Err(Error::invalid("scope asks for more zeros or ones than the optimum has"));
        }
    }
    let pool_size = match scope {
        PerturbScope::All => q,
        PerturbScope::Partial { k0, k1 } => k0 + k1,
    };
    if k > pool_size {
        return Err(Error::invalid(format!("k = {k} exceeds the {pool_size} fixed binaries")));
    }

    let mut infeasible = 0;
    let mut gaps = Vec::new();
    for t in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, t as u64));
        let chosen: Vec<usize> = match scope {
            PerturbScope::All => (0..q).collect(),
            PerturbScope::Partial { k0, k1 } => {
                let mut c: Vec<usize> = sample(&mut rng, zeros.len(), k0).iter().map(|i| zeros[i]).collect();
                c.extend(sample(&mut rng, ones.len(), k1).iter().map(|i| ones[i]));
                c
            }
        };
        let mut value: Vec<bool> = chosen.iter().map(|&d| x_opt[d] > 0.5).collect();
        for i in sample(&mut rng, chosen.len(), k) {
            value[i] = !value[i];
        }
        let (i1, i0): (Vec<(usize, bool)>, Vec<(usize, bool)>) =
            chosen.iter().copied().zip(value).partition(|&(_, v)| v);
        let ps = PartialSolution::new(i0.into_iter().map(|p| p.0).collect(), i1.into_iter().map(|p| p.0).collect());
        let res = solve_milp(&build_fixing(inst, &ps), params);
        match (res.status, res.objective()) {
            (Status::Infeasible, _) => infeasible += 1,
            (_, Some(obj)) => gaps.push((obj - opt).abs()),
            (status, None) => return Err(Error::invalid(format!("perturbed solve ended with {status:?}"))),
        }
    }
    let stat = |f: fn(f64, f64) -> f64| gaps.iter().copied().reduce(f);
    Ok(PerturbSummary {
        instance: inst.name.clone(),
        k,
        trials,
        infeasible,
        infeasible_pct: if trials == 0 { 0.0 } else { 100.0 * infeasible as f64 / trials as f64 },
        gap_min: stat(f64::min),
        gap_avg: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
        gap_max: stat(f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instgen::gen_independent_set;
    use crate::solver::solve_milp;

    fn solved(nodes: usize, seed: u64) -> (MilpInstance, Vec<f64>, f64) {
        let inst = gen_independent_set(nodes, 2, seed).unwrap();
        let res = solve_milp(&inst, &SolveParams::default());
        let sol = res.incumbent.unwrap();
        (inst, sol.values, sol.objective)
    }

    #[test]
    fn no_flips_is_always_feasible() {
        let (inst, x, opt) = solved(20, 1);
        let s = perturb_experiment(&inst, &x, opt, &PerturbConfig::new(10, 0, 3)).unwrap();
        assert_eq!(s.infeasible, 0);
        assert_eq!(s.gap_max, Some(0.0));
    }

    #[test]
    fn flipping_the_whole_triangle_is_infeasible() {
        let inst = gen_independent_set(3, 2, 0).unwrap();
        let s = perturb_experiment(&inst, &[1.0, 0.0, 0.0], -1.0, &PerturbConfig::new(4, 3, 0)).unwrap();
        assert_eq!(s.infeasible_pct, 100.0);
        assert_eq!(s.gap_avg, None);
    }

    #[test]
    fn partial_scope_and_limits() {
        let (inst, x, opt) = solved(20, 2);
        let ones = x.iter().filter(|v| **v > 0.5).count();
        let scoped = |k: usize, k0: usize, k1: usize| PerturbConfig {
            scope: PerturbScope::Partial { k0, k1 },
            ..PerturbConfig::new(5, k, 9)
        };
        let s = perturb_experiment(&inst, &x, opt, &scoped(1, 3, 2)).unwrap();
        assert_eq!(s.trials, 5);
        assert!(perturb_experiment(&inst, &x, opt, &scoped(6, 3, 2)).is_err());
        assert!(perturb_experiment(&inst, &x, opt, &scoped(0, 0, ones + 1)).is_err());
        assert!(perturb_experiment(&inst, &x, opt, &PerturbConfig::new(1, 21, 9)).is_err());
        assert!(perturb_experiment(&inst, &x[1..], opt, &PerturbConfig::new(1, 0, 9)).is_err());
    }
}
